import ast
import inspect
import io
import json
import math

import numpy as np
import pytest

from stableclust import local
from stableclust.bench import InstanceSpec, generate_instance
from stableclust.geometry import Dataset, wasserstein
from stableclust.local import (MessageBatch, RegionPartition, Transcript, Users, frequency_error_bound,
                               ldp_avg, ldp_frequency_oracle, ldp_stable_kmeans, ldp_vector_sum,
                               server_frequencies, vector_sum_error_bound)
from stableclust.mechanisms import BudgetLedger, PrivacyParams, rng_stream

INF = PrivacyParams(math.inf, 0.0)


def _users(pts, seed=0, transcript=None):
    return Users(Dataset(pts), rng_stream(seed, "users"), transcript)


def test_frequency_oracle_noiseless_exact():
    pts = np.array([[0.1], [0.1], [-0.5], [0.9]])
    est = ldp_frequency_oracle(_users(pts), lambda x: (x[:, 0] > 0).astype(int), 2, math.inf)
    assert est.tolist() == [1.0, 3.0]


def test_frequency_oracle_unbiased():
    n = 4000
    pts = np.zeros((n, 1))
    pts[: n // 4] = 0.5
    trials = np.array([ldp_frequency_oracle(_users(pts, s), lambda x: (x[:, 0] > 0).astype(int), 2, 1.0)
                       for s in range(400)])
    se = trials.std(axis=0) / math.sqrt(len(trials))
    assert np.all(np.abs(trials.mean(axis=0) - [0.75 * n, 0.25 * n]) <= 4 * se)


def test_vector_sum_noiseless_and_bound():
    pts = np.random.default_rng(0).uniform(-0.5, 0.5, (5000, 2))
    assert ldp_vector_sum(_users(pts), INF) == pytest.approx(pts.sum(axis=0))
    pp = PrivacyParams(1.0, 1e-5)
    err = np.linalg.norm(ldp_vector_sum(_users(pts, 3), pp) - pts.sum(axis=0))
    assert err <= vector_sum_error_bound(5000, 2, 1.0, pp, 0.05)


def test_region_membership_ties_lowest_index():
    regions = RegionPartition.balls([[0.0], [1.0]], [0.5, 0.5])
    assert regions.membership(np.array([[0.5], [0.9], [2.0]])).tolist() == [0, 1, 2]


def test_grid_cells_membership_and_clamp():
    regions = RegionPartition.grid_cells([[0, 0], [1, 0]], 0.5, [0.0, 0.0])
    assert regions.membership(np.array([[0.1, 0.1], [0.6, 0.2], [-0.1, 0.0]])).tolist() == [0, 1, 2]
    assert regions.clamp(0, np.array([0.9, -0.3])).tolist() == [0.5, 0.0]


def test_ldp_avg_noiseless_matches_true_means():
    pts = np.array([[0.0, 0.0], [0.2, 0.0], [1.0, 0.0], [0.8, 0.0], [-1.0, 0.0]])
    regions = RegionPartition.balls([[0.1, 0.0], [0.9, 0.0]], [0.3, 0.3])
    est, counts, flagged = ldp_avg(_users(pts), regions, INF)
    assert est == pytest.approx(np.array([[0.1, 0.0], [0.9, 0.0]]))
    assert counts.tolist() == [2.0, 2.0] and not flagged.any()


def test_ldp_avg_flags_empty_regions():
    pts = np.full((50, 2), 0.1)
    regions = RegionPartition.balls([[0.1, 0.1], [-0.8, 0.0]], [0.2, 0.2])
    est, counts, flagged = ldp_avg(_users(pts), regions, INF)
    assert flagged.tolist() == [False, True]
    assert est[1].tolist() == [-0.8, 0.0]


def test_ldp_kmeans_noiseless_recovers_means():
    inst = generate_instance(InstanceSpec(k=2, d=2, n=5000, scale=0.5, seed=4), restarts=3)
    out = ldp_stable_kmeans(inst.data, 2, INF, rng_stream(0))
    assert wasserstein(out.chosen.centers, inst.oracle.centers) <= 1e-9


def test_ldp_ledger_and_transcript():
    inst = generate_instance(InstanceSpec(k=2, d=2, n=3000, scale=0.5, seed=5), restarts=3)
    tr = Transcript(keep_payloads=True)
    out = ldp_stable_kmeans(inst.data, 2, PrivacyParams(1.0, 1e-5), rng_stream(1), transcript=tr)
    tot = out.ledger.total_simple()
    assert tot.epsilon == pytest.approx(4.0, rel=1e-12) and tot.delta == pytest.approx(4e-5, rel=1e-12)
    # every user appears exactly once per round
    for phase in tr.phases:
        rows = sum(len(b) for b in tr.batches if b.round == phase["round"])
        assert rows == inst.data.n
    buf = io.StringIO()
    tr.batches = tr.batches[:1]
    count = tr.write_jsonl(buf)
    first = json.loads(buf.getvalue().splitlines()[0])
    assert count == len(tr.batches[0]) and first["user_id"] == 0


def test_server_code_never_reads_raw_points():
    """Server-side functions accept batches only; raw data stays inside Users."""
    tree = ast.parse(inspect.getsource(local))
    server_fns = {"server_frequencies", "server_sum"}
    for node in ast.walk(tree):
        if isinstance(node, ast.FunctionDef) and node.name in server_fns:
            names = {n.attr for n in ast.walk(node) if isinstance(n, ast.Attribute)}
            assert "_points" not in names and "points" not in names
    users_src = inspect.getsource(local.Users)
    outside = inspect.getsource(local).replace(users_src, "")
    assert "._points" not in outside


def test_message_batch_messages():
    b = MessageBatch(1, "x", 10, np.array([[1.0, 2.0], [3.0, 4.0]]), 0.5)
    msgs = list(b.messages())
    assert [m.user_id for m in msgs] == [10, 11] and msgs[1].payload == [3.0, 4.0]


def test_server_frequencies_debias():
    keep = local._ue_keep_probability(1.0)
    payload = np.array([[True, False]] * 100)
    est = server_frequencies([MessageBatch(1, "f", 0, payload, 1 - keep)], 1.0)
    assert est[0] == pytest.approx((100 - 100 * (1 - keep)) / (2 * keep - 1))
    assert frequency_error_bound(100_000, 1.0, 0.01) == pytest.approx(2322.1365, rel=1e-6)


def test_ledger_records_frequency_phase():
    led = BudgetLedger()
    ldp_frequency_oracle(_users(np.zeros((10, 1))), lambda x: np.zeros(len(x), int), 1, 0.5, led, "f")
    assert led.total_simple().epsilon == 0.5
