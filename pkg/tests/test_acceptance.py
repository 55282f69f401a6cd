"""Acceptance checks, one test per criterion; each prints a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -s`` or as a script.
"""

import itertools
import math
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from stableclust.bench import InstanceSpec, generate_instance, load_config, run_suite
from stableclust.geometry import Dataset, brute_force_opt, cost, kmeanspp_lloyd, wasserstein, \
    wasserstein_exhaustive
from stableclust.kmeans import PrivateKMeansConfig, private_stable_kmeans
from stableclust.kmedian import PrivateKMedianConfig, private_stable_kmedian
from stableclust.lemmas import run_lemma_suite
from stableclust.local import (RegionPartition, Users, frequency_error_bound, ldp_avg,
                               ldp_avg_error_bound, ldp_avg_min_count, ldp_frequency_oracle,
                               ldp_stable_kmeans, ldp_vector_sum, vector_sum_error_bound)
from stableclust.mechanisms import (GaussianRangeWarning, PrivacyParams, Sensitivity,
                                    amplify_by_sampling, compose_advanced, gaussian_noise,
                                    gaussian_sigma, group_privacy, laplace_noise, rng_stream)
from stableclust.sample_aggregate import (SampleAggregateConfig, check_events_E1_E2_E3,
                                          cluster_subsamples, compose_one_cluster_calls,
                                          sample_aggregate_kmeans, snap_to_grid,
                                          subsample_with_replacement)
from stableclust.stability import center_gaps

pytestmark = pytest.mark.slow
warnings.simplefilter("ignore", GaussianRangeWarning)

CONFIGS = Path(__file__).resolve().parent.parent / "scripts" / "configs"
SUITES = ("kmeans", "kmeans_lloyd", "kmedian", "ldp", "sample_aggregate")
REPORT: list[str] = []
PP = PrivacyParams(1.0, 1e-5)
BETA = 0.05


def report(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {title} ({detail})"
    REPORT.append(line)
    print(line)
    assert ok, line


def _run_suite(name: str, out_root: Path):
    cfg = load_config(CONFIGS / f"{name}.cfg")
    cfg = replace(cfg, out_dir=str(out_root / name))
    t0 = time.perf_counter()
    res = run_suite(cfg)
    return res, time.perf_counter() - t0, cfg


@pytest.fixture(scope="session")
def suites(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance_a")
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = _run_suite(name, root)
        return cache[name]

    get.root = root
    return get


def _fraction(res, pipeline):
    s = res.summary["pipelines"][pipeline]
    return s["pass_fraction"], s["required"], s["trials"]


# ---------------------------------------------------------------- 1

def test_criterion_1_lemma_suite():
    res = run_lemma_suite(1000, seed=0)
    ok = res.ok and all(v == 1000 for v in res.passed.values()) and res.seconds < 10
    detail = ", ".join(f"{k} {v}/1000" for k, v in res.passed.items())
    report(1, "lemma suite", ok, f"{detail}; {res.seconds:.1f}s")


# ---------------------------------------------------------------- 2

def test_criterion_2_mechanism_calibration():
    t0 = time.perf_counter()
    rng = rng_stream(0, "acceptance-2")
    lap = laplace_noise(Sensitivity(1.0), PrivacyParams(0.5), 100_000, rng)
    lap_err = abs(lap.std() / (math.sqrt(2) * 2.0) - 1)
    gau = gaussian_noise(Sensitivity(1.0, "L2"), PrivacyParams(0.5, 1e-5), 100_000, rng)
    sigma = 1.0 / 0.5 * math.sqrt(2 * math.log(1.25 / 1e-5))
    gau_err = abs(gau.std() / sigma - 1)

    checks = []
    for k, eps, dp in [(10, 0.1, 1e-6), (50, 0.02, 1e-7), (3, 0.9, 1e-3)]:
        expect = math.sqrt(2 * k * math.log(1 / dp)) * eps + k * eps * (math.exp(eps) - 1)
        checks.append(math.isclose(compose_advanced(k, eps, 0.0, dp).epsilon, expect, rel_tol=1e-12))
    spot = compose_advanced(10, 0.1, 0.0, 1e-6).epsilon
    checks.append(abs(spot - 1.7674) < 5e-5)
    for g, eps, dl in [(5, 0.1, 1e-6), (2, 0.7, 1e-8)]:
        out = group_privacy(PrivacyParams(eps, dl), g)
        checks.append(math.isclose(out.epsilon, g * eps, rel_tol=1e-12))
        checks.append(math.isclose(out.delta, g * math.exp(g * eps) * dl, rel_tol=1e-12))
    for eps, m, n, dl in [(1.0, 100, 1000, 1e-6), (0.3, 7, 5000, 1e-9)]:
        out = amplify_by_sampling(PrivacyParams(eps, dl), m, n)
        et = 6 * eps * m / n
        checks.append(math.isclose(out.epsilon, et, rel_tol=1e-12))
        checks.append(math.isclose(out.delta, math.exp(et) * 4 * m / n * dl, rel_tol=1e-12))
    checks.append(math.isclose(gaussian_sigma(1.0, 0.5, 1e-5), sigma, rel_tol=1e-12))
    secs = time.perf_counter() - t0
    ok = lap_err <= 0.02 and gau_err <= 0.02 and all(checks) and secs < 5
    report(2, "mechanism calibration", ok,
           f"laplace std off {lap_err:.2%}, gaussian std off {gau_err:.2%}, "
           f"{sum(checks)}/{len(checks)} formula checks, advanced spot {spot:.4f}; {secs:.1f}s")


# ---------------------------------------------------------------- 3

def test_criterion_3_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    w_ok = 0
    for i in range(120):
        k, d = 1 + i % 6, 1 + i % 3
        a, b = rng.normal(size=(k, d)), rng.normal(size=(k, d))
        w_ok += math.isclose(wasserstein(a, b), wasserstein_exhaustive(a, b), rel_tol=1e-12,
                             abs_tol=1e-15)
    b_ok = 0
    for i in range(100):
        n = int(rng.integers(5, 13))
        k = 2 + i % 2
        d = 1 + i % 3
        centers = rng.normal(size=(k, d)) * 3
        pts = centers[rng.integers(k, size=n)] + rng.normal(size=(n, d))
        exact = brute_force_opt(pts, k, 2)[1]
        lloyd_best = cost(pts, kmeanspp_lloyd(pts, k, 2, restarts=50, seed=i).centers)
        b_ok += math.isclose(exact, lloyd_best, rel_tol=1e-9)
    secs = time.perf_counter() - t0
    ok = w_ok == 120 and b_ok == 100 and secs < 60
    report(3, "oracle equivalence", ok,
           f"wasserstein {w_ok}/120, brute force vs best-of-50 Lloyd {b_ok}/100; {secs:.1f}s")


# ---------------------------------------------------------------- 4, 5

def test_criterion_4_kmeans_cost_shape(suites):
    res, secs, _ = suites("kmeans")
    frac, need, trials = _fraction(res, "central-kmeans")
    phi = res.summary["phi_p"]
    ok = res.ok and phi <= 1e-3 and secs < 180
    report(4, "k-means cost bound", ok,
           f"{frac * trials:.0f}/{trials} seeds, need {need * trials:.0f}; phi^2 {phi:.2e}; {secs:.0f}s")


def test_criterion_5_wasserstein_shape(suites):
    res, secs, cfg = suites("kmeans_lloyd")
    phi = res.summary["phi_p"]
    limit = min(25 * phi * cfg.radius, 0.05 * cfg.radius)
    wd = np.array([r["wasserstein"] for r in res.rows])
    hits = int(np.sum(wd <= limit))
    ok = hits >= 90 and secs < 180
    report(5, "Wasserstein after noisy Lloyd step", ok,
           f"{hits}/{len(wd)} seeds within {limit:.4f}, max {wd.max():.4f}; {secs:.0f}s")


# ---------------------------------------------------------------- 6

def test_criterion_6_kmedian_cost_shape(suites):
    res, secs, _ = suites("kmedian")
    frac, need, trials = _fraction(res, "central-kmedian")
    ok = res.ok and secs < 180
    report(6, "k-median cost bound", ok, f"{frac * trials:.0f}/{trials} seeds, need "
           f"{need * trials:.0f}; {secs:.0f}s")


# ---------------------------------------------------------------- 7

def _users(points, seed):
    return Users(Dataset(points), rng_stream(seed, "acceptance-7"))


def test_criterion_7_ldp_bounds(suites):
    t0 = time.perf_counter()
    n = 100_000
    inst = generate_instance(InstanceSpec(k=2, d=2, n=n, scale=0.5, std=0.05, seed=11), restarts=3)
    pts = inst.data.points
    rng = np.random.default_rng(7)

    n_sym = 8
    sym = rng.choice(n_sym, size=n, p=np.array([8, 4, 2, 1, 1, 1, 1, 2]) / 20)
    carrier = np.zeros((n, 1))
    carrier[:, 0] = sym / n_sym
    truth = np.bincount(sym, minlength=n_sym)
    bound_hh = frequency_error_bound(n, 1.0, BETA)
    hh = 0
    for s in range(100):
        est = ldp_frequency_oracle(_users(carrier, s), lambda x: np.rint(x[:, 0] * n_sym).astype(int),
                                   n_sym, 1.0)
        hh += np.max(np.abs(est - truth)) <= bound_hh

    bound_sum = vector_sum_error_bound(n, 2, 1.0, PP, BETA)
    vs = sum(np.linalg.norm(ldp_vector_sum(_users(pts, 1000 + s), PP) - pts.sum(axis=0)) <= bound_sum
             for s in range(100))

    regions = RegionPartition.balls(inst.oracle.centers, center_gaps(inst.oracle.centers) / 3)
    member = regions.membership(pts)
    r_true = np.bincount(member, minlength=3)[:2]
    true_means = np.array([pts[member == t].mean(axis=0) for t in range(2)])
    min_count = ldp_avg_min_count(n, 2, 1.0, BETA)
    eligible = r_true >= min_count
    avg = 0
    for s in range(100):
        est, _, _ = ldp_avg(_users(pts, 2000 + s), regions, PP)
        errs = np.linalg.norm(est - true_means, axis=1)
        bounds = np.array([ldp_avg_error_bound(n, 2, 2, 1.0, PP, BETA, r) for r in r_true])
        avg += bool(np.all(errs[eligible] <= bounds[eligible]))
    parts_secs = time.perf_counter() - t0

    res, secs, _ = suites("ldp")
    frac, need, trials = _fraction(res, "ldp-kmeans")
    total = parts_secs + secs
    ok = hh >= 95 and vs >= 95 and avg >= 90 and eligible.any() and res.ok and total < 300
    report(7, "local-model bounds", ok,
           f"frequency {hh}/100, vector sum {vs}/100, LDP-AVG {avg}/100, "
           f"cost bound {frac * trials:.0f}/{trials} need {need * trials:.0f}; {total:.0f}s")


# ---------------------------------------------------------------- 8

def test_criterion_8_sample_aggregate(suites):
    t0 = time.perf_counter()
    # wide blobs so OPT_k is large enough for the concentration preconditions
    inst = generate_instance(InstanceSpec(k=2, d=2, n=10_000, scale=0.7, std=0.3, seed=5), restarts=3)
    data = inst.data
    best = kmeanspp_lloyd(data.points, 2, restarts=50, seed=0)
    opt = cost(data.points, best.centers)
    opt_lower = cost(data.points, kmeanspp_lloyd(data.points, 1).centers)
    phi = opt / opt_lower
    T, m = 5, 50_000
    step = data.radius / (data.n * data.dim)
    e1 = e2 = e3 = 0
    pre_ok = True
    for s in range(50):
        subs = subsample_with_replacement(data, T, m, seed=s, enforce_half=False)
        cands = [snap_to_grid(c.centers, step, data.radius).centers for c in cluster_subsamples(subs, 2, s)]
        rep = check_events_E1_E2_E3(data, subs, cands, BETA, 2, best.centers, opt, phi, seed=s)
        pre_ok = pre_ok and all(rep.preconditions.values())
        e1 += rep.E1
        e2 += rep.E2
        e3 += rep.E3
    events_secs = time.perf_counter() - t0

    res, secs, cfg = suites("sample_aggregate")
    frac, need, trials = _fraction(res, "sample-aggregate")
    eps_used = res.rows[0]["sa_epsilon"] if res.rows else math.nan
    total = events_secs + secs
    ok = (pre_ok and e1 >= 50 * (1 - 2 * BETA) and e2 >= 50 * (1 - BETA) and e3 >= 50 * (1 - BETA)
          and res.ok and total < 300)
    report(8, "sample-and-aggregate events and recovery", ok,
           f"preconditions {'met' if pre_ok else 'NOT met'}, E1 {e1}/50, E2 {e2}/50, E3 {e3}/50, "
           f"recovery {frac * trials:.0f}/{trials} need {need * trials:.0f} at epsilon {eps_used:.1f}; "
           f"{total:.0f}s")


# ---------------------------------------------------------------- 9

def test_criterion_9_privacy_accounting():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    k = 2
    pts = np.vstack([rng.normal([0.5, 0], 0.01, (300, 2)), rng.normal([-0.5, 0], 0.01, (300, 2))])
    data = Dataset(pts)
    eps, delta = PP.epsilon, PP.delta

    def matches(total, mult):
        return math.isclose(total.epsilon, mult * eps, rel_tol=1e-12) and \
            math.isclose(total.delta, mult * delta, rel_tol=1e-12)

    km = private_stable_kmeans(data, k, PrivateKMeansConfig(PP), rng_stream(0)).ledger.total_simple()
    kmed = private_stable_kmedian(data, k, PrivateKMedianConfig(PP, median_steps=200),
                                  rng_stream(1)).ledger.total_simple()
    ldp = ldp_stable_kmeans(data, k, PP, rng_stream(2)).ledger.total_simple()

    call_eps = eps / (2 * k * math.sqrt(2 * k * math.log(2 / delta)))
    call_delta = delta / (2 * k * k * math.exp(eps))
    g_eps, g_delta = k * call_eps, k * math.exp(k * call_eps) * call_delta
    expect_eps = math.sqrt(2 * k * math.log(2 / delta)) * g_eps + k * g_eps * (math.exp(g_eps) - 1)
    expect_delta = k * g_delta + delta / 2
    step4 = compose_one_cluster_calls(PP, k)
    sa_ok = math.isclose(step4.epsilon, expect_eps, rel_tol=1e-12) and \
        math.isclose(step4.delta, expect_delta, rel_tol=1e-12) and step4.epsilon <= eps and \
        step4.delta <= delta
    sa_run = sample_aggregate_kmeans(data, k, SampleAggregateConfig(PrivacyParams(math.inf, 0.0), T=10),
                                     rng_stream(3))
    sa_ok = sa_ok and len(sa_run.ledger.entries) == k + 1
    secs = time.perf_counter() - t0
    ok = matches(km, 4) and matches(kmed, k + 2) and matches(ldp, 4) and sa_ok and secs < 1.0
    report(9, "privacy accounting", ok,
           f"k-means {km.epsilon:g}x, k-median {kmed.epsilon:g}x, LDP {ldp.epsilon:g}x, "
           f"step 4 ({step4.epsilon:.4f}, {step4.delta:.3g}); {secs:.2f}s")


# ---------------------------------------------------------------- 10

def test_criterion_10_determinism(suites, tmp_path_factory):
    other = tmp_path_factory.mktemp("acceptance_b")
    same = []
    for name in SUITES:
        suites(name)
        _run_suite(name, other)
        a = (suites.root / name / "results.csv").read_bytes()
        b = (other / name / "results.csv").read_bytes()
        same.append(a == b and len(a) > 0)
    ok = all(same)
    report(10, "byte-identical reruns", ok, f"{sum(same)}/{len(same)} result CSVs identical")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-s"]))
