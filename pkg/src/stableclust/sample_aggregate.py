"""Sample-and-aggregate clustering: cluster subsamples, privately find dense candidate balls."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CenterSet, Dataset, as_points, cost, kmeanspp_lloyd, project_to_ball
from .kmeans import confident_balls
from .mechanisms import (BudgetLedger, PrivacyParams, advanced_epsilon, amplify_by_sampling,
                         group_privacy, noisy_average, rng_stream, PrivacyError)
from .outcome import ClusteringOutcome
from .stability import separability_ratio

TARGET_FRACTION = 0.9
SUBSAMPLE_RESTARTS = 3


class OneClusterFailure(RuntimeError):
    def __init__(self, round_index: int, detail: str = ""):
        super().__init__(f"1-cluster search failed in round {round_index}: {detail}")
        self.round_index = round_index


@dataclass(frozen=True)
class SampleAggregateConfig:
    pp: PrivacyParams
    T: int
    beta: float = 0.05
    m: int | None = None
    grid_step: float | None = None
    target_fraction: float = TARGET_FRACTION

    def subsample_size(self, n: int) -> int:
        return self.m if self.m is not None else n // (2 * self.T)

    def step(self, n: int, d: int, radius: float) -> float:
        return self.grid_step if self.grid_step is not None else radius / (n * d)


@dataclass
class OneClusterResult:
    center: np.ndarray
    radius: float
    covered: float
    ok: bool = True
    level: int | None = None
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------- budgets

def one_cluster_budget(pp: PrivacyParams, k: int) -> PrivacyParams:
    """Per-call budget of the k dense-ball searches."""
    if pp.noiseless:
        return PrivacyParams(math.inf, 0.0)
    eps = pp.epsilon / (2 * k * math.sqrt(2 * k * math.log(2 / pp.delta)))
    return PrivacyParams(eps, pp.delta * math.exp(-pp.epsilon) / (2 * k * k))


def compose_one_cluster_calls(pp: PrivacyParams, k: int) -> PrivacyParams:
    """Group privacy (group size k) per call, then advanced composition over k calls, delta' = delta/2."""
    per = group_privacy(one_cluster_budget(pp, k), k)
    delta_prime = pp.delta / 2
    return PrivacyParams(advanced_epsilon(k, per.epsilon, delta_prime),
                         k * per.delta + delta_prime)


def sweep_levels(n_candidates: int, radius: float, grid_step: float) -> int:
    return int(math.ceil(math.log2(max(n_candidates * radius / grid_step, 1.0)))) + 1


def one_cluster_shortfall(pp: PrivacyParams, levels: int, beta: float) -> float:
    """Accuracy slack of the above-threshold sweep (budget epsilon/2), w.p. >= 1 - beta.

    Levels whose densest block holds at least threshold + slack stop the sweep,
    and the level that stops it holds at least threshold - slack.
    """
    if pp.noiseless:
        return 0.0
    return 8.0 * math.log(2.0 * levels / beta) / (pp.epsilon / 2)


def required_epsilon(T: int, k: int, delta: float, levels: int, beta: float = 0.05,
                     target_fraction: float = TARGET_FRACTION) -> float:
    """Smallest total epsilon for which t - 2 * slack >= T/2, t = ceil(target_fraction T)."""
    t = math.ceil(target_fraction * T)
    if t <= T / 2:
        return math.inf

    def ok(eps):
        slack = one_cluster_shortfall(one_cluster_budget(PrivacyParams(eps, delta), k), levels, beta)
        return t - 2 * slack >= T / 2

    lo, hi = 1e-6, 1.0
    while not ok(hi):
        hi *= 2
        if hi > 1e9:
            return math.inf
    for _ in range(200):
        mid = (lo + hi) / 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------- steps 1-3

def subsample_with_replacement(data: Dataset, T: int, m: int, seed: int,
                               enforce_half: bool = True) -> list[Dataset]:
    if T < 1 or m < 1:
        raise ValueError("T and m must be positive")
    if enforce_half and T * m > data.n / 2:
        raise ValueError(f"T*m = {T * m} exceeds n/2 = {data.n / 2}")
    rng = rng_stream(seed, "subsample")
    idx = rng.integers(0, data.n, size=(T, m))
    return [Dataset(data.points[row], data.radius) for row in idx]


def snap_to_grid(centers, grid_step: float, radius: float) -> CenterSet:
    """Round every coordinate to the nearest multiple of ``grid_step`` (ties go down)."""
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    c = as_points(centers)
    snapped = np.ceil(c / grid_step - 0.5) * grid_step
    return CenterSet(snapped, k=len(snapped), provenance=f"grid({grid_step:g})")


# ---------------------------------------------------------------- dense ball

def _cell_keys(pts, width, shift):
    return np.floor((pts + shift) / width).astype(np.int64)


def _neighbor_offsets(d: int) -> np.ndarray:
    return np.array(np.meshgrid(*[[-1, 0, 1]] * d, indexing="ij")).reshape(d, -1).T


def _block_counts(keys: np.ndarray, offsets: np.ndarray):
    """For every cell next to an occupied one: the number of points in its 3^d block."""
    uniq, counts = np.unique(keys, axis=0, return_counts=True)
    spread = (uniq[:, None, :] + offsets[None]).reshape(-1, keys.shape[1])
    cells, inv = np.unique(spread, axis=0, return_inverse=True)
    scores = np.bincount(inv.reshape(-1), weights=np.repeat(counts, len(offsets)),
                         minlength=len(cells))
    return cells, scores


def private_one_cluster(candidates, t: int, pp: PrivacyParams, rng: np.random.Generator,
                        radius: float = 1.0, grid_step: float | None = None,
                        beta: float = 0.05) -> OneClusterResult:
    """Find a small ball around a dense spot of ``candidates`` (pure epsilon-DP).

    Cell widths r = radius * 2^-j are scanned from fine to coarse on randomly
    shifted grids. A cell's score is the number of candidates in the 3^d block
    of cells around it, so any ball of radius <= r fits inside one block. An
    above-threshold test (half the budget) stops at the first width whose best
    block reaches t - slack, or the count the selection step needs at that
    width if that is larger. A block is then drawn by the exponential mechanism
    over every cell of the grid (a quarter), and its candidates are averaged
    with Laplace noise (a quarter). ``pp.delta`` is not used.
    """
    pts = as_points(candidates)
    n, d = pts.shape
    if t < 1:
        raise ValueError("t must be >= 1")
    step = grid_step if grid_step is not None else radius / (max(n, 1) * d)
    levels = sweep_levels(max(n, 1), radius, step)
    noiseless = pp.noiseless
    eps_svt = math.inf if noiseless else pp.epsilon / 2
    eps_pick = math.inf if noiseless else pp.epsilon / 4
    eps_avg = math.inf if noiseless else pp.epsilon / 8
    slack = one_cluster_shortfall(pp, levels, beta)
    widths = radius * 2.0 ** -np.arange(levels)
    shifts = rng.uniform(0, 1, size=(levels, d)) * widths[:, None]
    offsets = _neighbor_offsets(d)
    diag = {"levels": levels, "shortfall": slack}
    if n == 0:
        return OneClusterResult(np.zeros(d), math.inf, 0.0, ok=False, diagnostics=diag)

    # a width only qualifies if its best block can also win the selection step below
    pick_margin = np.zeros(levels) if noiseless else \
        2 * (d * np.log(2 * radius / widths + 3) + math.log(1 / beta)) / eps_pick
    thresholds = np.maximum(t - slack, pick_margin)
    rho = 0.0 if noiseless else rng.laplace(0.0, 2.0 / eps_svt)
    chosen_level, noisy_top, tops = None, 0.0, []
    for j in range(levels - 1, -1, -1):
        _, scores = _block_counts(_cell_keys(pts, widths[j], shifts[j]), offsets)
        top = float(scores.max())
        tops.append(top)
        noisy_top = top + (0.0 if noiseless else rng.laplace(0.0, 4.0 / eps_svt))
        if noisy_top >= thresholds[j] + rho:
            chosen_level = j
            break
    diag["block_max_fine_to_coarse"] = tops
    if chosen_level is None:
        return OneClusterResult(np.zeros(d), math.inf, 0.0, ok=False, diagnostics=diag)
    j = chosen_level
    w, s = widths[j], shifts[j]
    keys = _cell_keys(pts, w, s)
    cells, scores = _block_counts(keys, offsets)
    ball_radius = 3 * w * math.sqrt(d)

    # exponential mechanism over every cell whose block meets [-radius, radius]^d
    lo_idx = np.floor((-radius + s) / w).astype(np.int64) - 1
    hi_idx = np.floor((radius + s) / w).astype(np.int64) + 1
    inside = np.all((cells >= lo_idx) & (cells <= hi_idx), axis=1)
    cells, scores = cells[inside], scores[inside]
    log_total = float(np.sum(np.log(hi_idx - lo_idx + 1.0)))
    n_zero_log = math.log(max(math.exp(log_total) - len(cells), 1.0)) if log_total < 700 else log_total
    if noiseless:
        pick = int(np.argmax(scores))
    else:
        logits = np.append(eps_pick * scores / 2.0, n_zero_log)
        probs = np.exp(logits - logits.max())
        probs /= probs.sum()
        pick = int(rng.choice(len(logits), p=probs))
    if pick == len(cells):
        # a block with no candidates won; its location carries no information about the data
        occupied = {tuple(c) for c in cells.tolist()}
        while True:
            cell = rng.integers(lo_idx, hi_idx + 1)
            if tuple(cell.tolist()) not in occupied:
                break
        diag["empty_cell_selected"] = True
        return OneClusterResult(project_to_ball((cell + 0.5) * w - s, radius), ball_radius,
                                noisy_top, ok=True, level=j, diagnostics=diag)
    cell = cells[pick]
    block_center = (cell + 0.5) * w - s
    members = pts[np.all(np.abs(keys - cell) <= 1, axis=1)]
    rel_sum = (members - block_center).sum(axis=0)
    cnt = float(len(members))
    if not noiseless:
        # replacing one candidate moves the relative sum by at most 3w per coordinate
        rel_sum = rel_sum + rng.laplace(0.0, 3 * w * d / eps_avg, size=d)
        cnt = cnt + rng.laplace(0.0, 1.0 / eps_avg)
    offset = rel_sum / cnt if cnt >= 1 else np.zeros(d)
    offset = np.clip(offset, -1.5 * w, 1.5 * w)
    center = project_to_ball(block_center + offset, radius)
    diag["block_count"] = int(len(members))
    return OneClusterResult(center, ball_radius, noisy_top, ok=True, level=j, diagnostics=diag)


# ---------------------------------------------------------------- pipeline

def cluster_subsamples(subsamples: list[Dataset], k: int, seed: int) -> list[CenterSet]:
    return [kmeanspp_lloyd(s.points, k, restarts=SUBSAMPLE_RESTARTS, seed=seed * 100003 + i)
            for i, s in enumerate(subsamples)]


def extract_dense_centers(candidates: np.ndarray, k: int, T: int, pp_call: PrivacyParams,
                          rng: np.random.Generator, radius: float, grid_step: float,
                          beta: float, target_fraction: float = TARGET_FRACTION):
    """k rounds of dense-ball search, each followed by deleting the T closest candidates."""
    remaining = np.array(candidates, copy=True)
    t = max(1, math.ceil(target_fraction * T))
    found, rounds = [], []
    for j in range(k):
        res = private_one_cluster(remaining, t, pp_call, rng, radius, grid_step, beta)
        if not res.ok:
            raise OneClusterFailure(j, "no sweep width reached the target count")
        found.append(res.center)
        dist = np.linalg.norm(remaining - res.center, axis=1)
        drop = np.argsort(dist, kind="stable")[:T]
        rounds.append({"round": j, "center": res.center.tolist(), "radius": res.radius,
                       "covered": res.covered, "level": res.level,
                       "deleted": int(len(drop)), "shortfall": T - int(len(drop)),
                       "empty_cell_selected": bool(res.diagnostics.get("empty_cell_selected"))})
        remaining = np.delete(remaining, drop, axis=0)
    return np.array(found), rounds, remaining


def sample_aggregate_kmeans(data: Dataset, k: int, cfg: SampleAggregateConfig,
                            rng: np.random.Generator, seed: int = 0) -> ClusteringOutcome:
    n, d, radius = data.n, data.dim, data.radius
    T = cfg.T
    m = cfg.subsample_size(n)
    if n < 2 * T or m < 1:
        raise ValueError(f"need n >= 2T with m >= 1, got n={n}, T={T}")
    step = cfg.step(n, d, radius)
    ledger = BudgetLedger()
    pp = cfg.pp

    subs = subsample_with_replacement(data, T, m, seed)
    checks = cluster_subsamples(subs, k, seed)
    snapped = [snap_to_grid(c.centers, step, radius) for c in checks]
    candidates = np.vstack([c.centers for c in snapped])

    pp_call = one_cluster_budget(pp, k)
    b, rounds, _ = extract_dense_centers(candidates, k, T, pp_call, rng, radius, step, cfg.beta,
                                         cfg.target_fraction)
    for j in range(k):
        ledger.record(f"one_cluster[{j}]", pp_call, "dense-ball")
    composed = compose_one_cluster_calls(pp, k) if not pp.noiseless else PrivacyParams(math.inf, 0)
    try:
        amplified = amplify_by_sampling(composed, T * m, n) if not pp.noiseless else None
    except PrivacyError:
        amplified = None

    b_set = CenterSet(project_to_ball(b, radius), k=k, provenance="dense-balls")
    balls, gaps = confident_balls(data.points, b_set.centers)
    chat = np.array(b_set.centers, copy=True)
    diagnostics = []
    for i, idx in enumerate(balls):
        c, diag = noisy_average(data.points[idx], radius, pp, rng, beta=cfg.beta, k=k)
        if not diag["small_cluster"]:
            chat[i] = c
        diagnostics.append({"D_hat": float(gaps[i]), "ball_size": int(len(idx)), **diag})
    ledger.record("noisy_averages", pp, "gaussian+laplace")
    chat_set = CenterSet(chat, k=k, provenance="Chat")
    exact = (cost(data.points, chat), cost(data.points, b_set.centers))
    extra = {"one_cluster_rounds": rounds, "T": T, "m": m, "grid_step": step,
             "step4_composed": [composed.epsilon, composed.delta],
             "step4_amplified": None if amplified is None else [amplified.epsilon, amplified.delta]}
    return ClusteringOutcome(chat_set, b_set, chat_set, "Chat", (math.nan, math.nan), exact,
                             diagnostics, ledger.close(), p=2, extra=extra)


# ---------------------------------------------------------------- events

def delta_bound(data_cost: float, n: int, m: int, k: int, d: int, T: int, radius: float,
                beta: float) -> float:
    return 5 * math.sqrt(radius ** 2 * k * d / (n * m) * data_cost * math.log(2 * n * d * T / beta))


def probe_menu(oracle_centers: np.ndarray, radius: float, rng: np.random.Generator,
               n_random: int = 3) -> list[np.ndarray]:
    """Oracle centers, perturbed copies, a dropped center, and random center sets."""
    k, d = oracle_centers.shape
    menu = [oracle_centers]
    for scale in (0.01, 0.1):
        menu.append(project_to_ball(oracle_centers + rng.normal(0, scale * radius, (k, d)), radius))
    if k > 1:
        menu.append(oracle_centers[1:])
    for _ in range(n_random):
        menu.append(project_to_ball(rng.uniform(-radius, radius, (k, d)), radius))
    return menu


@dataclass
class EventReport:
    E1: bool
    E2: bool
    E3: bool
    e1_fraction: float
    e2_fraction: float
    e3_fraction: float
    preconditions: dict
    flags: list[str]


def check_events_E1_E2_E3(data: Dataset, subsamples: list[Dataset], candidate_sets, beta: float,
                          k: int, oracle_centers, opt_est: float, phi_p: float,
                          probes: list[np.ndarray] | None = None, seed: int = 0) -> EventReport:
    n, d, radius = data.n, data.dim, data.radius
    T = len(subsamples)
    m = subsamples[0].n
    if probes is None:
        probes = probe_menu(as_points(oracle_centers), radius, rng_stream(seed, "probes"))
    data_costs = [cost(data.points, c) for c in probes]
    e1 = []
    for s in subsamples:
        ok = True
        for c, cx in zip(probes, data_costs):
            diff = abs(cost(s.points, c) / m - cx / n)
            if diff > delta_bound(cx, n, m, k, d, T, radius, beta):
                ok = False
                break
        e1.append(ok)
    e2 = []
    for i, s in enumerate(subsamples):
        try:
            ratio = separability_ratio(s.points, k, 2, mode="heuristic", restarts=SUBSAMPLE_RESTARTS,
                                       seed=seed * 7919 + i)
        except Exception:
            ratio = math.inf
        e2.append(ratio <= 4 * phi_p)
    e3 = [cost(data.points, as_points(c)) <= 10 * opt_est for c in candidate_sets]
    log_term = math.log(2 * n * d * T / beta)
    pre = {
        "cher": opt_est >= 3 * radius ** 2 * n * k * d / m * log_term,
        "stable_subsample": opt_est >= 100 * n / m * radius ** 2 * k * d * math.log(2 * n * d / beta),
        "subsample_cost": opt_est >= 100 * radius ** 2 * k * d * n / m * log_term,
    }
    flags = [f"precondition {name} not met" for name, ok in pre.items() if not ok]
    return EventReport(all(e1), all(e2), all(e3), float(np.mean(e1)), float(np.mean(e2)),
                       float(np.mean(e3)), pre, flags)
