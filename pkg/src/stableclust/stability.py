"""Stability measures for clustering instances and closeness checks for outputs.

The exact mode uses the brute-force oracle and is limited to tiny inputs;
the heuristic mode replaces OPT by best-of-restarts Lloyd and labels every
result as an estimate.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import (BRUTE_FORCE_MAX_N, GeometryError, as_points, brute_force_opt, check_p,
                       cost, kmeanspp_lloyd, nearest, pairwise_sq_dists)

EXACT = "exact-oracle"
HEURISTIC = "heuristic"


class DegenerateInstance(GeometryError):
    """OPT at the relevant level is zero, so a ratio is undefined."""


@dataclass(frozen=True)
class OptimalClustering:
    centers: np.ndarray
    cost: float
    labels: np.ndarray
    method: str


def _resolve_mode(mode: str, n: int) -> str:
    if mode in ("exact", EXACT):
        if n > BRUTE_FORCE_MAX_N:
            raise GeometryError(f"exact mode needs n <= {BRUTE_FORCE_MAX_N}")
        return EXACT
    if mode in ("heuristic", HEURISTIC):
        return HEURISTIC
    if mode == "auto":
        return EXACT if n <= BRUTE_FORCE_MAX_N else HEURISTIC
    raise ValueError(f"unknown mode {mode!r}")


def optimal_clustering(data, k: int, p: int = 2, mode: str = "auto", restarts: int = 50,
                       seed: int = 0) -> OptimalClustering:
    check_p(p)
    pts = as_points(data)
    method = _resolve_mode(mode, len(pts))
    if method == EXACT:
        cs, val = brute_force_opt(pts, k, p)
        centers = cs.centers
    else:
        centers = kmeanspp_lloyd(pts, k, p, restarts=restarts, seed=seed).centers
        val = cost(pts, centers, p)
    labels, _ = nearest(pts, centers)
    return OptimalClustering(centers, float(val), labels, method)


def separability_ratio(data, k: int, p: int = 2, mode: str = "auto", restarts: int = 50,
                       seed: int = 0) -> float:
    """OPT_k / OPT_{k-1}; an estimate of phi^p (exact for tiny inputs)."""
    if k < 2:
        raise ValueError("separability needs k >= 2")
    hi = optimal_clustering(data, k, p, mode, restarts, seed)
    lo = optimal_clustering(data, k - 1, p, mode, restarts, seed)
    if lo.cost <= 0:
        raise DegenerateInstance("OPT_{k-1} is zero (all points coincide)")
    # a heuristic OPT_k can never be worse than the best (k-1)-solution plus a copy center
    return min(hi.cost, lo.cost) / lo.cost


def center_gaps(centers) -> np.ndarray:
    """D_i = distance from center i to its nearest other center."""
    c = as_points(centers)
    if len(c) < 2:
        return np.full(len(c), np.inf)
    d2 = pairwise_sq_dists(c, c)
    np.fill_diagonal(d2, np.inf)
    return np.sqrt(d2.min(axis=1))


def _per_cluster_costs(pts, opt: OptimalClustering, p: int) -> np.ndarray:
    k = len(opt.centers)
    out = np.zeros(k)
    for i in range(k):
        sub = pts[opt.labels == i]
        if len(sub):
            out[i] = cost(sub, opt.centers[i:i + 1], p)
    return out


def deletion_ratio(data, opt: OptimalClustering, p: int = 2) -> float:
    pts = as_points(data)
    if opt.cost <= 0:
        return math.inf
    k = len(opt.centers)
    per = _per_cluster_costs(pts, opt, p)
    best = math.inf
    for i in range(k):
        sub = pts[opt.labels == i]
        for j in range(k):
            if j == i:
                continue
            moved = cost(sub, opt.centers[j:j + 1], p) if len(sub) else 0.0
            best = min(best, opt.cost - per[i] + moved)
    return best / opt.cost


def separation_ratio(data, opt: OptimalClustering, p: int = 2) -> float:
    if opt.cost <= 0:
        return math.inf
    sizes = np.bincount(opt.labels, minlength=len(opt.centers))
    gaps = center_gaps(opt.centers)
    return float(np.min(sizes * gaps ** p) / opt.cost)


def center_deletion_stability(data, k: int, p: int = 2, mode: str = "auto", **kw) -> float:
    """Smallest (k-1)-cost from folding one optimal cluster into another center, over OPT_k.

    Returns ``inf`` when OPT_k is zero.
    """
    return deletion_ratio(data, optimal_clustering(data, k, p, mode, **kw), p)


def center_separation_stability(data, k: int, p: int = 2, mode: str = "auto", **kw) -> float:
    """min_i n_i * D_i^p / OPT_k for the optimal clustering; ``inf`` when OPT_k is zero."""
    return separation_ratio(data, optimal_clustering(data, k, p, mode, **kw), p)


@dataclass
class MatchResult:
    matched: bool
    matching: list[int] | None
    distances: list[float]
    gaps: list[float]
    eta: float
    witness: dict | None = None
    cost_ratio: float | None = None
    precondition_ok: bool | None = None
    alpha: float | None = None
    closeness_radius: list[float] | None = None
    within_closeness_radius: bool | None = None


def _feasible_matching(dist: np.ndarray, bound: np.ndarray):
    """One-to-one matching of rows (optimal centers) to columns with dist[i, j] < bound[i]."""
    feasible = dist < bound[:, None]
    penalty = np.where(feasible, 0.0, 1.0) + 1e-9 * dist
    rows, cols = linear_sum_assignment(penalty)
    ok = bool(np.all(feasible[rows, cols])) and len(rows) == dist.shape[0]
    return ok, cols


def check_approx_center_stability(data, k: int, p: int, candidate, delta_factor: float | None = None,
                                  eta: float = 0.25, opt: OptimalClustering | None = None,
                                  opt_lower=None, mode: str = "auto") -> MatchResult:
    """Try to match each optimal center to a distinct candidate within eta * D_i^p.

    ``opt_lower`` is the (k-1)-level optimum; when provided (or computable in
    exact mode) the cost-based closeness radius is evaluated as well:
    2 sqrt(q) D_i for p=2 and 2 q D_i for p=1, with q = (alpha + phi) / (1 - phi).
    """
    pts = as_points(data)
    cand = as_points(candidate)
    if opt is None:
        opt = optimal_clustering(pts, k, p, mode)
    gaps = center_gaps(opt.centers)
    dist = np.sqrt(pairwise_sq_dists(opt.centers, cand))
    ok, cols = _feasible_matching(dist ** p, eta * gaps ** p)
    cand_cost = cost(pts, cand, p)
    ratio = cand_cost / opt.cost if opt.cost > 0 else math.inf
    res = MatchResult(
        matched=ok,
        matching=[int(c) for c in cols] if ok else None,
        distances=[float(dist[i, cols[i]]) for i in range(len(cols))],
        gaps=gaps.tolist(),
        eta=eta,
        cost_ratio=ratio,
        precondition_ok=None if delta_factor is None else bool(cand_cost <= delta_factor * opt.cost),
    )
    if not ok:
        nearest_dist = dist.min(axis=1)
        slack = nearest_dist ** p / (eta * gaps ** p)
        i = int(np.argmax(slack))
        res.witness = {"optimal_center": i, "nearest_candidate_distance": float(nearest_dist[i]),
                       "bound": float((eta * gaps[i] ** p) ** (1 / p))}
    if opt_lower is None and len(pts) <= BRUTE_FORCE_MAX_N and k >= 2:
        opt_lower = brute_force_opt(pts, k - 1, p)[1]
    if opt_lower is not None and opt_lower > 0:
        alpha = cand_cost / opt_lower
        phi_p = opt.cost / opt_lower
        if p == 2:
            q = (alpha + phi_p) / (1 - phi_p)
            radius = 2 * math.sqrt(q) * gaps
        else:
            q = (alpha + phi_p) / (1 - phi_p)
            radius = 2 * q * gaps
        in_ok, _ = _feasible_matching(dist, radius * (1 + 1e-12) + 1e-15)
        res.alpha = alpha
        res.closeness_radius = radius.tolist()
        res.within_closeness_radius = in_ok
    return res


@dataclass
class StabilityReport:
    phi_p: float
    beta_deletion: float
    gamma_separation: float
    per_center_D: list[float]
    method: str
    p: int = 2
    k: int = 2
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        out = asdict(self)
        for key in ("phi_p", "beta_deletion", "gamma_separation"):
            if isinstance(out[key], float) and math.isinf(out[key]):
                out[key] = "inf"
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def stability_report(data, k: int, p: int = 2, mode: str = "auto", restarts: int = 50,
                     seed: int = 0) -> StabilityReport:
    pts = as_points(data)
    flags = []
    hi = optimal_clustering(pts, k, p, mode, restarts, seed)
    lo = optimal_clustering(pts, k - 1, p, mode, restarts, seed)
    if lo.cost <= 0:
        phi = math.nan
        flags.append("degenerate: OPT_{k-1} = 0")
    else:
        phi = min(hi.cost, lo.cost) / lo.cost
    if hi.cost <= 0:
        flags.append("degenerate: OPT_k = 0")
    if hi.method == HEURISTIC:
        flags.append("estimate")
    return StabilityReport(
        phi_p=phi,
        beta_deletion=deletion_ratio(pts, hi, p),
        gamma_separation=separation_ratio(pts, hi, p),
        per_center_D=center_gaps(hi.centers).tolist(),
        method=hi.method, p=p, k=k, flags=flags,
    )
