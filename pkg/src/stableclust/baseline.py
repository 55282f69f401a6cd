"""A simple private clustering routine used as the default subroutine.

Noisy histogram over a randomly shifted grid, weighted k-means++ over the
heaviest released cells, then a few noisy Lloyd steps. It makes no
worst-case approximation claim.
"""

from __future__ import annotations

import math

import numpy as np

from .convex import DPConvexConfig, dp_one_median
from .geometry import CenterSet, Dataset, check_p, lloyd, kmeanspp_seed, nearest, project_to_ball
from .mechanisms import (BudgetLedger, PrivacyParams, Sensitivity, laplace_noise, noisy_average)

LLOYD_STEPS = 5
BASELINE_MEDIAN_STEPS = 300
SEEDING_RESTARTS = 10


def grid_width(n: int, d: int, radius: float) -> float:
    return radius / math.ceil(n ** (1.0 / max(d, 2)))


def noisy_grid_histogram(data: Dataset, pp: PrivacyParams, rng: np.random.Generator):
    """Released (cell centers, noisy counts) of a randomly shifted grid.

    Only occupied cells are touched. A cell is released when its noisy count
    clears 1 + (2/eps) ln(1/delta); together with Laplace(2/eps) noise this is
    (eps, delta)-DP under replacing one point.
    """
    pts = data.points
    d = data.dim
    w = grid_width(data.n, d, data.radius)
    shift = rng.uniform(0.0, w, size=d)
    cells = np.floor((pts + shift) / w).astype(np.int64)
    uniq, counts = np.unique(cells, axis=0, return_counts=True)
    noise = laplace_noise(Sensitivity(2.0), pp, len(uniq), rng)
    noisy = counts + noise
    if pp.noiseless:
        keep = np.ones(len(uniq), dtype=bool)
    else:
        thresh = 1.0 + 2.0 / pp.epsilon * math.log(1.0 / pp.delta) if pp.delta > 0 else math.inf
        keep = noisy > thresh
    centers = (uniq[keep] + 0.5) * w - shift
    return project_to_ball(centers, data.radius), noisy[keep]


def _seed_from_cells(cells, weights, k, rng):
    best, best_cost = None, math.inf
    for _ in range(SEEDING_RESTARTS):
        init = kmeanspp_seed(cells, min(k, len(cells)), rng, weights)
        c, val = lloyd(cells, init, p=2, weights=weights)
        if val < best_cost:
            best, best_cost = c, val
    return best


def noisy_lloyd_update(data: Dataset, centers: np.ndarray, pp: PrivacyParams,
                       rng: np.random.Generator, p: int = 2, beta: float = 0.05,
                       median_steps: int | None = None) -> np.ndarray:
    """One Lloyd step where every cluster center is replaced by a private estimate.

    Clusters are disjoint so the whole step costs one (eps, delta). Empty or
    too-small clusters keep their previous center.
    """
    check_p(p)
    labels, _ = nearest(data.points, centers)
    new = np.array(centers, dtype=float, copy=True)
    k = len(centers)
    for j in range(k):
        part = data.points[labels == j]
        if p == 2:
            c, diag = noisy_average(part, data.radius, pp, rng, beta=beta, k=k)
            if not diag["small_cluster"]:
                new[j] = c
        elif len(part):
            mcfg = DPConvexConfig(pp, data.radius, steps=median_steps, beta=beta / k)
            c, _ = dp_one_median(part, mcfg, rng)
            new[j] = c
    return new


def default_private_baseline(data: Dataset, k: int, pp: PrivacyParams, rng: np.random.Generator,
                             p: int = 2, ledger: BudgetLedger | None = None,
                             lloyd_steps: int = LLOYD_STEPS) -> CenterSet:
    """(eps, delta)-DP clustering: noisy grid histogram, seeding, noisy Lloyd steps.

    Half the budget goes to the histogram and the other half is split evenly
    over the Lloyd steps. Per-mechanism spends go to ``ledger`` if given.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    check_p(p)
    half = PrivacyParams(pp.epsilon / 2, pp.delta / 2)
    cells, counts = noisy_grid_histogram(data, half, rng)
    if ledger is not None:
        ledger.record("baseline/histogram", half, "laplace+threshold")
    top = k * max(1, math.ceil(math.log(max(data.n, 2))))
    if len(cells) == 0:
        # nothing released: spread centers uniformly in the ball
        centers = project_to_ball(rng.normal(size=(k, data.dim)) * data.radius / 2, data.radius)
    else:
        order = np.argsort(-counts, kind="stable")[:top]
        cells, weights = cells[order], np.maximum(counts[order], 1e-12)
        centers = _seed_from_cells(cells, weights, k, rng)
        if len(centers) < k:
            extra = centers[rng.integers(len(centers), size=k - len(centers))]
            centers = np.vstack([centers, extra])
    step_pp = half.scaled(1.0 / lloyd_steps) if lloyd_steps else half
    for s in range(lloyd_steps):
        centers = noisy_lloyd_update(data, centers, step_pp, rng, p,
                                     median_steps=BASELINE_MEDIAN_STEPS)
        if ledger is not None:
            ledger.record(f"baseline/lloyd{s}", step_pp, "noisy-lloyd")
    return CenterSet(project_to_ball(centers, data.radius), k=k,
                     provenance=f"grid-baseline(p={p})")
