"""Private clustering for well-separated k-means instances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .baseline import default_private_baseline, noisy_lloyd_update
from .geometry import CenterSet, Dataset, cost, project_to_ball
from .mechanisms import BudgetLedger, PrivacyParams, noisy_average, noisy_costs
from .outcome import ClusteringOutcome, select_lower
from .stability import center_gaps

Subroutine = Callable[..., CenterSet]


class SubroutineError(RuntimeError):
    pass


@dataclass(frozen=True)
class PrivateKMeansConfig:
    """``pp_per_step`` is charged once per mechanism; a run makes four of them."""

    pp_per_step: PrivacyParams
    beta: float = 0.05
    subroutine: Subroutine | None = None
    do_final_noisy_lloyd: bool = False
    keep_exact_costs: bool = True


def run_subroutine(sub: Subroutine | None, data: Dataset, k: int, pp: PrivacyParams,
                   rng: np.random.Generator, p: int) -> CenterSet:
    try:
        if sub is None:
            out = default_private_baseline(data, k, pp, rng, p=p)
        else:
            out = sub(data, k, pp, rng)
    except Exception as exc:
        raise SubroutineError(f"private subroutine failed: {exc}") from exc
    if not isinstance(out, CenterSet):
        out = CenterSet(np.asarray(out, dtype=float))
    if len(out) > k:
        raise SubroutineError(f"subroutine returned {len(out)} centers, more than k={k}")
    return CenterSet(project_to_ball(out.centers, data.radius), k=len(out), provenance=out.provenance)


def confident_balls(points: np.ndarray, centers: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Index sets {x : |x - b_i| <= D_i / 3}; with a single center every point qualifies."""
    gaps = center_gaps(centers)
    if len(centers) == 1:
        return [np.arange(len(points))], gaps
    dist = np.sqrt(np.maximum(((points[:, None, :] - centers[None, :, :]) ** 2).sum(-1), 0.0))
    return [np.flatnonzero(dist[:, i] <= gaps[i] / 3) for i in range(len(centers))], gaps


def noisy_lloyd_step(data: Dataset, centers, radius: float, pp: PrivacyParams,
                     rng: np.random.Generator, ledger: BudgetLedger | None = None) -> CenterSet:
    c = np.asarray(centers.centers if isinstance(centers, CenterSet) else centers, dtype=float)
    ds = data if data.radius == radius else Dataset(data.points, radius)
    new = noisy_lloyd_update(ds, c, pp, rng, p=2)
    if ledger is not None:
        ledger.record("noisy_lloyd_step", pp, "noisy-average")
    return CenterSet(new, k=len(new), provenance="noisy_lloyd_step")


def private_stable_kmeans(data: Dataset, k: int, cfg: PrivateKMeansConfig,
                          rng: np.random.Generator) -> ClusteringOutcome:
    if data.n < 1:
        raise ValueError("need at least one point")
    if k < 1:
        raise ValueError("k must be >= 1")
    pp = cfg.pp_per_step
    ledger = BudgetLedger()

    b = run_subroutine(cfg.subroutine, data, k, pp, rng, p=2)
    ledger.record("subroutine", pp, "subroutine")

    balls, gaps = confident_balls(data.points, b.centers)
    chat = np.array(b.centers, copy=True)
    diagnostics = []
    for i, idx in enumerate(balls):
        c, diag = noisy_average(data.points[idx], data.radius, pp, rng, beta=cfg.beta, k=len(b))
        if not diag["small_cluster"]:
            chat[i] = c
        diagnostics.append({"D_hat": float(gaps[i]), "ball_size": int(len(idx)), **diag})
    # the balls are disjoint, so all k averages together cost one (eps, delta)
    ledger.record("noisy_averages", pp, "gaussian+laplace")
    chat_set = CenterSet(chat, k=len(chat), provenance="Chat")

    # two separate Gaussian releases, one per candidate cost
    noisy = noisy_costs(data.points, [chat_set.centers, b.centers], 2, data.radius, pp, rng)
    ledger.record("cost(Chat)", pp, "gaussian")
    ledger.record("cost(B)", pp, "gaussian")
    noisy_pair = (float(noisy[0]), float(noisy[1]))
    chosen, label = select_lower(chat_set, b, noisy_pair)
    exact = (cost(data.points, chat_set.centers), cost(data.points, b.centers)) \
        if cfg.keep_exact_costs else None

    extra = {}
    if cfg.do_final_noisy_lloyd:
        extra["before_final_lloyd"] = chosen.to_list()
        chosen = noisy_lloyd_step(data, chosen, data.radius, pp, rng, ledger)
    return ClusteringOutcome(chosen, b, chat_set, label, noisy_pair, exact, diagnostics,
                             ledger.close(), p=2, extra=extra)
