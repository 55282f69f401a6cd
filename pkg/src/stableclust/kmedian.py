"""Private clustering for well-separated k-median instances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convex import DPConvexConfig, dp_one_median
from .geometry import CenterSet, Dataset, cost, nearest
from .kmeans import Subroutine, run_subroutine
from .mechanisms import BudgetLedger, PrivacyParams, noisy_costs
from .outcome import ClusteringOutcome, select_lower


@dataclass(frozen=True)
class PrivateKMedianConfig:
    """A run charges ``pp_per_step`` k + 2 times."""

    pp_per_step: PrivacyParams
    beta: float = 0.05
    subroutine: Subroutine | None = None
    median_steps: int | None = None
    keep_exact_costs: bool = True


def private_stable_kmedian(data: Dataset, k: int, cfg: PrivateKMedianConfig,
                           rng: np.random.Generator) -> ClusteringOutcome:
    if data.n < 1:
        raise ValueError("need at least one point")
    if k < 1:
        raise ValueError("k must be >= 1")
    pp = cfg.pp_per_step
    ledger = BudgetLedger()

    b = run_subroutine(cfg.subroutine, data, k, pp, rng, p=1)
    ledger.record("subroutine", pp, "subroutine")

    labels, _ = nearest(data.points, b.centers)
    chat = np.array(b.centers, copy=True)
    diagnostics = []
    kb = len(b)
    for i in range(kb):
        part = data.points[labels == i]
        mcfg = DPConvexConfig(pp, data.radius, steps=cfg.median_steps, beta=cfg.beta / kb)
        c, diag = dp_one_median(part, mcfg, rng)
        if not diag["empty"]:
            chat[i] = c
        diagnostics.append({"part_size": int(len(part)), **diag})
        ledger.record(f"one_median[{i}]", pp, "noisy-subgradient")
    # parts that the subroutine never filled still count toward k + 2
    for i in range(kb, k):
        ledger.record(f"one_median[{i}]", pp, "noisy-subgradient")
    chat_set = CenterSet(chat, k=len(chat), provenance="Chat")

    noisy = noisy_costs(data.points, [chat_set.centers, b.centers], 1, data.radius, pp, rng,
                        joint=True)
    ledger.record("cost selection", pp, "gaussian")
    noisy_pair = (float(noisy[0]), float(noisy[1]))
    chosen, label = select_lower(chat_set, b, noisy_pair)
    exact = (cost(data.points, chat_set.centers, 1), cost(data.points, b.centers, 1)) \
        if cfg.keep_exact_costs else None
    return ClusteringOutcome(chosen, b, chat_set, label, noisy_pair, exact, diagnostics,
                             ledger.close(), p=1)
