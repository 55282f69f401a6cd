from __future__ import annotations

import json
from dataclasses import dataclass, field

from .geometry import CenterSet
from .mechanisms import BudgetLedger


@dataclass
class ClusteringOutcome:
    """Result of a stable-clustering pipeline: both candidates and the pick."""

    chosen: CenterSet
    candidate_B: CenterSet
    candidate_Chat: CenterSet
    chosen_label: str
    noisy_costs: tuple[float, float]
    exact_costs: tuple[float, float] | None
    diagnostics: list[dict]
    ledger: BudgetLedger
    p: int = 2
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "objective": f"p={self.p}",
            "chosen": self.chosen.to_list(),
            "chosen_label": self.chosen_label,
            "candidates": {"B": self.candidate_B.to_list(), "Chat": self.candidate_Chat.to_list()},
            "noisy_costs": {"Chat": self.noisy_costs[0], "B": self.noisy_costs[1]},
            "exact_costs": None if self.exact_costs is None
            else {"Chat": self.exact_costs[0], "B": self.exact_costs[1]},
            "diagnostics": self.diagnostics,
            "ledger": self.ledger.to_json(),
            **self.extra,
        }

    def dumps(self, **kw) -> str:
        return json.dumps(self.to_json(), **kw)


def select_lower(chat: CenterSet, b: CenterSet, noisy: tuple[float, float]) -> tuple[CenterSet, str]:
    """Pick the candidate with the lower noisy cost; an exact tie goes to Chat."""
    return (chat, "Chat") if noisy[0] <= noisy[1] else (b, "B")
