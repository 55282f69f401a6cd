"""Local-model protocols simulated in process.

Users hold raw points and run randomizers; the server side only ever sees
:class:`MessageBatch` objects, which carry the randomized reports of a
contiguous block of users for one protocol phase. Randomizers are
vectorized across a batch, and each row is an independent draw, so a batch
is distributed exactly like separate per-user reports.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from .geometry import (CenterSet, Dataset, cost, kmeanspp_seed, lloyd, point_costs,
                       project_to_ball)
from .mechanisms import BudgetLedger, PrivacyParams, PrivacyError, gaussian_sigma
from .outcome import ClusteringOutcome, select_lower
from .stability import center_gaps

BATCH_SIZE = 8192
MAX_GRID_SYMBOLS = 4096
MAX_GRID_PER_AXIS = 16


@dataclass(frozen=True)
class UserMessage:
    user_id: int
    round: int
    phase: str
    payload: list
    noise_scale: float


@dataclass
class MessageBatch:
    """Reports of users ``first_user .. first_user + len(payload) - 1`` for one phase."""

    round: int
    phase: str
    first_user: int
    payload: np.ndarray
    noise_scale: float

    def __len__(self):
        return len(self.payload)

    def messages(self) -> Iterator[UserMessage]:
        for i, row in enumerate(self.payload):
            val = row.tolist() if isinstance(row, np.ndarray) else [row.item()]
            yield UserMessage(self.first_user + i, self.round, self.phase, val, self.noise_scale)


@dataclass
class Transcript:
    """Phase log of a protocol run; payloads are kept only when asked for."""

    keep_payloads: bool = False
    batches: list[MessageBatch] = field(default_factory=list)
    phases: list[dict] = field(default_factory=list)
    _round: int = 0

    def next_round(self, phase: str, pp: PrivacyParams, n_users: int) -> int:
        self._round += 1
        self.phases.append({"round": self._round, "phase": phase, "epsilon": pp.epsilon,
                            "delta": pp.delta, "users": n_users})
        return self._round

    def log(self, batch: MessageBatch) -> MessageBatch:
        if self.keep_payloads:
            self.batches.append(batch)
        return batch

    def write_jsonl(self, fh) -> int:
        count = 0
        for b in self.batches:
            for msg in b.messages():
                fh.write(json.dumps(msg.__dict__) + "\n")
                count += 1
        return count


class Users:
    """The client side: raw points plus the randomizers they may run."""

    def __init__(self, data: Dataset, rng: np.random.Generator, transcript: Transcript | None = None,
                 batch_size: int = BATCH_SIZE):
        self._points = data.points
        self.radius = data.radius
        self.n = data.n
        self.dim = data.dim
        self.rng = rng
        self.transcript = transcript if transcript is not None else Transcript()
        self.batch_size = batch_size

    def _blocks(self):
        for start in range(0, self.n, self.batch_size):
            yield start, self._points[start:start + self.batch_size]

    def report_symbols(self, symbol_of: Callable[[np.ndarray], np.ndarray], n_symbols: int,
                       epsilon: float, phase: str) -> Iterator[MessageBatch]:
        """Unary-encoding randomized response on each user's symbol."""
        rnd = self.transcript.next_round(phase, PrivacyParams(epsilon, 0.0), self.n)
        keep = _ue_keep_probability(epsilon)
        for start, pts in self._blocks():
            sym = symbol_of(pts)
            onehot = np.zeros((len(pts), n_symbols), dtype=bool)
            onehot[np.arange(len(pts)), sym] = True
            if keep < 1:
                u = self.rng.random(onehot.shape)
                onehot = np.where(onehot, u < keep, u < 1 - keep)
            yield self.transcript.log(MessageBatch(rnd, phase, start, onehot, 1 - keep))

    def report_blocks(self, block_of: Callable[[np.ndarray], np.ndarray], n_blocks: int,
                      sigma: float, pp: PrivacyParams, phase: str) -> Iterator[MessageBatch]:
        """Each user writes its point into its own block; Gaussian noise on every block."""
        rnd = self.transcript.next_round(phase, pp, self.n)
        for start, pts in self._blocks():
            blk = block_of(pts)
            out = np.zeros((len(pts), n_blocks, self.dim))
            inside = blk < n_blocks
            out[np.flatnonzero(inside), blk[inside]] = pts[inside]
            if sigma > 0:
                out += self.rng.normal(0.0, sigma, size=out.shape)
            yield self.transcript.log(MessageBatch(rnd, phase, start, out.reshape(len(pts), -1), sigma))

    def report_values(self, value_of: Callable[[np.ndarray], np.ndarray], sigma: float,
                      pp: PrivacyParams, phase: str) -> Iterator[MessageBatch]:
        """Each user reports a vector function of its point plus Gaussian noise."""
        rnd = self.transcript.next_round(phase, pp, self.n)
        for start, pts in self._blocks():
            val = np.asarray(value_of(pts), dtype=float).reshape(len(pts), -1)
            if sigma > 0:
                val = val + self.rng.normal(0.0, sigma, size=val.shape)
            yield self.transcript.log(MessageBatch(rnd, phase, start, val, sigma))


def _ue_keep_probability(epsilon: float) -> float:
    if math.isinf(epsilon):
        return 1.0
    if not epsilon > 0:
        raise PrivacyError("epsilon must be positive")
    return 1.0 / (1.0 + math.exp(-epsilon / 2))


# ---------------------------------------------------------------- server side

def server_frequencies(batches: Iterable[MessageBatch], epsilon: float) -> np.ndarray:
    """Debiased symbol counts from unary-encoding reports."""
    keep = _ue_keep_probability(epsilon)
    total, n = None, 0
    for b in batches:
        s = b.payload.sum(axis=0, dtype=np.int64)
        total = s if total is None else total + s
        n += len(b)
    if total is None:
        raise ValueError("no reports")
    return (total - n * (1 - keep)) / (2 * keep - 1)


def server_sum(batches: Iterable[MessageBatch]) -> np.ndarray:
    total = None
    for b in batches:
        s = b.payload.sum(axis=0)
        total = s if total is None else total + s
    if total is None:
        raise ValueError("no reports")
    return total


# ---------------------------------------------------------------- regions

@dataclass(frozen=True)
class RegionPartition:
    """T disjoint regions plus an implicit outside region with index T.

    ``kind="balls"``: region t is {x : |x - anchors[t]| <= radii[t]}, ties go to
    the lowest index. ``kind="cells"``: region t is the grid cell
    ``cells[t]`` of width ``width`` shifted by ``shift``; anchors are cell centers.
    """

    kind: str
    anchors: np.ndarray
    radii: np.ndarray | None = None
    cells: np.ndarray | None = None
    width: float = 0.0
    shift: np.ndarray | None = None

    @property
    def T(self) -> int:
        return len(self.anchors)

    @classmethod
    def balls(cls, centers, radii) -> "RegionPartition":
        return cls("balls", np.asarray(centers, dtype=float), radii=np.asarray(radii, dtype=float))

    @classmethod
    def grid_cells(cls, cells, width: float, shift) -> "RegionPartition":
        cells = np.asarray(cells, dtype=np.int64)
        shift = np.asarray(shift, dtype=float)
        return cls("cells", (cells + 0.5) * width - shift, cells=cells, width=width, shift=shift)

    def membership(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.full(len(pts), self.T, dtype=np.int64)
        if self.kind == "balls":
            d = np.sqrt(((pts[:, None, :] - self.anchors[None]) ** 2).sum(-1))
            inside = d <= self.radii[None, :]
            hit = inside.any(axis=1)
            out[hit] = np.argmax(inside[hit], axis=1)
        else:
            idx = np.floor((pts + self.shift) / self.width).astype(np.int64)
            lookup = {tuple(c): t for t, c in enumerate(self.cells.tolist())}
            for i, key in enumerate(map(tuple, idx.tolist())):
                out[i] = lookup.get(key, self.T)
        return out

    def clamp(self, t: int, x: np.ndarray) -> np.ndarray:
        """Post-process an estimate into region t (a no-op for balls)."""
        if self.kind != "cells":
            return x
        lo = self.cells[t] * self.width - self.shift
        return np.clip(x, lo, lo + self.width)


# ---------------------------------------------------------------- protocols

def ldp_frequency_oracle(users: Users, symbol_of: Callable[[np.ndarray], np.ndarray],
                         n_symbols: int, epsilon: float, ledger: BudgetLedger | None = None,
                         phase: str = "frequency") -> np.ndarray:
    if n_symbols < 1:
        raise ValueError("empty symbol domain")
    batches = users.report_symbols(symbol_of, n_symbols, epsilon, phase)
    est = server_frequencies(batches, epsilon)
    if ledger is not None:
        ledger.spend(phase, epsilon, 0.0, "unary-encoding")
    return est


def frequency_error_bound(n: int, epsilon: float, beta: float) -> float:
    return 3.0 / epsilon * math.sqrt(n * math.log(4 / beta))


def vector_sum_sigma(radius: float, pp: PrivacyParams) -> float:
    return gaussian_sigma(2 * radius, pp.epsilon, pp.delta)


def ldp_vector_sum(users: Users, pp: PrivacyParams, ledger: BudgetLedger | None = None,
                   phase: str = "vector-sum") -> np.ndarray:
    sigma = vector_sum_sigma(users.radius, pp)
    est = server_sum(users.report_values(lambda x: x, sigma, pp, phase))
    if ledger is not None:
        ledger.record(phase, pp, "gaussian")
    return est


def vector_sum_error_bound(n: int, d: int, radius: float, pp: PrivacyParams, beta: float) -> float:
    return 2 * radius * math.sqrt(n * d) * math.log(2 / (beta * pp.delta)) / pp.epsilon


def ldp_avg_sigma(radius: float, pp: PrivacyParams) -> float:
    if pp.noiseless:
        return 0.0
    return 8 * radius / pp.epsilon * math.sqrt(math.log(1.25 / pp.delta))


def ldp_avg(users: Users, regions: RegionPartition, pp: PrivacyParams,
            ledger: BudgetLedger | None = None, phase: str = "avg"):
    """Per-region averages: Gaussian block sums over frequency-oracle counts.

    Returns ``(estimates, noisy_counts, flagged)``; a region whose noisy count
    is not positive is flagged and estimated by its anchor.
    """
    T = regions.T
    if T < 1:
        raise ValueError("need at least one region")
    half = PrivacyParams(pp.epsilon / 2, pp.delta)
    sigma = ldp_avg_sigma(users.radius, pp)
    sums = server_sum(users.report_blocks(regions.membership, T, sigma, half, phase + "/sums"))
    if ledger is not None:
        ledger.record(phase + "/sums", half, "gaussian")
    counts = ldp_frequency_oracle(users, regions.membership, T + 1, pp.epsilon / 2, ledger,
                                  phase + "/counts")[:T]
    sums = sums.reshape(T, users.dim)
    est = np.array(regions.anchors, dtype=float, copy=True)
    flagged = counts <= 0
    for t in np.flatnonzero(~flagged):
        est[t] = project_to_ball(regions.clamp(t, sums[t] / counts[t]), users.radius)
    return est, counts, flagged


def ldp_avg_error_bound(n: int, d: int, T: int, radius: float, pp: PrivacyParams, beta: float,
                        r_t: float) -> float:
    return 48 * math.sqrt(d * n) * radius * math.log(8 * d * T / (beta * pp.delta)) / (pp.epsilon * r_t)


def ldp_avg_min_count(n: int, T: int, epsilon: float, beta: float) -> float:
    return 12 / epsilon * math.sqrt(n * math.log(4 * T / beta))


def _grid_for(d: int, radius: float, rng: np.random.Generator):
    per_axis = int(min(MAX_GRID_PER_AXIS, max(1, math.floor(MAX_GRID_SYMBOLS ** (1 / d)) - 1)))
    width = 2 * radius / per_axis
    shift = rng.uniform(0, width, size=d)
    return per_axis, width, shift


def ldp_grid_baseline(users: Users, k: int, pp: PrivacyParams, rng: np.random.Generator,
                      ledger: BudgetLedger | None = None) -> CenterSet:
    """Heavy grid cells by frequency oracle, their centroids by LDP-AVG, then k-means++."""
    d, radius = users.dim, users.radius
    per_axis, width, shift = _grid_for(d, radius, rng)
    side = per_axis + 1
    offset = int(math.floor(-radius / width))

    def symbol_of(pts):
        idx = np.floor((pts + shift) / width).astype(np.int64) - offset
        idx = np.clip(idx, 0, side - 1)
        return np.ravel_multi_index(idx.T, (side,) * d)

    n_symbols = side ** d
    freq = ldp_frequency_oracle(users, symbol_of, n_symbols, pp.epsilon / 2, ledger,
                                "subroutine/cells")
    top = k * max(1, math.ceil(math.log(max(users.n, 2))))
    order = np.argsort(-freq, kind="stable")[:top]
    order = order[freq[order] > 0] if np.any(freq[order] > 0) else order[:k]
    cells = np.stack(np.unravel_index(order, (side,) * d), axis=1) + offset
    regions = RegionPartition.grid_cells(cells, width, shift)
    est, counts, _ = ldp_avg(users, regions, PrivacyParams(pp.epsilon / 2, pp.delta), ledger,
                             "subroutine/avg")
    weights = np.maximum(freq[order], 1e-12)
    best, best_cost = None, math.inf
    for _ in range(10):
        init = kmeanspp_seed(est, min(k, len(est)), rng, weights)
        c, val = lloyd(est, init, p=2, weights=weights)
        if val < best_cost:
            best, best_cost = c, val
    if len(best) < k:
        best = np.vstack([best, best[rng.integers(len(best), size=k - len(best))]])
    return CenterSet(project_to_ball(best, radius), k=k, provenance="ldp-grid-baseline")


def ldp_costs(users: Users, candidates, pp: PrivacyParams, ledger: BudgetLedger | None = None,
              p: int = 2) -> np.ndarray:
    """Each user reports its own cost to every candidate; one Gaussian release per candidate."""
    cands = [project_to_ball(np.asarray(c, dtype=float), users.radius) for c in candidates]
    sigma = gaussian_sigma((2 * users.radius) ** p, pp.epsilon, pp.delta)
    out = []
    for j, c in enumerate(cands):
        phase = f"cost[{j}]"
        total = server_sum(users.report_values(lambda x, c=c: point_costs(x, c, p), sigma, pp,
                                               phase))
        out.append(float(total[0]))
        if ledger is not None:
            ledger.record(phase, pp, "gaussian")
    return np.array(out)


def ldp_stable_kmeans(data: Dataset, k: int, pp: PrivacyParams, rng: np.random.Generator,
                      subroutine: Callable | None = None, transcript: Transcript | None = None,
                      keep_exact_costs: bool = True) -> ClusteringOutcome:
    """Local-model version of the stable k-means pipeline; each user spends 4 (eps, delta)."""
    users = Users(data, rng, transcript)
    ledger = BudgetLedger()
    if subroutine is None:
        sub_ledger = BudgetLedger()
        b = ldp_grid_baseline(users, k, pp, rng, sub_ledger)
    else:
        b = subroutine(users, k, pp, rng)
        if not isinstance(b, CenterSet):
            b = CenterSet(np.asarray(b, dtype=float))
    ledger.record("subroutine", pp, "ldp-subroutine")

    gaps = center_gaps(b.centers)
    radii = np.full(len(b), np.inf) if len(b) == 1 else gaps / 3
    regions = RegionPartition.balls(b.centers, radii)
    est, counts, flagged = ldp_avg(users, regions, pp)
    ledger.record("ldp_avg", pp, "ldp-avg")
    chat = CenterSet(est, k=len(est), provenance="Chat")
    diagnostics = [{"D_hat": float(gaps[i]), "noisy_count": float(counts[i]),
                    "flagged": bool(flagged[i])} for i in range(len(b))]

    noisy = ldp_costs(users, [chat.centers, b.centers], pp)
    ledger.record("cost(Chat)", pp, "gaussian")
    ledger.record("cost(B)", pp, "gaussian")
    pair = (float(noisy[0]), float(noisy[1]))
    chosen, label = select_lower(chat, b, pair)
    exact = (cost(data.points, chat.centers), cost(data.points, b.centers)) if keep_exact_costs else None
    return ClusteringOutcome(chosen, b, chat, label, pair, exact, diagnostics, ledger.close(), p=2,
                             extra={"phases": users.transcript.phases})
