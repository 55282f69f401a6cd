"""Noise primitives and privacy accounting.

Samplers take an explicit ``numpy.random.Generator``; use :func:`rng_stream`
to derive reproducible, independent generators from ``(seed, label)``.
An ``epsilon`` of ``math.inf`` is accepted everywhere and means "no noise";
tests use it for the noiseless limit.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import as_points, cost, project_to_ball


class PrivacyError(ValueError):
    pass


class GaussianRangeWarning(UserWarning):
    """Gaussian mechanism used with epsilon >= 1, outside its textbook range."""


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise PrivacyError(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.delta >= 0:
            raise PrivacyError(f"delta must be >= 0, got {self.delta}")

    def scaled(self, factor: float) -> "PrivacyParams":
        return PrivacyParams(self.epsilon * factor, self.delta * factor)

    @property
    def noiseless(self) -> bool:
        return math.isinf(self.epsilon)


@dataclass(frozen=True)
class Sensitivity:
    value: float
    norm: str = "L1"

    def __post_init__(self):
        if self.value < 0:
            raise PrivacyError("sensitivity must be nonnegative")
        if self.norm not in ("L1", "L2"):
            raise PrivacyError(f"norm must be 'L1' or 'L2', got {self.norm!r}")


@dataclass(frozen=True)
class LedgerEntry:
    label: str
    epsilon: float
    delta: float
    mechanism: str


@dataclass
class BudgetLedger:
    entries: list[LedgerEntry] = field(default_factory=list)
    closed: bool = False

    def spend(self, label: str, epsilon: float, delta: float = 0.0, mechanism: str = "") -> None:
        if self.closed:
            raise PrivacyError("ledger is closed")
        self.entries.append(LedgerEntry(label, float(epsilon), float(delta), mechanism))

    def record(self, label: str, pp: PrivacyParams, mechanism: str = "") -> None:
        self.spend(label, pp.epsilon, pp.delta, mechanism)

    def close(self) -> "BudgetLedger":
        self.closed = True
        return self

    def __len__(self):
        return len(self.entries)

    def total_simple(self) -> PrivacyParams:
        return compose_simple(self)

    def total_advanced(self, delta_prime: float) -> PrivacyParams:
        """Advanced composition over possibly heterogeneous entries."""
        if not self.entries:
            return PrivacyParams(0.0, 0.0)
        eps = np.array([e.epsilon for e in self.entries])
        term = math.sqrt(2 * math.log(1 / delta_prime) * float(np.sum(eps ** 2)))
        linear = float(np.sum(eps * np.expm1(eps)))
        return PrivacyParams(term + linear, sum(e.delta for e in self.entries) + delta_prime)

    def to_json(self) -> list[dict]:
        return [asdict(e) for e in self.entries]

    def dumps(self) -> str:
        return json.dumps(self.to_json())


# ---------------------------------------------------------------- randomness

def rng_stream(seed: int, label: str = "") -> np.random.Generator:
    """Counter-based generator keyed by (seed, label)."""
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode()).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------- samplers

_warned_gaussian = False


def _check_eps(pp: PrivacyParams) -> None:
    if not pp.epsilon > 0:
        raise PrivacyError(f"epsilon must be positive, got {pp.epsilon}")


def laplace_scale(sensitivity: float, epsilon: float) -> float:
    return 0.0 if math.isinf(epsilon) else sensitivity / epsilon


def gaussian_sigma(sensitivity: float, epsilon: float, delta: float) -> float:
    """Smallest sigma the Gaussian mechanism permits: (lambda/eps) sqrt(2 ln(1.25/delta))."""
    if math.isinf(epsilon) or sensitivity == 0:
        return 0.0
    return sensitivity / epsilon * math.sqrt(2 * math.log(1.25 / delta))


def laplace_noise(sens: Sensitivity, pp: PrivacyParams, dim: int, rng: np.random.Generator,
                  ledger: BudgetLedger | None = None, label: str = "laplace") -> np.ndarray:
    if sens.norm != "L1":
        raise PrivacyError("Laplace mechanism needs an L1 sensitivity")
    _check_eps(pp)
    b = laplace_scale(sens.value, pp.epsilon)
    if ledger is not None:
        ledger.spend(label, pp.epsilon, 0.0, "laplace")
    if b == 0:
        return np.zeros(dim)
    return rng.laplace(0.0, b, size=dim)


def gaussian_noise(sens: Sensitivity, pp: PrivacyParams, dim: int, rng: np.random.Generator,
                   ledger: BudgetLedger | None = None, label: str = "gaussian") -> np.ndarray:
    global _warned_gaussian
    if sens.norm != "L2":
        raise PrivacyError("Gaussian mechanism needs an L2 sensitivity")
    _check_eps(pp)
    if not pp.noiseless and not 0 < pp.delta < 1:
        raise PrivacyError(f"Gaussian mechanism needs 0 < delta < 1, got {pp.delta}")
    if pp.epsilon >= 1 and not pp.noiseless and not _warned_gaussian:
        _warned_gaussian = True
        warnings.warn("Gaussian mechanism calibrated with epsilon >= 1", GaussianRangeWarning,
                      stacklevel=2)
    sigma = gaussian_sigma(sens.value, pp.epsilon, pp.delta)
    if ledger is not None:
        ledger.spend(label, pp.epsilon, pp.delta, "gaussian")
    if sigma == 0:
        return np.zeros(dim)
    return rng.normal(0.0, sigma, size=dim)


def noisy_count(true_count: int, pp: PrivacyParams, rng: np.random.Generator) -> float:
    return float(true_count) + float(laplace_noise(Sensitivity(1.0), pp, 1, rng)[0])


def small_cluster_threshold(pp: PrivacyParams, beta: float = 0.05, k: int = 1) -> float:
    if pp.noiseless or pp.delta <= 0:
        return 1.0
    return max(1.0, 16.0 / pp.epsilon * math.log(4 * k / (beta * pp.delta)))


def noisy_average(points, radius: float, pp: PrivacyParams, rng: np.random.Generator,
                  beta: float = 0.05, k: int = 1) -> tuple[np.ndarray, dict]:
    """Noisy sum over noisy count, each at half the budget, clamped to the ball.

    Subsets whose noisy count falls under the small-cluster threshold return
    the origin with ``small_cluster`` set in the diagnostics.
    """
    pts = as_points(points)
    d = pts.shape[1]
    half = PrivacyParams(pp.epsilon / 2, pp.delta / 2)
    sum_noise = gaussian_noise(Sensitivity(2 * radius, "L2"), half, d, rng)
    count_noise = laplace_noise(Sensitivity(1.0), half, 1, rng)[0]
    n_true = len(pts)
    total = pts.sum(axis=0) if n_true else np.zeros(d)
    noisy_n = n_true + count_noise
    threshold = small_cluster_threshold(pp, beta, k)
    diag = {"true_count": n_true, "noisy_count": float(noisy_n), "threshold": threshold,
            "sum_noise_norm": float(np.linalg.norm(sum_noise)), "small_cluster": False}
    if noisy_n < threshold:
        diag["small_cluster"] = True
        return np.zeros(d), diag
    return project_to_ball((total + sum_noise) / noisy_n, radius), diag


def noisy_costs(data, candidates, p: int, radius: float, pp: PrivacyParams,
                rng: np.random.Generator, joint: bool = False) -> np.ndarray:
    """Noisy costs of several candidate center sets (centers clamped to the ball).

    One point moves any single cost by at most (2*radius)^p. With
    ``joint=False`` every coordinate is its own (eps, delta) Gaussian
    mechanism; with ``joint=True`` the whole vector is a single (eps, delta)
    release with L2 sensitivity sqrt(len(candidates)) * (2*radius)^p.
    """
    exact = np.array([cost(data, project_to_ball(as_points(c), radius), p) for c in candidates])
    per = (2 * radius) ** p
    sens = math.sqrt(len(candidates)) * per if joint else per
    return exact + gaussian_noise(Sensitivity(sens, "L2"), pp, len(candidates), rng)


def noisy_cost(data, centers, p: int, radius: float, pp: PrivacyParams,
               rng: np.random.Generator) -> float:
    return float(noisy_costs(data, [centers], p, radius, pp, rng)[0])


# ---------------------------------------------------------------- accounting

def compose_simple(entries) -> PrivacyParams:
    if isinstance(entries, BudgetLedger):
        entries = entries.entries
    eps = math.fsum(e.epsilon for e in entries)
    delta = math.fsum(e.delta for e in entries)
    return PrivacyParams(eps, delta)


def advanced_epsilon(k: int, eps: float, delta_prime: float) -> float:
    """epsilon' of advanced composition, without range checks."""
    if k == 0:
        return 0.0
    return math.sqrt(2 * k * math.log(1 / delta_prime)) * eps + k * eps * math.expm1(eps)


def compose_advanced(k: int, eps: float, delta: float, delta_prime: float) -> PrivacyParams:
    if k < 0:
        raise PrivacyError("k must be nonnegative")
    if not (0 < eps <= 1) or not (0 < delta_prime <= 1) or not (0 <= delta <= 1):
        raise PrivacyError("advanced composition needs eps, delta' in (0, 1] and delta in [0, 1]")
    return PrivacyParams(advanced_epsilon(k, eps, delta_prime), k * delta + delta_prime)


def group_privacy(pp: PrivacyParams, group_size: int) -> PrivacyParams:
    g = int(group_size)
    if g < 0:
        raise PrivacyError("group size must be nonnegative")
    return PrivacyParams(g * pp.epsilon, g * math.exp(g * pp.epsilon) * pp.delta)


def amplify_by_sampling(pp: PrivacyParams, m: int, n: int) -> PrivacyParams:
    """Privacy of running an (eps, delta)-DP algorithm on m rows sampled with replacement from n."""
    if pp.epsilon > 1:
        raise PrivacyError("amplification by sampling needs epsilon <= 1")
    if n < 2 * m:
        raise PrivacyError(f"need n >= 2m, got n={n}, m={m}")
    e = 6 * pp.epsilon * m / n
    return PrivacyParams(e, math.exp(e) * (4 * m / n) * pp.delta)


def split_for_advanced(total: PrivacyParams, k: int) -> PrivacyParams:
    """Largest per-step (eps, delta) whose k-fold composition fits in ``total``.

    Uses whichever of simple or advanced composition gives the larger per-step
    epsilon; delta is split evenly between the k steps and the slack term.
    """
    if k <= 0:
        raise PrivacyError("k must be positive")
    if total.noiseless:
        return PrivacyParams(math.inf, total.delta / (2 * k) if total.delta else 0.0)
    simple = total.epsilon / k
    if total.delta <= 0:
        return PrivacyParams(simple, 0.0)
    delta_prime = total.delta / 2
    lo, hi = 0.0, total.epsilon
    for _ in range(200):
        mid = (lo + hi) / 2
        if advanced_epsilon(k, mid, delta_prime) <= total.epsilon:
            lo = mid
        else:
            hi = mid
    if lo > simple:
        return PrivacyParams(lo, total.delta / (2 * k))
    return PrivacyParams(simple, total.delta / k)
