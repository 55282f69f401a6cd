"""Randomized numerical checks of the folklore identities the analysis relies on."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

REL_TOL = 1e-9


def _close(a: float, b: float, tol: float = REL_TOL) -> bool:
    return abs(a - b) <= tol * max(abs(a), abs(b), 1e-300)


def _leq(a: float, b: float, tol: float = REL_TOL) -> bool:
    return a <= b + tol * max(abs(a), abs(b), 1e-300)


def shifted_cost_identity(x: np.ndarray, c_hat: np.ndarray) -> bool:
    """sum |x - c_hat|^2 == n |c_hat - mean|^2 + sum |x - mean|^2."""
    c = x.mean(axis=0)
    lhs = float(np.sum((x - c_hat) ** 2))
    rhs = len(x) * float(np.sum((c_hat - c) ** 2)) + float(np.sum((x - c) ** 2))
    return _close(lhs, rhs)


def pairwise_identity(x: np.ndarray) -> bool:
    """Sum over unordered pairs of |x1 - x2|^2 == n * sum |x - mean|^2."""
    c = x.mean(axis=0)
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    lhs = float(np.sum(np.triu(d2, 1)))
    rhs = len(x) * float(np.sum((x - c) ** 2))
    return _close(lhs, rhs)


def subset_mean_bound(x: np.ndarray, mask: np.ndarray) -> bool:
    """|mean(S) - mean(X)|^2 <= OPT_1(X)/|X| * |X \\ S| / |S| for non-empty S."""
    s = x[mask]
    c = x.mean(axis=0)
    lhs = float(np.sum((s.mean(axis=0) - c) ** 2))
    opt1 = float(np.sum((x - c) ** 2))
    rhs = opt1 / len(x) * (len(x) - len(s)) / len(s)
    return _leq(lhs, rhs)


def far_points_bound(x: np.ndarray, a: float) -> bool:
    """#{x : |x - mean| >= r / a} <= a^2 n where r^2 is the mean squared distance."""
    c = x.mean(axis=0)
    d = np.linalg.norm(x - c, axis=1)
    r = np.sqrt(np.mean(d ** 2))
    return _leq(float(np.sum(d >= r / a)), a * a * len(x))


def sum_of_squares_bound(x: np.ndarray, y: np.ndarray) -> bool:
    """|x + y|^2 <= 2 (|x|^2 + |y|^2)."""
    return _leq(float(np.sum((x + y) ** 2)), 2 * (float(np.sum(x * x)) + float(np.sum(y * y))))


@dataclass
class LemmaSuiteResult:
    instances: int
    passed: dict
    seconds: float

    @property
    def ok(self) -> bool:
        return all(v == self.instances for v in self.passed.values())


def _instance(rng: np.random.Generator):
    n = int(rng.integers(2, 201))
    d = int(rng.integers(1, 9))
    scale = 10.0 ** rng.uniform(-3, 3)
    x = rng.normal(size=(n, d)) * scale + rng.normal(size=d) * scale * rng.uniform(0, 5)
    return x, n, d, scale


def run_lemma_suite(instances: int = 1000, seed: int = 0) -> LemmaSuiteResult:
    rng = np.random.default_rng(seed)
    names = ["shifted_cost_identity", "pairwise_identity", "subset_mean_bound",
             "far_points_bound", "sum_of_squares_bound"]
    passed = dict.fromkeys(names, 0)
    t0 = time.perf_counter()
    for _ in range(instances):
        x, n, d, scale = _instance(rng)
        c_hat = rng.normal(size=d) * scale * 3
        mask = rng.random(n) < rng.uniform(0.05, 1.0)
        if not mask.any():
            mask[rng.integers(n)] = True
        a = float(rng.uniform(0.05, 2.0))
        y = rng.normal(size=d) * scale
        passed["shifted_cost_identity"] += shifted_cost_identity(x, c_hat)
        passed["pairwise_identity"] += pairwise_identity(x)
        passed["subset_mean_bound"] += subset_mean_bound(x, mask)
        passed["far_points_bound"] += far_points_bound(x, a)
        passed["sum_of_squares_bound"] += sum_of_squares_bound(x[0], y)
    return LemmaSuiteResult(instances, {k: int(v) for k, v in passed.items()},
                            time.perf_counter() - t0)
