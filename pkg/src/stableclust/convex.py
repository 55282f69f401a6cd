"""Private 1-median by projected noisy subgradient descent."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import as_points, project_to_ball
from .mechanisms import PrivacyParams, Sensitivity, gaussian_noise, split_for_advanced

DEFAULT_MIN_STEPS = 1000
DEFAULT_MAX_STEPS = 2000


@dataclass(frozen=True)
class DPConvexConfig:
    pp: PrivacyParams
    domain_radius: float = 1.0
    lipschitz: float = 1.0
    steps: int | None = None
    beta: float = 0.05

    def resolved_steps(self, n: int) -> int:
        if self.steps is not None:
            if self.steps < 1:
                raise ValueError("steps must be positive")
            return int(self.steps)
        return int(min(max(n * n, DEFAULT_MIN_STEPS), DEFAULT_MAX_STEPS))


def median_subgradient(w: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Mean of the unit vectors (w - x)/|w - x|; terms with x == w contribute 0."""
    return _subgradient_t(w, np.ascontiguousarray(pts.T))


def _subgradient_t(w: np.ndarray, pts_t: np.ndarray) -> np.ndarray:
    diff = w[:, None] - pts_t
    norms = np.sqrt(np.einsum("ij,ij->j", diff, diff))
    inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    return diff @ inv / pts_t.shape[1]


def dp_one_median(points, cfg: DPConvexConfig, rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    """Approximate 1-median of ``points`` under (eps, delta)-DP.

    Full-batch subgradients of the mean loss have replace-one L2 sensitivity
    2L/n. The per-step budget comes from :func:`split_for_advanced`, the step
    size is R/(L sqrt(t)), and the output is the average of the second half of
    the iterates.
    """
    pts = as_points(points)
    radius = cfg.domain_radius
    n = len(pts)
    d = pts.shape[1]
    if n == 0:
        return np.zeros(d), {"empty": True, "steps": 0}
    steps = cfg.resolved_steps(n)
    per_step = split_for_advanced(cfg.pp, steps)
    sens = Sensitivity(2 * cfg.lipschitz / n, "L2")
    w = project_to_ball(pts.mean(axis=0), radius) if cfg.pp.noiseless else np.zeros(d)
    burn = steps // 2
    acc = np.zeros(d)
    pts_t = np.ascontiguousarray(pts.T)
    noise = gaussian_noise(sens, per_step, steps * d, rng).reshape(steps, d)
    for t in range(1, steps + 1):
        w = w - radius / (cfg.lipschitz * math.sqrt(t)) * (_subgradient_t(w, pts_t) + noise[t - 1])
        norm = math.sqrt(float(w @ w))
        if norm > radius:
            w *= radius / norm
        if t > burn:
            acc += w
    out = project_to_ball(acc / (steps - burn), radius)
    return out, {"empty": False, "steps": steps, "per_step_epsilon": per_step.epsilon,
                 "per_step_delta": per_step.delta}
