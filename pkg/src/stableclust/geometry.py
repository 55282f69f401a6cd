"""Deterministic geometry and cost kernel.

Everything here is a pure function of its inputs. Points are stored as
``(n, d)`` float arrays; a :class:`Dataset` additionally carries the radius
of the ball ``B(0, radius)`` that bounds every point.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

# slack for points that sit on the boundary of the ball up to rounding
_RADIUS_SLACK = 1e-9


class GeometryError(ValueError):
    pass


class DimensionMismatch(GeometryError):
    pass


class EmptySubsetError(GeometryError):
    pass


@dataclass(frozen=True)
class Dataset:
    points: np.ndarray
    radius: float = 1.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[1] < 1:
            raise GeometryError(f"points must be an (n, d) array, got shape {pts.shape}")
        if self.radius <= 0:
            raise GeometryError("radius must be positive")
        if len(pts):
            norms = np.linalg.norm(pts, axis=1)
            bad = np.flatnonzero(norms > self.radius * (1 + _RADIUS_SLACK))
            if bad.size:
                raise GeometryError(
                    f"{bad.size} point(s) outside B(0, {self.radius}); first index {bad[0]}"
                )
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n

    def subset(self, idx) -> "Dataset":
        return Dataset(self.points[np.asarray(idx)], self.radius)

    @classmethod
    def clipped(cls, points, radius: float = 1.0) -> "Dataset":
        """Build a dataset after projecting every point into the ball."""
        return cls(project_to_ball(np.asarray(points, dtype=float), radius), radius)


@dataclass(frozen=True)
class CenterSet:
    centers: np.ndarray
    k: int | None = None
    provenance: str = ""

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float)
        if c.ndim == 1:
            c = c.reshape(-1, 1)
        if c.ndim != 2 or c.shape[0] == 0:
            raise GeometryError("a center set needs at least one center")
        if not np.all(np.isfinite(c)):
            raise GeometryError("centers must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)
        if self.k is None:
            object.__setattr__(self, "k", c.shape[0])

    def __len__(self):
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def to_list(self) -> list[list[float]]:
        return self.centers.tolist()


@dataclass(frozen=True)
class Partition:
    cluster_of: np.ndarray
    cluster_sizes: np.ndarray = field(repr=False)

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.cluster_of == j)


def check_p(p: int) -> int:
    if p not in (1, 2):
        raise GeometryError(f"objective exponent must be 1 or 2, got {p!r}")
    return p


def as_points(x) -> np.ndarray:
    if isinstance(x, Dataset):
        return x.points
    if isinstance(x, CenterSet):
        return x.centers
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    return a


def project_to_ball(points: np.ndarray, radius: float) -> np.ndarray:
    pts = np.array(points, dtype=float, copy=True)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    norms = np.linalg.norm(pts, axis=1)
    over = norms > radius
    pts[over] *= (radius / norms[over])[:, None]
    return pts[0] if single else pts


def pairwise_sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Exact squared distances (no ||a||^2 - 2ab + ||b||^2 shortcut, so ties stay ties)."""
    if points.shape[1] != centers.shape[1]:
        raise DimensionMismatch(
            f"points have dim {points.shape[1]}, centers have dim {centers.shape[1]}"
        )
    out = np.empty((points.shape[0], centers.shape[0]))
    for j, c in enumerate(centers):
        diff = points - c
        out[:, j] = np.einsum("ij,ij->i", diff, diff)
    return out


def nearest(points, centers) -> tuple[np.ndarray, np.ndarray]:
    """Index of and squared distance to the nearest center, lowest index on ties."""
    d2 = pairwise_sq_dists(as_points(points), as_points(centers))
    idx = np.argmin(d2, axis=1)
    return idx, d2[np.arange(len(idx)), idx]


def point_costs(data, centers, p: int = 2) -> np.ndarray:
    check_p(p)
    pts = as_points(data)
    if len(pts) == 0:
        return np.zeros(0)
    _, d2 = nearest(pts, centers)
    return d2 if p == 2 else np.sqrt(d2)


def cost(data, centers, p: int = 2) -> float:
    """Sum over points of the p-th power of the distance to the nearest center."""
    return float(np.sum(point_costs(data, centers, p)))


def partition_by_nearest(data, centers, p: int = 2) -> Partition:
    check_p(p)
    c = as_points(centers)
    idx, _ = nearest(as_points(data), c)
    sizes = np.bincount(idx, minlength=len(c))
    return Partition(idx, sizes)


def _subset_points(data, idx) -> np.ndarray:
    pts = as_points(data)
    if idx is not None:
        pts = pts[np.asarray(idx)]
    if len(pts) == 0:
        raise EmptySubsetError("cannot summarise an empty subset")
    return pts


def cluster_mean(data, idx=None) -> np.ndarray:
    return _subset_points(data, idx).mean(axis=0)


def geometric_median(pts: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Weiszfeld iteration with the Vardi-Zhang correction at data points."""
    if pts.shape[1] == 1:
        return np.median(pts, axis=0)
    if len(pts) <= 2:
        return pts.mean(axis=0)
    y = pts.mean(axis=0)
    obj = np.sum(np.linalg.norm(pts - y, axis=1))
    scale = max(np.max(np.linalg.norm(pts - y, axis=1)), 1e-300)
    for _ in range(max_iter):
        diff = pts - y
        dist = np.linalg.norm(diff, axis=1)
        at = dist <= 1e-12 * scale
        w = np.zeros_like(dist)
        w[~at] = 1.0 / dist[~at]
        wsum = w.sum()
        if wsum == 0:
            break
        t = (w[:, None] * pts).sum(axis=0) / wsum
        eta = int(at.sum())
        if eta:
            r = np.linalg.norm((w[:, None] * diff).sum(axis=0))
            if r <= eta:
                break  # y is a data point satisfying the optimality condition
            y_new = (1 - eta / r) * t + (eta / r) * y
        else:
            y_new = t
        new_obj = np.sum(np.linalg.norm(pts - y_new, axis=1))
        if new_obj > obj:
            break
        step = np.linalg.norm(y_new - y)
        improved = obj - new_obj
        y, obj = y_new, new_obj
        if improved <= tol * obj or step <= tol * scale:
            break
    return y


def cluster_median(data, idx=None, tol: float = 1e-10) -> np.ndarray:
    if tol <= 0:
        raise GeometryError("tol must be positive")
    return geometric_median(_subset_points(data, idx), tol=tol)


def _recenter(pts, labels, old_centers, p, weights=None):
    new = np.array(old_centers, dtype=float, copy=True)
    for j in range(len(new)):
        mask = labels == j
        if not mask.any():
            continue
        if p == 2:
            if weights is None:
                new[j] = pts[mask].mean(axis=0)
            else:
                w = weights[mask]
                if w.sum() > 0:
                    new[j] = (w[:, None] * pts[mask]).sum(axis=0) / w.sum()
        else:
            new[j] = geometric_median(pts[mask])
    return new


def lloyd_step(data, centers, p: int = 2) -> CenterSet:
    """One Lloyd step; empty clusters keep their previous center."""
    check_p(p)
    pts = as_points(data)
    c = as_points(centers)
    labels, _ = nearest(pts, c)
    return CenterSet(_recenter(pts, labels, c, p), k=len(c), provenance=f"lloyd_step(p={p})")


def kmeanspp_seed(pts, k, rng, weights=None) -> np.ndarray:
    n = len(pts)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    first = rng.choice(n, p=w / w.sum())
    chosen = [first]
    d2 = np.sum((pts - pts[first]) ** 2, axis=1)
    for _ in range(1, k):
        prob = w * d2
        total = prob.sum()
        if total <= 0:
            # every remaining point coincides with a chosen center
            nxt = rng.choice(n, p=w / w.sum())
        else:
            nxt = rng.choice(n, p=prob / total)
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((pts - pts[nxt]) ** 2, axis=1))
    return pts[np.array(chosen)].copy()


def lloyd(pts, centers, p=2, weights=None, max_iter=300, rel_tol=1e-9):
    """Run Lloyd to convergence; returns (centers, cost)."""
    c = np.array(centers, dtype=float, copy=True)
    w = None if weights is None else np.asarray(weights, dtype=float)

    def _cost(cc):
        pc = point_costs(pts, cc, p)
        return float(pc.sum() if w is None else (w * pc).sum())

    prev = _cost(c)
    for _ in range(max_iter):
        labels, _ = nearest(pts, c)
        c_new = _recenter(pts, labels, c, p, w)
        cur = _cost(c_new)
        if cur > prev:
            break
        c = c_new
        if prev - cur <= rel_tol * max(prev, 1e-300):
            prev = cur
            break
        prev = cur
    return c, prev


def kmeanspp_lloyd(data, k: int, p: int = 2, restarts: int = 10, seed: int = 0,
                   weights=None) -> CenterSet:
    """Best-of-restarts k-means++ seeding followed by Lloyd (non-private baseline)."""
    check_p(p)
    pts = as_points(data)
    if k < 1 or k > len(pts):
        raise GeometryError(f"need 1 <= k <= n, got k={k}, n={len(pts)}")
    rng = np.random.default_rng(seed)
    best, best_cost = None, np.inf
    for _ in range(max(1, restarts)):
        init = kmeanspp_seed(pts, k, rng, weights)
        c, val = lloyd(pts, init, p=p, weights=weights)
        if val < best_cost:
            best, best_cost = c, val
    return CenterSet(best, k=k, provenance=f"kmeans++/lloyd(p={p}, restarts={restarts})")


# ---------------------------------------------------------------- exact oracle

BRUTE_FORCE_MAX_N = 14
_BRUTE_FORCE_MAX_LABELINGS = 3_000_000


def _restricted_growth_strings(n: int, k: int) -> np.ndarray:
    """All set partitions of range(n) into <= k blocks, as canonical label arrays."""
    labels = np.zeros((1, 1), dtype=np.int8)
    maxes = np.zeros(1, dtype=np.int8)
    for _ in range(1, n):
        parts, new_max = [], []
        for v in range(k):
            ok = maxes + 1 >= v
            if not ok.any():
                continue
            block = labels[ok]
            parts.append(np.hstack([block, np.full((len(block), 1), v, dtype=np.int8)]))
            new_max.append(np.maximum(maxes[ok], v))
        labels = np.vstack(parts)
        maxes = np.concatenate(new_max)
        if len(labels) > _BRUTE_FORCE_MAX_LABELINGS:
            raise GeometryError("too many partitions for exhaustive search")
    return labels


def _subset_cost_table(pts: np.ndarray, p: int) -> np.ndarray:
    n = len(pts)
    masks = np.arange(1 << n)
    member = ((masks[:, None] >> np.arange(n)) & 1).astype(float)
    table = np.zeros(1 << n)
    if p == 2:
        cnt = member.sum(axis=1)
        sums = member @ pts
        sq = member @ np.sum(pts ** 2, axis=1)
        nz = cnt > 0
        table[nz] = sq[nz] - np.sum(sums[nz] ** 2, axis=1) / cnt[nz]
        return np.maximum(table, 0.0)
    for m in range(1, 1 << n):
        sub = pts[member[m] > 0]
        med = geometric_median(sub)
        table[m] = np.sum(np.linalg.norm(sub - med, axis=1))
    return table


def brute_force_opt(data, k: int, p: int = 2) -> tuple[CenterSet, float]:
    """Exact OPT^p_k by enumerating every partition into at most k blocks.

    Test oracle only; refuses inputs with more than 14 points.
    """
    check_p(p)
    pts = as_points(data)
    n = len(pts)
    if n > BRUTE_FORCE_MAX_N:
        raise GeometryError(f"brute_force_opt is limited to n <= {BRUTE_FORCE_MAX_N}, got {n}")
    if n == 0 or k < 1:
        raise GeometryError("need at least one point and k >= 1")
    k_eff = min(k, n)
    table = _subset_cost_table(pts, p)
    labels = _restricted_growth_strings(n, k_eff)
    weights = (1 << np.arange(n)).astype(np.int64)
    masks = np.stack([((labels == j) * weights).sum(axis=1) for j in range(k_eff)], axis=1)
    totals = table[masks].sum(axis=1)
    best = int(np.argmin(totals))
    centers = []
    for j in range(k_eff):
        sub = pts[labels[best] == j]
        if len(sub) == 0:
            continue
        centers.append(sub.mean(axis=0) if p == 2 else geometric_median(sub))
    # recompute through cost() so the value matches the returned centers exactly
    cs = CenterSet(np.array(centers), k=k, provenance=f"brute_force_opt(p={p})")
    return cs, min(float(totals[best]), cost(pts, cs.centers, p))


# ---------------------------------------------------------------- matching

def wasserstein(c1, c2) -> float:
    """Euclidean norm of the concatenated center differences under the best matching."""
    a, b = as_points(c1), as_points(c2)
    if a.shape != b.shape:
        raise GeometryError(f"center sets must have equal shape, got {a.shape} and {b.shape}")
    d2 = pairwise_sq_dists(a, b)
    rows, cols = linear_sum_assignment(d2)
    return float(np.sqrt(d2[rows, cols].sum()))


def wasserstein_matching(c1, c2) -> np.ndarray:
    """perm such that c1[i] is matched to c2[perm[i]]."""
    a, b = as_points(c1), as_points(c2)
    if a.shape != b.shape:
        raise GeometryError("center sets must have equal shape")
    _, cols = linear_sum_assignment(pairwise_sq_dists(a, b))
    return cols


def wasserstein_exhaustive(c1, c2) -> float:
    a, b = as_points(c1), as_points(c2)
    if a.shape != b.shape:
        raise GeometryError("center sets must have equal shape")
    if len(a) > 8:
        raise GeometryError("exhaustive matching is limited to k <= 8")
    d2 = pairwise_sq_dists(a, b)
    best = min(sum(d2[i, j] for i, j in enumerate(perm))
               for perm in itertools.permutations(range(len(a))))
    return float(np.sqrt(best))


# ---------------------------------------------------------------- file formats

def save_dataset(data: Dataset, path) -> None:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps({"dim": data.dim, "radius": data.radius,
                                    "points": data.points.tolist()}))
        return
    with path.open("w") as fh:
        fh.write(f"# dim={data.dim} radius={data.radius!r}\n")
        for row in data.points:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    if path.suffix == ".json":
        obj = json.loads(path.read_text())
        pts = np.asarray(obj["points"], dtype=float).reshape(-1, int(obj["dim"]))
        return Dataset(pts, float(obj["radius"]))
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise GeometryError(f"{path}: missing '# dim=<d> radius=<r>' header")
    meta = dict(tok.split("=", 1) for tok in lines[0][1:].replace(",", " ").split())
    dim, radius = int(meta["dim"]), float(meta["radius"])
    rows = [ln for ln in lines[1:] if ln.strip() and not ln.startswith("#")]
    pts = np.array([[float(v) for v in ln.split(",")] for ln in rows]).reshape(-1, dim)
    return Dataset(pts, radius)
