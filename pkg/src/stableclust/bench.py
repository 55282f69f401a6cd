"""Instance generation and experiment orchestration."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .geometry import CenterSet, Dataset, cost, geometric_median, kmeanspp_lloyd, wasserstein
from .kmeans import PrivateKMeansConfig, private_stable_kmeans
from .kmedian import PrivateKMedianConfig, private_stable_kmedian
from .local import ldp_stable_kmeans
from .mechanisms import PrivacyParams, rng_stream
from .sample_aggregate import (OneClusterFailure, SampleAggregateConfig, required_epsilon,
                               sample_aggregate_kmeans, sweep_levels)
from .stability import StabilityReport, _feasible_matching, center_gaps, stability_report

PIPELINES = ("central-kmeans", "central-kmedian", "ldp-kmeans", "sample-aggregate")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- instances

@dataclass(frozen=True)
class InstanceSpec:
    k: int = 2
    d: int = 2
    n: int = 10_000
    radius: float = 1.0
    weights: tuple[float, ...] | None = None
    placement: str = "simplex"
    scale: float = 0.5
    min_separation: float = 0.5
    std: float = 0.01
    seed: int = 0
    phi_tolerance: float | None = None


def simplex_centers(k: int, d: int, norm: float) -> np.ndarray:
    """Regular simplex when k <= d + 1, otherwise a regular k-gon in the first two axes."""
    if k == 1:
        return np.zeros((1, d))
    if k <= d + 1:
        e = np.eye(k) - 1.0 / k
        q, _ = np.linalg.qr(e.T)
        pts = e @ q[:, :k - 1]
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        out = np.zeros((k, d))
        out[:, :k - 1] = pts
        # fix the sign convention so that the first axis reads left to right
        if k == 2:
            out[:, 0] = [-1.0, 1.0]
        return out * norm
    if d < 2:
        raise ConfigError(f"cannot place {k} centers in dimension {d}")
    ang = 2 * np.pi * np.arange(k) / k + np.pi / k
    out = np.zeros((k, d))
    out[:, 0], out[:, 1] = np.cos(ang), np.sin(ang)
    return out * norm


def random_centers(k: int, d: int, radius: float, sep: float, rng: np.random.Generator) -> np.ndarray:
    out = []
    for _ in range(100_000):
        c = rng.uniform(-radius, radius, size=d)
        if np.linalg.norm(c) > radius:
            continue
        if all(np.linalg.norm(c - o) >= sep for o in out):
            out.append(c)
            if len(out) == k:
                return np.array(out)
    raise ConfigError(f"could not place {k} centers with separation {sep}")


@dataclass
class Instance:
    spec: InstanceSpec
    data: Dataset
    labels: np.ndarray
    planted: np.ndarray
    oracle: CenterSet
    report: StabilityReport


def _sample_instance(spec: InstanceSpec, seed: int):
    rng = rng_stream(seed, "instance")
    if spec.placement == "simplex":
        planted = simplex_centers(spec.k, spec.d, spec.scale * spec.radius)
    elif spec.placement == "random":
        planted = random_centers(spec.k, spec.d, spec.scale * spec.radius,
                                 spec.min_separation * spec.radius, rng)
    else:
        raise ConfigError(f"unknown placement {spec.placement!r}")
    w = np.ones(spec.k) if spec.weights is None else np.asarray(spec.weights, dtype=float)
    if len(w) != spec.k or np.any(w < 0) or w.sum() <= 0:
        raise ConfigError("weights must be k nonnegative numbers with positive sum")
    sizes = np.floor(w / w.sum() * spec.n).astype(int)
    sizes[: spec.n - sizes.sum()] += 1
    labels = np.repeat(np.arange(spec.k), sizes)
    pts = planted[labels] + rng.normal(0.0, spec.std, size=(spec.n, spec.d))
    return Dataset.clipped(pts, spec.radius), labels, planted


def generate_instance(spec: InstanceSpec, p: int = 2, restarts: int = 50) -> Instance:
    seed = spec.seed
    for attempt in range(10):
        data, labels, planted = _sample_instance(spec, seed)
        per = [data.points[labels == j] for j in range(spec.k)]
        if p == 2:
            oracle = np.array([q.mean(axis=0) for q in per])
        else:
            oracle = np.array([geometric_median(q) for q in per])
        report = stability_report(data.points, spec.k, p, mode="auto", restarts=restarts,
                                  seed=seed) if spec.k >= 2 else None
        phi = report.phi_p if report is not None else 0.0
        if spec.phi_tolerance is None or not phi > spec.phi_tolerance:
            break
        seed = seed + 1_000_003
    return Instance(spec, data, labels, planted, CenterSet(oracle, provenance="realized cluster centers"),
                    report)


def dataset_hash(data: Dataset) -> str:
    return hashlib.sha256(np.ascontiguousarray(data.points).tobytes()).hexdigest()


# ---------------------------------------------------------------- config

@dataclass
class SuiteConfig:
    pipelines: tuple[str, ...] = ("central-kmeans",)
    trials: int = 10
    seed: int = 0
    k: int = 2
    d: int = 2
    n: int = 10_000
    radius: float = 1.0
    std: float = 0.01
    placement: str = "simplex"
    scale: float = 0.5
    min_separation: float = 0.5
    instance_seed: int = 0
    epsilon: float = 1.0
    delta: float = 1e-5
    beta: float = 0.05
    final_lloyd: bool = False
    T: int = 100
    sa_epsilon: float | None = None
    oracle_restarts: int = 50
    accept_fraction: float = 0.9
    kmeans_factor: float = 50.0
    kmeans_additive: float = 200.0
    kmedian_factor: float = 30.0
    kmedian_additive: float = 50.0
    wasserstein_factor: float = 25.0
    workers: int = 1
    out_dir: str = "results"
    accept: dict = field(default_factory=dict)

    def instance_spec(self) -> InstanceSpec:
        return InstanceSpec(k=self.k, d=self.d, n=self.n, radius=self.radius, placement=self.placement,
                            scale=self.scale, min_separation=self.min_separation, std=self.std,
                            seed=self.instance_seed)

    @property
    def pp(self) -> PrivacyParams:
        return PrivacyParams(self.epsilon, self.delta)


def _parse_value(raw: str, lineno: int):
    raw = raw.strip()
    if raw.startswith("[") and raw.endswith("]"):
        inner = raw[1:-1].strip()
        return [] if not inner else [_parse_value(v, lineno) for v in inner.split(",")]
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "auto"):
        return None
    for conv in (int, float):
        try:
            return conv(raw)
        except ValueError:
            pass
    if not raw:
        raise ConfigError(f"line {lineno}: empty value")
    return raw


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; lists as ``[a, b]``."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if not key or not all(ch.isalnum() or ch in "_-." for ch in key):
            raise ConfigError(f"line {lineno}: bad key {key!r}")
        out[key] = (_parse_value(raw, lineno), lineno)
    return out


def build_config(values: dict, base: SuiteConfig | None = None) -> SuiteConfig:
    cfg = base or SuiteConfig()
    known = {f.name: f for f in fields(SuiteConfig)}
    updates, accept = {}, dict(cfg.accept)
    for key, item in values.items():
        val, lineno = item if isinstance(item, tuple) else (item, 0)
        where = f"line {lineno}: " if lineno else ""
        if key.startswith("accept."):
            name = key[len("accept."):]
            if name not in PIPELINES:
                raise ConfigError(f"{where}unknown pipeline {name!r}")
            accept[name] = float(val)
            continue
        if key not in known or key == "accept":
            raise ConfigError(f"{where}unknown key {key!r}")
        if key == "pipelines":
            val = [val] if isinstance(val, str) else (val or [])
            bad = [v for v in val if v not in PIPELINES]
            if bad:
                raise ConfigError(f"{where}unknown pipeline(s) {bad}")
            val = tuple(val)
        elif key in ("placement", "out_dir"):
            val = str(val)
        elif key == "final_lloyd":
            if not isinstance(val, bool):
                raise ConfigError(f"{where}final_lloyd must be true or false")
        elif key == "sa_epsilon":
            val = None if val is None else float(val)
        elif isinstance(getattr(cfg, key), int) and not isinstance(getattr(cfg, key), bool):
            if not isinstance(val, int):
                raise ConfigError(f"{where}{key} must be an integer")
        elif isinstance(getattr(cfg, key), float):
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                raise ConfigError(f"{where}{key} must be a number")
            val = float(val)
        updates[key] = val
    return replace(cfg, accept=accept, **updates)


def load_config(path) -> SuiteConfig:
    with open(path) as fh:
        return build_config(parse_config_text(fh.read()))


# ---------------------------------------------------------------- trials

@dataclass
class Reference:
    """Oracle quantities shared by every trial of one suite."""

    opt_centers: np.ndarray
    opt_cost: float
    phi_p: float
    opt1_centers: np.ndarray | None = None
    opt1_cost: float | None = None
    phi1: float | None = None


def build_reference(inst: Instance, cfg: SuiteConfig) -> Reference:
    pts = inst.data.points
    k = cfg.k
    hi = kmeanspp_lloyd(pts, k, 2, restarts=cfg.oracle_restarts, seed=cfg.instance_seed)
    opt = cost(pts, hi.centers)
    lo = cost(pts, kmeanspp_lloyd(pts, k - 1, 2, restarts=cfg.oracle_restarts,
                                  seed=cfg.instance_seed).centers) if k >= 2 else math.inf
    ref = Reference(np.array(hi.centers), opt, min(opt, lo) / lo if k >= 2 and lo > 0 else 0.0)
    if "central-kmedian" in cfg.pipelines:
        hi1 = kmeanspp_lloyd(pts, k, 1, restarts=cfg.oracle_restarts, seed=cfg.instance_seed)
        opt1 = cost(pts, hi1.centers, 1)
        lo1 = cost(pts, kmeanspp_lloyd(pts, k - 1, 1, restarts=cfg.oracle_restarts,
                                       seed=cfg.instance_seed).centers, 1) if k >= 2 else math.inf
        ref.opt1_centers, ref.opt1_cost = np.array(hi1.centers), opt1
        ref.phi1 = min(opt1, lo1) / lo1 if k >= 2 and lo1 > 0 else 0.0
    return ref


def kmeans_bound(ref: Reference, cfg: SuiteConfig, n_scale: float = 1.0) -> float:
    add = cfg.kmeans_additive * cfg.k * cfg.radius ** 2 * math.sqrt(cfg.d * n_scale) \
        * math.log(cfg.d * cfg.k / (cfg.beta * cfg.delta)) / cfg.epsilon
    return (1 + cfg.kmeans_factor * ref.phi_p) * ref.opt_cost + add


def kmedian_bound(ref: Reference, cfg: SuiteConfig) -> float:
    add = cfg.kmedian_additive * cfg.k * cfg.radius * math.sqrt(cfg.d) \
        * math.log(cfg.n / (cfg.beta * cfg.delta)) ** 2 / cfg.epsilon
    return (1 + cfg.kmedian_factor * ref.phi1) * ref.opt1_cost + add


def recovery_gamma(phi_p: float) -> float:
    return math.sqrt(160 * phi_p / (1 - 4 * phi_p)) if phi_p < 0.25 else math.inf


def recovered(b: np.ndarray, opt_centers: np.ndarray, gamma: float) -> bool:
    """Each optimal center has a distinct candidate within gamma * D_i."""
    if len(b) < len(opt_centers):
        return False
    dist = np.sqrt(((opt_centers[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    ok, _ = _feasible_matching(dist, gamma * center_gaps(opt_centers))
    return ok


def sa_epsilon(cfg: SuiteConfig) -> float:
    if cfg.sa_epsilon is not None:
        return cfg.sa_epsilon
    levels = sweep_levels(cfg.k * cfg.T, cfg.radius, cfg.radius / (cfg.n * cfg.d))
    return max(cfg.epsilon, required_epsilon(cfg.T, cfg.k, cfg.delta, levels, cfg.beta))


def run_trial(pipeline: str, data: Dataset, ref: Reference, cfg: SuiteConfig, seed: int) -> dict:
    rng = rng_stream(seed, pipeline)
    row = {"pipeline": pipeline, "seed": seed}
    pts = data.points
    if pipeline == "central-kmeans":
        out = private_stable_kmeans(data, cfg.k, PrivateKMeansConfig(
            cfg.pp, cfg.beta, do_final_noisy_lloyd=cfg.final_lloyd), rng)
        c = cost(pts, out.chosen.centers)
        bound = kmeans_bound(ref, cfg)
        wd = wasserstein(out.chosen.centers, ref.opt_centers)
        passed = c <= bound
        if cfg.final_lloyd:
            passed = passed and wd <= cfg.wasserstein_factor * ref.phi_p * cfg.radius
        row.update(objective=2, cost=c, opt_est=ref.opt_cost, phi_p=ref.phi_p, bound=bound,
                   wasserstein=wd, chosen=out.chosen_label, passed=passed)
    elif pipeline == "central-kmedian":
        out = private_stable_kmedian(data, cfg.k, PrivateKMedianConfig(cfg.pp, cfg.beta), rng)
        c = cost(pts, out.chosen.centers, 1)
        bound = kmedian_bound(ref, cfg)
        row.update(objective=1, cost=c, opt_est=ref.opt1_cost, phi_p=ref.phi1, bound=bound,
                   wasserstein=wasserstein(out.chosen.centers, ref.opt1_centers),
                   chosen=out.chosen_label, passed=c <= bound)
    elif pipeline == "ldp-kmeans":
        out = ldp_stable_kmeans(data, cfg.k, cfg.pp, rng)
        c = cost(pts, out.chosen.centers)
        bound = kmeans_bound(ref, cfg, n_scale=cfg.n)
        row.update(objective=2, cost=c, opt_est=ref.opt_cost, phi_p=ref.phi_p, bound=bound,
                   wasserstein=wasserstein(out.chosen.centers, ref.opt_centers),
                   chosen=out.chosen_label, passed=c <= bound)
    elif pipeline == "sample-aggregate":
        eps = sa_epsilon(cfg)
        sa_cfg = SampleAggregateConfig(PrivacyParams(eps, cfg.delta), cfg.T, cfg.beta)
        gamma = recovery_gamma(ref.phi_p)
        try:
            out = sample_aggregate_kmeans(data, cfg.k, sa_cfg, rng, seed=seed)
        except OneClusterFailure:
            row.update(objective=2, cost=math.nan, opt_est=ref.opt_cost, phi_p=ref.phi_p,
                       bound=gamma, wasserstein=math.nan, chosen="failed", passed=False)
            out = None
        if out is not None:
            b = out.candidate_B.centers
            row.update(objective=2, cost=cost(pts, out.chosen.centers), opt_est=ref.opt_cost,
                       phi_p=ref.phi_p, bound=gamma, wasserstein=wasserstein(b, ref.opt_centers),
                       chosen=out.chosen_label, passed=recovered(b, ref.opt_centers, gamma))
        row["sa_epsilon"] = eps
    else:
        raise ConfigError(f"unknown pipeline {pipeline!r}")
    if out is not None:
        total = out.ledger.total_simple()
        row["ledger_epsilon"], row["ledger_delta"] = total.epsilon, total.delta
    else:
        row["ledger_epsilon"] = row["ledger_delta"] = math.nan
    row["passed"] = bool(row["passed"])
    return row


CSV_COLUMNS = ("pipeline", "seed", "objective", "cost", "opt_est", "phi_p", "bound", "wasserstein",
               "chosen", "passed", "ledger_epsilon", "ledger_delta")


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in CSV_COLUMNS])
    return buf.getvalue()


def _trial_job(args):
    pipeline, data_pts, radius, ref, cfg, seed = args
    return run_trial(pipeline, Dataset(data_pts, radius), ref, cfg, seed)


@dataclass
class SuiteResult:
    rows: list[dict]
    summary: dict
    ok: bool


def run_suite(cfg: SuiteConfig, write: bool = True) -> SuiteResult:
    t0 = time.perf_counter()
    if not cfg.pipelines:
        summary = {"pipelines": {}, "ok": True}
        if write:
            _write(cfg, [], summary)
        return SuiteResult([], summary, True)
    inst = generate_instance(cfg.instance_spec(), restarts=min(cfg.oracle_restarts, 10))
    ref = build_reference(inst, cfg)
    jobs = [(p, inst.data.points, inst.data.radius, ref, cfg, cfg.seed + s)
            for p in cfg.pipelines for s in range(cfg.trials)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            rows = list(pool.map(_trial_job, jobs))
    else:
        rows = [_trial_job(j) for j in jobs]
    per = {}
    ok = True
    for p in cfg.pipelines:
        rs = [r for r in rows if r["pipeline"] == p]
        frac = float(np.mean([r["passed"] for r in rs])) if rs else 1.0
        need = cfg.accept.get(p, cfg.accept_fraction)
        costs = np.array([r["cost"] for r in rs], dtype=float)
        per[p] = {"trials": len(rs), "pass_fraction": frac, "required": need, "ok": frac >= need,
                  "cost_quantiles": np.nanquantile(costs, [0.1, 0.5, 0.9]).tolist()
                  if np.any(np.isfinite(costs)) else None,
                  "oracle": "best-of-restarts Lloyd (heuristic)"}
        ok = ok and frac >= need
    summary = {"pipelines": per, "ok": ok, "phi_p": ref.phi_p, "opt_est": ref.opt_cost,
               "dataset_sha256": dataset_hash(inst.data), "config": _config_json(cfg),
               "seconds": time.perf_counter() - t0}
    if write:
        _write(cfg, rows, summary)
    return SuiteResult(rows, summary, ok)


def _config_json(cfg: SuiteConfig) -> dict:
    out = asdict(cfg)
    out["pipelines"] = list(cfg.pipelines)
    return out


def _write(cfg: SuiteConfig, rows, summary) -> None:
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "results.csv"), "w", newline="") as fh:
        fh.write(rows_to_csv(rows))
    with open(os.path.join(cfg.out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
