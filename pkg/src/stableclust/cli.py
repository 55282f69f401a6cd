from __future__ import annotations

import argparse
import json
import os
import sys

from .bench import (ConfigError, InstanceSpec, build_config, dataset_hash, generate_instance,
                    load_config, run_suite)
from .geometry import GeometryError, load_dataset, save_dataset
from .lemmas import run_lemma_suite
from .stability import stability_report


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--pipeline", action="append",
                   choices=["central-kmeans", "central-kmedian", "ldp-kmeans", "sample-aggregate"])
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--beta", type=float)


def _overrides(args) -> dict:
    out = {}
    for flag, key in (("seed", "seed"), ("out_dir", "out_dir"), ("epsilon", "epsilon"),
                      ("delta", "delta"), ("beta", "beta")):
        val = getattr(args, flag, None)
        if val is not None:
            out[key] = val
    if getattr(args, "pipeline", None):
        out["pipelines"] = args.pipeline
    return out


def _cfg(args):
    base = load_config(args.config) if args.config else None
    return build_config(_overrides(args), base)


def cmd_gen(args) -> int:
    cfg = _cfg(args)
    spec = cfg.instance_spec()
    if args.seed is not None:
        spec = InstanceSpec(**{**spec.__dict__, "seed": args.seed})
    inst = generate_instance(spec, restarts=10)
    os.makedirs(cfg.out_dir, exist_ok=True)
    ext = "json" if args.format == "json" else "csv"
    path = os.path.join(cfg.out_dir, f"instance.{ext}")
    save_dataset(inst.data, path)
    meta = {"dataset": path, "sha256": dataset_hash(inst.data), "oracle_centers": inst.oracle.to_list(),
            "oracle": inst.oracle.provenance,
            "stability": inst.report.to_json() if inst.report is not None else None}
    with open(os.path.join(cfg.out_dir, "instance_meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
    print(json.dumps(meta["stability"]))
    return 0


def cmd_run(args) -> int:
    cfg = _cfg(args)
    res = run_suite(cfg)
    for name, s in res.summary["pipelines"].items():
        print(f"{name}: {s['pass_fraction']:.2f} passed (need {s['required']:.2f})")
    return 0 if res.ok else 1


def cmd_audit(args) -> int:
    data = load_dataset(args.dataset)
    rep = stability_report(data.points, args.k, args.p, mode=args.mode, restarts=args.restarts)
    print(rep.dumps())
    return 0


def cmd_verify_lemmas(args) -> int:
    res = run_lemma_suite(args.instances, args.seed if args.seed is not None else 0)
    for name, count in res.passed.items():
        print(f"{name}: {count}/{res.instances}")
    print(f"seconds: {res.seconds:.2f}")
    return 0 if res.ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stableclust")
    sub = ap.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen", help="generate a separable instance")
    _common(g)
    g.add_argument("--format", choices=["csv", "json"], default="csv")
    g.set_defaults(func=cmd_gen)
    r = sub.add_parser("run", help="run pipelines over seeds and write results")
    _common(r)
    r.set_defaults(func=cmd_run)
    a = sub.add_parser("audit", help="stability report of a dataset file")
    a.add_argument("dataset")
    a.add_argument("--k", type=int, required=True)
    a.add_argument("--p", type=int, default=2, choices=[1, 2])
    a.add_argument("--mode", default="auto", choices=["auto", "exact", "heuristic"])
    a.add_argument("--restarts", type=int, default=50)
    a.set_defaults(func=cmd_audit)
    v = sub.add_parser("verify-lemmas", help="randomized checks of the clustering identities")
    v.add_argument("--instances", type=int, default=1000)
    v.add_argument("--seed", type=int)
    v.set_defaults(func=cmd_verify_lemmas)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, GeometryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
