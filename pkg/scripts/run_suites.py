"""Run the benchmark suites in scripts/configs and print a one-line summary of each.

    python3 scripts/run_suites.py                 # every config
    python3 scripts/run_suites.py kmeans ldp      # a subset, by file stem
    python3 scripts/run_suites.py --out-dir runs  # write under runs/<stem>/
"""

import argparse
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from stableclust.bench import load_config, run_suite
from stableclust.mechanisms import GaussianRangeWarning

CONFIGS = Path(__file__).resolve().parent / "configs"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("names", nargs="*", help="config stems; default: all")
    ap.add_argument("--out-dir", default="results")
    args = ap.parse_args(argv)
    warnings.simplefilter("ignore", GaussianRangeWarning)
    names = args.names or sorted(p.stem for p in CONFIGS.glob("*.cfg"))
    all_ok = True
    for name in names:
        cfg = load_config(CONFIGS / f"{name}.cfg")
        cfg = replace(cfg, out_dir=str(Path(args.out_dir) / name))
        res = run_suite(cfg)
        for pipeline, s in res.summary["pipelines"].items():
            print(f"{name:18s} {pipeline:16s} pass {s['pass_fraction']:.2f} "
                  f"(need {s['required']:.2f})  phi_p {res.summary['phi_p']:.2e}  "
                  f"{res.summary['seconds']:.0f}s  -> {cfg.out_dir}")
        all_ok = all_ok and res.ok
    return 0 if all_ok else 1


if __name__ == "__main__":
    sys.exit(main())
