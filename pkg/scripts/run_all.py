"""Run every bundled experiment config through the CLI.

    python scripts/run_all.py [--out results] [--skip cauchy-stability]

Each experiment writes into <out>/<subcommand>/ together with its manifest.
"""
import argparse
import json
import sys
from pathlib import Path

from lamelab.cli import run

HERE = Path(__file__).resolve().parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--skip", nargs="*", default=[])
    args = ap.parse_args()
    codes = {}
    for cfg in sorted((HERE / "configs").glob("*.json")):
        sub = json.loads(cfg.read_text())["experiment"]
        if sub in args.skip:
            continue
        codes[sub] = run(sub, cfg, Path(args.out) / sub)
    for sub, code in codes.items():
        print(f"{sub:22s} exit {code}")
    return max(codes.values(), default=0)


if __name__ == "__main__":
    sys.exit(main())
