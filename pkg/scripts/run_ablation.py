#!/usr/bin/env python3
"""Train and score all six attention variants on a prepared dataset.

Equivalent to `nrpa ablate`, kept as a script for notebook-free experiment
runs: python scripts/run_ablation.py --data PREP_DIR --config CFG --out CSV
"""

import argparse

from nrpa.cli import load_config
from nrpa.data import load_prepared
from nrpa.evaluation import run_ablation_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", required=True)
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    cfg = load_config(args.config)
    ds = load_prepared(args.data)
    for name, score in run_ablation_suite(cfg, ds, csv_path=args.out):
        print(f"{name}: test mse = {score!r}")


if __name__ == "__main__":
    main()
