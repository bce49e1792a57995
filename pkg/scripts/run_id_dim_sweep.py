#!/usr/bin/env python3
"""Retrain across id-embedding dimensions and record validation MSE per dim.

python scripts/run_id_dim_sweep.py --data PREP_DIR --config CFG \
    --dims 8,16,32,64,128 --out sweep.csv
"""

import argparse

from nrpa.cli import load_config
from nrpa.data import load_prepared
from nrpa.evaluation import sweep_id_dim


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", required=True)
    ap.add_argument("--config", required=True)
    ap.add_argument("--dims", default="8,16,32,64,128")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    cfg = load_config(args.config)
    ds = load_prepared(args.data)
    dims = [int(x) for x in args.dims.split(",") if x.strip()]
    for d, score in sweep_id_dim(cfg, ds, dims, csv_path=args.out):
        print(f"d_id={d}: val mse = {score!r}")


if __name__ == "__main__":
    main()
