#!/usr/bin/env python3
"""Write the two-aspect synthetic review corpus as a CSV ready for
`nrpa prepare --format csv`."""

import argparse
import csv

from nrpa.evaluation import make_synthetic_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=101)
    ap.add_argument("--users", type=int, default=200)
    ap.add_argument("--items", type=int, default=100)
    ap.add_argument("--reviews-per-user", type=int, default=25)
    args = ap.parse_args()

    records = make_synthetic_corpus(args.seed, args.users, args.items,
                                    args.reviews_per_user)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for r in records:
            writer.writerow([r.user_key, r.item_key, repr(r.rating), r.text])
    print(f"wrote {len(records)} interactions to {args.out}")


if __name__ == "__main__":
    main()
