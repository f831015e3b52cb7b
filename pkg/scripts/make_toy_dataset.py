#!/usr/bin/env python3
"""Generate a small synthetic point-fact corpus for smoke runs.

Writes train.txt / valid.txt / test.txt in the 4-column tab-separated format
(subject, predicate, object, YYYY-MM-DD).  Facts are random but de-duplicated;
valid/test are held-out slices so filtered evaluation is meaningful.
"""

import argparse
import datetime
import os

import numpy as np


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--entities", type=int, default=50)
    parser.add_argument("--relations", type=int, default=5)
    parser.add_argument("--days", type=int, default=10)
    parser.add_argument("--facts", type=int, default=700)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    origin = datetime.date(2014, 1, 1)
    seen = set()
    rows = []
    while len(rows) < args.facts:
        s, o = rng.integers(args.entities, size=2)
        if s == o:
            continue
        p = rng.integers(args.relations)
        t = rng.integers(args.days)
        key = (int(s), int(p), int(o), int(t))
        if key in seen:
            continue
        seen.add(key)
        date = origin + datetime.timedelta(days=int(t))
        rows.append(f"entity_{s}\trelation_{p}\tentity_{o}\t{date.isoformat()}\n")

    n_valid = n_test = args.facts // 10
    splits = {
        "test": rows[:n_test],
        "valid": rows[n_test:n_test + n_valid],
        "train": rows[n_test + n_valid:],
    }
    os.makedirs(args.out_dir, exist_ok=True)
    for name, lines in splits.items():
        path = os.path.join(args.out_dir, f"{name}.txt")
        with open(path, "w", encoding="utf-8") as f:
            f.writelines(lines)
        print(f"wrote {len(lines):5d} facts to {path}")


if __name__ == "__main__":
    main()
