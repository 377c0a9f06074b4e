"""Multi-seed trend experiments: transfer ablation, Euclidean tail, calibration.

    python3 scripts/trends.py                       # all three, 5 seeds
    python3 scripts/trends.py --only transfer --seeds 0 1
    python3 scripts/trends.py --cl-include-positive # positive kept in the contrastive denominators
"""

import argparse
import dataclasses
import json
import time

from hcts.experiments import SEEDS, SMOKE_DATA, SMOKE_TRAIN, sweep, variant

STUDIES = {
    # name: (zipf, metric, {label: config changes})
    "transfer": (1.2, "ndcg", {"full": {}, "no-transfer": {"no_s2t": True, "no_t2s": True}}),
    "tail": (1.4, "tail_ndcg", {"hyperbolic": {}, "euclidean": {"euclidean": True}}),
    "calibration": (1.2, "center_norm", {"clib=0.1": {}, "clib=0": {"lambda_clib": 0.0}}),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--only", choices=sorted(STUDIES), action="append")
    ap.add_argument("--seeds", type=int, nargs="+", default=list(SEEDS))
    ap.add_argument("--epochs", type=int, default=SMOKE_TRAIN.epochs)
    ap.add_argument("--cl-include-positive", action="store_true")
    ap.add_argument("--json", help="also write the raw rows here")
    args = ap.parse_args()

    base = variant(SMOKE_TRAIN, epochs=args.epochs, cl_include_positive=args.cl_include_positive)
    raw = {}
    for name in args.only or list(STUDIES):
        zipf, metric, arms = STUDIES[name]
        data = dataclasses.replace(SMOKE_DATA, zipf_exponent=zipf)
        print(f"== {name} (zipf {zipf}, metric {metric})")
        cols = {}
        for label, changes in arms.items():
            t0 = time.perf_counter()
            rows = sweep(data, variant(base, **changes), args.seeds)
            cols[label] = [getattr(r, metric) for r in rows]
            raw[f"{name}/{label}"] = [dataclasses.asdict(r) for r in rows]
            print(f"  {label:<12} " + " ".join(f"{v:.4f}" for v in cols[label])
                  + f"   ({time.perf_counter() - t0:.0f}s)")
        a, b = cols.values()
        better = (lambda x, y: x < y) if metric == "center_norm" else (lambda x, y: x >= y)
        print(f"  first arm wins {sum(better(x, y) for x, y in zip(a, b))}/{len(a)} seeds")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(raw, fh, indent=2)


if __name__ == "__main__":
    main()
