"""Slope posterior mean as one observation moves away (Normal vs Student-t errors).

Usage: python scripts/run_figure1.py [--config configs/figure1.json] [--out results/figure1.csv]
"""

import argparse
import json
from collections import defaultdict
from pathlib import Path

from heavytails.experiments import SweepConfig, emit_csv, sweep_run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/figure1.json")
    ap.add_argument("--out", default="results/figure1.csv")
    args = ap.parse_args()
    cfg = SweepConfig.from_dict(json.loads(Path(args.config).read_text()))
    records = sweep_run(cfg)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    emit_csv(records, args.out)

    table = defaultdict(dict)
    for r in records:
        table[(r.model_label, r.estimator)][r.omega] = (r.value, r.mcse)
    for (label, est), row in sorted(table.items()):
        print(f"{label:>14s} {est:<22s}", " ".join(f"{v:9.4f}" for v, _ in row.values()))
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
