"""Distance-bias factor sweep on SL-r: fixed lambda grid plus learnable-lambda runs.

    python3 scripts/lambda_ablation.py --seeds 0,1,2 --out-dir results/lambda
"""

import argparse
import json
from pathlib import Path

from geoaggregator import bench
from geoaggregator.synth import DGPSpec, generate
from geoaggregator.table import SplitSpec
from geoaggregator.train import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--process", default="sl")
    ap.add_argument("--variant", default="mini")
    ap.add_argument("--data-seed", type=int, default=7)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--grid", default=",".join(f"{v:g}" for v in bench.LAMBDA_GRID))
    ap.add_argument("--out-dir", type=Path, default=Path("results/lambda"))
    args = ap.parse_args()

    table = generate(DGPSpec(process=args.process, seed=args.data_seed))
    rows = bench.run_lambda_ablation(table, args.variant, [float(v) for v in args.grid.split(",")],
                                     [int(s) for s in args.seeds.split(",")], TrainConfig(), SplitSpec(seed=0))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    bench.write_rows(rows, args.out_dir / "lambda_runs.csv")
    best = bench.best_by(rows, "lambda")
    for k, v in best.items():
        print(f"{k!s:>10}  best test MAE {v:.4f}")
    learned = [r["learned_lambda"] for r in rows if r["learnable"]]
    (args.out_dir / "summary.json").write_text(json.dumps(
        {"best_by_lambda": {str(k): v for k, v in best.items()}, "learned_lambda": learned}, indent=2))


if __name__ == "__main__":
    main()
