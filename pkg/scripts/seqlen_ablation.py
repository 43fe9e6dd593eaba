"""Sequence-length sweep (l_max) on SL-r with lambda held fixed.

    python3 scripts/seqlen_ablation.py --grid 16,32,64,128,256 --out-dir results/seqlen
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
    ap.add_argument("--lambda-value", type=float, default=1.0)
    ap.add_argument("--grid", default=",".join(str(v) for v in bench.SEQLEN_GRID))
    ap.add_argument("--out-dir", type=Path, default=Path("results/seqlen"))
    args = ap.parse_args()

    table = generate(DGPSpec(process=args.process, seed=args.data_seed))
    rows = bench.run_seqlen_ablation(table, [int(v) for v in args.grid.split(",")],
                                     [int(s) for s in args.seeds.split(",")], args.variant,
                                     args.lambda_value, TrainConfig(), SplitSpec(seed=0))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    bench.write_rows(rows, args.out_dir / "seqlen_runs.csv")
    best = bench.best_by(rows, "l_max")
    for k, v in best.items():
        print(f"l_max={k:<5} best test MAE {v:.4f}")
    (args.out_dir / "summary.json").write_text(json.dumps({str(k): v for k, v in best.items()}, indent=2))


if __name__ == "__main__":
    main()
