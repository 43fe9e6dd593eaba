"""Command-line entry point: generate, train, eval, ablate, bench.

Exit codes: 0 success, 2 usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

from . import bench, gwr
from .model import VARIANTS, GAConfig, count_params, load_checkpoint, save_checkpoint
from .spatial import BoxScaler
from .synth import DGPSpec, write_dataset
from .table import GeoTable, SplitSpec, load_csv, split
from .train import SpatialContext, TrainConfig, mae, predict, r2_score, train_model

log = logging.getLogger("geoaggregator")


class UsageError(Exception):
    pass


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _seed_for(seed: int, component: str) -> int:
    """Deterministic per-component seed derived from the single --seed flag."""
    digest = hashlib.sha256(f"{seed}:{component}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def _out_dir(arg: str | None) -> Path:
    return Path(arg) if arg else Path("runs") / time.strftime("%Y%m%d-%H%M%S")


def _write_manifest(out: Path, args, config: dict, seeds: dict, inputs: dict, artifacts: list, t0: float) -> None:
    manifest = {
        "subcommand": args.command,
        "argv": sys.argv[1:] if args.argv is None else args.argv,
        "config": config,
        "seeds": seeds,
        "inputs": inputs,
        "artifacts": [str(a) for a in artifacts],
        "wall_clock_sec": time.time() - t0,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))


def _cols(s: str) -> list[str]:
    return [c.strip() for c in s.split(",") if c.strip()]


def _floats(s: str) -> list[float]:
    try:
        return [float(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse number list {s!r}") from None


def _lengths(s: str) -> list[int]:
    """'64..1024' doubles from 64 to 1024; otherwise a comma list."""
    try:
        if ".." in s:
            lo, hi = (int(v) for v in s.split(".."))
            out = []
            while lo <= hi:
                out.append(lo)
                lo *= 2
            return out
        return [int(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse length grid {s!r}") from None


def _load(args) -> GeoTable:
    path = Path(args.data)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    return load_csv(path, _cols(args.x_cols), _cols(args.loc_cols), args.y_col)


def _split_spec(args) -> SplitSpec:
    fr = _floats(args.split)
    if len(fr) != 3:
        raise UsageError("--split needs three fractions")
    try:
        return SplitSpec(*fr, seed=_seed_for(args.seed, "split") if args.split_seed is None else args.split_seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# -- subcommands ------------------------------------------------------------------

def cmd_generate(args) -> int:
    t0 = time.time()
    try:
        rows, cols = (int(v) for v in args.grid.lower().split("x"))
    except ValueError:
        raise UsageError(f"--grid must look like 50x50, got {args.grid!r}") from None
    try:
        spec = DGPSpec(
            process=args.process, rho=args.rho, theta1=args.theta1, theta2=args.theta2,
            noise_std=args.noise_std, sampler={"r": "uniform", "d": "correlated"}[args.cov],
            rows=rows, cols=cols, seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = args.name or f"{args.process}_{args.cov}"
    csv_path, json_path = out / f"{name}.csv", out / f"{name}.json"
    table = write_dataset(spec, csv_path, json_path)
    _write_manifest(out, args, spec.to_dict(), {"seed": args.seed}, {}, [csv_path, json_path], t0)
    print(f"wrote {table.n_points} rows to {csv_path}")
    return 0


def _model_config(args) -> GAConfig:
    if args.variant not in VARIANTS:
        raise UsageError(f"--variant must be one of {sorted(VARIANTS)}")
    kw = {"seed": _seed_for(args.seed, "model"), "attention": args.attention}
    if args.l_max:
        kw["l_max"] = args.l_max
    if args.fixed_lambda is not None:
        kw.update(lambda_init=args.fixed_lambda, learn_lambda=False)
    else:
        kw["lambda_init"] = args.lambda_init
    return GAConfig.variant(args.variant, **kw)


def cmd_train(args) -> int:
    t0 = time.time()
    table = _load(args)
    if table.target is None:
        raise UsageError("--y-col is required for training")
    sspec = _split_spec(args)
    mcfg = _model_config(args)
    tcfg = TrainConfig(batch_size=args.batch_size, epochs=args.epochs, max_lr=args.max_lr,
                       cycle_steps=args.cycle_steps, seed=_seed_for(args.seed, "train"),
                       patience=args.patience, bias_unit=args.bias_unit)
    print(json.dumps({"variant": args.variant, "L": mcfg.n_processors, "l_hidden": mcfg.n_inducing,
                      "l_max": mcfg.l_max, "params": count_params(replace(mcfg, m=table.m))}), flush=True)
    tr, va, te = split(table, sspec)
    res = train_model(tr, va, mcfg, tcfg, radius=args.radius)
    cfg = res.model.config

    out = _out_dir(args.out_dir)
    created = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    try:
        test_pred = predict(res.model, res.context, te, seed=res.eval_seed)
        meta = {
            "data": str(Path(args.data).resolve()),
            "data_sha256": _sha256(args.data),
            "x_cols": _cols(args.x_cols), "loc_cols": _cols(args.loc_cols), "y_col": args.y_col,
            "split": asdict(sspec),
            "context": res.context.meta(),
            "train_config": asdict(tcfg),
            "eval_seed": res.eval_seed,
            "best_epoch": res.best_epoch,
            "val_mae": res.best_val_mae,
        }
        ckpt = out / "model"
        save_checkpoint(res.model, ckpt, meta)
        res.write_history(out / "history.csv")
        metrics = {"val_mae": res.best_val_mae, "test_mae": mae(test_pred, te.target),
                   "test_r2": r2_score(test_pred, te.target), "params": res.model.num_parameters(),
                   "bias_factors": res.model.bias_factors(), "radius": res.context.radius * res.context.scaler.scale}
        (out / "metrics.json").write_text(json.dumps(metrics, indent=2))
        _write_manifest(out, args, {"model": cfg.to_dict(), "train": asdict(tcfg), "split": asdict(sspec)},
                        {"seed": args.seed, "model": cfg.seed, "train": tcfg.seed, "split": sspec.seed},
                        {"data": meta["data_sha256"]},
                        [ckpt.with_suffix(".json"), ckpt.with_suffix(".bin"), out / "history.csv", out / "metrics.json"],
                        t0)
    except BaseException:
        if created:
            shutil.rmtree(out, ignore_errors=True)
        raise
    print(json.dumps(metrics))
    return 0


def _context_from_meta(meta: dict, train: GeoTable, l_max: int) -> SpatialContext:
    c = meta["context"]
    scaler = BoxScaler.from_dict(c["scaler"])
    return SpatialContext(train.covariates, (train.target - c["y_mean"]) / c["y_std"], scaler(train.locations),
                          scaler, c["radius"], c["y_mean"], c["y_std"], l_max, c.get("order", "random"))


def cmd_eval(args) -> int:
    t0 = time.time()
    if args.model in ("gwr", "ols"):
        table = _load(args)
        if table.target is None:
            raise UsageError("--y-col is required")
        tr, va, te = split(table, _split_spec(args))
        part = {"val": va, "test": te}[args.part]
        if args.model == "gwr":
            gm = gwr.GWRModel.fit(tr, bandwidth=args.bandwidth)
            pred = gm.predict(part)
            metrics = {"model": "gwr", "bandwidth": gm.bandwidth}
        else:
            pred = gwr.ols_fit_predict(tr, part)
            metrics = {"model": "ols"}
        metrics.update({"part": args.part, "mae": mae(pred, part.target), "r2": r2_score(pred, part.target)})
    else:
        ckpt = Path(args.model)
        if not ckpt.with_suffix(".json").is_file():
            raise FileNotFoundError(f"checkpoint not found: {ckpt.with_suffix('.json')}")
        model, meta = load_checkpoint(ckpt)
        if args.data is None:
            args.data = meta["data"]
            args.x_cols, args.loc_cols, args.y_col = ",".join(meta["x_cols"]), ",".join(meta["loc_cols"]), meta["y_col"]
        table = _load(args)
        if table.m != model.config.m:
            raise UsageError(f"dataset has {table.m} covariates, checkpoint expects {model.config.m}")
        if _sha256(args.data) != meta.get("data_sha256"):
            log.warning("data file differs from the one used for training")
        tr, va, te = split(table, SplitSpec(**meta["split"]))
        part = {"val": va, "test": te}[args.part]
        ctx = _context_from_meta(meta, tr, model.config.l_max)
        pred = predict(model, ctx, part, seed=meta["eval_seed"])
        metrics = {"model": str(ckpt), "part": args.part, "mae": mae(pred, part.target),
                   "r2": r2_score(pred, part.target), "params": model.num_parameters()}
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(metrics, indent=2))
        _write_manifest(out, args, metrics, {"seed": args.seed}, {"data": _sha256(args.data)},
                        [out / "metrics.json"], t0)
    print(json.dumps(metrics))
    return 0


def cmd_ablate(args) -> int:
    t0 = time.time()
    seeds = [int(s) for s in _floats(args.seeds)]
    if not seeds:
        raise UsageError("--seeds is empty")
    if args.sweep == "lambda":
        grid = _floats(args.grid) if args.grid is not None else list(bench.LAMBDA_GRID)
    else:
        grid = _lengths(args.grid) if args.grid is not None else list(bench.SEQLEN_GRID)
    if not grid:
        raise UsageError("empty sweep grid")
    table = _load(args)
    sspec = _split_spec(args)
    tcfg = TrainConfig(epochs=args.epochs, seed=0, patience=args.patience)
    if args.sweep == "lambda":
        rows = bench.run_lambda_ablation(table, args.variant, grid, seeds, tcfg, sspec)
        summary = {str(k): v for k, v in bench.best_by(rows, "lambda").items()}
    else:
        rows = bench.run_seqlen_ablation(table, grid, seeds, args.variant, 1.0, tcfg, sspec)
        summary = {str(k): v for k, v in bench.best_by(rows, "l_max").items()}
    out = _out_dir(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    key = "lambda" if args.sweep == "lambda" else "l_max"
    grid_rows = [{key: k, "best_test_mae": v} for k, v in summary.items()]
    arts = [out / f"{args.sweep}_runs.csv", out / f"{args.sweep}_grid.csv", out / "summary.json"]
    bench.write_rows(rows, arts[0])
    bench.write_rows(grid_rows, arts[1])
    bench.write_summary({"sweep": args.sweep, "best_test_mae": summary}, arts[2])
    _write_manifest(out, args, {"train": asdict(tcfg), "split": asdict(sspec), "grid": grid},
                    {"seeds": seeds}, {"data": _sha256(args.data)}, arts, t0)
    print(json.dumps(summary))
    return 0


def cmd_bench(args) -> int:
    t0 = time.time()
    mechs = _cols(args.mechanisms)
    bad = [m for m in mechs if m not in bench.MECHANISMS]
    if not mechs or bad:
        raise UsageError(f"--mechanisms must be drawn from {bench.MECHANISMS}")
    lengths = _lengths(args.lmax)
    if not lengths:
        raise UsageError("empty --lmax grid")
    cfg = GAConfig.variant(args.variant, m=args.m)
    curves = bench.cost_curves(cfg, lengths, mechs)
    rows = [{"mechanism": k, "l_max": ell, "flops": f}
            for k, v in curves.items() for ell, f in zip(v["l_max"], v["flops"])]
    out = _out_dir(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bench.write_rows(rows, out / "flops.csv")
    summary = {"slopes": {k: v["slope"] for k, v in curves.items()}, "params": bench.param_table(args.m),
               "convention": "1 multiply-add = 2 FLOPs; softmax/bias elementwise ops 1 FLOP"}
    bench.write_summary(summary, out / "summary.json")
    _write_manifest(out, args, {"model": cfg.to_dict(), "lmax": lengths, "mechanisms": mechs}, {}, {},
                    [out / "flops.csv", out / "summary.json"], t0)
    print(json.dumps(summary["slopes"]))
    return 0


# -- parser -----------------------------------------------------------------------

def _data_flags(p, required: bool = True) -> None:
    p.add_argument("--data", required=required)
    p.add_argument("--x-cols", default="x1,x2")
    p.add_argument("--loc-cols", default="l1,l2")
    p.add_argument("--y-col", default="y")
    p.add_argument("--split", default="0.7,0.1,0.2")
    p.add_argument("--split-seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geoagg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--process", required=True, choices=["lin", "sl", "slx", "durbin"])
    g.add_argument("--cov", default="r", choices=["r", "d"])
    g.add_argument("--grid", default="50x50")
    g.add_argument("--rho", type=float, default=0.5)
    g.add_argument("--theta1", type=float, default=0.5)
    g.add_argument("--theta2", type=float, default=0.5)
    g.add_argument("--noise-std", type=float, default=1.0)
    g.add_argument("--name")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a GeoAggregator")
    _data_flags(t)
    t.add_argument("--variant", default="mini", choices=sorted(VARIANTS))
    t.add_argument("--attention", default="mcpa", choices=["mcpa", "vanilla"])
    t.add_argument("--l-max", type=int, default=0)
    t.add_argument("--lambda-init", type=float, default=1.0)
    t.add_argument("--fixed-lambda", type=float, default=None)
    t.add_argument("--radius", type=float, default=None, help="query radius in data units (default: estimated)")
    t.add_argument("--epochs", type=int, default=60)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--max-lr", type=float, default=5e-3)
    t.add_argument("--cycle-steps", type=int, default=200)
    t.add_argument("--patience", type=int, default=10)
    t.add_argument("--bias-unit", default="radius", choices=["radius", "box"])
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint or a GWR/OLS baseline")
    e.add_argument("--model", required=True, help="checkpoint path prefix, 'gwr' or 'ols'")
    _data_flags(e, required=False)
    e.add_argument("--part", default="test", choices=["val", "test"])
    e.add_argument("--bandwidth", type=float, default=None)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="lambda or sequence-length sweep")
    _data_flags(a)
    a.add_argument("--sweep", required=True, choices=["lambda", "seqlen"])
    a.add_argument("--grid", default=None)
    a.add_argument("--variant", default="mini", choices=sorted(VARIANTS))
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--epochs", type=int, default=60)
    a.add_argument("--patience", type=int, default=10)
    a.set_defaults(func=cmd_ablate)

    b = sub.add_parser("bench", help="analytic FLOPs curves and parameter counts")
    b.add_argument("--mechanisms", default="full,inducing,mcpa")
    b.add_argument("--lmax", default="64..1024")
    b.add_argument("--variant", default="small", choices=sorted(VARIANTS))
    b.add_argument("--m", type=int, default=2)
    b.set_defaults(func=cmd_bench)

    for sp in (g, t, e, a, b):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out-dir", default=None)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
