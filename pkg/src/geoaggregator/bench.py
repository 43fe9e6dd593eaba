"""Closed-form inference cost accounting and the ablation sweeps.

Cost convention: one multiply-add (MAC) counts as 2 FLOPs; softmax, bias and
score-combination elementwise operations count 1 FLOP each.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .model import GAConfig, count_params
from .table import GeoTable, SplitSpec, split
from .train import TrainConfig, evaluate, train_model

LAMBDA_GRID = (1e-3, 0.1, 0.5, 1.0, 5.0, 10.0, 50.0, 1e3)
SEQLEN_GRID = (16, 32, 64, 128, 256)
MECHANISMS = ("full", "inducing", "mcpa")

# elementwise FLOPs per attention score: max-subtract, exp, sum, divide
_SOFTMAX_OPS = 4
# lambda * d2 and the subtraction
_BIAS_OPS = 2


@dataclass
class CostReport:
    config: dict
    l_max: int
    mechanism: str
    layers: list[dict] = field(default_factory=list)

    def add(self, name: str, macs: int, elementwise: int = 0) -> None:
        self.layers.append({"name": name, "macs": int(macs), "elementwise": int(elementwise)})

    @property
    def macs(self) -> int:
        return sum(layer["macs"] for layer in self.layers)

    @property
    def elementwise(self) -> int:
        return sum(layer["elementwise"] for layer in self.layers)

    @property
    def flops(self) -> int:
        return 2 * self.macs + self.elementwise

    def to_dict(self) -> dict:
        return {
            "mechanism": self.mechanism,
            "l_max": self.l_max,
            "macs": self.macs,
            "flops": self.flops,
            "layers": self.layers,
            "config": self.config,
            "convention": "1 multiply-add = 2 FLOPs; elementwise ops 1 FLOP",
        }


def _attention_cost(c: GAConfig, vanilla: bool, n_q: int, n_k: int, biased: bool) -> tuple[int, int]:
    d, h = c.d_model, c.half
    n_heads = c.heads**2
    if vanilla:
        proj = n_q * d * d + 2 * n_k * d * d + n_q * d * d
        scores = n_q * n_k * d
        combine = 0
    else:
        w = c.heads * c.d_c
        proj = 2 * n_q * h * w + 4 * n_k * h * w + 2 * n_q * (n_heads * c.d_c) * h
        # per-stream scores, then one add per Cartesian head
        scores = 2 * n_q * n_k * w
        combine = n_q * n_k * n_heads
    values = n_q * n_k * d
    elementwise = combine + _SOFTMAX_OPS * n_q * n_k * n_heads
    if biased:
        elementwise += _BIAS_OPS * n_q * n_k * n_heads
    return proj + scores + values, elementwise


def count_flops(config: GAConfig, l_max: int | None = None, mechanism: str = "mcpa") -> CostReport:
    """Cost of one inference (one target, ``l_max`` unmasked context points).

    ``mcpa`` and ``inducing`` follow the config's encoder/processor/decoder
    layout with Cartesian or vanilla attention; ``full`` replaces the
    inducing-point compression by all-point self-attention over the context.
    """
    if mechanism not in MECHANISMS:
        raise ValueError(f"mechanism must be one of {MECHANISMS}")
    c = config
    ell = c.l_max if l_max is None else l_max
    h, m, d = c.half, c.m, c.d_model
    rep = CostReport(c.to_dict(), ell, mechanism)
    tokens = ell + 1
    rep.add("batchnorm", tokens * m)
    rep.add("dense_x", tokens * (m * h + h * h))
    rep.add("dense_y", ell * (h + h * h))
    rep.add("rotary", tokens * 2 * (2 * h))

    vanilla = mechanism != "mcpa"
    if c.n_inducing and mechanism != "full":
        k = c.n_inducing
        rep.add("rotary_inducing", k * 2 * (2 * h))
        rep.add("encoder", *_attention_cost(c, vanilla, k, ell, True))
        for i in range(c.n_processors):
            rep.add(f"processor{i}", *_attention_cost(c, vanilla, k, k, False))
        rep.add("decoder", *_attention_cost(c, vanilla, 1, k, False))
    elif c.n_inducing:
        rep.add("encoder", *_attention_cost(c, True, ell, ell, True))
        for i in range(c.n_processors):
            rep.add(f"processor{i}", *_attention_cost(c, True, ell, ell, False))
        rep.add("decoder", *_attention_cost(c, True, 1, ell, False))
    else:
        rep.add("decoder", *_attention_cost(c, vanilla, 1, ell, True))
    rep.add("head", (d + m + 2) * c.hidden + c.hidden)
    return rep


def loglog_slope(l_values, flops) -> float:
    return float(np.polyfit(np.log(np.asarray(l_values, float)), np.log(np.asarray(flops, float)), 1)[0])


def cost_curves(config: GAConfig, l_values=(64, 128, 256, 512, 1024), mechanisms=MECHANISMS) -> dict:
    out = {}
    for mech in mechanisms:
        flops = [count_flops(config, ell, mech).flops for ell in l_values]
        out[mech] = {"l_max": list(l_values), "flops": flops, "slope": loglog_slope(l_values, flops)}
    return out


def param_table(m: int = 2) -> list[dict]:
    rows = []
    for variant in ("mini", "small", "large"):
        for att in ("vanilla", "mcpa"):
            rows.append({"variant": variant, "attention": att,
                         "params": count_params(GAConfig.variant(variant, m=m, attention=att))})
    return rows


# -- ablations ------------------------------------------------------------------

def _workers() -> int:
    return max(1, int(os.environ.get("GEOAGG_THREADS", os.cpu_count() or 1)))


def _run_one(job: dict) -> dict:
    tr, va, te = job["splits"]
    t0 = time.perf_counter()
    res = train_model(tr, va, job["model"], job["train"], order=job.get("order", "random"))
    elapsed = time.perf_counter() - t0
    ev = evaluate(res, te)
    n_epochs = len(res.history)
    sizes = [len(nb) for nb in res.context.neighborhoods(te)]
    return {
        **job["tag"],
        "seed": job["train"].seed,
        "test_mae": ev["mae"],
        "test_r2": ev["r2"],
        "val_mae": res.best_val_mae,
        "best_epoch": res.best_epoch,
        "learned_lambda": res.model.bias_factors()[0] if res.model.bias_factors() else float("nan"),
        "median_neighbors": float(np.median(sizes)),
        "sec_per_epoch": elapsed / max(n_epochs, 1),
    }


def _run_jobs(jobs: list[dict]) -> list[dict]:
    n = min(_workers(), len(jobs))
    if n <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(n) as pool:
        return list(pool.map(_run_one, jobs))


def run_lambda_ablation(table: GeoTable, variant: str = "mini", grid=LAMBDA_GRID, seeds=(0, 1, 2),
                        train_config: TrainConfig = TrainConfig(), split_spec: SplitSpec = SplitSpec(),
                        include_learnable: bool = True) -> list[dict]:
    """One training run per (lambda, seed) with lambda frozen, plus learnable-lambda runs."""
    if len(grid) == 0:
        raise ValueError("empty lambda grid")
    splits = split(table, split_spec)
    base = GAConfig.variant(variant, m=table.m)
    jobs = []
    for lam in sorted(grid):
        for s in seeds:
            jobs.append({"splits": splits, "tag": {"lambda": lam, "learnable": False},
                         "model": replace(base, lambda_init=lam, learn_lambda=False, seed=s),
                         "train": replace(train_config, seed=s)})
    if include_learnable:
        for s in seeds:
            jobs.append({"splits": splits, "tag": {"lambda": float("nan"), "learnable": True},
                         "model": replace(base, seed=s), "train": replace(train_config, seed=s)})
    return _run_jobs(jobs)


def run_seqlen_ablation(table: GeoTable, grid=SEQLEN_GRID, seeds=(0, 1, 2), variant: str = "mini",
                        lambda_value: float = 1.0, train_config: TrainConfig = TrainConfig(),
                        split_spec: SplitSpec = SplitSpec()) -> list[dict]:
    """Runs with lambda fixed at ``lambda_value`` across sequence lengths."""
    if len(grid) == 0:
        raise ValueError("empty sequence-length grid")
    splits = split(table, split_spec)
    base = GAConfig.variant(variant, m=table.m, lambda_init=lambda_value, learn_lambda=False)
    jobs = [
        {"splits": splits, "tag": {"l_max": int(ell)}, "model": replace(base, l_max=int(ell), seed=s),
         "train": replace(train_config, seed=s)}
        for ell in sorted(grid)
        for s in seeds
    ]
    return _run_jobs(jobs)


def best_by(rows: list[dict], key: str, metric: str = "test_mae") -> dict:
    """Best (lowest) metric per key value over seeds."""
    out: dict = {}
    for r in rows:
        k = "learnable" if r.get("learnable") else r[key]
        out[k] = min(out.get(k, np.inf), r[metric])
    return out


def write_rows(rows: list[dict], path) -> None:
    if not rows:
        return
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)


def write_summary(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, default=float))
