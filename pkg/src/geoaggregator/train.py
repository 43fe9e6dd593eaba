"""Training loop: MAE objective, Adam, triangular cyclical learning rate."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import Tensor, as_tensor, no_grad
from .model import GAConfig, GAModel, build_sequence, collate
from .spatial import BoxScaler, GridIndex, Neighborhood, estimate_radius
from .table import GeoTable, target_stats

log = logging.getLogger(__name__)


# -- metrics ----------------------------------------------------------------

def mae_loss(pred, truth) -> Tensor:
    pred, truth = as_tensor(pred), as_tensor(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {truth.shape}")
    if pred.data.size == 0:
        raise ValueError("empty prediction")
    return (pred - truth).abs().mean()


def r2_score(pred, truth) -> float:
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    ss_tot = float(((truth - truth.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ValueError("R^2 undefined for constant truth")
    return 1.0 - float(((truth - pred) ** 2).sum()) / ss_tot


def mae(pred, truth) -> float:
    return float(np.mean(np.abs(np.asarray(pred) - np.asarray(truth))))


# -- optimisation -------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 60
    max_lr: float = 5e-3
    cycle_steps: int = 200
    seed: int = 0
    patience: int = 10
    bias_unit: str = "radius"  # squared distances in units of the query radius, or "box"

    def __post_init__(self):
        if self.max_lr <= 0:
            raise ValueError("max_lr must be positive")
        if self.cycle_steps < 2:
            raise ValueError("cycle_steps must be >= 2")
        if self.bias_unit not in ("radius", "box"):
            raise ValueError("bias_unit must be 'radius' or 'box'")


def cyclical_lr(step: int, config: TrainConfig) -> float:
    """Triangular wave from max_lr/10 (step 0) up to max_lr (half cycle) and back."""
    lo, hi = config.max_lr / 10.0, config.max_lr
    phase = (step % config.cycle_steps) / config.cycle_steps
    return lo + (hi - lo) * (1.0 - abs(2.0 * phase - 1.0))


class Adam:
    def __init__(self, params: list[Tensor], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- context set --------------------------------------------------------------

@dataclass
class SpatialContext:
    """The training split as context set: rescaled coordinates, radius, target scaling."""

    x: np.ndarray
    y: np.ndarray  # standardised
    loc: np.ndarray  # box-scaled
    scaler: BoxScaler
    radius: float
    y_mean: float
    y_std: float
    l_max: int
    order: str = "random"
    index: GridIndex = field(init=False, repr=False)

    def __post_init__(self):
        self.index = GridIndex(self.loc, self.radius)

    @classmethod
    def fit(cls, train: GeoTable, l_max: int, radius: float | None = None, order: str = "random",
            seed: int = 0) -> "SpatialContext":
        scaler = BoxScaler.fit(train.locations)
        loc = scaler(train.locations)
        if radius is None:
            radius = estimate_radius(loc, l_max, seed=seed)
        else:
            radius = radius / scaler.scale
        mean, std = target_stats(train)
        return cls(train.covariates, (train.target - mean) / std, loc, scaler, radius, mean, std, l_max, order)

    def neighborhoods(self, table: GeoTable, is_context: bool = False) -> list[Neighborhood]:
        loc = self.scaler(table.locations)
        out = []
        for i, p in enumerate(loc):
            exclude = i if is_context else None
            idx, d = self.index.query(p, self.radius, exclude)
            if len(idx) == 0:
                # isolated target: fall back to its nearest context point
                dd = np.sqrt(((self.loc - p) ** 2).sum(axis=1))
                if exclude is not None:
                    dd[exclude] = np.inf
                j = int(np.argmin(dd))
                idx, d = np.array([j]), dd[[j]]
            out.append(Neighborhood(exclude, idx, d))
        return out

    def batch(self, table: GeoTable, nbs: list[Neighborhood], rows, rng) -> dict[str, np.ndarray]:
        loc = self.scaler(table.locations[rows])
        seqs = [
            build_sequence(nbs[r], self.x, self.y, self.loc, table.covariates[r], loc[k], self.l_max, rng, self.order)
            for k, r in enumerate(rows)
        ]
        return collate(seqs)

    def meta(self) -> dict:
        return {
            "scaler": self.scaler.to_dict(),
            "radius": self.radius,
            "y_mean": self.y_mean,
            "y_std": self.y_std,
            "l_max": self.l_max,
            "order": self.order,
        }


def predict(model: GAModel, ctx: SpatialContext, table: GeoTable, seed: int = 0,
            batch_size: int = 256, nbs: list[Neighborhood] | None = None) -> np.ndarray:
    """Predictions in original target units; context is always ``ctx``."""
    nbs = ctx.neighborhoods(table) if nbs is None else nbs
    rng = np.random.default_rng(seed)
    model.eval()
    out = []
    with no_grad():
        for s in range(0, table.n_points, batch_size):
            rows = np.arange(s, min(s + batch_size, table.n_points))
            out.append(model(ctx.batch(table, nbs, rows, rng)).data)
    return np.concatenate(out) * ctx.y_std + ctx.y_mean


@dataclass
class FitResult:
    model: GAModel
    context: SpatialContext
    history: list[dict]
    best_epoch: int
    best_val_mae: float
    eval_seed: int

    def write_history(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["epoch", "lr", "train_mae", "val_mae"])
            w.writeheader()
            w.writerows(self.history)


def fit(model: GAModel, ctx: SpatialContext, train: GeoTable, val: GeoTable, config: TrainConfig) -> FitResult:
    """Train on ``train`` targets (context = ``ctx``), keep the best-validation parameters."""
    rng = np.random.default_rng(config.seed)
    eval_seed = int(rng.integers(2**31))
    train_nbs = ctx.neighborhoods(train, is_context=True)
    val_nbs = ctx.neighborhoods(val)
    y_train = (train.target - ctx.y_mean) / ctx.y_std
    params = model.parameters()
    opt = Adam(params)
    n = train.n_points
    step = 0
    best = (math.inf, -1, model.state())
    history = []
    since_best = 0
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = rng.permutation(n)
        losses, sizes = [], []
        lr = cyclical_lr(step, config)
        for s in range(0, n, config.batch_size):
            rows = order[s : s + config.batch_size]
            if len(rows) < 2:
                continue
            batch = ctx.batch(train, train_nbs, rows, rng)
            model.zero_grad()
            loss = mae_loss(model(batch), y_train[rows])
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, step {step}")
            loss.backward()
            lr = cyclical_lr(step, config)
            opt.step(lr)
            step += 1
            losses.append(loss.item())
            sizes.append(len(rows))
        train_mae = float(np.average(losses, weights=sizes)) * ctx.y_std
        val_mae = mae(predict(model, ctx, val, seed=eval_seed, nbs=val_nbs), val.target)
        history.append({"epoch": epoch, "lr": lr, "train_mae": train_mae, "val_mae": val_mae})
        log.info("epoch %d lr %.2e train %.4f val %.4f", epoch, lr, train_mae, val_mae)
        if val_mae < best[0]:
            best = (val_mae, epoch, [(k, v.copy()) for k, v in model.state()])
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    model.load_state(dict(best[2]))
    model.eval()
    return FitResult(model, ctx, history, best[1], best[0], eval_seed)


def prepare(train: GeoTable, model_config: GAConfig, train_config: TrainConfig,
            radius: float | None = None, order: str = "random") -> tuple[GAModel, SpatialContext]:
    ctx = SpatialContext.fit(train, model_config.l_max, radius=radius, order=order, seed=train_config.seed)
    scale = ctx.radius if train_config.bias_unit == "radius" else 1.0
    cfg = replace(model_config, m=train.m, distance_scale=scale)
    return GAModel(cfg), ctx


def train_model(train: GeoTable, val: GeoTable, model_config: GAConfig, train_config: TrainConfig,
                radius: float | None = None, order: str = "random") -> FitResult:
    model, ctx = prepare(train, model_config, train_config, radius, order)
    return fit(model, ctx, train, val, train_config)


def evaluate(result: FitResult, table: GeoTable, seed: int | None = None) -> dict:
    seed = result.eval_seed if seed is None else seed
    pred = predict(result.model, result.context, table, seed=seed)
    return {"mae": mae(pred, table.target), "r2": r2_score(pred, table.target), "pred": pred}
