"""The GeoAggregator network and its input sequences."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .attention import BiasFactor, CartesianAttention, VanillaAttention, apply_rope
from .autodiff import Tensor, concat
from .nn import Dense2, MaskedBatchNorm, Module
from .spatial import Neighborhood

# (processors L, inducing points, l_max)
VARIANTS = {
    "mini": (0, 0, 81),
    "small": (1, 4, 144),
    "large": (2, 8, 256),
}


@dataclass(frozen=True)
class GAConfig:
    m: int = 2
    d_model: int = 32
    heads: int = 2  # per stream; heads**2 attention heads in total
    n_processors: int = 0
    n_inducing: int = 0
    l_max: int = 81
    lambda_init: float = 1.0
    learn_lambda: bool = True
    attention: str = "mcpa"  # or "vanilla"
    head_hidden: int = 0  # 0 -> d_model
    distance_scale: float = 1.0  # squared distances are divided by distance_scale**2
    seed: int = 0

    def __post_init__(self):
        if self.attention not in ("mcpa", "vanilla"):
            raise ValueError(f"attention must be 'mcpa' or 'vanilla', got {self.attention!r}")
        if self.d_model % (2 * self.heads**2):
            raise ValueError("d_model must be a multiple of 2 * heads**2")
        if (self.d_model // 2) % 4:
            raise ValueError("d_model / 2 must be divisible by 4 for the 2D rotary encoding")
        if (self.n_inducing == 0) != (self.n_processors == 0):
            raise ValueError("n_inducing == 0 exactly when n_processors == 0")
        if self.m < 1 or self.l_max < 1:
            raise ValueError("m and l_max must be positive")
        if self.distance_scale <= 0:
            raise ValueError("distance_scale must be positive")

    @classmethod
    def variant(cls, name: str, **kw) -> "GAConfig":
        L, hidden, l_max = VARIANTS[name]
        kw.setdefault("l_max", l_max)
        return cls(n_processors=L, n_inducing=hidden, **kw)

    @property
    def half(self) -> int:
        return self.d_model // 2

    @property
    def d_c(self) -> int:
        return self.d_model // (2 * self.heads**2)

    @property
    def hidden(self) -> int:
        return self.head_hidden or self.d_model

    def to_dict(self) -> dict:
        return asdict(self)


# -- sequences --------------------------------------------------------------

@dataclass
class ContextSequence:
    x: np.ndarray  # (l_max, m)
    y: np.ndarray  # (l_max,)
    loc: np.ndarray  # (l_max, 2)
    mask: np.ndarray  # (l_max,), 1 marks padding
    d2: np.ndarray  # (l_max,) squared distance to the target
    target_x: np.ndarray  # (m,)
    target_loc: np.ndarray  # (2,)
    indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def l_in(self) -> int:
        return int(len(self.mask) - self.mask.sum())


def build_sequence(
    nb: Neighborhood,
    context_x: np.ndarray,
    context_y: np.ndarray,
    context_loc: np.ndarray,
    target_x: np.ndarray,
    target_loc: np.ndarray,
    l_max: int,
    rng: np.random.Generator | int | None = None,
    order: str = "random",
) -> ContextSequence:
    """Clip or zero-pad a neighbourhood to ``l_max`` rows.

    With ``order="random"`` an over-full neighbourhood keeps a random subset;
    ``order="nearest"`` keeps the closest points instead.
    """
    if len(nb) == 0:
        raise ValueError("empty neighbourhood; increase the query radius")
    idx, dist = np.asarray(nb.indices), np.asarray(nb.distances)
    if order == "random":
        if rng is not None:
            perm = np.random.default_rng(rng).permutation(len(idx))
            idx, dist = idx[perm], dist[perm]
    elif order == "nearest":
        o = np.lexsort((idx, dist))
        idx, dist = idx[o], dist[o]
    else:
        raise ValueError(f"unknown order {order!r}")
    idx, dist = idx[:l_max], dist[:l_max]
    k = len(idx)
    m = context_x.shape[1]
    x = np.zeros((l_max, m))
    y = np.zeros(l_max)
    loc = np.zeros((l_max, 2))
    d2 = np.zeros(l_max)
    mask = np.ones(l_max)
    x[:k], y[:k], loc[:k] = context_x[idx], context_y[idx], context_loc[idx]
    d2[:k] = dist**2
    mask[:k] = 0.0
    return ContextSequence(x, y, loc, mask, d2, np.asarray(target_x, float), np.asarray(target_loc, float), idx)


def collate(seqs: list[ContextSequence]) -> dict[str, np.ndarray]:
    return {
        "x": np.stack([s.x for s in seqs]),
        "y": np.stack([s.y for s in seqs]),
        "loc": np.stack([s.loc for s in seqs]),
        "mask": np.stack([s.mask for s in seqs]),
        "d2": np.stack([s.d2 for s in seqs]),
        "target_x": np.stack([s.target_x for s in seqs]),
        "target_loc": np.stack([s.target_loc for s in seqs]),
    }


# -- network ----------------------------------------------------------------

class GAModel(Module):
    def __init__(self, config: GAConfig):
        self.config = config
        c = config
        rng = np.random.default_rng(c.seed)
        half = c.half
        self.norm = MaskedBatchNorm(c.m)
        self.dense_x = Dense2(c.m, half, half, rng)
        self.dense_y = Dense2(1, half, half, rng)
        self.y_placeholder = Tensor(rng.normal(0.0, 0.02, size=half), requires_grad=True)

        def attn(biased: bool):
            kw = dict(biased=biased, lambda_init=c.lambda_init, learn_lambda=c.learn_lambda)
            if c.attention == "mcpa":
                return CartesianAttention(half, c.heads, c.d_c, rng, **kw)
            return VanillaAttention(half, c.heads**2, rng, **kw)

        if c.n_inducing:
            self.inducing = Tensor(rng.normal(0.0, 0.02, size=(c.n_inducing, c.d_model)), requires_grad=True)
            self.encoder = attn(True)
            self.processors = [attn(False) for _ in range(c.n_processors)]
            self.decoder = attn(False)
        else:
            self.decoder = attn(True)
        self.head = Dense2(c.d_model + c.m + 2, c.hidden, 1, rng)

    def embed(self, batch: dict) -> tuple[Tensor, Tensor, Tensor, Tensor, Tensor]:
        """Normalise, project and rotate; returns context (x, y), target (x, y) and normalised target covariates."""
        B, L, _ = batch["x"].shape
        half = self.config.half
        keep = 1.0 - batch["mask"]
        xs = np.concatenate([batch["x"], batch["target_x"][:, None]], axis=1)
        w = np.concatenate([keep, np.ones((B, 1))], axis=1)[..., None]
        xn = self.norm(Tensor(xs), w)
        ex = self.dense_x(xn)
        ey_ctx = self.dense_y(Tensor(batch["y"][..., None]))
        ey_tgt = self.y_placeholder.reshape(1, 1, half) + Tensor(np.zeros((B, 1, half)))
        ey = concat([ey_ctx, ey_tgt], axis=1)
        locs = np.concatenate([batch["loc"], batch["target_loc"][:, None]], axis=1)
        ex, ey = apply_rope(ex, locs), apply_rope(ey, locs)
        return ex[:, :L], ey[:, :L], ex[:, L:], ey[:, L:], xn[:, L]

    def __call__(self, batch: dict) -> Tensor:
        c = self.config
        B = batch["x"].shape[0]
        cx, cy, tx, ty, xt = self.embed(batch)
        mask = batch["mask"]
        d2 = batch["d2"][:, None, :] / c.distance_scale**2
        if c.n_inducing:
            tloc = batch["target_loc"][:, None, :]
            ind = self.inducing.reshape(1, c.n_inducing, c.d_model) + Tensor(np.zeros((B, 1, 1)))
            hx = apply_rope(ind[..., : c.half], tloc)
            hy = apply_rope(ind[..., c.half :], tloc)
            ax, ay = self.encoder(hx, hy, cx, cy, mask, d2)
            hx, hy = hx + ax, hy + ay
            for proc in self.processors:
                ax, ay = proc(hx, hy, hx, hy)
                hx, hy = hx + ax, hy + ay
            ax, ay = self.decoder(tx, ty, hx, hy)
        else:
            ax, ay = self.decoder(tx, ty, cx, cy, mask, d2)
        ox, oy = tx + ax, ty + ay
        feats = concat([ox[:, 0], oy[:, 0], xt, Tensor(batch["target_loc"])], axis=-1)
        return self.head(feats).reshape(B)

    def bias_factors(self) -> list[float]:
        return [mod.value for mod in self.modules() if isinstance(mod, BiasFactor)]

    # -- persistence ---------------------------------------------------------
    def state(self) -> list[tuple[str, np.ndarray]]:
        return [(n, p.data) for n, p in self.named_parameters()] + self.named_buffers()

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if arrays[name].shape != p.shape:
                raise ValueError(f"{name}: shape {arrays[name].shape} != {p.shape}")
            p.data = np.array(arrays[name], dtype=np.float64)
        for name, _ in self.named_buffers():
            obj = self
            *path, attr = name.split(".")
            for part in path:
                obj = obj[int(part)] if isinstance(obj, list) else getattr(obj, part)
            setattr(obj, attr, np.array(arrays[name], dtype=np.float64))


def count_params(config: GAConfig) -> int:
    """Learnable scalar count from layer shapes alone (no model is built)."""
    c = config
    half, m = c.half, c.m

    def linear(i, o):
        return i * o + o

    def dense2(i, h, o):
        return linear(i, h) + linear(h, o)

    def attention(biased: bool):
        lam = 1 if (biased and c.learn_lambda) else 0
        if c.attention == "mcpa":
            w = c.heads * c.d_c
            return 6 * linear(half, w) + 2 * linear(c.heads**2 * c.d_c, half) + lam
        return 4 * linear(c.d_model, c.d_model) + lam

    total = 2 * m  # batch-norm affine
    total += dense2(m, half, half) + dense2(1, half, half) + half
    if c.n_inducing:
        total += c.n_inducing * c.d_model + attention(True) + c.n_processors * attention(False) + attention(False)
    else:
        total += attention(True)
    total += dense2(c.d_model + m + 2, c.hidden, 1)
    return total


def save_checkpoint(model: GAModel, path, meta: dict | None = None) -> None:
    """``path``.json manifest plus ``path``.bin of little-endian float64 arrays."""
    path = Path(path)
    entries, blobs, offset = [], [], 0
    for name, arr in model.state():
        a = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
        blobs.append(a.ravel())
    manifest = {"config": model.config.to_dict(), "arrays": entries, "meta": meta or {}}
    path.with_suffix(".bin").write_bytes(np.concatenate(blobs).tobytes() if blobs else b"")
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2))


def load_checkpoint(path) -> tuple[GAModel, dict]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    flat = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    arrays = {}
    for e in manifest["arrays"]:
        size = int(np.prod(e["shape"]))
        arrays[e["name"]] = flat[e["offset"] : e["offset"] + size].reshape(e["shape"])
    model = GAModel(GAConfig(**manifest["config"]))
    model.load_state(arrays)
    return model, manifest["meta"]
