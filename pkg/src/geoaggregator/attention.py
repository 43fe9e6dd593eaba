"""2D rotary location encoding and Cartesian-product attention."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, as_tensor, concat, masked_softmax
from .nn import Linear, Module


# -- 2D rotary ------------------------------------------------------------

def rope_thetas(d: int) -> np.ndarray:
    if d % 4:
        raise ValueError(f"rotary width must be divisible by 4, got {d}")
    s = np.arange(d // 4)
    return 10000.0 ** ((2.0 - 2.0 * s) / d)


def rope_angles(locations: np.ndarray, d: int) -> np.ndarray:
    """Rotation angle of each coordinate pair, shape (..., d/2).

    Pair 2s rotates by l1*theta_s and pair 2s+1 by l2*theta_s.
    """
    loc = np.asarray(locations, dtype=np.float64)
    th = rope_thetas(d)
    ang = np.stack([loc[..., 0:1] * th, loc[..., 1:2] * th], axis=-1)
    return ang.reshape(loc.shape[:-1] + (d // 2,))


def rope_matrix(location, d: int) -> np.ndarray:
    """Dense block-diagonal rotation; reference form only, never used on the hot path."""
    ang = rope_angles(np.asarray(location, dtype=np.float64)[None], d)[0]
    phi = np.zeros((d, d))
    for k, a in enumerate(ang):
        c, s = np.cos(a), np.sin(a)
        i = 2 * k
        phi[i, i], phi[i, i + 1] = c, -s
        phi[i + 1, i], phi[i + 1, i + 1] = s, c
    return phi


def apply_rope(e, locations: np.ndarray) -> Tensor:
    """Rotate the last axis of ``e`` (width d) by the location's angles.

    ``locations`` broadcasts against ``e.shape[:-1] + (2,)``.
    """
    e = as_tensor(e)
    d = e.shape[-1]
    ang = rope_angles(locations, d)
    cos, sin = np.cos(ang), np.sin(ang)
    pairs = e.data.reshape(e.shape[:-1] + (d // 2, 2))
    a, b = pairs[..., 0], pairs[..., 1]
    out = np.stack([a * cos - b * sin, a * sin + b * cos], axis=-1).reshape(
        np.broadcast_shapes(e.shape[:-1], ang.shape[:-1]) + (d,)
    )

    def back(g):
        gp = g.reshape(g.shape[:-1] + (d // 2, 2))
        ga, gb = gp[..., 0], gp[..., 1]
        return (np.stack([ga * cos + gb * sin, -ga * sin + gb * cos], axis=-1).reshape(g.shape),)

    return Tensor._make(out, (e,), back)


# -- attention ------------------------------------------------------------

class BiasFactor(Module):
    """Positive scale of the Gaussian distance penalty."""

    def __init__(self, init: float = 1.0, learnable: bool = True):
        if init <= 0:
            raise ValueError("bias factor must be positive")
        self.learnable = learnable
        if learnable:
            # log-parameterised: useful values span several decades
            self.raw = Tensor(np.array(np.log(init)), requires_grad=True)
        else:
            self.fixed = float(init)

    def __call__(self) -> Tensor:
        return self.raw.exp() if self.learnable else Tensor(np.array(self.fixed))

    @property
    def value(self) -> float:
        return float(self().data)


def _split_heads(t: Tensor, n_heads: int) -> Tensor:
    # (B, L, n_heads * w) -> (B, n_heads, L, w)
    b, L, width = t.shape
    return t.reshape(b, L, n_heads, width // n_heads).transpose(0, 2, 1, 3)


class CartesianAttention(Module):
    """Multi-head Cartesian product attention over (covariate, target) streams.

    Each stream is projected by ``heads`` maps of width ``d_c``; every pair
    (x_i, y_j) forms one head of width ``2 d_c``, so there are ``heads**2``
    heads. A head's output splits back into its x and y halves, which are
    regrouped per stream and passed through the output projections.
    """

    def __init__(self, half: int, heads: int, d_c: int, rng: np.random.Generator,
                 biased: bool = False, lambda_init: float = 1.0, learn_lambda: bool = True):
        self.heads, self.d_c = heads, d_c
        w = heads * d_c
        self.qx, self.kx, self.vx = (Linear(half, w, rng) for _ in range(3))
        self.qy, self.ky, self.vy = (Linear(half, w, rng) for _ in range(3))
        self.ox = Linear(heads * heads * d_c, half, rng)
        self.oy = Linear(heads * heads * d_c, half, rng)
        self.lam = BiasFactor(lambda_init, learn_lambda) if biased else None

    def weights(self, qx, qy, kx, ky, mask=None, d2=None) -> Tensor:
        """Attention weights, shape (B, H, H, Lq, Lk); head (i, j) pairs x_i with y_j."""
        H = self.heads
        Qx, Qy = _split_heads(self.qx(qx), H), _split_heads(self.qy(qy), H)
        Kx, Ky = _split_heads(self.kx(kx), H), _split_heads(self.ky(ky), H)
        sx = (Qx @ Kx.swapaxes(-1, -2)).reshape(Qx.shape[0], H, 1, Qx.shape[2], Kx.shape[2])
        sy = (Qy @ Ky.swapaxes(-1, -2)).reshape(Qy.shape[0], 1, H, Qy.shape[2], Ky.shape[2])
        scores = sx + sy
        if self.lam is not None and d2 is not None:
            # d2: (B, Lq or 1, Lk)
            scores = scores - self.lam() * np.asarray(d2)[:, None, None]
        m = None if mask is None else np.asarray(mask)[:, None, None, None, :]
        return masked_softmax(scores, m, axis=-1)

    def __call__(self, qx, qy, kx, ky, mask=None, d2=None) -> tuple[Tensor, Tensor]:
        H, dc = self.heads, self.d_c
        A = self.weights(qx, qy, kx, ky, mask, d2)
        B, Lk = kx.shape[0], kx.shape[1]
        Vx = _split_heads(self.vx(kx), H).reshape(B, H, 1, Lk, dc)
        Vy = _split_heads(self.vy(ky), H).reshape(B, 1, H, Lk, dc)
        Lq = A.shape[3]
        ox = (A @ Vx).transpose(0, 3, 1, 2, 4).reshape(B, Lq, H * H * dc)
        oy = (A @ Vy).transpose(0, 3, 1, 2, 4).reshape(B, Lq, H * H * dc)
        return self.ox(ox), self.oy(oy)


class VanillaAttention(Module):
    """Standard multi-head attention on the concatenated streams (comparison baseline)."""

    def __init__(self, half: int, n_heads: int, rng: np.random.Generator,
                 biased: bool = False, lambda_init: float = 1.0, learn_lambda: bool = True):
        d = 2 * half
        self.half, self.n_heads = half, n_heads
        self.q, self.k, self.v, self.o = (Linear(d, d, rng) for _ in range(4))
        self.lam = BiasFactor(lambda_init, learn_lambda) if biased else None

    def weights(self, qx, qy, kx, ky, mask=None, d2=None) -> Tensor:
        Q = _split_heads(self.q(concat([qx, qy])), self.n_heads)
        K = _split_heads(self.k(concat([kx, ky])), self.n_heads)
        scores = Q @ K.swapaxes(-1, -2)
        if self.lam is not None and d2 is not None:
            scores = scores - self.lam() * np.asarray(d2)[:, None]
        m = None if mask is None else np.asarray(mask)[:, None, None, :]
        return masked_softmax(scores, m, axis=-1)

    def __call__(self, qx, qy, kx, ky, mask=None, d2=None) -> tuple[Tensor, Tensor]:
        A = self.weights(qx, qy, kx, ky, mask, d2)
        V = _split_heads(self.v(concat([kx, ky])), self.n_heads)
        B, _, Lq, _ = A.shape
        out = self.o((A @ V).transpose(0, 2, 1, 3).reshape(B, Lq, 2 * self.half))
        return out[..., : self.half], out[..., self.half :]
