"""Independent reference implementations used as test oracles.

Everything here is written with plain loops over numpy scalars/vectors and
never calls into the package's forward code, so agreement is meaningful.
"""

from __future__ import annotations

import math

import numpy as np


def matmul_loop(a, b):
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def softmax_loop(row, mask=None):
    keep = [i for i in range(len(row)) if mask is None or mask[i] == 0]
    mx = max(row[i] for i in keep)
    ex = {i: math.exp(row[i] - mx) for i in keep}
    tot = sum(ex.values())
    return np.array([ex[i] / tot if i in ex else 0.0 for i in range(len(row))])


def finite_diff(f, x, h=1e-5):
    """Central differences of scalar ``f`` w.r.t. every entry of array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


# -- rotary -------------------------------------------------------------------

def rotate(v, loc):
    """Rotate vector v (width d) by location loc, 4x4 block per scale."""
    d = len(v)
    out = np.array(v, dtype=float)
    for s in range(d // 4):
        theta = 10000.0 ** ((2.0 - 2.0 * s) / d)
        for plane, coord in ((0, 0), (1, 1)):
            a = loc[coord] * theta
            i = 4 * s + 2 * plane
            c, sn = math.cos(a), math.sin(a)
            out[i] = c * v[i] - sn * v[i + 1]
            out[i + 1] = sn * v[i] + c * v[i + 1]
    return out


# -- layers -------------------------------------------------------------------

def tanhshrink(z):
    return np.array([t - math.tanh(t) for t in np.ravel(z)]).reshape(np.shape(z))


def affine(p, name, v):
    return np.asarray(v) @ p[f"{name}.weight"] + p[f"{name}.bias"]


def dense2(p, name, v):
    return affine(p, f"{name}.fc2", tanhshrink(affine(p, f"{name}.fc1", v)))


def mcpa_loop(p, name, H, dc, qx, qy, kx, ky, mask=None, d2=None, lam=None):
    """One Cartesian attention layer for a single sequence.

    qx, qy: (Lq, half); kx, ky: (Lk, half); mask: (Lk,), 1 = padding;
    d2: (Lk,) squared distances shared by all queries.
    """
    Lq, Lk = len(qx), len(kx)
    Qx, Qy = affine(p, f"{name}.qx", qx), affine(p, f"{name}.qy", qy)
    Kx, Ky = affine(p, f"{name}.kx", kx), affine(p, f"{name}.ky", ky)
    Vx, Vy = affine(p, f"{name}.vx", kx), affine(p, f"{name}.vy", ky)
    sl = lambda i: slice(i * dc, (i + 1) * dc)  # noqa: E731
    out_x = np.zeros((Lq, H * H * dc))
    out_y = np.zeros((Lq, H * H * dc))
    for q in range(Lq):
        head = 0
        for i in range(H):
            for j in range(H):
                qv = np.concatenate([Qx[q, sl(i)], Qy[q, sl(j)]])
                scores = []
                for k in range(Lk):
                    kv = np.concatenate([Kx[k, sl(i)], Ky[k, sl(j)]])
                    s = float(sum(qv[t] * kv[t] for t in range(2 * dc)))
                    if lam is not None and d2 is not None:
                        s -= lam * d2[k]
                    scores.append(s)
                w = softmax_loop(scores, mask)
                acc = np.zeros(2 * dc)
                for k in range(Lk):
                    acc += w[k] * np.concatenate([Vx[k, sl(i)], Vy[k, sl(j)]])
                out_x[q, head * dc : (head + 1) * dc] = acc[:dc]
                out_y[q, head * dc : (head + 1) * dc] = acc[dc:]
                head += 1
    return affine(p, f"{name}.ox", out_x), affine(p, f"{name}.oy", out_y)


def _lam(p, name, cfg):
    key = f"{name}.lam.raw"
    if key in p:
        return math.exp(float(p[key]))
    return cfg.lambda_init


def forward_loop(model, batch) -> np.ndarray:
    """Graph-free re-implementation of an eval-mode Cartesian-attention forward pass."""
    cfg = model.config
    assert cfg.attention == "mcpa"
    p = {n: t.data for n, t in model.named_parameters()}
    rm, rv = model.norm.running_mean, model.norm.running_var
    gamma, beta = p["norm.gamma"], p["norm.beta"]
    half, H, dc = cfg.half, cfg.heads, cfg.d_c
    preds = []
    for b in range(batch["x"].shape[0]):
        L = batch["x"].shape[1]
        mask = batch["mask"][b]
        tloc = batch["target_loc"][b]

        def norm(row, w):
            return np.array([((row[f] - rm[f]) / math.sqrt(rv[f] + 1e-5) * gamma[f] + beta[f]) * w
                             for f in range(cfg.m)])

        xn = [norm(batch["x"][b, k], 1.0 - mask[k]) for k in range(L)]
        xt = norm(batch["target_x"][b], 1.0)
        cx = np.array([rotate(dense2(p, "dense_x", xn[k]), batch["loc"][b, k]) for k in range(L)])
        cy = np.array([rotate(dense2(p, "dense_y", [batch["y"][b, k]]), batch["loc"][b, k]) for k in range(L)])
        tx = rotate(dense2(p, "dense_x", xt), tloc)[None]
        ty = rotate(p["y_placeholder"], tloc)[None]
        d2 = batch["d2"][b] / cfg.distance_scale**2
        if cfg.n_inducing:
            ind = p["inducing"]
            hx = np.array([rotate(r[:half], tloc) for r in ind])
            hy = np.array([rotate(r[half:], tloc) for r in ind])
            ax, ay = mcpa_loop(p, "encoder", H, dc, hx, hy, cx, cy, mask, d2, _lam(p, "encoder", cfg))
            hx, hy = hx + ax, hy + ay
            for i in range(cfg.n_processors):
                ax, ay = mcpa_loop(p, f"processors.{i}", H, dc, hx, hy, hx, hy)
                hx, hy = hx + ax, hy + ay
            ax, ay = mcpa_loop(p, "decoder", H, dc, tx, ty, hx, hy)
        else:
            ax, ay = mcpa_loop(p, "decoder", H, dc, tx, ty, cx, cy, mask, d2, _lam(p, "decoder", cfg))
        feats = np.concatenate([(tx + ax)[0], (ty + ay)[0], xt, tloc])
        preds.append(float(dense2(p, "head", feats)[0]))
    return np.array(preds)


def masked_stats_loop(x, weight):
    """Mean and biased variance per feature over rows with weight 1."""
    rows = [r for r, w in zip(x.reshape(-1, x.shape[-1]), weight.reshape(-1)) if w == 1]
    n = len(rows)
    F = x.shape[-1]
    mean = np.array([sum(r[f] for r in rows) / n for f in range(F)])
    var = np.array([sum((r[f] - mean[f]) ** 2 for r in rows) / n for f in range(F)])
    return mean, var


def wls_loop(X, y, w):
    """Weighted least squares via explicit normal-equation accumulation."""
    p = X.shape[1]
    A = np.zeros((p, p))
    b = np.zeros(p)
    for i in range(len(y)):
        for r in range(p):
            b[r] += w[i] * X[i, r] * y[i]
            for c in range(p):
                A[r, c] += w[i] * X[i, r] * X[i, c]
    return np.linalg.solve(A, b)


def brute_radius_query(points, loc, r, exclude=None):
    out = []
    for i, pnt in enumerate(points):
        if i == exclude:
            continue
        if math.hypot(pnt[0] - loc[0], pnt[1] - loc[1]) <= r:
            out.append(i)
    return sorted(out)


def random_batch(rng, B, L, m, l_in=None):
    """Random collated batch; ``l_in`` (per row) unmasked rows, rest padding."""
    l_in = rng.integers(1, L + 1, size=B) if l_in is None else np.broadcast_to(l_in, (B,))
    mask = np.ones((B, L))
    for b in range(B):
        mask[b, : l_in[b]] = 0
    keep = 1 - mask
    loc = rng.uniform(0, 1, size=(B, L, 2)) * keep[..., None]
    tloc = rng.uniform(0, 1, size=(B, 2))
    return {
        "x": rng.normal(size=(B, L, m)) * keep[..., None],
        "y": rng.normal(size=(B, L)) * keep,
        "loc": loc,
        "mask": mask,
        "d2": ((loc - tloc[:, None]) ** 2).sum(-1) * keep,
        "target_x": rng.normal(size=(B, m)),
        "target_loc": tloc,
    }
