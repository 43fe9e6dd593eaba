"""Radius neighbour search, radius estimation and lattice weight matrices."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoxScaler:
    """Affine map sending a bounding box to one whose longest side is 1."""

    origin: np.ndarray
    scale: float

    @classmethod
    def fit(cls, locations: np.ndarray) -> "BoxScaler":
        lo = locations.min(axis=0)
        side = float((locations.max(axis=0) - lo).max())
        return cls(lo, side if side > 0 else 1.0)

    def __call__(self, locations: np.ndarray) -> np.ndarray:
        return (np.asarray(locations, dtype=np.float64) - self.origin) / self.scale

    def to_dict(self) -> dict:
        return {"origin": self.origin.tolist(), "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> "BoxScaler":
        return cls(np.asarray(d["origin"], dtype=np.float64), float(d["scale"]))


@dataclass
class Neighborhood:
    target: int | None
    indices: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


class GridIndex:
    """Uniform bucket grid over 2D points; cell size equals the query radius."""

    def __init__(self, points: np.ndarray, cell_size: float):
        if cell_size <= 0:
            raise ValueError("cell size must be positive")
        self.points = np.asarray(points, dtype=np.float64)
        self.cell_size = float(cell_size)
        self.lo = self.points.min(axis=0)
        self.hi = self.points.max(axis=0)
        cells = np.floor((self.points - self.lo) / self.cell_size).astype(np.int64)
        buckets: dict[tuple[int, int], list[int]] = defaultdict(list)
        for i, (cx, cy) in enumerate(cells):
            buckets[(int(cx), int(cy))].append(i)
        self.buckets = {k: np.array(v, dtype=np.int64) for k, v in buckets.items()}

    def __len__(self) -> int:
        return len(self.points)

    def candidates(self, loc, r: float) -> np.ndarray:
        loc = np.asarray(loc, dtype=np.float64)
        c0 = np.floor((loc - r - self.lo) / self.cell_size).astype(np.int64)
        c1 = np.floor((loc + r - self.lo) / self.cell_size).astype(np.int64)
        found = [
            self.buckets[(cx, cy)]
            for cx in range(c0[0], c1[0] + 1)
            for cy in range(c0[1], c1[1] + 1)
            if (cx, cy) in self.buckets
        ]
        return np.concatenate(found) if found else np.empty(0, dtype=np.int64)

    def query(self, loc, r: float, exclude: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Indices (ascending) and distances of points within the closed ball."""
        idx = self.candidates(loc, r)
        d = np.sqrt(((self.points[idx] - loc) ** 2).sum(axis=1))
        keep = d <= r
        if exclude is not None:
            keep &= idx != exclude
        idx, d = idx[keep], d[keep]
        order = np.argsort(idx, kind="stable")
        return idx[order], d[order]


def context_query(
    index: GridIndex,
    target_location,
    r: float,
    rng: np.random.Generator | int | None = None,
    exclude: int | None = None,
) -> Neighborhood:
    """Context points within distance ``r`` of the target, in random order.

    ``exclude`` drops the indexed point that *is* the target (training targets
    drawn from the context set).
    """
    if r <= 0:
        raise ValueError("query radius must be positive")
    idx, d = index.query(target_location, r, exclude)
    perm = np.random.default_rng(rng).permutation(len(idx))
    return Neighborhood(exclude, idx[perm], d[perm])


def _median_count(d: np.ndarray, r: float) -> float:
    return float(np.median((d <= r).sum(axis=1)))


def estimate_radius(
    locations: np.ndarray,
    l_max: int,
    n_sample: int = 256,
    seed: int = 0,
    rtol: float = 1e-3,
) -> float:
    """Smallest radius whose median neighbourhood size (self excluded) reaches ``l_max``."""
    pts = np.asarray(locations, dtype=np.float64)
    n = len(pts)
    if n < l_max:
        raise ValueError(f"{n} points cannot supply {l_max} neighbours")
    rng = np.random.default_rng(seed)
    sample = rng.choice(n, size=min(n_sample, n), replace=False)
    d = np.sqrt(((pts[sample, None, :] - pts[None, :, :]) ** 2).sum(-1))
    d[np.arange(len(sample)), sample] = np.inf

    diag = float(np.hypot(*(pts.max(axis=0) - pts.min(axis=0))))
    if _median_count(d, diag) < l_max:
        log.warning("median neighbourhood never reaches %d; using bounding-box diagonal", l_max)
        return diag
    lo, hi = 0.0, diag
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if _median_count(d, mid) >= l_max:
            hi = mid
        else:
            lo = mid
    return hi


def pairwise_distances(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    b = a if b is None else b
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))


@dataclass(frozen=True)
class WeightMatrix:
    """Sparse non-negative spatial weights with a zero diagonal."""

    matrix: sp.csr_matrix
    row_normalized: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def __matmul__(self, v):
        return self.matrix @ v

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def queen_adjacency(rows: int, cols: int) -> WeightMatrix:
    """Binary Queen contiguity on a rows x cols lattice (cell id = row * cols + col)."""
    if rows < 2 or cols < 2:
        raise ValueError("lattice must be at least 2x2")
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    r, c = r.ravel(), c.ravel()
    src, dst = [], []
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            rr, cc = r + dr, c + dc
            ok = (rr >= 0) & (rr < rows) & (cc >= 0) & (cc < cols)
            src.append((r * cols + c)[ok])
            dst.append((rr * cols + cc)[ok])
    src, dst = np.concatenate(src), np.concatenate(dst)
    n = rows * cols
    return WeightMatrix(sp.csr_matrix((np.ones(len(src)), (src, dst)), shape=(n, n)))


def row_normalize(W: WeightMatrix | sp.spmatrix) -> WeightMatrix:
    if isinstance(W, WeightMatrix):
        if W.row_normalized:
            return W
        W = W.matrix
    W = sp.csr_matrix(W, dtype=np.float64, copy=True)
    if (W.data < 0).any():
        raise ValueError("weights must be non-negative")
    sums = np.asarray(W.sum(axis=1)).ravel()
    inv = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums != 0)
    return WeightMatrix(sp.csr_matrix(sp.diags(inv) @ W), row_normalized=True)


def morans_i(values: np.ndarray, W: WeightMatrix | sp.spmatrix) -> float:
    if isinstance(W, WeightMatrix):
        W = W.matrix
    z = np.asarray(values, dtype=np.float64) - np.mean(values)
    s0 = W.sum()
    return float(len(z) / s0 * (z @ (W @ z)) / (z @ z))
