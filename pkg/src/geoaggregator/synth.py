"""Synthetic spatial regression processes on a regular lattice.

Four processes share the same coefficient surfaces and covariates:

* ``lin``    y = b0 + b1*x1 + b2*x2 + eps
* ``slx``    lin + t1*W x1 + t2*W x2
* ``sl``     (I - rho W) y = lin
* ``durbin`` (I - rho W) y = slx

``W`` is the row-normalised Queen contiguity matrix of the lattice.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.ndimage import gaussian_filter

from .spatial import WeightMatrix, queen_adjacency, row_normalize
from .table import GeoTable, save_csv

PROCESSES = ("lin", "sl", "slx", "durbin")
SAMPLERS = ("uniform", "correlated")


@dataclass(frozen=True)
class CoefficientSurface:
    """A coefficient map over lattice coordinates (col, row).

    kind is one of ``constant`` (value), ``linear`` (lo, hi along the first
    coordinate), ``radial`` (base, amplitude, width as a fraction of the
    lattice side) or ``grid`` (explicit rows x cols values).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __call__(self, locations: np.ndarray, rows: int, cols: int) -> np.ndarray:
        loc = np.asarray(locations, dtype=np.float64)
        p = self.params
        if self.kind == "constant":
            out = np.full(len(loc), float(p["value"]))
        elif self.kind == "linear":
            t = loc[:, 0] / (cols - 1)
            out = p["lo"] + (p["hi"] - p["lo"]) * t
        elif self.kind == "radial":
            center = np.array([(cols - 1) / 2.0, (rows - 1) / 2.0])
            side = float(max(rows, cols) - 1)
            dist = np.sqrt(((loc - center) ** 2).sum(axis=1))
            out = p["base"] + p["amplitude"] * np.exp(-((dist / (p["width"] * side)) ** 2))
        elif self.kind == "grid":
            vals = np.asarray(p["values"], dtype=np.float64).reshape(rows, cols)
            out = vals[loc[:, 1].astype(int), loc[:, 0].astype(int)]
        else:
            raise ValueError(f"unknown surface kind {self.kind!r}")
        if not np.isfinite(out).all():
            raise ValueError("coefficient surface is not finite")
        return out


def default_surfaces() -> tuple[CoefficientSurface, CoefficientSurface, CoefficientSurface]:
    return (
        CoefficientSurface("constant", {"value": 3.0}),
        CoefficientSurface("linear", {"lo": 1.0, "hi": 5.0}),
        CoefficientSurface("radial", {"base": 2.0, "amplitude": 3.0, "width": 0.4}),
    )


@dataclass(frozen=True)
class DGPSpec:
    process: str = "lin"
    rho: float = 0.5
    theta1: float = 0.5
    theta2: float = 0.5
    surfaces: tuple[CoefficientSurface, ...] = field(default_factory=default_surfaces)
    noise_std: float = 1.0
    sampler: str = "uniform"
    rows: int = 50
    cols: int = 50
    seed: int = 0
    smoothing_sigma: float = 3.0

    def __post_init__(self):
        if self.process not in PROCESSES:
            raise ValueError(f"process must be one of {PROCESSES}, got {self.process!r}")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.rows < 2 or self.cols < 2:
            raise ValueError("lattice must be at least 2x2")
        if self.process in ("sl", "durbin") and not abs(self.rho) < 1:
            raise ValueError(f"|rho| must be < 1, got {self.rho}")
        if len(self.surfaces) != 3:
            raise ValueError("need three coefficient surfaces (b0, b1, b2)")

    @property
    def n_points(self) -> int:
        return self.rows * self.cols

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DGPSpec":
        d = dict(d)
        d["surfaces"] = tuple(CoefficientSurface(**s) for s in d["surfaces"])
        return cls(**d)


def lattice_locations(rows: int, cols: int) -> np.ndarray:
    """Cell centres as (col, row), cell id = row * cols + col."""
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    return np.column_stack([c.ravel(), r.ravel()]).astype(np.float64)


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    cov, noise = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(cov), np.random.default_rng(noise)


def sample_covariates(spec: DGPSpec) -> np.ndarray:
    """Two covariate columns, i.i.d. U(-1, 1) or a smoothed, standardised noise field."""
    rng, _ = _streams(spec.seed)
    n = spec.n_points
    if spec.sampler == "uniform":
        return rng.uniform(-1.0, 1.0, size=(n, 2))
    cols = []
    for _ in range(2):
        field_ = gaussian_filter(rng.standard_normal((spec.rows, spec.cols)), sigma=spec.smoothing_sigma)
        field_ = (field_ - field_.mean()) / field_.std()
        cols.append(field_.ravel())
    return np.column_stack(cols)


def lattice_weights(rows: int, cols: int) -> WeightMatrix:
    return row_normalize(queen_adjacency(rows, cols))


def generate_arrays(spec: DGPSpec) -> dict[str, np.ndarray]:
    """All intermediate pieces of a draw (useful for checking the defining equation)."""
    loc = lattice_locations(spec.rows, spec.cols)
    x = sample_covariates(spec)
    _, noise_rng = _streams(spec.seed)
    eps = spec.noise_std * noise_rng.standard_normal(spec.n_points)
    b0, b1, b2 = (s(loc, spec.rows, spec.cols) for s in spec.surfaces)

    W = lattice_weights(spec.rows, spec.cols)
    rhs = b0 + b1 * x[:, 0] + b2 * x[:, 1] + eps
    if spec.process in ("slx", "durbin"):
        rhs = rhs + spec.theta1 * (W @ x[:, 0]) + spec.theta2 * (W @ x[:, 1])
    if spec.process in ("sl", "durbin"):
        A = np.eye(spec.n_points) - spec.rho * W.toarray()
        lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
        if np.any(np.diag(lu) == 0):
            raise np.linalg.LinAlgError("I - rho W is singular")
        y = scipy.linalg.lu_solve((lu, piv), rhs)
    else:
        y = rhs
    return {"x": x, "locations": loc, "eps": eps, "beta": np.column_stack([b0, b1, b2]), "W": W, "y": y}


def generate(spec: DGPSpec) -> GeoTable:
    a = generate_arrays(spec)
    return GeoTable(a["x"], a["locations"], a["y"], ("x1", "x2"), ("l1", "l2"), "y")


def write_dataset(spec: DGPSpec, csv_path, json_path=None) -> GeoTable:
    table = generate(spec)
    save_csv(table, csv_path)
    json_path = Path(json_path) if json_path else Path(csv_path).with_suffix(".json")
    json_path.write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True))
    return table
