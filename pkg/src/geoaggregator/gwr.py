"""Geographically weighted regression with a fixed Gaussian kernel."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spatial import pairwise_distances
from .table import GeoTable

_CHUNK = 256


def gaussian_kernel(d, bandwidth: float):
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    return np.exp(-0.5 * (np.asarray(d, dtype=np.float64) / bandwidth) ** 2)


def _design(x: np.ndarray, intercept: bool) -> np.ndarray:
    return np.column_stack([np.ones(len(x)), x]) if intercept else np.asarray(x, dtype=np.float64)


def _solve_local(xtwx: np.ndarray, xtwy: np.ndarray, locs: np.ndarray) -> np.ndarray:
    p = xtwx.shape[-1]
    beta = np.empty(xtwy.shape)
    cond = np.linalg.cond(xtwx)
    for q in range(len(xtwx)):
        A = xtwx[q]
        if not np.isfinite(cond[q]) or cond[q] > 1e12:
            A = A + 1e-8 * np.trace(A) * np.eye(p)
        try:
            beta[q] = np.linalg.solve(A, xtwy[q])
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError(f"singular local system at location {locs[q].tolist()}") from None
    return beta


def local_coefficients(train: GeoTable, query_loc: np.ndarray, bandwidth: float,
                       intercept: bool = True, leave_one_out: bool = False) -> np.ndarray:
    """Weighted least-squares coefficients at each query location, shape (Q, p).

    With ``leave_one_out`` the query points are the training points and each
    one gets zero weight in its own fit.
    """
    X = _design(train.covariates, intercept)
    y = train.target
    query_loc = np.asarray(query_loc, dtype=np.float64)
    out = []
    for s in range(0, len(query_loc), _CHUNK):
        ql = query_loc[s : s + _CHUNK]
        w = gaussian_kernel(pairwise_distances(ql, train.locations), bandwidth)
        if leave_one_out:
            w[np.arange(len(ql)), np.arange(s, s + len(ql))] = 0.0
        xtwx = np.einsum("qn,ni,nj->qij", w, X, X)
        xtwy = np.einsum("qn,ni,n->qi", w, X, y)
        out.append(_solve_local(xtwx, xtwy, ql))
    return np.concatenate(out)


def fit_predict(train: GeoTable, query: GeoTable, bandwidth: float, intercept: bool = True) -> np.ndarray:
    beta = local_coefficients(train, query.locations, bandwidth, intercept)
    return (_design(query.covariates, intercept) * beta).sum(axis=1)


def ols_fit_predict(train: GeoTable, query: GeoTable, intercept: bool = True) -> np.ndarray:
    X = _design(train.covariates, intercept)
    beta = np.linalg.solve(X.T @ X, X.T @ train.target)
    return _design(query.covariates, intercept) @ beta


def cv_mae(train: GeoTable, bandwidth: float, intercept: bool = True) -> float:
    """Leave-one-out cross-validated mean absolute error."""
    beta = local_coefficients(train, train.locations, bandwidth, intercept, leave_one_out=True)
    pred = (_design(train.covariates, intercept) * beta).sum(axis=1)
    return float(np.mean(np.abs(pred - train.target)))


def bandwidth_bounds(train: GeoTable) -> tuple[float, float]:
    d = pairwise_distances(train.locations)
    nz = d[d > 0]
    if nz.size == 0:
        raise ValueError("all training points coincide")
    lo = float(nz.min())
    hi = float(np.hypot(*np.ptp(train.locations, axis=0)))
    return lo, hi


def select_bandwidth(train: GeoTable, bounds: tuple[float, float] | None = None,
                     rtol: float = 1e-3, intercept: bool = True) -> float:
    """Golden-section search (on log bandwidth) for the LOO-CV MAE minimum."""
    if train.n_points < 20:
        raise ValueError("bandwidth selection needs at least 20 training points")
    lo, hi = bounds or bandwidth_bounds(train)
    a, b = math.log(lo), math.log(hi)
    inv_phi = (math.sqrt(5) - 1) / 2
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc, fd = cv_mae(train, math.exp(c), intercept), cv_mae(train, math.exp(d), intercept)
    while b - a > math.log1p(rtol):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = cv_mae(train, math.exp(c), intercept)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = cv_mae(train, math.exp(d), intercept)
    return math.exp(c) if fc <= fd else math.exp(d)


@dataclass
class GWRModel:
    bandwidth: float
    train: GeoTable
    intercept: bool = True

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")

    @classmethod
    def fit(cls, train: GeoTable, bandwidth: float | None = None, intercept: bool = True) -> "GWRModel":
        if bandwidth is None:
            bandwidth = select_bandwidth(train, intercept=intercept)
        return cls(bandwidth, train, intercept)

    def coefficients(self, locations: np.ndarray) -> np.ndarray:
        return local_coefficients(self.train, locations, self.bandwidth, self.intercept)

    def predict(self, query: GeoTable) -> np.ndarray:
        return fit_predict(self.train, query, self.bandwidth, self.intercept)
