import numpy as np
import pytest

from geoaggregator import gwr
from geoaggregator.synth import CoefficientSurface, DGPSpec, generate
from geoaggregator.table import GeoTable, split
from geoaggregator.train import r2_score
from oracles import wls_loop


def test_kernel_values():
    assert gwr.gaussian_kernel(0.0, 2.0) == 1.0
    assert gwr.gaussian_kernel(2.0, 2.0) == pytest.approx(np.exp(-0.5), abs=1e-15)
    d = np.linspace(0, 10, 200)
    assert np.all(np.diff(gwr.gaussian_kernel(d, 1.3)) < 0)
    with pytest.raises(ValueError):
        gwr.gaussian_kernel(1.0, 0.0)


def test_huge_bandwidth_equals_ols():
    t = generate(DGPSpec(rows=15, cols=15, seed=1))
    tr, _, te = split(t)
    diag = gwr.bandwidth_bounds(tr)[1]
    X = np.column_stack([np.ones(tr.n_points), tr.covariates])
    beta = np.linalg.solve(X.T @ X, X.T @ tr.target)
    ols = np.column_stack([np.ones(te.n_points), te.covariates]) @ beta
    g = gwr.fit_predict(tr, te, 1e6 * diag)
    assert np.max(np.abs(g - ols)) < 1e-6
    assert np.max(np.abs(gwr.ols_fit_predict(tr, te) - ols)) < 1e-10


def test_wls_loop_oracle():
    rng = np.random.default_rng(2)
    t = GeoTable(rng.normal(size=(30, 2)), rng.uniform(0, 5, size=(30, 2)), rng.normal(size=30))
    bw = 1.7
    beta = gwr.local_coefficients(t, t.locations, bw)
    X = np.column_stack([np.ones(30), t.covariates])
    for i in range(30):
        w = [np.exp(-0.5 * (np.hypot(*(t.locations[j] - t.locations[i])) / bw) ** 2) for j in range(30)]
        assert np.max(np.abs(beta[i] - wls_loop(X, t.target, np.array(w)))) < 1e-8


def test_exact_fit_has_zero_residual():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(25, 2))
    t = GeoTable(x, rng.uniform(size=(25, 2)), 1.0 + 2.0 * x[:, 0] - x[:, 1])
    assert np.max(np.abs(gwr.fit_predict(t, t, 0.3) - t.target)) < 1e-9


def test_duplicated_points_use_ridge_fallback():
    # every training point at one location with a single covariate value: singular system
    t = GeoTable(np.ones((10, 1)), np.zeros((10, 2)), np.arange(10.0))
    pred = gwr.fit_predict(t, t, 1.0)
    assert np.all(np.isfinite(pred))


def heterogeneous_table(seed=0):
    surfaces = (CoefficientSurface("constant", {"value": 0.0}),
                CoefficientSurface("linear", {"lo": -4.0, "hi": 4.0}),
                CoefficientSurface("radial", {"base": -3.0, "amplitude": 6.0, "width": 0.3}))
    return generate(DGPSpec(rows=14, cols=14, surfaces=surfaces, noise_std=0.3, seed=seed))


def test_selected_bandwidth_beats_global():
    t = heterogeneous_table()
    bw = gwr.select_bandwidth(t)
    lo, hi = gwr.bandwidth_bounds(t)
    assert lo <= bw <= hi
    assert gwr.cv_mae(t, bw) <= gwr.cv_mae(t, hi)
    assert gwr.select_bandwidth(t) == bw


def test_flat_cv_curve_for_constant_process():
    rng = np.random.default_rng(4)
    t = GeoTable(rng.normal(size=(40, 1)), rng.uniform(size=(40, 2)), np.full(40, 2.5))
    bw = gwr.select_bandwidth(t)
    assert gwr.cv_mae(t, bw) < 1e-6


def test_bandwidth_needs_twenty_points():
    rng = np.random.default_rng(5)
    t = GeoTable(rng.normal(size=(19, 1)), rng.uniform(size=(19, 2)), rng.normal(size=19))
    with pytest.raises(ValueError):
        gwr.select_bandwidth(t)


def test_gwr_r2_at_least_ols_on_heterogeneous_data():
    tr, _, te = split(heterogeneous_table(1))
    model = gwr.GWRModel.fit(tr)
    assert r2_score(model.predict(te), te.target) >= r2_score(gwr.ols_fit_predict(tr, te), te.target)
    assert model.coefficients(te.locations[:3]).shape == (3, 3)
