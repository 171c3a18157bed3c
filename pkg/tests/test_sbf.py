import json

import numpy as np
import pytest

from oracles import dense_sbf_solve
from spdam import spd
from spdam.errors import DimensionMismatch, EmptySample, NoConvergence, OutOfDomain
from spdam.geometry import LogCholesky, LogEuclidean
from spdam.sbf import (
    AdditiveFit,
    SampleTable,
    backfit,
    backfit_sweep,
    component_to_group,
    evaluate_rmse,
    fit,
    predict,
    predict_tangent,
    prediction_distances,
    select_bandwidth,
    tangent_responses,
)
from spdam.smoothing import DensityEstimates, GridSpec, KernelSpec, estimate_densities, marginal_regressor


def additive_sample(rng, n=120, q=2, m=3, noise=0.05, geometry=None):
    geometry = geometry or LogCholesky()
    x = rng.uniform(size=(n, q))
    basis_mats = spd.random_symmetric(rng, m, size=q, scale=0.6)
    u = sum(np.sin(2 * np.pi * x[:, k])[:, None, None] * basis_mats[k] for k in range(q))
    u = u + noise * spd.random_symmetric(rng, m, size=n)
    mu = spd.random_spd(rng, m)
    y = geometry.riem_exp(mu, geometry.transport(geometry.identity(m), mu, u))
    return SampleTable(x, y)


def synthetic_fit(geometry, mu, components, points=21, h=0.2):
    q = components.shape[0]
    return AdditiveFit(
        geometry=geometry,
        mu_hat=mu,
        basis=geometry.tangent_basis(mu),
        grid=GridSpec(points),
        kernel=KernelSpec((h,) * q),
        components=components,
    )


# ---------------------------------------------------------------- SampleTable


def test_sample_table_rejects_out_of_domain():
    with pytest.raises(OutOfDomain):
        SampleTable(np.array([[0.5], [1.2]]), np.stack([np.eye(2)] * 2))


def test_sample_table_clips_tiny_overshoot():
    s = SampleTable(np.array([[-1e-12], [1 + 1e-12]]), np.stack([np.eye(2)] * 2))
    assert s.x.min() == 0.0 and s.x.max() == 1.0


def test_sample_table_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        SampleTable(np.zeros((3, 1)), np.stack([np.eye(2)] * 2))


# ---------------------------------------------------------------- fit


def test_constant_responses_give_zero_components(geom, rng):
    p = spd.random_spd(rng, 3)
    sample = SampleTable(rng.uniform(size=(40, 2)), np.stack([p] * 40))
    model = fit(sample, geom, KernelSpec((0.3, 0.3)))
    np.testing.assert_allclose(model.mu_hat, p, atol=1e-12)
    assert np.abs(model.components).max() < 1e-12


def test_single_predictor_equals_centered_marginal_smoother(geom, rng):
    sample = additive_sample(rng, n=80, q=1, geometry=geom)
    kernel, grid = KernelSpec((0.15,)), GridSpec(51)
    model = fit(sample, geom, kernel, grid)
    _, _, resp = tangent_responses(geom, sample)
    dens = estimate_densities(sample.x, kernel, grid)
    mhat = marginal_regressor(dens, resp, 0)
    # centered by hand: subtract the density-weighted grid mean
    wts = dens.marginal[0] * grid.weights
    expected = mhat - (wts @ mhat) / wts.sum()
    np.testing.assert_allclose(model.components[0], expected, atol=1e-10)


def test_fit_postconditions(geom, rng):
    sample = additive_sample(rng, geometry=geom)
    model = fit(sample, geom, KernelSpec((0.2, 0.2)))
    np.testing.assert_allclose(model.mu_hat, geom.frechet_mean(sample.y), atol=1e-12)
    d = model.diagnostics
    assert d["converged"] and d["final_change"] <= 1e-6
    assert d["centering"] <= 1e-6
    assert d["fixed_point_residual"] <= 1e-5
    # the response mean term vanishes because mu_hat is the sample Frechet mean
    assert d["mean_log_norm"] <= 1e-9
    assert d["n"] == sample.n


def test_centering_against_independent_density(geom, rng):
    sample = additive_sample(rng, geometry=geom)
    kernel, grid = KernelSpec((0.2, 0.25)), GridSpec(41)
    model = fit(sample, geom, kernel, grid)
    dens = estimate_densities(sample.x, kernel, grid)
    for k in range(2):
        integral = grid.integrate(model.components[k] * dens.marginal[k][:, None])
        assert np.abs(integral).max() <= 1e-6


@pytest.mark.parametrize("metric", ["log_cholesky", "log_euclidean"])
def test_iterative_fit_matches_dense_solve(metric):
    rng = np.random.default_rng(7)
    n, points, h = 50, 21, 0.25
    x = rng.uniform(size=(n, 2))
    y = np.exp(np.sin(2 * np.pi * x[:, 0]) + x[:, 1] ** 2 + 0.2 * rng.standard_normal(n))
    sample = SampleTable(x, y[:, None, None])
    model = fit(sample, metric, KernelSpec((h, h)), GridSpec(points), tol=1e-12, max_sweeps=1000)

    _, _, resp = tangent_responses(model.geometry, sample)
    # for 1x1 matrices both metrics are affine in log y
    ly = np.log(y) - np.log(y).mean()
    ratio = resp[:, 0] / ly
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-9)

    f1, f2, res = dense_sbf_solve(x, resp[:, 0], h, points)
    assert res < 1e-10
    np.testing.assert_allclose(model.components[0, :, 0], f1, atol=1e-6)
    np.testing.assert_allclose(model.components[1, :, 0], f2, atol=1e-6)


def test_default_tolerance_still_close_to_dense_solve():
    rng = np.random.default_rng(8)
    x = rng.uniform(size=(50, 2))
    r = np.cos(3 * x[:, 0]) - x[:, 1] + 0.1 * rng.standard_normal(50)
    comps, diag = backfit(x, r[:, None] - r.mean(), KernelSpec((0.3, 0.3)), GridSpec(21))
    f1, f2, _ = dense_sbf_solve(x, r - r.mean(), 0.3, 21)
    assert diag["converged"]
    np.testing.assert_allclose(comps[0, :, 0], f1, atol=1e-5)
    np.testing.assert_allclose(comps[1, :, 0], f2, atol=1e-5)


def test_backfit_is_linear_in_responses(rng):
    x = rng.uniform(size=(90, 3))
    r1 = rng.standard_normal((90, 4)) + np.sin(4 * x[:, :1])
    r2 = rng.standard_normal((90, 4)) * x[:, 1:2]
    kernel, grid = KernelSpec((0.2, 0.25, 0.3)), GridSpec(41)
    a, b = 1.7, -0.4
    c1, _ = backfit(x, r1, kernel, grid, tol=1e-13, max_sweeps=2000)
    c2, _ = backfit(x, r2, kernel, grid, tol=1e-13, max_sweeps=2000)
    c12, _ = backfit(x, a * r1 + b * r2, kernel, grid, tol=1e-13, max_sweeps=2000)
    np.testing.assert_allclose(c12, a * c1 + b * c2, atol=1e-8)


def test_left_translation_equivariance(geom, rng):
    sample = additive_sample(rng, n=100, geometry=geom)
    r = spd.random_spd(rng, 3)
    moved = SampleTable(sample.x, geom.group_op(r, sample.y))
    kernel, grid = KernelSpec((0.2, 0.2)), GridSpec(41)
    a = fit(sample, geom, kernel, grid, tol=1e-11, max_sweeps=1000)
    b = fit(moved, geom, kernel, grid, tol=1e-11, max_sweeps=1000)
    np.testing.assert_allclose(b.mu_hat, geom.group_op(r, a.mu_hat), rtol=1e-7, atol=1e-7)
    xs = grid.nodes
    for k in range(2):
        la = np.asarray(geom.lie_log(component_to_group(a, k, xs)))
        lb = np.asarray(geom.lie_log(component_to_group(b, k, xs)))
        np.testing.assert_allclose(lb, la, atol=1e-7)


def test_no_convergence_reports_diagnostics(rng):
    sample = additive_sample(rng)
    with pytest.raises(NoConvergence) as info:
        fit(sample, "log_cholesky", KernelSpec((0.2, 0.2)), tol=1e-14, max_sweeps=1)
    assert info.value.diagnostics["sweeps"] == 1
    assert not info.value.diagnostics["converged"]


def test_too_few_observations(rng):
    sample = additive_sample(rng, n=9)
    with pytest.raises(EmptySample):
        fit(sample, "log_cholesky", KernelSpec((0.4, 0.4)))


def test_sweep_changes_settle_after_a_few_sweeps(rng):
    # smoke check of the monotone-convergence diagnostic on a benign design
    sample = additive_sample(rng, n=200, q=3)
    model = fit(sample, "log_cholesky", KernelSpec((0.2, 0.2, 0.2)), tol=1e-10, max_sweeps=500)
    hist = np.array(model.diagnostics["change_history"])
    assert np.all(np.diff(hist[3:]) <= 1e-12 + 1e-9 * hist[3:-1])


# ---------------------------------------------------------------- backfit_sweep


def _density_setup(rng, q=2, points=31):
    x = rng.uniform(size=(150, q))
    kernel, grid = KernelSpec((0.2,) * q), GridSpec(points)
    return x, estimate_densities(x, kernel, grid)


def test_sweep_zero_state_zero_input(rng):
    _, dens = _density_setup(rng)
    zero = np.zeros((2, 31, 3))
    np.testing.assert_array_equal(backfit_sweep(zero, zero, dens), zero)


def test_sweep_with_product_densities_is_one_shot(rng):
    _, dens = _density_setup(rng, q=3)
    grid = dens.grid
    # replace the pairwise estimates by exact products of the marginals
    pair = np.einsum("ka,jb->kjab", dens.marginal, dens.marginal)
    prod = DensityEstimates(grid, dens.weights, dens.marginal, pair)
    mhat = rng.standard_normal((3, grid.points, 2))
    # make each mhat integrate to the same constant, as true marginal smoothers do
    mbar = np.array([0.3, -0.2])
    for k in range(3):
        wk = dens.marginal[k] * grid.weights
        mhat[k] += mbar - (wk @ mhat[k]) / wk.sum()
    start = rng.standard_normal(mhat.shape)
    for k in range(3):
        wk = dens.marginal[k] * grid.weights
        start[k] -= (wk @ start[k]) / wk.sum()
    once = backfit_sweep(start, mhat, prod, mbar)
    for k in range(3):
        wk = dens.marginal[k] * grid.weights
        expected = mhat[k] - mbar - (wk @ (mhat[k] - mbar)) / wk.sum()
        np.testing.assert_allclose(once[k], expected, atol=1e-12)
    np.testing.assert_allclose(backfit_sweep(once, mhat, prod, mbar), once, atol=1e-12)


def test_sweep_idempotent_at_fixed_point(rng):
    x, dens = _density_setup(rng)
    resp = rng.standard_normal((150, 3))
    resp -= resp.mean(axis=0)
    comps, _ = backfit(x, resp, KernelSpec((0.2, 0.2)), dens.grid, tol=1e-12, max_sweeps=1000)
    mhat = np.array([marginal_regressor(dens, resp, k) for k in range(2)])
    again = backfit_sweep(comps, mhat, dens)
    assert np.abs(again - comps).max() <= 1e-6


def test_sweep_is_linear(rng):
    _, dens = _density_setup(rng)
    s1, s2 = rng.standard_normal((2, 2, 31, 2))
    m1, m2 = rng.standard_normal((2, 2, 31, 2))
    lhs = backfit_sweep(2 * s1 - s2, 2 * m1 - m2, dens)
    rhs = 2 * backfit_sweep(s1, m1, dens) - backfit_sweep(s2, m2, dens)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


# ---------------------------------------------------------------- component_to_group / predict


def test_zero_component_maps_to_identity(geom, rng):
    mu = spd.random_spd(rng, 3)
    model = synthetic_fit(geom, mu, np.zeros((2, 21, 6)))
    np.testing.assert_allclose(component_to_group(model, 0, [0.0, 0.37, 1.0]), np.stack([np.eye(3)] * 3), atol=1e-14)
    np.testing.assert_allclose(predict(model, rng.uniform(size=(5, 2))), np.stack([mu] * 5), atol=1e-12)


def test_component_roundtrip(geom, rng):
    mu = spd.random_spd(rng, 3)
    model = synthetic_fit(geom, mu, rng.standard_normal((2, 21, 6)) * 0.5)
    xs = rng.uniform(size=25)
    w = component_to_group(model, 1, xs)
    assert np.all(spd.is_spd(w))
    back = geom.transport(geom.identity(3), mu, geom.lie_log(w))
    np.testing.assert_allclose(np.asarray(back), model.component_tangent(1, xs), atol=1e-9)


def test_component_interpolates_linearly(geom, rng):
    mu = spd.random_spd(rng, 2)
    comps = rng.standard_normal((1, 11, 3))
    model = synthetic_fit(geom, mu, comps, points=11)
    mid = model.component_coords(0, np.array([0.25]))
    np.testing.assert_allclose(mid[0], 0.5 * (comps[0, 2] + comps[0, 3]), atol=1e-14)


def test_component_rejects_out_of_domain(geom, rng):
    model = synthetic_fit(geom, spd.random_spd(rng, 2), np.zeros((1, 11, 3)), points=11)
    with pytest.raises(OutOfDomain):
        component_to_group(model, 0, [1.01])
    with pytest.raises(OutOfDomain):
        predict(model, [[-0.2]])


def test_predict_group_path_matches_tangent_path(geom, rng):
    mu = spd.random_spd(rng, 3)
    model = synthetic_fit(geom, mu, rng.standard_normal((3, 21, 6)) * 0.4)
    xs = rng.uniform(size=(100, 3))
    np.testing.assert_allclose(predict(model, xs), predict_tangent(model, xs), atol=1e-8)


def test_predict_composes_components(geom, rng):
    mu = spd.random_spd(rng, 3)
    model = synthetic_fit(geom, mu, rng.standard_normal((2, 21, 6)) * 0.4)
    x = rng.uniform(size=2)
    manual = geom.group_op(
        geom.group_op(mu, component_to_group(model, 0, x[:1])[0]),
        component_to_group(model, 1, x[1:])[0],
    )
    np.testing.assert_allclose(predict(model, x), manual, atol=1e-12)


@pytest.mark.parametrize("metric_cls", [LogCholesky, LogEuclidean])
def test_scalar_prediction_closed_form(metric_cls, rng):
    geom = metric_cls()
    mu = np.array([[2.5]])
    comps = rng.standard_normal((1, 21, 1))
    model = synthetic_fit(geom, mu, comps)
    xs = rng.uniform(size=(10, 1))
    # the unit-norm tangent direction at mu is the scalar basis element itself
    b = model.basis[0, 0, 0]
    f = np.interp(xs[:, 0], model.grid.nodes, comps[0, :, 0]) * b
    np.testing.assert_allclose(predict(model, xs)[:, 0, 0], np.exp(np.log(2.5) + f / 2.5), rtol=1e-12)


def test_predict_dimension_check(geom, rng):
    model = synthetic_fit(geom, spd.random_spd(rng, 2), np.zeros((2, 11, 3)), points=11)
    with pytest.raises(DimensionMismatch):
        predict(model, np.zeros((4, 3)))


# ---------------------------------------------------------------- evaluate_rmse


def test_rmse_zero_on_noiseless_predictions(geom, rng):
    model = synthetic_fit(geom, spd.random_spd(rng, 3), rng.standard_normal((2, 21, 6)) * 0.3)
    xs = rng.uniform(size=(30, 2))
    assert evaluate_rmse(model, SampleTable(xs, predict(model, xs))) < 1e-10


def test_rmse_single_pair_is_distance(geom, rng):
    mu = spd.random_spd(rng, 2)
    model = synthetic_fit(geom, mu, np.zeros((1, 11, 3)), points=11)
    y = spd.random_spd(rng, 2)
    delta = geom.distance(mu, y)
    assert evaluate_rmse(model, SampleTable([[0.3]], y[None])) == pytest.approx(delta, rel=1e-12)


def test_rmse_hand_computed_three_rows():
    geom = LogEuclidean()
    model = synthetic_fit(geom, np.eye(2), np.zeros((1, 11, 3)), points=11)
    # distances from I under the log-Euclidean metric are Frobenius norms of log Y
    ys = np.stack([np.diag([np.e, 1.0]), np.diag([1.0, np.e**2]), np.diag([np.e**-1, np.e**2])])
    sq = [1.0, 4.0, 5.0]
    test = SampleTable(np.array([[0.1], [0.5], [0.9]]), ys)
    assert evaluate_rmse(model, test) == pytest.approx(np.sqrt(np.mean(sq)), rel=1e-12)
    np.testing.assert_allclose(prediction_distances(model, test) ** 2, sq, rtol=1e-12)


# ---------------------------------------------------------------- serialization and CV


def test_serialization_roundtrip(geom, rng):
    sample = additive_sample(rng, geometry=geom)
    model = fit(sample, geom, KernelSpec((0.2, 0.3), "quartic"), GridSpec(31))
    model.rescale = (np.array([0.0, -1.0]), np.array([2.0, 3.0]))
    text = json.dumps(model.to_dict())
    again = AdditiveFit.from_dict(json.loads(text))
    assert again.geometry.name == geom.name
    assert again.kernel == model.kernel and again.grid == model.grid
    np.testing.assert_array_equal(again.components, model.components)
    np.testing.assert_array_equal(again.mu_hat, model.mu_hat)
    xs = rng.uniform(size=(20, 2))
    np.testing.assert_allclose(predict(again, xs), predict(model, xs), atol=1e-12)
    np.testing.assert_array_equal(again.rescale[1], [2.0, 3.0])


def test_from_dict_rejects_unknown_version(geom, rng):
    d = synthetic_fit(geom, np.eye(2), np.zeros((1, 11, 3)), points=11).to_dict()
    d["format_version"] = 99
    with pytest.raises(ValueError):
        AdditiveFit.from_dict(d)


def test_select_bandwidth_returns_candidate(rng):
    sample = additive_sample(rng, n=100, q=2)
    c, bws, scores = select_bandwidth(sample, "log_cholesky", GridSpec(41), constants=(0.2, 0.5, 1.0))
    assert c in (0.2, 0.5, 1.0)
    assert scores[c] == min(scores.values())
    assert bws == (min(0.5, c * 100 ** -0.2),) * 2
