import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from conftest import rw_data
from robustdlm.augment import build_augmented
from robustdlm.engine import (GridError, GridSettings, _explore, explore_grid, fit,
                              log_post_theta, mixture_moments, parallel_map)
from robustdlm.model import (GAUSSIAN, STUDENT_T, DlmSpec, GammaPrior, HyperPoint, PriorSpec,
                             TimeSeries, log_prior)
from robustdlm.oracle import dense_posterior, kalman_smooth

Y30 = rw_data(30, seed=21)
GAUSS_MODEL = build_augmented(DlmSpec(TimeSeries(Y30), GAUSSIAN, PriorSpec()))


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_log_post_theta_is_exact_for_gaussian(a1, b1, a2, b2):
    vals = []
    for a, b in ((a1, b1), (a2, b2)):
        h = HyperPoint((np.exp(a),), np.exp(b))
        lp, _ = log_post_theta(GAUSS_MODEL, h)
        lml = kalman_smooth(Y30, 1 / h.obs_precision[0], 1 / h.sys_precision).log_marginal_likelihood
        vals.append((lp, lml + log_prior(h, PriorSpec())))
    assert (vals[0][0] - vals[1][0]) == pytest.approx(vals[0][1] - vals[1][1], abs=1e-8)


def test_fixed_hyperparameters_reproduce_kalman(gauss_spec):
    spec = DlmSpec(gauss_spec.series, GAUSSIAN, PriorSpec(),
                   fixed={"obs_precision": 0.9, "sys_precision": 1.1})
    res = fit(spec)
    assert len(res.grid) == 1 and res.grid.weights[0] == 1.0
    ref = kalman_smooth(spec.observations[0], 1 / 0.9, 1 / 1.1)
    np.testing.assert_allclose(res.state_means, ref.means, atol=1e-9)
    np.testing.assert_allclose(res.state_sds, np.sqrt(ref.variances), rtol=1e-9)
    assert res.hyper_marginals["obs_precision"].degenerate
    assert res.hyper_marginals["sys_precision"].mean == pytest.approx(1.1)


def test_partially_fixed_dof(student_spec):
    spec = DlmSpec(student_spec.series, STUDENT_T, PriorSpec(), fixed={"dof": 5.0})
    res = fit(spec)
    assert res.grid.free_names == ["obs_precision", "sys_precision"]
    assert all(p.h.dof == 5.0 for p in res.grid)
    assert res.hyper_marginals["dof"].mean == 5.0


@pytest.mark.parametrize("family", [GAUSSIAN, STUDENT_T])
def test_normalizations(family):
    res = fit(DlmSpec(TimeSeries(Y30), family, PriorSpec()))
    assert res.grid.weights.sum() == pytest.approx(1.0, abs=1e-8)
    for m in res.state_marginals:
        assert integrate.trapezoid(m.density, m.support) == pytest.approx(1.0, abs=1e-6)
        assert m.quantiles[0.025] < m.quantiles[0.5] < m.quantiles[0.975]
    for m in res.hyper_marginals.values():
        assert m.integral() == pytest.approx(1.0, abs=1e-6)
        assert m.quantiles[0.025] < m.mean < m.quantiles[0.975]


def test_mixture_moments_and_quantiles_agree():
    res = fit(DlmSpec(TimeSeries(Y30), STUDENT_T, PriorSpec()))
    mean, var = mixture_moments(res.grid)
    m = res.state_marginals[10]
    assert m.mean == pytest.approx(mean[10])
    x = m.support
    assert integrate.trapezoid(x * m.density, x) == pytest.approx(mean[10], abs=1e-3 * m.sd)


def test_refit_is_bit_identical(student_spec):
    a, b = fit(student_spec), fit(student_spec)
    assert np.array_equal(a.state_means, b.state_means)
    assert np.array_equal(a.grid.weights, b.grid.weights)


def test_thread_count_does_not_change_results(student_spec):
    a = fit(student_spec, workers=1)
    b = fit(student_spec, workers=3)
    assert np.array_equal(a.state_means, b.state_means)
    assert np.array_equal(a.state_sds, b.state_sds)
    assert [p.index for p in a.grid] == [p.index for p in b.grid]


def test_parallel_map_keeps_order():
    assert parallel_map(lambda v: v * v, range(50), workers=4) == [v * v for v in range(50)]


def test_mirrored_data_gives_mirrored_means():
    for family in (GAUSSIAN, STUDENT_T):
        a = fit(DlmSpec(TimeSeries(Y30), family, PriorSpec()))
        b = fit(DlmSpec(TimeSeries(-Y30), family, PriorSpec()))
        np.testing.assert_allclose(b.state_means, -a.state_means, atol=1e-6)


def test_explore_on_synthetic_gaussian():
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    prec = np.linalg.inv(cov)
    mode = np.array([0.5, -1.0])
    logdens = lambda z: (-0.5 * (z - mode) @ prec @ (z - mode), None)
    settings = GridSettings(step=0.5, drop=12.0)
    vals, vecs, acc, notes, _ = _explore(logdens, mode, prec, settings)
    z = np.array([v[0] for v in acc.values()])
    lp = np.array([v[1] for v in acc.values()])
    assert np.all(-lp <= 12.0)
    w = np.exp(lp - lp.max())
    w /= w.sum()
    np.testing.assert_allclose(w @ z, mode, atol=1e-8)
    np.testing.assert_allclose((z - mode).T @ np.diag(w) @ (z - mode), cov, rtol=1e-3)
    assert not notes


def test_explore_rejects_nonfinite_mode():
    with pytest.raises(GridError):
        _explore(lambda z: (-np.inf, None), np.zeros(1), np.eye(1), GridSettings())


def test_drop_rule():
    s = GridSettings()
    assert s.drop_for(2) == 8.0 and s.drop_for(3) == 8.0 and s.drop_for(4) == 2.5
    assert GridSettings(drop=1.0).drop_for(2) == 1.0


def test_many_series_fall_back_to_mode():
    rng = np.random.default_rng(3)
    a = np.cumsum(rng.normal(size=25))
    ys = np.array([a + rng.normal(size=25) for _ in range(3)])
    spec = DlmSpec(ys, GAUSSIAN, PriorSpec())
    res = fit(spec, GridSettings(max_grid_dim=2))
    assert len(res.grid) == 1
    assert any("max_grid_dim" in w for w in res.diagnostics["warnings"])
    for m in res.hyper_marginals.values():
        assert m.integral() == pytest.approx(1.0, abs=1e-6)


def test_grouped_pools_series():
    # two identical series carry twice the observation information
    y = rw_data(15, seed=9)
    two = DlmSpec(np.vstack([y, y]), GAUSSIAN, PriorSpec(),
                  fixed={"obs_precision": 0.5, "sys_precision": 2.0})
    one = DlmSpec(TimeSeries(y), GAUSSIAN, PriorSpec(),
                  fixed={"obs_precision": 1.0, "sys_precision": 2.0})
    np.testing.assert_allclose(fit(two).state_means, fit(one).state_means, atol=1e-10)


def test_missing_values_are_reported():
    y = Y30.copy()
    y[[4, 17]] = np.nan
    res = fit(DlmSpec(TimeSeries(y), GAUSSIAN, PriorSpec()))
    assert res.diagnostics["masked"] == [(0, 4), (0, 17)]
    assert np.all(np.isfinite(res.state_means))


def test_student_on_gaussian_data_prefers_large_dof():
    y = rw_data(100, seed=31, obs_sd=np.sqrt(2), sys_sd=np.sqrt(2))
    res = fit(DlmSpec(TimeSeries(y), STUDENT_T, PriorSpec()))
    nu = res.hyper_marginals["dof"]
    above = integrate.trapezoid(np.where(nu.support > 10, nu.density, 0.0), nu.support)
    assert above > 0.5


# dense-quadrature posterior means for rw_data(5, seed=2); 101 x 101 hyperparameter
# nodes and 201 state nodes, converged to ~5e-7 against a 41 x 41 / 121 grid
DENSE_N5_MEANS = np.array([0.53423593, -0.34298667, -0.63037292, -1.87951047, -1.82945624])


def test_gaussian_small_model_against_dense_oracle():
    y = rw_data(5, seed=2)
    spec = DlmSpec(TimeSeries(y), GAUSSIAN, PriorSpec())
    dense = dense_posterior(build_augmented(spec), [np.linspace(-5.0, 3.0, 41),
                                                    np.linspace(-6.0, 4.0, 41)],
                            np.linspace(y.min() - 12, y.max() + 12, 121))
    np.testing.assert_allclose(dense.state_means, DENSE_N5_MEANS, atol=1e-5)
    res = fit(spec)
    np.testing.assert_allclose(res.state_means, DENSE_N5_MEANS, atol=1e-3)
    # hyperparameter mode within one standardized grid step
    step = res.grid.axes * res.grid.settings.step
    offset = np.linalg.solve(step, res.grid.mode - dense.theta_mode)
    assert np.max(np.abs(offset)) <= 1.0
