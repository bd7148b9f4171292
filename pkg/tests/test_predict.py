import numpy as np
import pytest

from aagp.diagnostics import effective_sample_size
from aagp.exceptions import DimensionError, DomainError
from aagp.kernels import NonsepParams, SepParams
from aagp.model import Dataset, ModelParams, Priors, validate_dataset
from aagp.mpp import KnotSet
from aagp.predict import (PredictionMonitor, PredictionResult, TargetGeometry, alci, coverage, draw_targets,
                          mspe, predict, predictive_draws)
from aagp.sampler import ChainConfig, SampleStore, param_names, params_row, run_chain

import oracle


def toy9(seed=0, tau2=0.3):
    rng = np.random.default_rng(seed)
    sites = np.array([[0.0, 0.0], [1.0, 0.5], [0.3, 1.4]])
    times = np.array([0.0, 0.6, 1.5])
    mask = np.ones(9, bool)
    mask[4] = False
    H = np.column_stack([np.ones(9), rng.standard_normal(9)])
    data = validate_dataset(Dataset(sites, times, mask, rng.standard_normal(8), H))
    knots = KnotSet(np.array([[0.2, 0.2, 0.3], [0.9, 1.0, 1.2]]))
    params = ModelParams(np.array([0.4, -0.3]), tau2, 0.8, 0.6, NonsepParams(1.0, 1.2, 0.5),
                         SepParams(1.1, 0.9))
    return data, knots, params


def fixed_of(params):
    return {"b": params.b, "tau2": params.tau2, "sigma2_1": params.sigma2_1, "sigma2_2": params.sigma2_2,
            "a": params.theta1.a, "c": params.theta1.c, "beta": params.theta1.beta,
            "phi_s": params.theta2.phi_s, "phi_u": params.theta2.phi_u}


def _check_against_oracle(draws, mean, sd):
    for j in range(draws.shape[0]):
        ess = effective_sample_size(draws[j])
        assert abs(draws[j].mean() - mean[j]) < 3 * sd[j] / np.sqrt(ess)
        # sd of a sample sd is about sd / sqrt(2 ess)
        assert abs(draws[j].std() - sd[j]) < 3 * sd[j] / np.sqrt(2 * ess) + 0.01 * sd[j]


@pytest.mark.slow
def test_monitor_and_posthoc_match_dense_kriging():
    data, knots, params = toy9()
    targets = np.array([[1.0, 0.5, 0.6], [0.5, 0.7, 1.0]])    # missing grid cell, off-grid point
    H0 = np.array([data.H[4], [1.0, 0.25]])
    mean, cov = oracle.dense_conditional(params, data, knots, targets, H0)
    sd = np.sqrt(np.diag(cov))
    cfg = ChainConfig(n_iter=11_000, burn_in=1000, seed=1, fixed=fixed_of(params), adapt=False)
    mon = PredictionMonitor(targets, data, knots, H0)
    store = run_chain(data, Priors.default(2), knots, cfg, init=params, monitor=mon)
    _check_against_oracle(mon.draw_matrix(), mean, sd)
    post = predictive_draws(targets, store, data, knots, H0, seed=2, n_warmup=20, n_inner=2)
    _check_against_oracle(post, mean, sd)


def _store_of(params, w_star, n=50):
    row = params_row(params)
    return SampleStore(param_names(params.b.size), np.tile(row, (n, 1)), np.tile(w_star, (n, 1)),
                       np.arange(n), {}, {}, np.empty(0), params)


def test_interpolation_at_knot_and_observation():
    data, _, params = toy9()
    params = params.replace(tau2=1e-10, sigma2_2=0.0)
    target = data.locations[0]
    knots = KnotSet(np.vstack([target, [0.9, 1.0, 1.2]]))
    draws = predictive_draws(target[None], _store_of(params, np.array([0.3, -0.1])), data, knots,
                             seed=0, n_warmup=5, n_inner=1)
    # observed cell on a knot with no nugget: nothing left to vary
    assert draws.std() < 1e-4
    # off-grid but at a knot: V(x0) = 0, so the w1 part is fixed by w*
    tg = TargetGeometry(knots.locations[1:], data, knots, np.array([[1.0, 0.0]]))
    from aagp.model import build_structures
    mpp, eig = build_structures(params, data, knots)
    rng = np.random.default_rng(0)
    vals = [draw_targets(tg, params, np.array([0.3, -0.1]), np.zeros(9), np.zeros(9), mpp, eig, rng,
                         knots=knots)[0] for _ in range(50)]
    assert np.std(vals) < 1e-6
    assert np.mean(vals) == pytest.approx(params.b[0] - 0.1, abs=1e-6)


def test_observed_cell_converges_to_observation():
    data, knots, params = toy9(tau2=1e-8)
    cfg = ChainConfig(n_iter=300, burn_in=100, seed=3, fixed=fixed_of(params), adapt=False)
    mon = PredictionMonitor(data.locations[:1], data, knots)
    run_chain(data, Priors.default(2), knots, cfg, init=params, monitor=mon)
    r = mon.result()
    assert r.mean[0] == pytest.approx(data.z_obs[0], abs=1e-3)
    assert r.sd[0] < 1e-3


def test_constant_trend_only():
    data, knots, params = toy9()
    params = params.replace(b=np.array([1.7, 0.0]), sigma2_1=0.0, sigma2_2=0.0)
    targets = np.array([[0.5, 0.5, 0.2], [3.0, 3.0, 9.0]])
    H0 = np.array([[1.0, 5.0], [1.0, -2.0]])
    r = predict(targets, _store_of(params, np.zeros(2)), data, knots, H0, n_warmup=2, n_inner=1)
    np.testing.assert_allclose(r.mean, 1.7)
    np.testing.assert_allclose(r.sd, 0.0)


def test_undefined_covariates_are_named():
    data, knots, _ = toy9()
    targets = np.array([[0.0, 0.0, 0.0], [5.0, 5.0, 5.0]])
    with pytest.raises(DomainError, match=r"\[1\]"):
        TargetGeometry(targets, data, knots)
    with pytest.raises(DomainError, match=r"\[0\]"):
        TargetGeometry(targets, data, knots, np.array([[np.nan, 1.0], [1.0, 1.0]]))
    with pytest.raises(DimensionError):
        TargetGeometry(targets[:, :2], data, knots)


def test_mspe_examples(rng):
    assert mspe([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mspe([0.0, 0.0], [1.0, 1.0]) == 1.0
    a, b = rng.standard_normal(7), rng.standard_normal(7)
    assert mspe(a, b) == pytest.approx(sum((x - y) ** 2 for x, y in zip(a, b)) / 7, rel=1e-14)
    with pytest.raises(DomainError):
        mspe([], [])
    with pytest.raises(DimensionError):
        mspe([1.0], [1.0, 2.0])


def test_alci_examples(rng):
    unit = PredictionResult(np.zeros((3, 3)), np.full(3, 0.5), np.ones(3), np.zeros(3), np.ones(3), 10)
    assert alci(unit) == 1.0
    assert alci([unit, unit]) == 1.0
    flat = PredictionResult.from_draws(np.zeros((2, 3)), np.full((2, 100), 4.2))
    assert alci(flat) == 0.0
    gauss = PredictionResult.from_draws(np.zeros((1, 3)), rng.standard_normal((1, 10_000)))
    assert alci(gauss) == pytest.approx(3.92, abs=0.1)
    with pytest.raises(DomainError):
        alci([])


def test_result_summaries(rng):
    draws = rng.standard_normal((4, 101))
    r = PredictionResult.from_draws(np.zeros((4, 3)), draws)
    np.testing.assert_allclose(r.lower, np.quantile(draws, 0.025, axis=1))
    assert np.all((r.lower <= r.mean) & (r.mean <= r.upper))
    assert r.n_draws == 101 and len(r) == 4
    assert coverage(r, np.zeros(4)) == 1.0
    assert coverage(r, np.full(4, 100.0)) == 0.0
    df = r.to_frame(["lon", "lat"])
    assert list(df.columns) == ["lon", "lat", "time", "mean", "sd", "q2.5", "q97.5"]
    with pytest.raises(DomainError):
        PredictionResult.from_draws(np.zeros((1, 3)), np.empty((1, 0)))


def test_posthoc_reproducible():
    data, knots, params = toy9()
    store = _store_of(params, np.array([0.2, 0.1]), n=5)
    t = np.array([[0.5, 0.7, 1.0]])
    H0 = np.array([[1.0, 0.0]])
    a = predictive_draws(t, store, data, knots, H0, seed=4, n_warmup=3, n_inner=1)
    b = predictive_draws(t, store, data, knots, H0, seed=4, n_warmup=3, n_inner=1)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (1, 5)
