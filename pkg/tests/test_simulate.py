import numpy as np
import pytest

from aagp.exceptions import DimensionError, DomainError
from aagp.kernels import NonsepParams
from aagp.model import Dataset, validate_dataset
from aagp.simulate import (ScenarioSpec, default_truth, empirical_variogram, generate_scenario,
                           holdout_split, scenario_name)


def test_scenario_names():
    assert scenario_name(1) == "nonseparable"
    assert scenario_name("additive") == "additive"
    with pytest.raises(DomainError):
        scenario_name(4)
    with pytest.raises(DomainError):
        ScenarioSpec("separable", params=default_truth("additive"))


def test_same_seed_same_data():
    a = generate_scenario(ScenarioSpec("additive", 20, 5, seed=3))
    b = generate_scenario(ScenarioSpec("additive", 20, 5, seed=3))
    np.testing.assert_array_equal(a.data.z_obs, b.data.z_obs)
    np.testing.assert_array_equal(a.data.sites, b.data.sites)
    c = generate_scenario(ScenarioSpec("additive", 20, 5, seed=4))
    assert not np.array_equal(a.data.z_obs, c.data.z_obs)


def test_layout_and_covariates():
    sim = generate_scenario(ScenarioSpec("nonseparable", 15, 6, seed=0))
    d = sim.data
    assert d.n == 90 and d.n_obs == 90 and d.p == 2
    assert np.all(np.diff(d.times) > 0)
    assert np.all((d.sites >= 0) & (d.sites <= 20)) and np.all((d.times >= 0) & (d.times <= 20))
    np.testing.assert_allclose(d.H[:, 1], np.cos(d.locations.sum(axis=1)), rtol=1e-14)


def test_variances_off_gives_trend_plus_noise():
    truth = default_truth("additive").replace(sigma2_1=0.0, sigma2_2=0.0)
    sim = generate_scenario(ScenarioSpec("additive", 60, 50, params=truth, seed=1))
    r = sim.data.z_obs - sim.data.H @ truth.b
    n = r.size
    np.testing.assert_allclose(sim.y_true, sim.data.H @ truth.b)
    # SE of a sample variance of normals is tau2 sqrt(2 / (n - 1))
    assert abs(r.var(ddof=1) - truth.tau2) < 3 * truth.tau2 * np.sqrt(2 / (n - 1))


def test_separable_correlation_monte_carlo():
    reps = 2000
    sites = np.array([[1.0, 2.0], [4.0, 3.0], [2.0, 7.0]])
    times = np.array([0.0, 0.6, 1.5])
    draws = np.empty((reps, 9))
    for k in range(reps):
        sim = generate_scenario(ScenarioSpec("separable", sites=sites, times=times, seed=k))
        draws[k] = sim.y_true - sim.data.H @ sim.spec.params.b
    h = np.sqrt(((sites[:, None] - sites[None]) ** 2).sum(-1))
    target = np.kron(np.exp(-(h / 5.0) ** 2), np.exp(-(times[:, None] - times[None]) ** 2))
    C = np.corrcoef(draws.T)
    se = (1 - target ** 2) / np.sqrt(reps)
    assert np.all(np.abs(C - target) <= 3 * se + 1e-12)
    # unit marginal variance of the separable part
    v = draws.var(axis=0, ddof=1)
    assert np.all(np.abs(v - 1.0) < 3 * np.sqrt(2 / (reps - 1)))


def test_generated_marginal_variance():
    sites = np.array([[1.0, 2.0], [9.0, 3.0], [15.0, 17.0]])
    times = np.array([0.0, 5.0, 12.0])
    reps = 1000
    resid = []
    for k in range(reps):
        sim = generate_scenario(ScenarioSpec("additive", sites=sites, times=times, seed=k))
        resid.append(sim.y_true - sim.data.H @ sim.spec.params.b)
    v = np.array(resid).var(axis=0, ddof=1)
    # sigma2_1 + sigma2_2 = 2 at every cell
    assert np.all(np.abs(v - 2.0) < 3 * 2.0 * np.sqrt(2 / (reps - 1)))


def test_generation_guards():
    with pytest.raises(DimensionError):
        generate_scenario(ScenarioSpec("additive", 101, 100, seed=0))
    bad = default_truth("nonseparable").replace(theta1=NonsepParams(1, 5, 0.8, d=3))
    with pytest.raises(DimensionError):
        generate_scenario(ScenarioSpec("nonseparable", 4, 3, params=bad))


def _grid(n1, n2):
    n = n1 * n2
    return validate_dataset(Dataset(np.arange(n1, dtype=float)[:, None] * np.ones((1, 2)) * [1, 0],
                                    np.arange(n2, dtype=float), np.ones(n, bool), np.arange(n, dtype=float),
                                    np.ones((n, 1))))


def test_holdout_paper_sizes():
    d = _grid(225, 20)
    train, test = holdout_split(d, 0.9, seed=1)
    assert train.n_obs == 4050 and test.size == 450
    assert not np.any(train.mask[test])
    np.testing.assert_array_equal(np.sort(np.concatenate([train.observed_index, test])), np.arange(4500))
    again, test2 = holdout_split(d, 0.9, seed=1)
    np.testing.assert_array_equal(test, test2)


def test_holdout_small_and_errors():
    d = _grid(2, 1)
    train, test = holdout_split(d, 0.5, seed=0)
    assert train.n_obs == 1 and test.size == 1
    for f in (0.0, 1.0, 1.5):
        with pytest.raises(DomainError):
            holdout_split(d, f)
    with pytest.raises(DomainError):
        holdout_split(_grid(3, 1), 0.1)


def test_variogram_examples():
    c, g, n = empirical_variogram([[0.0, 0.0], [1.0, 0.0]], [0.0, 2.0], [0.0, 2.0])
    assert g[0] == 2.0 and n[0] == 1
    sites = np.random.default_rng(0).random((10, 2))
    c, g, n = empirical_variogram(sites, np.full(10, 3.0), np.linspace(0, 2, 5))
    assert np.all(g[n > 0] == 0)
    c, g, n = empirical_variogram([[0.0, 0.0], [1.0, 0.0]], [0.0, 2.0], [0.0, 2.0, 3.0])
    assert n[1] == 0 and np.isnan(g[1])
    with pytest.raises(DomainError):
        empirical_variogram([[0.0, 0.0], [1.0, 0.0]], [0.0, 2.0], [5.0, 6.0])
    with pytest.raises(DomainError):
        empirical_variogram([[0.0, 0.0], [1.0, 0.0]], [0.0, 2.0], [1.0, 0.0])


def test_variogram_brute_force(rng):
    sites = rng.random((10, 2)) * 5
    vals = rng.standard_normal(10)
    vals[3] = np.nan
    edges = np.array([0.0, 1.0, 2.5, 4.0, 8.0])
    _, g, n = empirical_variogram(sites, vals, edges)
    sums, counts = np.zeros(4), np.zeros(4, int)
    for i in range(10):
        for j in range(i + 1, 10):
            if np.isnan(vals[i]) or np.isnan(vals[j]):
                continue
            h = np.hypot(*(sites[i] - sites[j]))
            for b in range(4):
                if edges[b] <= h < edges[b + 1]:
                    sums[b] += (vals[i] - vals[j]) ** 2
                    counts[b] += 1
    np.testing.assert_array_equal(n, counts)
    np.testing.assert_allclose(g[counts > 0], sums[counts > 0] / (2 * counts[counts > 0]), rtol=1e-14)


def test_variogram_sill_scenario2():
    # sigma2_2 + tau2 = 1.2 once spatial correlation has died out (lag >> phi_s = 5);
    # each slice is one correlated field, so pool slices
    sim = generate_scenario(ScenarioSpec("separable", 200, 20, seed=2))
    d = sim.data
    resid = (d.z_obs - d.H @ sim.spec.params.b).reshape(d.n1, d.n2)
    g = [empirical_variogram(d.sites, resid[:, j], [12.0, 25.0])[1][0] for j in range(d.n2)]
    assert np.mean(g) == pytest.approx(1.2, abs=0.3)
