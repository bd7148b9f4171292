"""Synthetic scenarios, holdout splits and empirical variograms."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, DomainError
from .kernels import NonsepParams, SepParams, corr_matrix, gneiting_kernel, spatial_distances, time_lags, family_corr
from .linalg import cholesky_spd
from .model import Dataset, ModelParams, validate_dataset

SCENARIOS = {"nonseparable": 1, "separable": 2, "additive": 3}
DENSE_GENERATION_LIMIT = 10_000
TRUTH_JITTER = (1e-10, 1e-8, 1e-6)


def scenario_name(scenario) -> str:
    """Accept ``"separable"``, ``2`` or ``"2"``."""
    by_number = {v: k for k, v in SCENARIOS.items()}
    if isinstance(scenario, str) and scenario in SCENARIOS:
        return scenario
    try:
        return by_number[int(scenario)]
    except (KeyError, ValueError, TypeError):
        raise DomainError(f"unknown scenario {scenario!r}; use one of {sorted(SCENARIOS)} or 1-3") from None


def default_truth(scenario) -> ModelParams:
    """True parameter values of the three simulation scenarios."""
    name = scenario_name(scenario)
    theta1 = NonsepParams(a=1.0, c=5.0, beta=0.8, alpha=0.5, d=2)
    theta2 = SepParams(phi_s=5.0, phi_u=1.0)
    s1 = 1.0 if name in ("nonseparable", "additive") else 0.0
    s2 = 1.0 if name in ("separable", "additive") else 0.0
    return ModelParams(np.array([1.0, 0.5]), 0.2, s1, s2, theta1, theta2)


@dataclass
class ScenarioSpec:
    scenario: str = "separable"
    n1: int = 225
    n2: int = 20
    params: ModelParams | None = None
    domain: tuple = field(default_factory=lambda: ((0.0, 0.0, 0.0), (20.0, 20.0, 20.0)))
    seed: int = 0
    sites: np.ndarray | None = None
    times: np.ndarray | None = None

    def __post_init__(self):
        self.scenario = scenario_name(self.scenario)
        if self.sites is not None:
            self.sites = np.atleast_2d(np.asarray(self.sites, dtype=float))
            self.n1 = self.sites.shape[0]
        if self.times is not None:
            self.times = np.sort(np.asarray(self.times, dtype=float).ravel())
            self.n2 = self.times.size
        if self.params is None:
            self.params = default_truth(self.scenario)
        p = self.params
        if self.scenario == "nonseparable" and p.sigma2_2 != 0:
            raise DomainError("the nonseparable scenario needs sigma2_2 = 0")
        if self.scenario == "separable" and p.sigma2_1 != 0:
            raise DomainError("the separable scenario needs sigma2_1 = 0")
        if self.n1 < 1 or self.n2 < 1:
            raise DomainError("need at least one site and one time point")


@dataclass
class SimulatedData:
    data: Dataset
    y_true: np.ndarray
    spec: ScenarioSpec


def _covariates(locs, rng):
    return np.column_stack([rng.standard_normal(locs.shape[0]), np.cos(locs.sum(axis=1))])


def generate_scenario(spec: ScenarioSpec) -> SimulatedData:
    """Draw a complete grid from one of the three scenarios.

    Sites are uniform in the spatial box, times uniform in the time interval
    (sorted), unless the spec fixes them.  Covariates are a standard normal column and ``cos(1^T x)``;
    every cell is observed.
    """
    n = spec.n1 * spec.n2
    if n > DENSE_GENERATION_LIMIT:
        raise DimensionError(f"{n} grid cells exceed the generation limit {DENSE_GENERATION_LIMIT}")
    lower, upper = (np.asarray(b, dtype=float) for b in spec.domain)
    d = lower.size - 1
    p = spec.params
    if p.theta1.d != d:
        raise DimensionError(f"theta1 has d={p.theta1.d} but the domain is {d}-dimensional")
    rng = np.random.default_rng(spec.seed)
    sites = lower[:d] + rng.random((spec.n1, d)) * (upper[:d] - lower[:d])
    times = np.sort(lower[d] + rng.random(spec.n2) * (upper[d] - lower[d]))
    if spec.sites is not None:
        sites = spec.sites
    if spec.times is not None:
        times = spec.times
    if sites.shape[1] != d:
        raise DimensionError(f"sites have {sites.shape[1]} coordinates, the domain has {d}")
    proto = Dataset(sites, times, np.ones(n, bool), np.zeros(n), np.zeros((n, 1)))
    locs = proto.locations
    H = _covariates(locs, rng)
    if p.b.size != H.shape[1]:
        raise DimensionError(f"b has {p.b.size} entries, scenarios use 2 covariates")

    w = np.zeros(n)
    if p.sigma2_1 > 0:
        R0 = corr_matrix(locs, locs, gneiting_kernel(p.theta1))
        S = p.sigma2_1 * R0
        if p.sigma2_2 > 0:
            Rs, Ru = _separable(sites, times, p.theta2)
            S += p.sigma2_2 * np.kron(Rs, Ru)
        L = cholesky_spd(S, TRUTH_JITTER, name="scenario covariance").L
        w = L @ rng.standard_normal(n)
    elif p.sigma2_2 > 0:
        Rs, Ru = _separable(sites, times, p.theta2)
        Ls = cholesky_spd(Rs, TRUTH_JITTER, name="R_s").L
        Lu = cholesky_spd(Ru, TRUTH_JITTER, name="R_u").L
        w = np.sqrt(p.sigma2_2) * (Ls @ rng.standard_normal((spec.n1, spec.n2)) @ Lu.T).ravel()
    y = H @ p.b + w
    z = y + np.sqrt(p.tau2) * rng.standard_normal(n)
    data = validate_dataset(Dataset(sites, times, np.ones(n, bool), z, H, "euclidean"))
    return SimulatedData(data, y, spec)


def _separable(sites, times, theta2: SepParams):
    Rs = family_corr(spatial_distances(sites, sites), theta2.phi_s, theta2.space_family)
    Ru = family_corr(time_lags(times, times), theta2.phi_u, theta2.time_family)
    return Rs, Ru


def holdout_split(data: Dataset, fraction: float = 0.9, seed=None):
    """Random train/test partition of the observed cells.

    Returns the training dataset, in which the test cells are missing, and
    the grid indices of the test cells (sorted).
    """
    if not 0.0 < fraction < 1.0:
        raise DomainError(f"training fraction must lie strictly between 0 and 1, got {fraction}")
    obs = data.observed_index
    n_train = int(round(fraction * obs.size))
    if n_train == 0 or n_train == obs.size:
        raise DomainError(f"fraction {fraction} leaves an empty train or test set of {obs.size} cells")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(obs.size)
    test = np.sort(obs[perm[n_train:]])
    mask = data.mask.copy()
    mask[test] = False
    train = data.with_mask(mask)
    return (validate_dataset(train) if data.site_dist is not None else train), test


def empirical_variogram(sites, values, bin_edges, metric: str = "euclidean"):
    """Binned semivariance of one time slice.

    Parameters
    ----------
    sites : array_like, shape (n, d)
    values : array_like, shape (n,)
        NaN entries are skipped.
    bin_edges : array_like
        Increasing edges; a pair at distance h falls in ``[e_k, e_{k+1})``.

    Returns
    -------
    centers, gamma, counts
        ``gamma`` is NaN for empty bins.
    """
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    values = np.asarray(values, dtype=float).ravel()
    edges = np.asarray(bin_edges, dtype=float).ravel()
    if sites.shape[0] != values.size:
        raise DimensionError("one value per site is required")
    if edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise DomainError("bin edges must be increasing with at least two entries")
    ok = np.isfinite(values)
    sites, values = sites[ok], values[ok]
    if values.size < 2:
        raise DomainError("need at least two sites with values")
    iu, ju = np.triu_indices(values.size, k=1)
    h = spatial_distances(sites, sites, metric)[iu, ju]
    sq = (values[iu] - values[ju]) ** 2
    idx = np.searchsorted(edges, h, side="right") - 1
    inside = (idx >= 0) & (idx < edges.size - 1)
    if not np.any(inside):
        raise DomainError("no site pairs fall inside the bins")
    nb = edges.size - 1
    counts = np.bincount(idx[inside], minlength=nb)
    sums = np.bincount(idx[inside], weights=sq[inside], minlength=nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(counts > 0, sums / (2.0 * counts), np.nan)
    return 0.5 * (edges[:-1] + edges[1:]), gamma, counts
