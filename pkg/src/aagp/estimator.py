"""Scikit-learn style front end."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DimensionError, DomainError, LengthMismatchError
from .model import Dataset, Priors, validate_dataset
from .mpp import KnotSet, select_knots
from .predict import PredictionMonitor, PredictionResult, predictive_draws
from .sampler import ChainConfig, Sampler, run_chain


def grid_from_rows(X, y, H=None, metric="euclidean"):
    """Arrange rows ``(coords..., time)`` covering a full grid into a :class:`Dataset`.

    `y` is NaN at unobserved cells.  Returns the dataset and the permutation
    taking input rows to grid order.
    """
    X = check_array(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if y.size != X.shape[0]:
        raise LengthMismatchError(f"{X.shape[0]} rows but {y.size} responses")
    if X.shape[1] < 2:
        raise DimensionError("rows need at least one spatial coordinate and a time")
    H = np.ones((X.shape[0], 1)) if H is None else check_array(H, dtype=float, ensure_2d=False)
    H = H[:, None] if H.ndim == 1 else H
    if H.shape[0] != X.shape[0]:
        raise LengthMismatchError("covariates need one row per input row")
    sites, site_idx = np.unique(X[:, :-1], axis=0, return_inverse=True)
    times, time_idx = np.unique(X[:, -1], return_inverse=True)
    flat = site_idx.ravel() * times.size + time_idx.ravel()
    n = sites.shape[0] * times.size
    if flat.size != n or np.unique(flat).size != n:
        raise DimensionError(
            f"rows must cover the {sites.shape[0]} x {times.size} site-time grid exactly once")
    order = np.argsort(flat)
    z = y[order]
    mask = np.isfinite(z)
    data = Dataset(sites, times, mask, z[mask], H[order], metric)
    return validate_dataset(data), order


class AAGPRegressor(RegressorMixin, BaseEstimator):
    """Additive approximate Gaussian process regression on a space-time grid.

    Parameters
    ----------
    n_knots : int
    knot_design : {"latin_hypercube", "uniform_random"}
    knot_seed : int
    knot_domain : (lower, upper), optional
        Box for the knots; defaults to the bounding box of the grid.
    n_iter, burn_in, thin, seed
        Chain settings, see :class:`aagp.sampler.ChainConfig`.
    priors : Priors, optional
        Defaults to :meth:`Priors.default`.
    metric : {"euclidean", "chordal"}
    alpha : float
        Fixed smoothness exponent of the nonseparable part.
    space_family, time_family : {"squared_exponential", "exponential"}
    fixed : dict, optional
        Parameters held constant, e.g. ``{"sigma2_2": 1e-6}`` for a
        low-rank-only fit.
    n_warmup, n_inner : int
        Latent reconstruction sweeps used by :meth:`predict`.

    Attributes
    ----------
    dataset_ : Dataset
    knots_ : KnotSet
    store_ : SampleStore
    monitor_ : PredictionResult or None
        Predictions at ``X_monitor`` collected during the run.
    """

    def __init__(self, n_knots=100, knot_design="latin_hypercube", knot_seed=0, knot_domain=None,
                 n_iter=25000, burn_in=15000, thin=1, seed=0, priors=None, metric="euclidean",
                 alpha=0.5, space_family="squared_exponential", time_family="squared_exponential",
                 fixed=None, proposal_scale=0.2, adapt=True, n_warmup=100, n_inner=10):
        self.n_knots = n_knots
        self.knot_design = knot_design
        self.knot_seed = knot_seed
        self.knot_domain = knot_domain
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thin = thin
        self.seed = seed
        self.priors = priors
        self.metric = metric
        self.alpha = alpha
        self.space_family = space_family
        self.time_family = time_family
        self.fixed = fixed
        self.proposal_scale = proposal_scale
        self.adapt = adapt
        self.n_warmup = n_warmup
        self.n_inner = n_inner

    def _chain_config(self):
        return ChainConfig(n_iter=self.n_iter, burn_in=self.burn_in, thin=self.thin, seed=self.seed,
                           proposal_scales={k: self.proposal_scale for k in ("a", "c", "beta", "phi_s", "phi_u")},
                           adapt=self.adapt, fixed=dict(self.fixed or {}))

    def fit(self, X, y, H=None, X_monitor=None, H_monitor=None, knots=None, include_noise=False):
        """Fit on rows covering a full grid; NaN responses are imputed.

        Parameters
        ----------
        X : array_like, shape (n, d + 1)
        y : array_like, shape (n,)
        H : array_like, shape (n, p), optional
            Covariates; an intercept column by default.
        X_monitor, H_monitor : optional
            Targets predicted from the running chain (exact latents).
        knots : KnotSet, optional
        """
        data, _ = grid_from_rows(X, y, H, self.metric)
        return self.fit_dataset(data, knots, X_monitor, H_monitor, include_noise)

    def fit_dataset(self, data: Dataset, knots: KnotSet | None = None, X_monitor=None,
                    H_monitor=None, include_noise=False):
        """Fit directly on a :class:`Dataset`."""
        data = data if data.site_dist is not None else validate_dataset(data)
        if knots is None:
            locs = data.locations
            domain = self.knot_domain or (locs.min(axis=0), locs.max(axis=0))
            knots = select_knots(domain, self.n_knots, self.knot_design, self.knot_seed)
        priors = self.priors if self.priors is not None else Priors.default(data.p)
        config = self._chain_config()
        sampler = Sampler(data, priors, knots, config)
        init = sampler.default_init(self.alpha, self.space_family, self.time_family)
        monitor = None
        if X_monitor is not None:
            monitor = PredictionMonitor(X_monitor, data, knots, H_monitor, include_noise)
        self.store_ = run_chain(data, priors, knots, config, init=init, monitor=monitor, sampler=sampler)
        self.dataset_, self.knots_, self.priors_ = data, knots, priors
        self.monitor_ = monitor.result() if monitor is not None else None
        self._monitor_targets = None if X_monitor is None else np.asarray(X_monitor, dtype=float)
        self._monitor_draws = None if monitor is None else monitor.draw_matrix()
        self.n_features_in_ = data.d + 1
        return self

    def sample_predictive(self, X, H=None, include_noise=False, seed=None):
        """Predictive draws at `X`, one column per retained iteration."""
        check_is_fitted(self, "store_")
        X = check_array(X, dtype=float)
        if (self._monitor_draws is not None and not include_noise
                and self._monitor_targets.shape == X.shape and np.array_equal(self._monitor_targets, X)):
            return self._monitor_draws
        return predictive_draws(X, self.store_, self.dataset_, self.knots_, H,
                                seed=self.seed if seed is None else seed, include_noise=include_noise,
                                n_warmup=self.n_warmup, n_inner=self.n_inner)

    def predict_result(self, X, H=None, include_noise=False) -> PredictionResult:
        X = check_array(X, dtype=float)
        return PredictionResult.from_draws(X, self.sample_predictive(X, H, include_noise))

    def predict(self, X, H=None, return_std=False):
        """Posterior predictive mean of the noise-free process at `X`."""
        r = self.predict_result(X, H)
        return (r.mean, r.sd) if return_std else r.mean

    def predict_interval(self, X, H=None, include_noise=False):
        """Central 95% predictive intervals ``(lower, upper)``."""
        r = self.predict_result(X, H, include_noise)
        return r.lower, r.upper

    def posterior_median(self, name):
        check_is_fitted(self, "store_")
        if name not in self.store_.names:
            raise DomainError(f"unknown parameter {name!r}")
        return float(np.median(self.store_.column(name)))
