"""
Posterior predictive sampling by composition, and prediction metrics.

For each retained draw the grid latents ``w1`` and ``w2`` are needed.  They
are not stored by the sampler, so :func:`predictive_draws` rebuilds them by a
short Gibbs run over ``(w1, w2, Z_m)`` with the draw's parameters and knot
values held fixed.  :class:`PredictionMonitor` instead reads them off the
running chain, which is exact and cheaper when the targets are known before
fitting.

Given the latents, a target ``x0`` receives

* ``w1(x0) ~ N(g0^T u, sigma2_1 V0)`` with ``u = L^{-1} w*`` (or ``w1`` itself
  on a grid cell),
* ``w2(x0) ~ N(k0^T K^{-1} w2, sigma2_2 (1 - k0^T K^{-1} k0))`` where
  ``k0 = r_s(s0) kron r_u(u0)`` (or ``w2`` itself on a grid cell),
* ``Y(x0) = h0^T b + w1(x0) + w2(x0)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .exceptions import DimensionError, DomainError
from .kernels import family_corr, spatial_distances, time_lags
from .linalg import SEPARABLE_NUGGET, kron_eig
from .model import V_FLOOR, Dataset, ModelParams, separable_factors, validate_dataset
from .mpp import KnotSet, build_mpp, knot_geometry
from .sampler import SampleStore, w1_conditional, w2_conditional_eigen


@dataclass
class PredictionResult:
    """Per-target summaries of predictive draws.

    Intervals are the 2.5% and 97.5% empirical quantiles (linear
    interpolation between order statistics).
    """

    targets: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_draws: int

    @classmethod
    def from_draws(cls, targets, draws) -> "PredictionResult":
        draws = np.atleast_2d(np.asarray(draws, dtype=float))
        if draws.shape[1] == 0:
            raise DomainError("no predictive draws")
        lo, hi = np.quantile(draws, [0.025, 0.975], axis=1)
        sd = draws.std(axis=1, ddof=1) if draws.shape[1] > 1 else np.zeros(draws.shape[0])
        return cls(np.asarray(targets, dtype=float), draws.mean(axis=1), sd, lo, hi, draws.shape[1])

    def __len__(self):
        return self.mean.size

    def to_frame(self, coord_names=None) -> pd.DataFrame:
        d = self.targets.shape[1] - 1
        names = list(coord_names) if coord_names else [f"x{i + 1}" for i in range(d)]
        df = pd.DataFrame(self.targets[:, :d], columns=names)
        df["time"] = self.targets[:, d]
        df["mean"], df["sd"] = self.mean, self.sd
        df["q2.5"], df["q97.5"] = self.lower, self.upper
        return df


def mspe(pred_means, truth) -> float:
    """Mean squared prediction error."""
    a = np.asarray(pred_means, dtype=float).ravel()
    b = np.asarray(truth, dtype=float).ravel()
    if a.size == 0:
        raise DomainError("mspe of an empty input")
    if a.size != b.size:
        raise DimensionError(f"{a.size} predictions but {b.size} true values")
    return float(np.mean((a - b) ** 2))


def _as_bounds(results):
    if isinstance(results, PredictionResult):
        return results.lower, results.upper
    results = list(results)
    if not results:
        raise DomainError("no prediction results")
    return (np.concatenate([np.atleast_1d(r.lower) for r in results]),
            np.concatenate([np.atleast_1d(r.upper) for r in results]))


def alci(results) -> float:
    """Average length of the central 95% intervals.

    `results` is a :class:`PredictionResult` or a sequence of them.
    """
    lo, hi = _as_bounds(results)
    if lo.size == 0:
        raise DomainError("alci of an empty input")
    return float(np.mean(hi - lo))


def coverage(results, truth) -> float:
    """Fraction of true values inside their intervals."""
    lo, hi = _as_bounds(results)
    truth = np.asarray(truth, dtype=float).ravel()
    if truth.size != lo.size:
        raise DimensionError(f"{lo.size} intervals but {truth.size} true values")
    return float(np.mean((truth >= lo) & (truth <= hi)))


class TargetGeometry:
    """Everything about the targets that does not depend on the parameters.

    Targets sitting exactly on a grid cell reuse that cell's latent values;
    the rest go through the conditional formulas.
    """

    def __init__(self, targets, data: Dataset, knots: KnotSet, H0=None):
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        if targets.shape[1] != data.d + 1:
            raise DimensionError(f"targets need {data.d + 1} columns (coordinates, then time)")
        self.targets = targets
        site_idx = _match_rows(targets[:, :-1], data.sites)
        time_idx = _match_rows(targets[:, -1:], data.times[:, None])
        on_grid = (site_idx >= 0) & (time_idx >= 0)
        self.grid_index = np.where(on_grid, site_idx * data.n2 + time_idx, -1)
        self.off = np.flatnonzero(~on_grid)
        self.H0 = _target_covariates(H0, self.grid_index, data)
        if self.off.size:
            off = targets[self.off]
            self.geometry = knot_geometry(off, knots, data.distance_metric)
            self.h_s = spatial_distances(off[:, :-1], data.sites, data.distance_metric)
            self.t_u = time_lags(off[:, -1], data.times)

    @property
    def n(self):
        return self.targets.shape[0]


def _match_rows(A, B, tol=1e-12):
    """Index into `B` of each row of `A`, or -1."""
    out = np.full(A.shape[0], -1)
    if B.shape[0] == 0:
        return out
    D = np.abs(A[:, None, :] - B[None, :, :]).max(axis=2)
    j = D.argmin(axis=1)
    hit = D[np.arange(A.shape[0]), j] <= tol
    out[hit] = j[hit]
    return out


def _target_covariates(H0, grid_index, data: Dataset):
    n = grid_index.size
    if H0 is None:
        missing = np.flatnonzero(grid_index < 0)
        if missing.size:
            raise DomainError(f"covariates h(x0) are undefined for off-grid targets {missing.tolist()}")
        return data.H[grid_index]
    H0 = np.asarray(H0, dtype=float)
    if H0.ndim == 1:
        H0 = H0[:, None]
    if H0.shape != (n, data.p):
        raise DimensionError(f"target covariates must have shape ({n}, {data.p}), got {H0.shape}")
    bad = np.flatnonzero(~np.all(np.isfinite(H0), axis=1))
    if bad.size:
        raise DomainError(f"covariates h(x0) are undefined for targets {bad.tolist()}")
    return H0


def draw_targets(tg: TargetGeometry, params: ModelParams, w_star, w1, w2, mpp, eig, rng,
                 include_noise: bool = False, knots: KnotSet | None = None):
    """One predictive draw of ``Y(x0)`` (or ``Z(x0)``) for every target."""
    out = tg.H0 @ params.b
    on = tg.grid_index >= 0
    out[on] += w1[tg.grid_index[on]] + w2[tg.grid_index[on]]
    if tg.off.size:
        k = tg.off.size
        if params.sigma2_1 > 0:
            off_mpp = build_mpp(None, knots, params.theta1, geometry=tg.geometry)
            u = mpp.Rstar_chol.solve_lower(w_star)
            out[tg.off] += off_mpp.G @ u + np.sqrt(params.sigma2_1 * off_mpp.V) * rng.standard_normal(k)
        if params.sigma2_2 > 0:
            th = params.theta2
            rs = family_corr(tg.h_s, th.phi_s, th.space_family)      # (k, n1)
            ru = family_corr(tg.t_u, th.phi_u, th.time_family)       # (k, n2)
            alpha = eig.solve(w2).reshape(eig.shape)
            mean = np.einsum("ki,ij,kj->k", rs, alpha, ru)
            a = rs @ eig.Q_s
            c = ru @ eig.Q_u
            quad = (a * a / eig.lam_s).sum(axis=1) * (c * c / eig.lam_u).sum(axis=1)
            var = params.sigma2_2 * np.clip(1.0 - quad, 0.0, None)
            out[tg.off] += mean + np.sqrt(var) * rng.standard_normal(k)
    if include_noise:
        out += np.sqrt(params.tau2) * rng.standard_normal(tg.n)
    return out


class PredictionMonitor:
    """Collects predictive draws from a running chain.

    Pass an instance as ``monitor`` to :func:`aagp.sampler.run_chain`.
    """

    def __init__(self, targets, data: Dataset, knots: KnotSet, H0=None, include_noise=False):
        data = data if data.site_dist is not None else validate_dataset(data)
        self.tg = TargetGeometry(targets, data, knots, H0)
        self.knots = knots
        self.include_noise = include_noise
        self.draws = []

    def __call__(self, state, rng):
        self.draws.append(draw_targets(self.tg, state.params, state.w_star, state.w1, state.w2,
                                       state.mpp, state.eig, rng, self.include_noise, self.knots))

    def draw_matrix(self):
        return np.column_stack(self.draws) if self.draws else np.empty((self.tg.n, 0))

    def result(self) -> PredictionResult:
        return PredictionResult.from_draws(self.tg.targets, self.draw_matrix())


def _latent_sweep(params, data, mpp, eig, u, z, w1, w2, missing, rng, v_floor):
    """One Gibbs pass over w1, w2 and the missing responses, knots held fixed."""
    trend = data.H @ params.b
    n = data.n
    if params.sigma2_1 > 0:
        V = np.maximum(mpp.V, v_floor)
        mean, var = w1_conditional(mpp.G @ u, z - trend - w2, V, params.sigma2_1, params.tau2)
        w1 = mean + np.sqrt(var) * rng.standard_normal(n)
    else:
        w1 = np.zeros(n)
    if params.sigma2_2 > 0:
        mean, d = w2_conditional_eigen(z - trend - w1, eig, params.sigma2_2, params.tau2)
        w2 = eig.from_eigenbasis(mean + rng.standard_normal(n) / np.sqrt(d))
    else:
        w2 = np.zeros(n)
    if missing.size:
        z[missing] = trend[missing] + w1[missing] + w2[missing] \
            + np.sqrt(params.tau2) * rng.standard_normal(missing.size)
    return w1, w2, z


def reconstruct_latents(store: SampleStore, data: Dataset, knots: KnotSet, seed=0,
                        n_warmup: int = 100, n_inner: int = 10, nugget: float = SEPARABLE_NUGGET,
                        v_floor: float = V_FLOOR):
    """Yield ``(k, params, w_star, w1, w2, mpp, eig, rng)`` for every retained draw.

    Draw ``k`` runs `n_inner` sweeps (plus `n_warmup` before the first)
    starting from the previous draw's latents, with its own random stream
    ``default_rng([seed, k])``.
    """
    data = data if data.site_dist is not None else validate_dataset(data)
    if len(store) == 0:
        raise DomainError("sample store is empty")
    geom = knot_geometry(data.locations, knots, data.distance_metric)
    missing = data.missing_index
    w1 = np.zeros(data.n)
    w2 = np.zeros(data.n)
    z = None
    for k in range(len(store)):
        rng = np.random.default_rng([int(seed), k])
        params = store.model_params(k)
        mpp = build_mpp(None, knots, params.theta1, geometry=geom)
        Rs, Ru = separable_factors(data, params.theta2)
        eig = kron_eig(Rs, Ru, nugget, nugget)
        w_star = store.w_star[k]
        u = mpp.Rstar_chol.solve_lower(w_star)
        if z is None:
            z = data.z_full(data.H[missing] @ params.b + (mpp.G @ u)[missing])
        sweeps = n_inner + (n_warmup if k == 0 else 0)
        for _ in range(sweeps):
            w1, w2, z = _latent_sweep(params, data, mpp, eig, u, z, w1, w2, missing, rng, v_floor)
        yield k, params, w_star, w1, w2, mpp, eig, rng


def predictive_draws(targets, store: SampleStore, data: Dataset, knots: KnotSet, H0=None,
                     seed=0, include_noise: bool = False, n_warmup: int = 100,
                     n_inner: int = 10) -> np.ndarray:
    """Composition draws of ``Y`` at `targets`, one column per retained draw.

    Parameters
    ----------
    targets : array_like, shape (k, d + 1)
        Spatial coordinates then time, in the dataset's coordinate system.
    H0 : array_like, shape (k, p), optional
        Covariates at the targets; may be omitted when every target is a
        grid cell.
    include_noise : bool
        Add the nugget, giving draws of ``Z`` instead of ``Y``.
    """
    data = data if data.site_dist is not None else validate_dataset(data)
    tg = TargetGeometry(targets, data, knots, H0)
    out = np.empty((tg.n, len(store)))
    for k, params, w_star, w1, w2, mpp, eig, rng in reconstruct_latents(
            store, data, knots, seed, n_warmup, n_inner):
        out[:, k] = draw_targets(tg, params, w_star, w1, w2, mpp, eig, rng, include_noise, knots)
    return out


def predict(targets, store, data, knots, H0=None, seed=0, include_noise=False,
            **kw) -> PredictionResult:
    """Summaries of :func:`predictive_draws`."""
    draws = predictive_draws(targets, store, data, knots, H0, seed, include_noise, **kw)
    return PredictionResult.from_draws(targets, draws)
