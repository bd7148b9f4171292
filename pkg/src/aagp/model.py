"""
Data containers, priors and densities of the additive model

    Z = H b + w1 + w2 + eps,

where ``w1`` is a modified-predictive-process approximation of a Gneiting
process with variance ``sigma2_1``, ``w2`` is a separable process with
variance ``sigma2_2`` and ``eps`` is white noise with variance ``tau2``.

All grid vectors (``w1``, ``w2``, ``Z``, ``mask`` and rows of ``H``) use the
time-fastest ordering ``k = i * n2 + j`` for site ``i`` and time ``j``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .exceptions import (DimensionError, DomainError, DuplicateError,
                         LengthMismatchError, NonFiniteError)
from .kernels import NonsepParams, SepParams, family_corr, spatial_distances, time_lags
from .linalg import (CholeskyFactor, KroneckerEig, LowRankPlusDiag, cholesky_spd,
                     kron_eig, smw_logdet, smw_solve, SEPARABLE_NUGGET)
from .mpp import KnotSet, MppStructures, build_mpp

LOG2PI = np.log(2.0 * np.pi)
DENSE_LIMIT = 2500
V_FLOOR = 1e-10

THETA1_NAMES = ("a", "c", "beta")
THETA2_NAMES = ("phi_s", "phi_u")
VARIANCE_NAMES = ("tau2", "sigma2_1", "sigma2_2")


@dataclass
class Dataset:
    """Space-time grid with an observation mask.

    Attributes
    ----------
    sites : ndarray, shape (n1, d)
    times : ndarray, shape (n2,)
    mask : ndarray of bool, shape (n1 * n2,)
        True where the response is observed.
    z_obs : ndarray, shape (mask.sum(),)
        Observed responses in grid order.
    H : ndarray, shape (n1 * n2, p)
        Covariates for every grid cell, observed or not.
    distance_metric : {"euclidean", "chordal"}
    site_ids : list, optional
        External site labels, one per row of `sites`.
    """

    sites: np.ndarray
    times: np.ndarray
    mask: np.ndarray
    z_obs: np.ndarray
    H: np.ndarray
    distance_metric: str = "euclidean"
    site_dist: np.ndarray | None = field(default=None, repr=False)
    time_lag: np.ndarray | None = field(default=None, repr=False)
    site_ids: list | None = None

    @property
    def n1(self) -> int:
        return self.sites.shape[0]

    @property
    def n2(self) -> int:
        return self.times.shape[0]

    @property
    def n(self) -> int:
        return self.n1 * self.n2

    @property
    def d(self) -> int:
        return self.sites.shape[1]

    @property
    def p(self) -> int:
        return self.H.shape[1]

    @property
    def n_obs(self) -> int:
        return int(self.mask.sum())

    @property
    def observed_index(self):
        return np.flatnonzero(self.mask)

    @property
    def missing_index(self):
        return np.flatnonzero(~self.mask)

    @property
    def locations(self):
        """All grid cells as (n, d + 1) rows, time-fastest."""
        s = np.repeat(self.sites, self.n2, axis=0)
        u = np.tile(self.times, self.n1)
        return np.column_stack([s, u])

    def z_full(self, z_missing=None):
        """Complete response vector; missing cells are NaN unless given."""
        z = np.full(self.n, np.nan)
        z[self.mask] = self.z_obs
        if z_missing is not None:
            z[~self.mask] = z_missing
        return z

    def with_mask(self, mask) -> "Dataset":
        """Copy with a smaller mask; responses outside it are dropped."""
        mask = np.asarray(mask, dtype=bool)
        if np.any(mask & ~self.mask):
            raise LengthMismatchError("new mask may only remove observed cells")
        z = self.z_full()
        return dataclasses.replace(self, mask=mask, z_obs=z[mask])


def validate_dataset(d: Dataset) -> Dataset:
    """Check every grid invariant and cache pairwise distances and lags."""
    sites = np.atleast_2d(np.asarray(d.sites, dtype=float))
    times = np.asarray(d.times, dtype=float).ravel()
    mask = np.asarray(d.mask, dtype=bool).ravel()
    z_obs = np.asarray(d.z_obs, dtype=float).ravel()
    H = np.asarray(d.H, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    n = sites.shape[0] * times.shape[0]
    if d.distance_metric not in ("euclidean", "chordal"):
        raise DomainError(f"unknown distance metric {d.distance_metric!r}")
    if not (np.all(np.isfinite(sites)) and np.all(np.isfinite(times))):
        raise NonFiniteError("site coordinates and times must be finite")
    if not np.all(np.isfinite(z_obs)):
        raise NonFiniteError("observed responses must be finite")
    if not np.all(np.isfinite(H)):
        raise NonFiniteError("covariates must be finite at every grid cell")
    if np.unique(sites, axis=0).shape[0] != sites.shape[0]:
        raise DuplicateError("duplicate spatial sites")
    if np.unique(times).shape[0] != times.shape[0]:
        raise DuplicateError("duplicate time points")
    if mask.shape[0] != n:
        raise LengthMismatchError(f"mask has {mask.shape[0]} entries, grid has {n}")
    if int(mask.sum()) != z_obs.shape[0]:
        raise LengthMismatchError(
            f"mask marks {int(mask.sum())} observed cells but {z_obs.shape[0]} responses given")
    if H.shape[0] != n:
        raise LengthMismatchError(f"covariates have {H.shape[0]} rows, grid has {n}")
    site_ids = list(d.site_ids) if d.site_ids is not None else None
    if site_ids is not None and len(site_ids) != sites.shape[0]:
        raise LengthMismatchError("one site id per site is required")
    return Dataset(sites, times, mask, z_obs, H, d.distance_metric,
                   site_dist=spatial_distances(sites, sites, d.distance_metric),
                   time_lag=time_lags(times, times), site_ids=site_ids)


@dataclass(frozen=True)
class ModelParams:
    b: np.ndarray
    tau2: float
    sigma2_1: float
    sigma2_2: float
    theta1: NonsepParams
    theta2: SepParams

    def __post_init__(self):
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, dtype=float)))
        if not (np.isfinite(self.tau2) and self.tau2 > 0):
            raise DomainError(f"tau2 must be a positive finite number, got {self.tau2}")
        # zero process variances switch a component off (simulation, likelihood checks)
        for name in ("sigma2_1", "sigma2_2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise DomainError(f"{name} must be a nonnegative finite number, got {v}")

    def check_positive(self):
        for name in VARIANCE_NAMES:
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be strictly positive here")

    def replace(self, **kw) -> "ModelParams":
        t1 = {k: kw.pop(k) for k in THETA1_NAMES if k in kw}
        t2 = {k: kw.pop(k) for k in THETA2_NAMES if k in kw}
        out = dataclasses.replace(self, **kw)
        if t1:
            out = dataclasses.replace(out, theta1=out.theta1.replace(**t1))
        if t2:
            out = dataclasses.replace(out, theta2=out.theta2.replace(**t2))
        return out

    def get(self, name: str) -> float:
        if name in THETA1_NAMES:
            return float(getattr(self.theta1, name))
        if name in THETA2_NAMES:
            return float(getattr(self.theta2, name))
        return getattr(self, name)

    def as_dict(self):
        out = {f"b_{i + 1}": float(v) for i, v in enumerate(np.atleast_1d(self.b))}
        for name in VARIANCE_NAMES + THETA1_NAMES + THETA2_NAMES:
            out[name] = self.get(name)
        return out


@dataclass(frozen=True)
class Priors:
    """Normal prior on ``b``, inverse-gamma on variances, uniform on ranges."""

    mu_b: np.ndarray
    V_b: np.ndarray
    a_tau: float = 2.0
    b_tau: float = 0.01
    a1: float = 2.0
    b1: float = 0.01
    a2: float = 2.0
    b2: float = 0.01
    bounds: dict = field(default_factory=lambda: {
        "a": (0.0, 20.0), "c": (0.0, 20.0), "beta": (0.0, 1.0),
        "phi_s": (0.0, 20.0), "phi_u": (0.0, 20.0)})

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu_b, dtype=float))
        V = np.atleast_2d(np.asarray(self.V_b, dtype=float))
        object.__setattr__(self, "mu_b", mu)
        object.__setattr__(self, "V_b", V)
        if V.shape != (mu.size, mu.size):
            raise DimensionError("V_b must be p x p")
        try:
            np.linalg.cholesky(V)
        except np.linalg.LinAlgError as exc:
            raise DomainError("V_b must be symmetric positive definite") from exc
        for name in ("a_tau", "b_tau", "a1", "b1", "a2", "b2"):
            if not getattr(self, name) > 0:
                raise DomainError(f"inverse-gamma hyperparameter {name} must be > 0")
        for name in THETA1_NAMES + THETA2_NAMES:
            if name not in self.bounds:
                raise DomainError(f"missing uniform bounds for {name}")
            lo, hi = self.bounds[name]
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise DomainError(f"bounds for {name} must be finite with lower < upper")
        if self.bounds["beta"][0] < 0 or self.bounds["beta"][1] > 1:
            raise DomainError("beta bounds must lie within [0, 1]")
        for name in ("a", "c", "phi_s", "phi_u"):
            if self.bounds[name][0] < 0:
                raise DomainError(f"lower bound for {name} must be >= 0")

    @classmethod
    def default(cls, p: int, **kw) -> "Priors":
        """Vague defaults: ``N(0, 1000 I)`` and ``IG(2, 0.01)`` priors."""
        return cls(mu_b=np.zeros(p), V_b=1000.0 * np.eye(p), **kw)

    def midpoint(self, name: str) -> float:
        lo, hi = self.bounds[name]
        return 0.5 * (lo + hi)


@dataclass
class LatentState:
    w_star: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    z_m: np.ndarray


def separable_factors(data: Dataset, theta2: SepParams):
    """Unjittered ``R_s`` and ``R_u`` from the cached distances."""
    if data.site_dist is None:
        data = validate_dataset(data)
    Rs = family_corr(data.site_dist, theta2.phi_s, theta2.space_family)
    Ru = family_corr(data.time_lag, theta2.phi_u, theta2.time_family)
    return Rs, Ru


def build_structures(params: ModelParams, data: Dataset, knots: KnotSet,
                     nugget: float = SEPARABLE_NUGGET):
    """MPP structures for ``theta1`` and the Kronecker eigensystem for ``theta2``."""
    mpp = build_mpp(data.locations, knots, params.theta1, data.distance_metric)
    Rs, Ru = separable_factors(data, params.theta2)
    return mpp, kron_eig(Rs, Ru, nugget, nugget)


def ig_logpdf(x, shape, scale):
    return shape * np.log(scale) - gammaln(shape) - (shape + 1.0) * np.log(x) - scale / x


def log_prior(params: ModelParams, priors: Priors) -> float:
    diff = np.atleast_1d(params.b) - priors.mu_b
    Vb = cholesky_spd(priors.V_b, name="V_b")
    y = Vb.solve_lower(diff)
    lp = -0.5 * (diff.size * LOG2PI + Vb.logdet() + y @ y)
    lp += ig_logpdf(params.tau2, priors.a_tau, priors.b_tau)
    lp += ig_logpdf(params.sigma2_1, priors.a1, priors.b1)
    lp += ig_logpdf(params.sigma2_2, priors.a2, priors.b2)
    for name in THETA1_NAMES + THETA2_NAMES:
        lo, hi = priors.bounds[name]
        x = params.get(name)
        if not lo < x < hi:
            return -np.inf
        lp -= np.log(hi - lo)
    return float(lp)


def log_knot_density(w_star, sigma2_1: float, mpp: MppStructures) -> float:
    """``log N_m(w* | 0, sigma2_1 R_*)``."""
    y = mpp.Rstar_chol.solve_lower(w_star)
    m = w_star.size
    return -0.5 * (m * LOG2PI + m * np.log(sigma2_1) + mpp.Rstar_chol.logdet()
                   + (y @ y) / sigma2_1)


def log_w1_density(w1, w_star, sigma2_1: float, mpp: MppStructures,
                   v_floor: float = V_FLOOR) -> float:
    """``log N_n(w1 | R_nm R_*^{-1} w*, sigma2_1 V)`` with V floored."""
    var = sigma2_1 * np.maximum(mpp.V, v_floor)
    r = w1 - mpp.project(w_star)
    return -0.5 * float(np.sum(LOG2PI + np.log(var) + r * r / var))


def log_w2_density(w2, sigma2_2: float, eig: KroneckerEig) -> float:
    """``log N_n(w2 | 0, sigma2_2 R_s kron R_u)``."""
    n = w2.size
    return -0.5 * (n * LOG2PI + n * np.log(sigma2_2) + eig.logdet()
                   + eig.quad_form(w2) / sigma2_2)


def log_joint_density(params: ModelParams, latent: LatentState, data: Dataset,
                      priors: Priors, mpp: MppStructures, eig: KroneckerEig,
                      v_floor: float = V_FLOOR) -> float:
    """Unnormalized log posterior of parameters, latents and missing responses."""
    params.check_positive()
    if mpp.params != params.theta1:
        raise DomainError("MPP structures were built for different theta1")
    if eig.shape != (data.n1, data.n2):
        raise DimensionError("Kronecker eigensystem does not match the grid")
    lp = log_prior(params, priors)
    if not np.isfinite(lp):
        return lp
    lp += log_knot_density(latent.w_star, params.sigma2_1, mpp)
    lp += log_w1_density(latent.w1, latent.w_star, params.sigma2_1, mpp, v_floor)
    lp += log_w2_density(latent.w2, params.sigma2_2, eig)
    resid = data.z_full(latent.z_m) - data.H @ params.b - latent.w1 - latent.w2
    lp += -0.5 * (data.n * (LOG2PI + np.log(params.tau2)) + resid @ resid / params.tau2)
    return float(lp)


def _observed_kron(Rs, Ru, obs):
    i, j = np.divmod(obs, Ru.shape[0])
    return Rs[np.ix_(i, i)] * Ru[np.ix_(j, j)]


def _check_size(n):
    if n > DENSE_LIMIT:
        raise DimensionError(f"{n} observed cells exceed the dense limit of {DENSE_LIMIT}")


def marginal_route(params: ModelParams, data: Dataset) -> str:
    """Which evaluation :func:`marginal_loglik` uses for these inputs.

    ``"smw"`` when the separable part is off (low rank plus diagonal),
    ``"kronecker"`` when the MPP part is off and every cell is observed
    (eigenbasis of the separable factors), ``"dense"`` otherwise.
    """
    if params.sigma2_2 == 0:
        return "smw"
    if params.sigma2_1 == 0 and data.mask.all():
        return "kronecker"
    return "dense"


def marginal_loglik(params: ModelParams, data: Dataset, knots: KnotSet,
                    nugget: float = SEPARABLE_NUGGET) -> float:
    """Gaussian log-likelihood of the observed responses, latents integrated out.

    The low-rank MPP term is removed with the Woodbury identity.  The rest,
    ``sigma2_2 (R_s kron R_u) + diag(sigma2_1 V + tau2)``, has no cheap
    inverse in general and is factorized on the observed cells.  Two cases
    avoid that: with ``sigma2_2`` zero it is diagonal and the evaluation is
    O(n m^2); with ``sigma2_1`` zero on a complete grid it is
    ``sigma2_2 (R_s kron R_u) + tau2 I``, diagonal in the Kronecker
    eigenbasis, and costs O(n1^3 + n2^3 + n (n1 + n2)).
    """
    data = data if data.site_dist is not None else validate_dataset(data)
    route = marginal_route(params, data)
    obs = data.observed_index
    r = data.z_obs - data.H[obs] @ params.b
    n = obs.size
    if route == "kronecker":
        Rs, Ru = separable_factors(data, params.theta2)
        eig = kron_eig(Rs, Ru, nugget, nugget)
        d = params.sigma2_2 * eig.lam + params.tau2
        y = eig.to_eigenbasis(r)
        return float(-0.5 * (n * LOG2PI + np.sum(np.log(d)) + np.sum(y * y / d)))
    mpp = build_mpp(data.locations[obs], knots, params.theta1, data.distance_metric)
    diag = params.sigma2_1 * mpp.V + params.tau2
    # sigma2_1 R_nm R_*^{-1} R_nm^T = U U^T with U = sqrt(sigma2_1) G
    U = np.sqrt(params.sigma2_1) * mpp.G
    core = CholeskyFactor(np.eye(knots.m))
    if route == "smw":
        s = LowRankPlusDiag(U, core, diag)
        inner = s._inner()
        quad = r @ smw_solve(s, r, inner)
        logdet = smw_logdet(s, inner)
    else:
        _check_size(n)
        Rs, Ru = separable_factors(data, params.theta2)
        eye_s, eye_u = np.eye(data.n1), np.eye(data.n2)
        D = params.sigma2_2 * _observed_kron(Rs + nugget * eye_s, Ru + nugget * eye_u, obs)
        D[np.diag_indices(n)] += diag
        Dc = cholesky_spd(D, name="D")
        DiU = Dc.solve(U)
        inner = cholesky_spd(_sym(np.eye(knots.m) + U.T @ DiU), name="Woodbury inner matrix")
        Dir = Dc.solve(r)
        quad = r @ Dir - (U.T @ Dir) @ inner.solve(U.T @ Dir)
        logdet = Dc.logdet() + inner.logdet()
    return float(-0.5 * (n * LOG2PI + logdet + quad))


def _sym(M):
    return 0.5 * (M + M.T)


def marginal_covariance_dense(params: ModelParams, data: Dataset, knots: KnotSet,
                              nugget: float = SEPARABLE_NUGGET):
    """Dense covariance of the observed responses."""
    data = data if data.site_dist is not None else validate_dataset(data)
    obs = data.observed_index
    _check_size(obs.size)
    mpp = build_mpp(data.locations[obs], knots, params.theta1, data.distance_metric)
    Rs, Ru = separable_factors(data, params.theta2)
    S = params.sigma2_1 * (mpp.lowrank_dense() + np.diag(mpp.V))
    S += params.sigma2_2 * _observed_kron(Rs + nugget * np.eye(data.n1),
                                          Ru + nugget * np.eye(data.n2), obs)
    S[np.diag_indices(obs.size)] += params.tau2
    return _sym(S)


def marginal_loglik_dense(params: ModelParams, data: Dataset, knots: KnotSet,
                          nugget: float = SEPARABLE_NUGGET) -> float:
    """Same quantity as :func:`marginal_loglik` through one dense Cholesky."""
    data = data if data.site_dist is not None else validate_dataset(data)
    S = marginal_covariance_dense(params, data, knots, nugget)
    obs = data.observed_index
    r = data.z_obs - data.H[obs] @ params.b
    Sc = cholesky_spd(S, name="marginal covariance")
    y = Sc.solve_lower(r)
    return float(-0.5 * (obs.size * LOG2PI + Sc.logdet() + y @ y))
