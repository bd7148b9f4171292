"""
Fully conditional Metropolis-within-Gibbs sampler.

One iteration runs, in this order,

1. conjugate draws of ``b``, ``tau2``, ``sigma2_1``, ``sigma2_2``;
2. Gaussian draws of the knot values ``w*``, then ``w1``, then ``w2``;
3. one logit random-walk Metropolis step for each of ``a``, ``c``,
   ``beta``, ``phi_s``, ``phi_u``;
4. imputation of the missing responses.

Nothing of size ``n x n`` is formed: the knot block costs O(n m^2), the
separable block O(n (n1 + n2)) plus an ``n1`` or ``n2`` eigendecomposition
per range proposal.

Knot values are handled in whitened form ``u = L^{-1} w*`` with
``L L^T = R_*``.  Then ``u | . ~ N(B^{-1} G^T V^{-1} w1, sigma2_1 B^{-1})``
with ``B = I + G^T V^{-1} G`` and ``G = R_nm L^{-T}``.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import pickle
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

from .exceptions import ChainAbort, DomainError, SingularMatrixError
from .linalg import SEPARABLE_NUGGET, KroneckerEig, cholesky_spd, kron_eig, sym_eig
from .model import (THETA1_NAMES, THETA2_NAMES, V_FLOOR, Dataset, ModelParams,
                    Priors, log_knot_density, log_w1_density, log_w2_density,
                    separable_factors, validate_dataset)
from .mpp import KnotSet, MppStructures, build_mpp, knot_geometry
from .kernels import NonsepParams, SepParams, family_corr

logger = logging.getLogger(__name__)

RANGE_NAMES = THETA1_NAMES + THETA2_NAMES
CONJUGATE_NAMES = ("b", "tau2", "sigma2_1", "sigma2_2")


@dataclass
class ChainConfig:
    """Run-length, proposal and bookkeeping settings.

    `fixed` maps parameter names to values held constant for the whole run
    (e.g. ``{"sigma2_2": 1e-6}`` turns the separable part off).
    """

    n_iter: int = 25000
    burn_in: int = 15000
    thin: int = 1
    seed: int = 0
    proposal_scales: dict = field(default_factory=lambda: {k: 0.2 for k in RANGE_NAMES})
    adapt: bool = True
    adapt_window: int = 50
    target_accept: float = 0.3
    fixed: dict = field(default_factory=dict)
    checkpoint_every: int | None = None
    checkpoint_path: str | None = None
    nugget: float = SEPARABLE_NUGGET
    v_floor: float = V_FLOOR

    def __post_init__(self):
        if self.n_iter < 1 or not 0 <= self.burn_in < self.n_iter:
            raise DomainError("need 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise DomainError("thin must be >= 1")
        scales = {k: 0.2 for k in RANGE_NAMES}
        scales.update(self.proposal_scales)
        self.proposal_scales = scales
        if any(not s > 0 for s in scales.values()):
            raise DomainError("proposal scales must be positive")
        unknown = set(self.fixed) - set(CONJUGATE_NAMES) - set(RANGE_NAMES)
        if unknown:
            raise DomainError(f"cannot fix unknown parameters {sorted(unknown)}")
        if self.checkpoint_every is not None and self.checkpoint_every < 1:
            raise DomainError("checkpoint_every must be positive")

    @property
    def n_kept(self) -> int:
        return -(-(self.n_iter - self.burn_in) // self.thin)


@dataclass
class ChainState:
    params: ModelParams
    w_star: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    z: np.ndarray
    mpp: MppStructures
    eig: KroneckerEig
    log_scales: dict
    accepted: dict
    proposed: dict
    iteration: int = 0


@dataclass
class SampleStore:
    """Retained parameter and knot-value draws.

    ``params`` has one row per kept iteration and one column per entry of
    ``names``.  The grid latents ``w1`` and ``w2`` are never stored.
    """

    names: list
    params: np.ndarray
    w_star: np.ndarray
    iterations: np.ndarray
    accepted: dict
    proposed: dict
    iter_time: np.ndarray
    template: ModelParams

    def __len__(self):
        return self.params.shape[0]

    def column(self, name: str):
        return self.params[:, self.names.index(name)]

    def model_params(self, k: int) -> ModelParams:
        return params_from_row(self.template, self.names, self.params[k])

    def acceptance_rates(self):
        return {k: self.accepted[k] / max(self.proposed[k], 1) for k in self.proposed}


def param_names(p: int):
    return [f"b_{i + 1}" for i in range(p)] + ["tau2", "sigma2_1", "sigma2_2", *RANGE_NAMES]


def params_row(params: ModelParams):
    return np.concatenate([params.b, [params.get(k) for k in param_names(0)]])


def params_from_row(template: ModelParams, names, row) -> ModelParams:
    values = dict(zip(names, map(float, row)))
    b = np.array([values[k] for k in names if k.startswith("b_")])
    kw = {k: values[k] for k in names if not k.startswith("b_")}
    return template.replace(b=b, **kw)


# Conditional distributions.  Each returns the distribution's parameters so
# tests can compare them with dense computations.

def b_conditional(resid_no_trend, H, HtH, tau2, Vb_inv, Vb_inv_mu):
    """Mean and precision Cholesky of ``b | .``; `resid_no_trend` is ``Z - w1 - w2``."""
    prec = Vb_inv + HtH / tau2
    chol = cholesky_spd(0.5 * (prec + prec.T), name="b posterior precision")
    mean = chol.solve(Vb_inv_mu + H.T @ resid_no_trend / tau2)
    return mean, chol


def tau2_conditional(resid, a_tau, b_tau):
    return a_tau + resid.size / 2.0, b_tau + resid @ resid / 2.0


def sigma2_1_conditional(u, w1_resid, V, a1, b1):
    """`u` is the whitened knot vector, `w1_resid` is ``w1 - R_nm R_*^{-1} w*``."""
    n, m = w1_resid.size, u.size
    return a1 + (n + m) / 2.0, b1 + (u @ u + np.sum(w1_resid ** 2 / V)) / 2.0


def sigma2_2_conditional(w2, eig: KroneckerEig, a2, b2):
    return a2 + w2.size / 2.0, b2 + eig.quad_form(w2) / 2.0


def u_conditional(w1, G, V):
    """Mean and Cholesky of ``B`` for the whitened knot vector."""
    GV = G / V[:, None]
    B = np.eye(G.shape[1]) + G.T @ GV
    chol = cholesky_spd(0.5 * (B + B.T), name="knot posterior precision")
    return chol.solve(GV.T @ w1), chol


def w1_conditional(proj, resid, V, sigma2_1, tau2):
    """Elementwise mean and variance; `resid` is ``Z - H b - w2``."""
    prior_var = sigma2_1 * V
    var = 1.0 / (1.0 / prior_var + 1.0 / tau2)
    return var * (proj / prior_var + resid / tau2), var


def w2_conditional_eigen(resid, eig: KroneckerEig, sigma2_2, tau2):
    """Eigenbasis mean and precisions of ``w2 | .``; `resid` is ``Z - H b - w1``."""
    d = 1.0 / (sigma2_2 * eig.lam) + 1.0 / tau2
    return eig.to_eigenbasis(resid) / (tau2 * d), d


def draw_ig(rng, shape, scale):
    return scale / rng.gamma(shape)


class Sampler:
    """Sampler bound to one dataset, prior and knot set."""

    def __init__(self, data: Dataset, priors: Priors, knots: KnotSet,
                 config: ChainConfig | None = None):
        self.data = data if data.site_dist is not None else validate_dataset(data)
        self.priors = priors
        self.knots = knots
        self.config = config or ChainConfig()
        if priors.mu_b.size != self.data.p:
            raise DomainError(f"prior on b has length {priors.mu_b.size}, data has p={self.data.p}")
        self.geometry = knot_geometry(self.data.locations, knots, self.data.distance_metric)
        self.HtH = self.data.H.T @ self.data.H
        self.Vb_inv = np.linalg.inv(priors.V_b)
        self.Vb_inv_mu = self.Vb_inv @ priors.mu_b
        self.missing = self.data.missing_index

    # -- structures ---------------------------------------------------------

    def build_mpp(self, theta1: NonsepParams) -> MppStructures:
        return build_mpp(None, self.knots, theta1, geometry=self.geometry)

    def space_eig(self, theta2: SepParams):
        return sym_eig(family_corr(self.data.site_dist, theta2.phi_s, theta2.space_family),
                       self.config.nugget, name="spatial correlation R_s")

    def time_eig(self, theta2: SepParams):
        return sym_eig(family_corr(self.data.time_lag, theta2.phi_u, theta2.time_family),
                       self.config.nugget, name="temporal correlation R_u")

    def build_eig(self, theta2: SepParams) -> KroneckerEig:
        Rs, Ru = separable_factors(self.data, theta2)
        return kron_eig(Rs, Ru, self.config.nugget, self.config.nugget)

    def v_eff(self, mpp: MppStructures):
        return np.maximum(mpp.V, self.config.v_floor)

    # -- initialization -----------------------------------------------------

    def default_init(self, alpha=0.5, space_family="squared_exponential",
                     time_family="squared_exponential") -> ModelParams:
        """OLS trend, variances at a third of the residual variance, ranges at midpoints."""
        data, pr = self.data, self.priors
        Ho = data.H[data.mask]
        b, *_ = np.linalg.lstsq(Ho, data.z_obs, rcond=None)
        r = data.z_obs - Ho @ b
        v = float(np.var(r, ddof=min(Ho.shape[1], r.size - 1))) / 3.0 if r.size > 1 else 1.0
        v = v if v > 0 else 1.0
        theta1 = NonsepParams(pr.midpoint("a"), pr.midpoint("c"), pr.midpoint("beta"),
                              alpha=alpha, d=data.d)
        theta2 = SepParams(pr.midpoint("phi_s"), pr.midpoint("phi_u"), space_family, time_family)
        return ModelParams(b, v, v, v, theta1, theta2)

    def initial_state(self, init: ModelParams | None = None) -> ChainState:
        params = init if init is not None else self.default_init()
        if self.config.fixed:
            params = params.replace(**{k: (np.atleast_1d(np.asarray(v, float)) if k == "b" else v)
                                       for k, v in self.config.fixed.items()})
        params.check_positive()
        n, m = self.data.n, self.knots.m
        z = self.data.z_full()
        z[self.missing] = self.data.H[self.missing] @ params.b
        return ChainState(
            params=params, w_star=np.zeros(m), w1=np.zeros(n), w2=np.zeros(n), z=z,
            mpp=self.build_mpp(params.theta1), eig=self.build_eig(params.theta2),
            log_scales={k: float(np.log(self.config.proposal_scales[k])) for k in RANGE_NAMES},
            accepted={k: 0 for k in RANGE_NAMES}, proposed={k: 0 for k in RANGE_NAMES},
        )

    # -- Gibbs blocks ---------------------------------------------------------

    def update_conjugate_block(self, state: ChainState, rng) -> ChainState:
        data, pr, fixed = self.data, self.priors, self.config.fixed
        p = state.params
        if "b" not in fixed:
            mean, chol = b_conditional(state.z - state.w1 - state.w2, data.H, self.HtH,
                                       p.tau2, self.Vb_inv, self.Vb_inv_mu)
            p = dataclasses.replace(p, b=mean + chol.solve_upper(rng.standard_normal(data.p)))
        if "tau2" not in fixed:
            resid = state.z - data.H @ p.b - state.w1 - state.w2
            p = dataclasses.replace(p, tau2=draw_ig(rng, *tau2_conditional(resid, pr.a_tau, pr.b_tau)))
        if "sigma2_1" not in fixed:
            u = state.mpp.Rstar_chol.solve_lower(state.w_star)
            w1_resid = state.w1 - state.mpp.G @ u
            shape, scale = sigma2_1_conditional(u, w1_resid, self.v_eff(state.mpp), pr.a1, pr.b1)
            p = dataclasses.replace(p, sigma2_1=draw_ig(rng, shape, scale))
        if "sigma2_2" not in fixed:
            shape, scale = sigma2_2_conditional(state.w2, state.eig, pr.a2, pr.b2)
            p = dataclasses.replace(p, sigma2_2=draw_ig(rng, shape, scale))
        state.params = p
        return state

    def update_latents(self, state: ChainState, rng) -> ChainState:
        p, data = state.params, self.data
        V = self.v_eff(state.mpp)
        # w*
        mean, chol = u_conditional(state.w1, state.mpp.G, V)
        u = mean + np.sqrt(p.sigma2_1) * chol.solve_upper(rng.standard_normal(mean.size))
        state.w_star = state.mpp.Rstar_chol.L @ u
        # w1
        trend = data.H @ p.b
        mean, var = w1_conditional(state.mpp.G @ u, state.z - trend - state.w2, V,
                                   p.sigma2_1, p.tau2)
        state.w1 = mean + np.sqrt(var) * rng.standard_normal(data.n)
        # w2
        mean, d = w2_conditional_eigen(state.z - trend - state.w1, state.eig, p.sigma2_2, p.tau2)
        state.w2 = state.eig.from_eigenbasis(mean + rng.standard_normal(data.n) / np.sqrt(d))
        return state

    def _range_target(self, name, state: ChainState, params: ModelParams, structure):
        if name in THETA1_NAMES:
            return (log_knot_density(state.w_star, params.sigma2_1, structure)
                    + log_w1_density(state.w1, state.w_star, params.sigma2_1, structure,
                                     self.config.v_floor))
        return log_w2_density(state.w2, params.sigma2_2, structure)

    def _rebuild(self, name, state: ChainState, params: ModelParams):
        if name in THETA1_NAMES:
            return self.build_mpp(params.theta1)
        if name == "phi_s":
            return state.eig.with_space(*self.space_eig(params.theta2))
        return state.eig.with_time(*self.time_eig(params.theta2))

    def mh_log_ratio(self, name, state: ChainState, proposal: float, structure=None):
        """Log acceptance ratio of moving `name` to `proposal`, Jacobian included.

        Returns ``(log_ratio, proposed_params, proposed_structure)``.
        """
        lo, hi = self.priors.bounds[name]
        cur = state.params.get(name)
        new_params = state.params.replace(**{name: proposal})
        if structure is None:
            structure = self._rebuild(name, state, new_params)
        current = state.mpp if name in THETA1_NAMES else state.eig
        x_cur = (cur - lo) / (hi - lo)
        x_new = (proposal - lo) / (hi - lo)
        log_jac = (np.log(x_new) + np.log1p(-x_new)) - (np.log(x_cur) + np.log1p(-x_cur))
        ratio = (self._range_target(name, state, new_params, structure)
                 - self._range_target(name, state, state.params, current) + log_jac)
        return ratio, new_params, structure

    def propose(self, name, state: ChainState, rng) -> float:
        lo, hi = self.priors.bounds[name]
        x = (state.params.get(name) - lo) / (hi - lo)
        eta = logit(x) + np.exp(state.log_scales[name]) * rng.standard_normal()
        return float(lo + (hi - lo) * expit(eta))

    def update_ranges_mh(self, state: ChainState, rng) -> ChainState:
        lo_hi = self.priors.bounds
        for name in RANGE_NAMES:
            if name in self.config.fixed:
                continue
            proposal = self.propose(name, state, rng)
            log_u = np.log(rng.random())
            state.proposed[name] += 1
            lo, hi = lo_hi[name]
            if not lo < proposal < hi:
                # expit saturated in floating point
                continue
            try:
                ratio, new_params, structure = self.mh_log_ratio(name, state, proposal)
            except (SingularMatrixError, DomainError) as exc:
                logger.warning("rejecting %s = %.6g: %s", name, proposal, exc)
                continue
            if np.isnan(ratio):
                logger.warning("rejecting %s = %.6g: NaN acceptance ratio", name, proposal)
                continue
            if log_u < ratio:
                state.params = new_params
                if name in THETA1_NAMES:
                    state.mpp = structure
                else:
                    state.eig = structure
                state.accepted[name] += 1
        return state

    def impute_missing(self, state: ChainState, rng) -> ChainState:
        idx = self.missing
        if idx.size == 0:
            return state
        p = state.params
        mean = self.data.H[idx] @ p.b + state.w1[idx] + state.w2[idx]
        state.z[idx] = mean + np.sqrt(p.tau2) * rng.standard_normal(idx.size)
        return state

    def sweep(self, state: ChainState, rng) -> ChainState:
        self.update_conjugate_block(state, rng)
        self.update_latents(state, rng)
        self.update_ranges_mh(state, rng)
        self.impute_missing(state, rng)
        state.iteration += 1
        return state

    # -- adaptation ----------------------------------------------------------

    def adapt(self, state: ChainState, window_accepts: dict, window_index: int):
        """Robbins-Monro step of the log proposal scales toward the target rate."""
        W = self.config.adapt_window
        gain = 1.0 / np.sqrt(window_index)
        for name in RANGE_NAMES:
            if name in self.config.fixed:
                continue
            rate = window_accepts[name] / W
            state.log_scales[name] += 2.0 * gain * (rate - self.config.target_accept)
            state.log_scales[name] = float(np.clip(state.log_scales[name], -12.0, 3.0))


def check_finite(state: ChainState):
    p = state.params
    vals = [p.tau2, p.sigma2_1, p.sigma2_2, *p.b]
    if not (np.all(np.isfinite(vals)) and all(v > 0 for v in (p.tau2, p.sigma2_1, p.sigma2_2))):
        raise ChainAbort(f"non-finite or nonpositive parameters at iteration {state.iteration}")
    for name in ("w_star", "w1", "w2", "z"):
        if not np.all(np.isfinite(getattr(state, name))):
            raise ChainAbort(f"non-finite {name} at iteration {state.iteration}")


def _save_checkpoint(path, state, rng, records, window_accepts, window_index):
    # write then rename so an interrupted save never leaves a truncated file
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        pickle.dump({
            "state": _strip(state), "rng": rng.bit_generator.state, "records": records,
            "window_accepts": window_accepts, "window_index": window_index,
        }, fh)
    os.replace(tmp, path)


def _strip(state: ChainState):
    s = dataclasses.replace(state, mpp=None, eig=None)
    s.w_star, s.w1, s.w2, s.z = (a.copy() for a in (state.w_star, state.w1, state.w2, state.z))
    s.log_scales, s.accepted, s.proposed = (dict(d) for d in
                                            (state.log_scales, state.accepted, state.proposed))
    return s


def run_chain(data: Dataset, priors: Priors, knots: KnotSet, config: ChainConfig | None = None,
              init: ModelParams | None = None, monitor=None, resume_from: str | None = None,
              sampler: Sampler | None = None) -> SampleStore:
    """Run one chain and return the retained draws.

    Parameters
    ----------
    monitor : callable, optional
        Called as ``monitor(state, rng)`` after every retained iteration; may
        draw from `rng`, which keeps runs with the same monitor reproducible.
    resume_from : str, optional
        Path of a checkpoint written by an earlier run with the same inputs.
    """
    config = config or ChainConfig()
    sampler = sampler or Sampler(data, priors, knots, config)
    records = {"params": [], "w_star": [], "iterations": [], "time": []}
    window_accepts = {k: 0 for k in RANGE_NAMES}
    window_index = 0
    if resume_from is not None:
        with open(resume_from, "rb") as fh:
            ck = pickle.load(fh)
        state = ck["state"]
        state.mpp = sampler.build_mpp(state.params.theta1)
        state.eig = sampler.build_eig(state.params.theta2)
        rng = np.random.default_rng()
        rng.bit_generator.state = ck["rng"]
        records, window_accepts, window_index = ck["records"], ck["window_accepts"], ck["window_index"]
    else:
        rng = np.random.default_rng(config.seed)
        state = sampler.initial_state(init)
    check_finite(state)
    last_good = _strip(state)
    while state.iteration < config.n_iter:
        t0 = time.perf_counter()
        before = dict(state.accepted)
        try:
            sampler.sweep(state, rng)
            check_finite(state)
        except (ChainAbort, SingularMatrixError, FloatingPointError) as exc:
            raise ChainAbort(f"chain aborted: {exc}", state=last_good) from exc
        it = state.iteration
        if config.adapt and it <= config.burn_in:
            for k in RANGE_NAMES:
                window_accepts[k] += state.accepted[k] - before[k]
            if it % config.adapt_window == 0:
                window_index += 1
                sampler.adapt(state, window_accepts, window_index)
                window_accepts = {k: 0 for k in RANGE_NAMES}
        if it > config.burn_in and (it - 1 - config.burn_in) % config.thin == 0:
            records["params"].append(params_row(state.params))
            records["w_star"].append(state.w_star.copy())
            records["iterations"].append(it)
            if monitor is not None:
                monitor(state, rng)
        records["time"].append(time.perf_counter() - t0)
        if config.checkpoint_every and it % config.checkpoint_every == 0 and config.checkpoint_path:
            _save_checkpoint(config.checkpoint_path, state, rng, records, window_accepts, window_index)
        last_good = _strip(state)
    names = param_names(data.p)
    return SampleStore(
        names=names,
        params=np.array(records["params"]).reshape(-1, len(names)),
        w_star=np.array(records["w_star"]).reshape(-1, knots.m),
        iterations=np.array(records["iterations"], dtype=int),
        accepted=dict(state.accepted), proposed=dict(state.proposed),
        iter_time=np.array(records["time"]),
        template=state.params,
    )


def run_chains(data, priors, knots, config: ChainConfig, n_chains: int = 1, n_workers: int = 1,
               init=None):
    """Run several chains, optionally in worker threads.

    Chain ``k`` uses the first 32-bit word of the ``k``-th child of
    ``SeedSequence(config.seed)`` as its seed.
    """
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(config.seed).spawn(n_chains)]
    configs = [dataclasses.replace(config, seed=s, checkpoint_path=None) for s in seeds]
    if n_workers <= 1:
        return [run_chain(data, priors, knots, c, init=init) for c in configs]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(n_workers) as ex:
        return list(ex.map(lambda c: run_chain(data, priors, knots, c, init=init), configs))
