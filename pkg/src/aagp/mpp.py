"""Modified predictive process: knot designs and the low-rank structures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .exceptions import DimensionError, DomainError, SingularMatrixError
from .kernels import NonsepParams, corr_matrix, gneiting_corr, gneiting_kernel, spatial_distances, time_lags
from .linalg import CholeskyFactor, cholesky_spd

MAX_KNOTS = 100_000
DESIGNS = ("uniform_random", "latin_hypercube")


@dataclass(frozen=True)
class KnotSet:
    """Space-time knots, one row per knot: spatial coordinates then time."""

    locations: np.ndarray
    design: str = "uniform_random"
    seed: int | None = None

    @property
    def m(self) -> int:
        return self.locations.shape[0]


def select_knots(domain, m: int, design: str = "uniform_random", seed=None,
                 max_knots: int = MAX_KNOTS) -> KnotSet:
    """Draw `m` knots in a box.

    Parameters
    ----------
    domain : (lower, upper)
        Bounds of length ``d + 1`` (spatial coordinates, then time).
    m : int
    design : {"uniform_random", "latin_hypercube"}
    seed : int or None

    Returns
    -------
    KnotSet
    """
    lower, upper = (np.asarray(b, dtype=float).ravel() for b in domain)
    if lower.shape != upper.shape or lower.size < 2:
        raise DimensionError("domain bounds must both have length d + 1 >= 2")
    if not np.all(upper > lower):
        raise DomainError("domain upper bounds must exceed lower bounds")
    if m < 1:
        raise DomainError("need at least one knot")
    if m > max_knots:
        raise DomainError(f"{m} knots exceeds the maximum of {max_knots}")
    rng = np.random.default_rng(seed)
    if design == "uniform_random":
        unit = rng.random((m, lower.size))
    elif design == "latin_hypercube":
        unit = qmc.LatinHypercube(d=lower.size, seed=rng).random(m)
    else:
        raise DomainError(f"unknown knot design {design!r}")
    locs = lower + unit * (upper - lower)
    if np.unique(locs, axis=0).shape[0] != m:
        raise DomainError("knot design produced duplicate knots")
    return KnotSet(locs, design, seed)


@dataclass(frozen=True)
class MppStructures:
    """Cross-correlations, knot factor and diagonal correction.

    ``G = R_nm L^{-T}`` where ``L L^T = R_*``, so the projection of the knot
    values is ``R_nm R_*^{-1} w* = G L^{-1} w*`` and ``V = 1 - rowsum(G^2)``.
    """

    R_nm: np.ndarray
    Rstar_chol: CholeskyFactor
    V: np.ndarray
    G: np.ndarray
    params: NonsepParams

    def project(self, w_star):
        """``R_nm R_*^{-1} w*``."""
        return self.G @ self.Rstar_chol.solve_lower(w_star)

    def lowrank_dense(self):
        """``R_nm R_*^{-1} R_nm^T`` (tests and small problems only)."""
        return self.G @ self.G.T


@dataclass(frozen=True)
class KnotGeometry:
    """Distances and lags between locations and knots; independent of theta1."""

    h_nm: np.ndarray
    t_nm: np.ndarray
    h_mm: np.ndarray
    t_mm: np.ndarray


def knot_geometry(locs, knots: KnotSet, metric: str = "euclidean") -> KnotGeometry:
    locs = np.atleast_2d(np.asarray(locs, dtype=float))
    K = knots.locations
    if locs.shape[1] != K.shape[1]:
        raise DimensionError("locations and knots have different dimensions")
    if K.shape[0] == 0:
        raise DomainError("knot set is empty")
    return KnotGeometry(
        spatial_distances(locs[:, :-1], K[:, :-1], metric), time_lags(locs[:, -1], K[:, -1]),
        spatial_distances(K[:, :-1], K[:, :-1], metric), time_lags(K[:, -1], K[:, -1]),
    )


def build_mpp(locs, knots: KnotSet, p: NonsepParams, metric: str = "euclidean",
              geometry: KnotGeometry | None = None) -> MppStructures:
    """Build the MPP structures for locations `locs` of shape (n, d + 1).

    Pass a precomputed `geometry` to skip the distance computations when only
    the correlation parameters change.
    """
    geom = geometry if geometry is not None else knot_geometry(locs, knots, metric)
    Rstar = gneiting_corr(geom.h_mm, geom.t_mm, p)
    try:
        chol = cholesky_spd(Rstar, name="knot correlation R_*")
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"degenerate knots: {exc}") from exc
    R_nm = gneiting_corr(geom.h_nm, geom.t_nm, p)
    G = chol.solve_lower(R_nm.T).T
    V = np.clip(1.0 - np.einsum("ij,ij->i", G, G), 0.0, 1.0)
    return MppStructures(R_nm, chol, V, G, p)


def cross_structures(targets, knots: KnotSet, mpp: MppStructures, metric: str = "euclidean"):
    """Projection rows and diagonal correction for new locations.

    Returns ``(G0, V0)`` with ``G0 = R(x0, X*) L^{-T}``.
    """
    r0 = corr_matrix(targets, knots.locations, gneiting_kernel(mpp.params), metric)
    G0 = mpp.Rstar_chol.solve_lower(r0.T).T
    return G0, np.clip(1.0 - np.einsum("ij,ij->i", G0, G0), 0.0, 1.0)
