"""
Space-time correlation functions and distances.

Two families are provided:

* the Gneiting nonseparable correlation

  .. math::
      \\rho(h, t) = \\psi(t)^{-d/2} \\exp\\{-h / (c\\, \\psi(t)^{\\beta/2})\\},
      \\qquad \\psi(t) = t^{2\\alpha}/a + 1,

* separable products ``rho_s(h) * rho_u(t)`` of exponential or
  squared-exponential factors.

Locations are arrays of shape ``(n, d + 1)``: ``d`` spatial coordinates
followed by time.  For ``metric="chordal"`` the spatial coordinates are
``(lon, lat)`` in degrees.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import DimensionError, DomainError

EARTH_RADIUS_KM = 6371.0

FAMILIES = ("exponential", "squared_exponential")
METRICS = ("euclidean", "chordal")


@dataclass(frozen=True)
class NonsepParams:
    """Gneiting parameters. ``alpha`` is fixed during sampling."""

    a: float
    c: float
    beta: float
    alpha: float = 0.5
    d: int = 2

    def __post_init__(self):
        if not (np.isfinite(self.a) and self.a > 0):
            raise DomainError(f"temporal range a must be > 0, got {self.a}")
        if not (np.isfinite(self.c) and self.c > 0):
            raise DomainError(f"spatial range c must be > 0, got {self.c}")
        if not 0.0 <= self.beta <= 1.0:
            raise DomainError(f"interaction beta must be in [0, 1], got {self.beta}")
        if not 0.0 < self.alpha <= 1.0:
            raise DomainError(f"smoothness alpha must be in (0, 1], got {self.alpha}")
        if int(self.d) != self.d or self.d < 1:
            raise DomainError(f"spatial dimension d must be a positive integer, got {self.d}")

    def replace(self, **kw) -> "NonsepParams":
        values = dict(a=self.a, c=self.c, beta=self.beta, alpha=self.alpha, d=self.d)
        values.update(kw)
        return NonsepParams(**values)


@dataclass(frozen=True)
class SepParams:
    """Range parameters and families of the separable correlation."""

    phi_s: float
    phi_u: float
    space_family: str = "squared_exponential"
    time_family: str = "squared_exponential"

    def __post_init__(self):
        if not (np.isfinite(self.phi_s) and self.phi_s > 0):
            raise DomainError(f"phi_s must be > 0, got {self.phi_s}")
        if not (np.isfinite(self.phi_u) and self.phi_u > 0):
            raise DomainError(f"phi_u must be > 0, got {self.phi_u}")
        for fam in (self.space_family, self.time_family):
            if fam not in FAMILIES:
                raise DomainError(f"unknown correlation family {fam!r}")

    def replace(self, **kw) -> "SepParams":
        values = dict(phi_s=self.phi_s, phi_u=self.phi_u,
                      space_family=self.space_family, time_family=self.time_family)
        values.update(kw)
        return SepParams(**values)


def _check_lags(h, t):
    h = np.asarray(h, dtype=float)
    t = np.asarray(t, dtype=float)
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(t))):
        raise DomainError("distances and time lags must be finite")
    if np.any(h < 0) or np.any(t < 0):
        raise DomainError("distances and time lags must be nonnegative")
    return h, t


def gneiting_corr(h, t, p: NonsepParams):
    """Gneiting nonseparable correlation at spatial distance `h`, time lag `t`.

    Broadcasts over array inputs.
    """
    h, t = _check_lags(h, t)
    psi = t ** (2.0 * p.alpha) / p.a + 1.0
    return psi ** (-p.d / 2.0) * np.exp(-h / (p.c * psi ** (p.beta / 2.0)))


def family_corr(x, phi: float, family: str):
    """One-dimensional stationary correlation of a nonnegative lag."""
    x = np.asarray(x, dtype=float)
    if family == "exponential":
        return np.exp(-x / phi)
    if family == "squared_exponential":
        return np.exp(-((x / phi) ** 2))
    raise DomainError(f"unknown correlation family {family!r}")


def separable_corr(h, t, p: SepParams):
    """Product correlation ``rho_s(h; phi_s) * rho_u(t; phi_u)``."""
    h, t = _check_lags(h, t)
    return family_corr(h, p.phi_s, p.space_family) * family_corr(t, p.phi_u, p.time_family)


def chordal_distance(p, q):
    """Through-the-Earth distance in km between (lon, lat) points in degrees.

    `p` and `q` broadcast against each other; the last axis holds (lon, lat).
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    _check_lonlat(p)
    _check_lonlat(q)
    return np.linalg.norm(lonlat_to_xyz(p) - lonlat_to_xyz(q), axis=-1)


def _check_lonlat(p):
    if p.shape[-1] != 2:
        raise DimensionError("lon/lat coordinates must have 2 components")
    lon, lat = p[..., 0], p[..., 1]
    if not (np.all(np.isfinite(p))):
        raise DomainError("lon/lat must be finite")
    if np.any(np.abs(lat) > 90) or np.any(np.abs(lon) > 180):
        raise DomainError("lat must lie in [-90, 90] and lon in [-180, 180]")


def lonlat_to_xyz(p):
    """Map (lon, lat) degrees to Cartesian km on a sphere of radius 6371."""
    lon = np.radians(p[..., 0])
    lat = np.radians(p[..., 1])
    return EARTH_RADIUS_KM * np.stack(
        [np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1
    )


def spatial_distances(A, B, metric: str = "euclidean"):
    """Pairwise spatial distance matrix between site arrays of shape (n, d)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise DimensionError(f"spatial dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if metric == "euclidean":
        return cdist(A, B)
    if metric == "chordal":
        _check_lonlat(A)
        _check_lonlat(B)
        return cdist(lonlat_to_xyz(A), lonlat_to_xyz(B))
    raise DomainError(f"unknown distance metric {metric!r}")


def time_lags(u, v):
    """Pairwise absolute time differences."""
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    return np.abs(u[:, None] - v[None, :])


def corr_matrix(A, B, kernel: Callable, metric: str = "euclidean"):
    """Correlation matrix between two location sets.

    Parameters
    ----------
    A, B : array_like, shape (n, d + 1) and (k, d + 1)
        Spatial coordinates followed by time.
    kernel : callable
        ``kernel(h, t)`` evaluated elementwise on distance and lag arrays.
    metric : {"euclidean", "chordal"}

    Returns
    -------
    ndarray, shape (n, k)
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise DimensionError(f"location dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if A.shape[1] < 2:
        raise DimensionError("locations need at least one spatial coordinate and time")
    h = spatial_distances(A[:, :-1], B[:, :-1], metric)
    t = time_lags(A[:, -1], B[:, -1])
    return kernel(h, t)


def gneiting_kernel(p: NonsepParams) -> Callable:
    return lambda h, t: gneiting_corr(h, t, p)


def separable_kernel(p: SepParams) -> Callable:
    return lambda h, t: separable_corr(h, t, p)
