"""
Structured linear algebra.

* jittered Cholesky factorization of SPD matrices,
* Sherman-Morrison-Woodbury solves for ``diag + U core^{-1} U^T``,
* Kronecker eigendecompositions for ``R_s kron R_u``.

Vectors over a space-time grid are ordered time-fastest: entry
``i * n2 + j`` belongs to site ``i`` and time ``j``.  With that ordering
``(A kron B) v`` equals ``A @ v.reshape(n1, n2) @ B.T`` flattened row-major.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .exceptions import DimensionError, SingularMatrixError

JITTER_SCHEDULE = (0.0, 1e-10, 1e-8, 1e-6)
SEPARABLE_NUGGET = 1e-6


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower factor ``L`` with ``L L^T = M + jitter * I``."""

    L: np.ndarray
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.L.shape[0]

    def solve(self, b):
        return sla.cho_solve((self.L, True), b, check_finite=False)

    def solve_lower(self, b):
        """``L^{-1} b``."""
        return sla.solve_triangular(self.L, b, lower=True, check_finite=False)

    def solve_upper(self, b):
        """``L^{-T} b``."""
        return sla.solve_triangular(self.L, b, lower=True, trans="T", check_finite=False)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))

    def matrix(self):
        return self.L @ self.L.T


def cholesky_spd(M, jitter_schedule=JITTER_SCHEDULE, name: str = "matrix") -> CholeskyFactor:
    """Cholesky factor of ``M + j I`` for the first `j` in the schedule that works.

    Raises
    ------
    SingularMatrixError
        If even the largest jitter fails; the message names `name`.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")
    scale = max(np.max(np.abs(M)), np.finfo(float).tiny) if M.size else 1.0
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-10 * scale:
        raise DimensionError(f"{name} is not symmetric")
    if not np.all(np.isfinite(M)):
        raise SingularMatrixError(f"{name} has non-finite entries")
    eye = np.eye(M.shape[0])
    for j in jitter_schedule:
        try:
            L = np.linalg.cholesky(M + j * eye if j else M)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            return CholeskyFactor(L, float(j))
    raise SingularMatrixError(
        f"{name} is not positive definite even with jitter {jitter_schedule[-1]:g}"
    )


@dataclass(frozen=True)
class LowRankPlusDiag:
    """The matrix ``diag(diag) + U core^{-1} U^T``."""

    U: np.ndarray
    core_chol: CholeskyFactor
    diag: np.ndarray

    def __post_init__(self):
        n, m = self.U.shape
        if self.diag.shape != (n,):
            raise DimensionError("diag length must match U rows")
        if self.core_chol.n != m:
            raise DimensionError("core size must match U columns")
        if np.any(self.diag <= 0):
            raise SingularMatrixError("diagonal entries must be positive")

    def _inner(self) -> CholeskyFactor:
        DiU = self.U / self.diag[:, None]
        inner = self.core_chol.matrix() + self.U.T @ DiU
        return cholesky_spd(0.5 * (inner + inner.T), name="Woodbury inner matrix")

    def dense(self):
        return np.diag(self.diag) + self.U @ self.core_chol.solve(self.U.T)


def smw_solve(s: LowRankPlusDiag, rhs, inner: CholeskyFactor | None = None):
    """Solve ``(diag + U core^{-1} U^T) x = rhs`` in O(n m^2 + m^3)."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != s.diag.shape[0]:
        raise DimensionError("rhs length does not match the matrix")
    inner = inner or s._inner()
    d = s.diag if rhs.ndim == 1 else s.diag[:, None]
    Dr = rhs / d
    return Dr - (s.U @ inner.solve(s.U.T @ Dr)) / d


def smw_logdet(s: LowRankPlusDiag, inner: CholeskyFactor | None = None) -> float:
    """``log det`` by the matrix determinant lemma."""
    inner = inner or s._inner()
    return float(np.sum(np.log(s.diag))) + inner.logdet() - s.core_chol.logdet()


def kron_matvec(A, B, v):
    """``(A kron B) v`` without forming the Kronecker product.

    `v` may be a vector of length ``n1 * n2`` or a matrix with that many rows.
    """
    A = np.asarray(A)
    B = np.asarray(B)
    v = np.asarray(v)
    n1, n2 = A.shape[1], B.shape[1]
    if v.shape[0] != n1 * n2:
        raise DimensionError(f"vector length {v.shape[0]} != {n1} * {n2}")
    if v.ndim == 1:
        return (A @ v.reshape(n1, n2) @ B.T).ravel()
    X = v.reshape(n1, n2, -1)
    out = np.einsum("ij,jkr->ikr", A, X)
    out = np.einsum("lk,ikr->ilr", B, out)
    return out.reshape(A.shape[0] * B.shape[0], -1)


def sym_eig(R, nugget: float = SEPARABLE_NUGGET, name: str = "correlation matrix"):
    """Eigenpairs of ``R + nugget I``; raises if any eigenvalue is not positive."""
    R = np.asarray(R, dtype=float)
    try:
        lam, Q = sla.eigh(R + nugget * np.eye(R.shape[0]), check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularMatrixError(f"eigensolver failed on {name}: {exc}") from exc
    if np.any(lam <= 0):
        raise SingularMatrixError(f"{name} has nonpositive eigenvalue {lam.min():.3g}")
    return Q, lam


@dataclass(frozen=True)
class KroneckerEig:
    """Eigendecomposition of ``(R_s + n_s I) kron (R_u + n_u I)``."""

    Q_s: np.ndarray
    lam_s: np.ndarray
    Q_u: np.ndarray
    lam_u: np.ndarray

    @property
    def shape(self):
        return self.lam_s.size, self.lam_u.size

    @property
    def lam(self):
        """Eigenvalues of the Kronecker product, time-fastest."""
        return np.outer(self.lam_s, self.lam_u).ravel()

    def logdet(self) -> float:
        n1, n2 = self.shape
        return n2 * float(np.sum(np.log(self.lam_s))) + n1 * float(np.sum(np.log(self.lam_u)))

    def to_eigenbasis(self, v):
        """``(Q_s kron Q_u)^T v``."""
        return kron_matvec(self.Q_s.T, self.Q_u.T, v)

    def from_eigenbasis(self, v):
        """``(Q_s kron Q_u) v``."""
        return kron_matvec(self.Q_s, self.Q_u, v)

    def matvec(self, v):
        lam = self.lam if np.ndim(v) == 1 else self.lam[:, None]
        return self.from_eigenbasis(lam * self.to_eigenbasis(v))

    def solve(self, v):
        lam = self.lam if np.ndim(v) == 1 else self.lam[:, None]
        return self.from_eigenbasis(self.to_eigenbasis(v) / lam)

    def quad_form(self, v) -> float:
        """``v^T (R_s kron R_u)^{-1} v``."""
        y = self.to_eigenbasis(v)
        return float(np.sum(y * y / self.lam))

    def factor_matrices(self):
        """The jittered factors ``(R_s, R_u)`` rebuilt from their eigenpairs."""
        Rs = (self.Q_s * self.lam_s) @ self.Q_s.T
        Ru = (self.Q_u * self.lam_u) @ self.Q_u.T
        return Rs, Ru

    def with_space(self, Q_s, lam_s) -> "KroneckerEig":
        return KroneckerEig(Q_s, lam_s, self.Q_u, self.lam_u)

    def with_time(self, Q_u, lam_u) -> "KroneckerEig":
        return KroneckerEig(self.Q_s, self.lam_s, Q_u, lam_u)


def kron_eig(R_s, R_u, nugget_s: float = SEPARABLE_NUGGET,
             nugget_u: float = SEPARABLE_NUGGET) -> KroneckerEig:
    """Eigendecompose both separable factors after adding fixed nuggets."""
    Q_s, lam_s = sym_eig(R_s, nugget_s, name="spatial correlation R_s")
    Q_u, lam_u = sym_eig(R_u, nugget_u, name="temporal correlation R_u")
    return KroneckerEig(Q_s, lam_s, Q_u, lam_u)
