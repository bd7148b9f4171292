"""Convergence diagnostics for a single chain: effective sample size and Geweke z."""

from __future__ import annotations

import numpy as np

from .exceptions import DomainError


def autocorrelation(x):
    """Sample autocorrelation at all lags, computed by FFT."""
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    x = x - x.mean()
    f = np.fft.rfft(x, n=2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:n]
    if acov[0] == 0:
        return np.concatenate([[1.0], np.zeros(n - 1)])
    return acov / acov[0]


def effective_sample_size(x) -> float:
    """ESS with Geyer's initial monotone positive-sequence truncation."""
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n < 4:
        raise DomainError("need at least 4 draws for an effective sample size")
    rho = autocorrelation(x)
    if np.var(x) == 0:
        return float(n)
    # pair sums Gamma_k = rho_{2k} + rho_{2k+1}, kept while positive and made monotone
    m = (n - 1) // 2
    gam = rho[0:2 * m:2] + rho[1:2 * m:2]
    pos = np.flatnonzero(gam <= 0)
    gam = gam[:pos[0]] if pos.size else gam
    gam = np.minimum.accumulate(gam)
    tau = -1.0 + 2.0 * gam.sum()
    return float(n / max(tau, 1.0 / n))


def geweke_z(x, first: float = 0.1, last: float = 0.5) -> float:
    """Difference of early and late chain means in spectral standard errors."""
    x = np.asarray(x, dtype=float).ravel()
    if not (0 < first < 1 and 0 < last < 1 and first + last <= 1):
        raise DomainError("need 0 < first, last and first + last <= 1")
    a = x[: int(first * x.size)]
    b = x[x.size - int(last * x.size):]
    if a.size < 4 or b.size < 4:
        raise DomainError("chain too short for the Geweke diagnostic")
    va = np.var(a, ddof=1) / effective_sample_size(a)
    vb = np.var(b, ddof=1) / effective_sample_size(b)
    if va + vb == 0:
        return 0.0
    return float((a.mean() - b.mean()) / np.sqrt(va + vb))


def summarize_store(store) -> dict:
    """Per-parameter ESS, Geweke z and acceptance rates of a :class:`SampleStore`."""
    out = {"n_kept": len(store), "acceptance": store.acceptance_rates(), "parameters": {}}
    for name in store.names:
        col = store.column(name)
        entry = {"mean": float(col.mean()), "median": float(np.median(col))}
        if col.size >= 40:
            entry["ess"] = effective_sample_size(col)
            entry["geweke_z"] = geweke_z(col)
        out["parameters"][name] = entry
    if store.iter_time.size:
        out["mean_iteration_seconds"] = float(store.iter_time.mean())
    return out
