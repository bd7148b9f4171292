"""
Panel preprocessing for daily station data.

A panel is a data frame with columns ``site_id, lon, lat, day, value``; a
missing value is either a NaN or an absent row.  The pipeline is

    fit_seasonal_trend -> standardize -> to_dataset

where the trend is ``mu(s, u) = a(s) + sum_j b_j cos(2 pi j u / L) + c_j sin(2 pi j u / L)``
with season length ``L`` (184 days by default), fitted by ordinary least
squares with one intercept per site.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import DimensionError, DomainError, DuplicateError, LengthMismatchError
from .model import Dataset, validate_dataset

SEASON_LENGTH = 184
PANEL_COLUMNS = ("site_id", "lon", "lat", "day", "value")


def validate_panel(panel: pd.DataFrame, season_length: int = SEASON_LENGTH) -> pd.DataFrame:
    """Check columns, key uniqueness and day range; return a clean copy."""
    missing = [c for c in PANEL_COLUMNS if c not in panel.columns]
    if missing:
        raise DomainError(f"panel is missing columns {missing}")
    df = panel.loc[:, list(PANEL_COLUMNS)].copy()
    df["value"] = pd.to_numeric(df["value"], errors="coerce").astype(float)
    dup = df.duplicated(["site_id", "day"], keep=False)
    if dup.any():
        pairs = df.loc[dup, ["site_id", "day"]].drop_duplicates().head(5).values.tolist()
        raise DuplicateError(f"duplicate (site, day) rows, e.g. {pairs}")
    day = df["day"].to_numpy()
    if np.any(day != np.round(day)) or day.min(initial=1) < 1 or day.max(initial=1) > season_length:
        raise DomainError(f"day indices must be integers in 1..{season_length}")
    df["day"] = df["day"].astype(int)
    coords = df.groupby("site_id")[["lon", "lat"]].nunique()
    if (coords > 1).any(axis=None):
        raise DomainError("a site has more than one coordinate pair")
    return df


def read_panel(path, season_length: int = SEASON_LENGTH) -> pd.DataFrame:
    return validate_panel(pd.read_csv(path), season_length)


def harmonic_design(days, n_harmonics: int, season_length: int = SEASON_LENGTH):
    """Columns ``cos(2 pi j u / L), sin(2 pi j u / L)`` for j = 1..n_harmonics."""
    u = np.asarray(days, dtype=float)
    cols = []
    for j in range(1, n_harmonics + 1):
        arg = 2.0 * np.pi * j * u / season_length
        cols += [np.cos(arg), np.sin(arg)]
    return np.column_stack(cols) if cols else np.empty((u.size, 0))


@dataclass
class SeasonalTrend:
    """Fitted site intercepts ``a`` and global harmonic coefficients ``b``, ``c``."""

    site_ids: list
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    season_length: int = SEASON_LENGTH

    @property
    def n_harmonics(self) -> int:
        return self.b.size

    def __call__(self, site_ids, days):
        """``mu(s, u)`` for paired arrays of site ids and days."""
        lookup = {s: i for i, s in enumerate(self.site_ids)}
        try:
            idx = np.array([lookup[s] for s in np.asarray(site_ids).tolist()], dtype=int)
        except KeyError as exc:
            raise DomainError(f"no fitted intercept for site {exc.args[0]!r}") from None
        X = harmonic_design(days, self.n_harmonics, self.season_length)
        coef = np.column_stack([self.b, self.c]).ravel()
        return self.a[idx] + X @ coef

    def to_dict(self):
        return {"site_ids": [_plain(s) for s in self.site_ids], "a": self.a.tolist(),
                "b": self.b.tolist(), "c": self.c.tolist(), "season_length": self.season_length}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["site_ids"]), np.asarray(d["a"], float), np.asarray(d["b"], float),
                   np.asarray(d["c"], float), int(d["season_length"]))


def _plain(x):
    return x.item() if isinstance(x, np.generic) else x


def fit_seasonal_trend(panel: pd.DataFrame, n_harmonics: int = 3,
                       season_length: int = SEASON_LENGTH) -> SeasonalTrend:
    """OLS fit of site indicators plus global harmonics on the present values.

    Raises
    ------
    DomainError
        If the design is rank deficient; the message names the sites with
        too few distinct observed days.
    """
    df = validate_panel(panel, season_length).dropna(subset=["value"])
    site_ids = sorted(pd.unique(panel["site_id"]).tolist())
    need = 2 * n_harmonics + 1
    counts = df.groupby("site_id")["day"].nunique().reindex(site_ids, fill_value=0)
    short = counts[counts < need].index.tolist()
    if short:
        raise DomainError(f"sites {short} have fewer than {need} observed days")
    codes = pd.Categorical(df["site_id"], categories=site_ids).codes
    S = np.zeros((len(df), len(site_ids)))
    S[np.arange(len(df)), codes] = 1.0
    X = np.hstack([S, harmonic_design(df["day"].to_numpy(), n_harmonics, season_length)])
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise DomainError(f"rank-deficient seasonal design; distinct days per site: {counts.to_dict()}")
    coef, *_ = np.linalg.lstsq(X, df["value"].to_numpy(), rcond=None)
    h = coef[len(site_ids):].reshape(n_harmonics, 2)
    return SeasonalTrend(site_ids, coef[:len(site_ids)], h[:, 0].copy(), h[:, 1].copy(), season_length)


def standardize(panel: pd.DataFrame, trend: SeasonalTrend):
    """Detrend and divide by each site's residual standard deviation.

    Returns the standardized panel and a Series of scales ``k(s)`` (sample
    standard deviation, denominator n - 1).
    """
    df = validate_panel(panel, trend.season_length)
    resid = df["value"].to_numpy() - trend(df["site_id"].to_numpy(), df["day"].to_numpy())
    df["value"] = resid
    k = df.groupby("site_id")["value"].agg(lambda r: r.dropna().std(ddof=1))
    n_res = df.groupby("site_id")["value"].count()
    few = n_res[n_res < 2].index.tolist()
    if few:
        raise DomainError(f"sites {few} have fewer than 2 residuals")
    if (k <= 0).any():
        raise DomainError(f"sites {k[k <= 0].index.tolist()} have zero residual spread")
    df["value"] = resid / k.reindex(df["site_id"]).to_numpy()
    return df, k


def unstandardize(std_panel: pd.DataFrame, trend: SeasonalTrend, scales: pd.Series):
    """Invert :func:`standardize`."""
    df = std_panel.copy()
    k = scales.reindex(df["site_id"]).to_numpy()
    df["value"] = df["value"].to_numpy() * k + trend(df["site_id"].to_numpy(), df["day"].to_numpy())
    return df


def to_dataset(panel: pd.DataFrame, covariates="intercept", metric: str = "chordal",
               days=None) -> Dataset:
    """Grid a panel into a :class:`Dataset` (sites by ``site_id``, days ascending).

    Parameters
    ----------
    covariates : "intercept" or callable
        A callable receives the (n, 3) array of ``lon, lat, day`` rows in
        grid order and returns the (n, p) covariate matrix.
    days : sequence, optional
        Days spanning the grid; defaults to every day present in the panel.
    """
    dup = panel.duplicated(["site_id", "day"], keep=False)
    if dup.any():
        raise DuplicateError("duplicate (site, day) rows")
    sites = panel.groupby("site_id", sort=True)[["lon", "lat"]].first()
    days = np.sort(pd.unique(panel["day"])) if days is None else np.asarray(days)
    n1, n2 = len(sites), days.size
    site_pos = pd.Series(np.arange(n1), index=sites.index)
    day_pos = pd.Series(np.arange(n2), index=days)
    present = panel.dropna(subset=["value"])
    if not present["day"].isin(days).all():
        raise LengthMismatchError("panel has days outside the requested grid")
    flat = site_pos.reindex(present["site_id"]).to_numpy() * n2 + day_pos.reindex(present["day"]).to_numpy()
    z = np.full(n1 * n2, np.nan)
    z[flat.astype(int)] = present["value"].to_numpy()
    mask = np.isfinite(z)
    locs = np.column_stack([np.repeat(sites.to_numpy(float), n2, axis=0), np.tile(days.astype(float), n1)])
    if isinstance(covariates, str):
        if covariates != "intercept":
            raise DomainError(f"unknown covariate spec {covariates!r}")
        H = np.ones((n1 * n2, 1))
    else:
        H = np.asarray(covariates(locs), dtype=float)
        if H.ndim == 1:
            H = H[:, None]
        if H.shape[0] != n1 * n2:
            raise DimensionError("covariate function returned the wrong number of rows")
    return validate_dataset(Dataset(sites.to_numpy(float), days.astype(float), mask, z[mask], H,
                                    metric, site_ids=[_plain(s) for s in sites.index]))


class SeasonalStandardizer(TransformerMixin, BaseEstimator):
    """Scikit-learn style wrapper around the trend fit and standardization.

    ``fit`` learns ``mu`` and ``k``; ``transform`` standardizes a panel and
    ``inverse_transform`` undoes it.
    """

    def __init__(self, n_harmonics: int = 3, season_length: int = SEASON_LENGTH):
        self.n_harmonics = n_harmonics
        self.season_length = season_length

    def fit(self, X, y=None):
        self.trend_ = fit_seasonal_trend(X, self.n_harmonics, self.season_length)
        _, self.scales_ = standardize(X, self.trend_)
        return self

    def transform(self, X):
        self._check_fitted()
        df = validate_panel(X, self.season_length)
        mu = self.trend_(df["site_id"].to_numpy(), df["day"].to_numpy())
        df["value"] = (df["value"].to_numpy() - mu) / self.scales_.reindex(df["site_id"]).to_numpy()
        return df

    def inverse_transform(self, X):
        self._check_fitted()
        return unstandardize(X, self.trend_, self.scales_)

    def _check_fitted(self):
        from sklearn.utils.validation import check_is_fitted
        check_is_fitted(self, ["trend_", "scales_"])
