import numpy as np
import pandas as pd
import pytest

from aagp.exceptions import DomainError, DuplicateError
from aagp.ingest import (SeasonalStandardizer, SeasonalTrend, fit_seasonal_trend, harmonic_design, read_panel,
                         standardize, to_dataset, unstandardize, validate_panel)


def make_panel(rng, n_sites=4, days=range(1, 61), a=None, b=(0.0, 0.0, 0.0), c=(0.0, 0.0, 0.0),
               noise=0.0, L=184):
    days = np.asarray(list(days))
    a = rng.standard_normal(n_sites) if a is None else np.asarray(a, float)
    X = harmonic_design(days, len(b), L)
    seasonal = X @ np.column_stack([b, c]).ravel()
    rows = []
    for s in range(n_sites):
        vals = a[s] + seasonal + noise * rng.standard_normal(days.size)
        lon, lat = -100 + 3 * s, 35 + s
        rows += [(f"S{s:03d}", lon, lat, int(u), v) for u, v in zip(days, vals)]
    return pd.DataFrame(rows, columns=["site_id", "lon", "lat", "day", "value"])


def test_constant_panel():
    panel = make_panel(np.random.default_rng(0), a=[2.0, 2.0, 2.0, 2.0])
    tr = fit_seasonal_trend(panel)
    np.testing.assert_allclose(tr.a, 2.0, atol=1e-10)
    np.testing.assert_allclose(tr.b, 0.0, atol=1e-10)
    np.testing.assert_allclose(tr.c, 0.0, atol=1e-10)


def test_exact_recovery(rng):
    a, b, c = [1.0, -2.0, 0.5, 3.0], [0.7, -0.2, 0.1], [0.3, 0.05, -0.4]
    tr = fit_seasonal_trend(make_panel(rng, a=a, b=b, c=c, days=range(1, 185)))
    np.testing.assert_allclose(tr.a, a, atol=1e-8)
    np.testing.assert_allclose(tr.b, b, atol=1e-8)
    np.testing.assert_allclose(tr.c, c, atol=1e-8)


def test_single_harmonic_with_noise():
    rng = np.random.default_rng(1)
    hits = []
    for _ in range(200):
        panel = make_panel(rng, n_sites=3, a=[0, 0, 0], b=[1.0], c=[-0.5], noise=0.5, days=range(1, 185))
        tr = fit_seasonal_trend(panel, n_harmonics=1)
        hits.append([tr.b[0], tr.c[0]])
    hits = np.array(hits)
    # each coefficient averages 552 residuals with weight 2/552 on cos^2 ~ 1/2
    se = 0.5 * np.sqrt(2 / 552)
    assert abs(hits[:, 0].mean() - 1.0) < 3 * se / np.sqrt(200) * 1.5 + 1e-3
    assert abs(hits[:, 0].std() - se) < 0.2 * se
    assert np.all(np.abs(hits - [1.0, -0.5]) < 5 * se)


def test_rank_deficiency_names_sites(rng):
    panel = make_panel(rng, n_sites=2, days=range(1, 30))
    panel = panel[~((panel.site_id == "S001") & (panel.day > 4))]
    with pytest.raises(DomainError, match="S001"):
        fit_seasonal_trend(panel)


def test_panel_validation(rng):
    panel = make_panel(rng, n_sites=2, days=range(1, 10))
    with pytest.raises(DuplicateError):
        validate_panel(pd.concat([panel, panel.iloc[:1]]))
    bad = panel.copy()
    bad.loc[0, "day"] = 185
    with pytest.raises(DomainError):
        validate_panel(bad)
    with pytest.raises(DomainError):
        validate_panel(panel.drop(columns="lat"))


def test_standardize_two_residuals():
    panel = pd.DataFrame({"site_id": ["A", "A"], "lon": [0.0, 0.0], "lat": [0.0, 0.0],
                          "day": [1, 2], "value": [-1.0, 1.0]})
    tr = SeasonalTrend(["A"], np.zeros(1), np.zeros(0), np.zeros(0))
    std, k = standardize(panel, tr)
    assert k["A"] == pytest.approx(np.sqrt(2))
    np.testing.assert_allclose(std["value"], [-1 / np.sqrt(2), 1 / np.sqrt(2)])


def test_standardized_sd_and_round_trip(rng):
    panel = make_panel(rng, b=[0.5, 0.1, 0.0], c=[0.2, 0.0, 0.1], noise=1.0)
    panel.loc[panel.sample(10, random_state=1).index, "value"] = np.nan
    tr = fit_seasonal_trend(panel)
    std, k = standardize(panel, tr)
    sds = std.groupby("site_id")["value"].std(ddof=1)
    np.testing.assert_allclose(sds, 1.0, atol=1e-10)
    back = unstandardize(std, tr, k)
    np.testing.assert_allclose(back["value"], panel["value"], atol=1e-10)
    with pytest.raises(DomainError):
        standardize(panel[panel.site_id == "S000"].iloc[:1], tr)


def test_standardizer_estimator(rng):
    panel = make_panel(rng, noise=1.0)
    st = SeasonalStandardizer(n_harmonics=2).fit(panel)
    out = st.transform(panel)
    np.testing.assert_allclose(st.inverse_transform(out)["value"], panel["value"], atol=1e-10)
    assert st.get_params() == {"n_harmonics": 2, "season_length": 184}
    from sklearn.base import clone
    assert clone(st).n_harmonics == 2
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        SeasonalStandardizer().transform(panel)


def test_to_dataset_mask_and_order():
    panel = pd.DataFrame({"site_id": ["B", "B", "B", "A", "A"], "lon": [1.0, 1.0, 1.0, 0.0, 0.0],
                          "lat": [1.0, 1.0, 1.0, 0.0, 0.0], "day": [1, 2, 3, 1, 3],
                          "value": [1.0, 2.0, 3.0, 4.0, 5.0]})
    d = to_dataset(panel)
    assert d.mask.sum() == 5 and d.n == 6
    assert d.site_ids == ["A", "B"]
    assert d.distance_metric == "chordal"
    # site 2 (B), day 1 sits at flat index n2
    assert d.z_full()[3] == 1.0
    assert not d.mask[1]
    with pytest.raises(DuplicateError):
        to_dataset(pd.concat([panel, panel.iloc[:1]]))


def test_paper_shape():
    rng = np.random.default_rng(2)
    n1, n2 = 513, 92
    days = np.arange(1, n2 + 1)
    frame = pd.DataFrame({"site_id": np.repeat(np.arange(n1), n2),
                          "lon": np.repeat(rng.uniform(-100, -80, n1), n2),
                          "lat": np.repeat(rng.uniform(30, 45, n1), n2),
                          "day": np.tile(days, n1), "value": rng.standard_normal(n1 * n2)})
    drop = rng.choice(n1 * n2, 645, replace=False)
    frame = frame.drop(index=drop)
    d = to_dataset(frame)
    assert (d.n1, d.n2) == (513, 92)
    assert d.n_obs == 46551


def test_read_panel(tmp_path, rng):
    panel = make_panel(rng, n_sites=2, days=range(1, 5))
    panel.to_csv(tmp_path / "p.csv", index=False)
    back = read_panel(tmp_path / "p.csv")
    pd.testing.assert_frame_equal(back.reset_index(drop=True), panel.reset_index(drop=True))


def test_trend_serialization(rng):
    tr = fit_seasonal_trend(make_panel(rng))
    back = SeasonalTrend.from_dict(tr.to_dict())
    ids = ["S000", "S003"]
    np.testing.assert_array_equal(tr(ids, [5, 100]), back(ids, [5, 100]))
    with pytest.raises(DomainError):
        tr(["nope"], [1])
