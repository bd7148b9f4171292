"""
Plain-CSV serialization.

Dataset CSV: one row per grid cell in grid order, columns
``site_id, <coords>, time, observed, z, h1..hp`` (``z`` empty when not
observed), with a JSON sidecar ``<path>.json`` holding the metric, grid
ordering and column names.  Floats are written with 17 significant digits
so files round-trip exactly and reruns are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import platform
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import ConfigError, DimensionError
from .kernels import NonsepParams, SepParams
from .model import Dataset, ModelParams, validate_dataset
from .mpp import KnotSet
from .sampler import SampleStore

FLOAT_FORMAT = "%.17g"
READ_OPTS = {"float_precision": "round_trip"}
ORDERING = "site-major, time-fastest (index = site * n_times + time)"


def _coord_names(d: int, metric: str):
    if metric == "chordal" and d == 2:
        return ["lon", "lat"]
    return [f"x{i + 1}" for i in range(d)]


def _sidecar(path) -> Path:
    return Path(str(path) + ".json")


def _write_csv(df: pd.DataFrame, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_json(obj, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def grid_frame(data: Dataset) -> pd.DataFrame:
    coords = _coord_names(data.d, data.distance_metric)
    ids = data.site_ids if data.site_ids is not None else list(range(1, data.n1 + 1))
    df = pd.DataFrame({"site_id": np.repeat(np.asarray(ids, dtype=object), data.n2)})
    locs = data.locations
    for i, c in enumerate(coords):
        df[c] = locs[:, i]
    df["time"] = locs[:, -1]
    return df


def write_dataset(data: Dataset, path):
    df = grid_frame(data)
    df["observed"] = data.mask.astype(int)
    df["z"] = data.z_full()
    for j in range(data.p):
        df[f"h{j + 1}"] = data.H[:, j]
    _write_csv(df, path)
    write_json({"metric": data.distance_metric, "ordering": ORDERING, "n_sites": data.n1,
                "n_times": data.n2, "d": data.d, "p": data.p,
                "coords": _coord_names(data.d, data.distance_metric)}, _sidecar(path))


def read_dataset(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"dataset file {path} does not exist")
    meta_path = _sidecar(path)
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    df = pd.read_csv(path, **READ_OPTS)
    coords = meta.get("coords") or [c for c in df.columns if c.startswith("x") or c in ("lon", "lat")]
    n1 = df["site_id"].nunique()
    n2 = df["time"].nunique()
    if n1 * n2 != len(df):
        raise DimensionError(f"{len(df)} rows do not form a {n1} x {n2} grid")
    sites = df[coords].to_numpy(float)[::n2]
    times = df["time"].to_numpy(float)[:n2]
    mask = df["observed"].to_numpy().astype(bool)
    hcols = sorted((c for c in df.columns if c.startswith("h") and c[1:].isdigit()), key=lambda c: int(c[1:]))
    raw_ids = df["site_id"].to_numpy()[::n2].tolist()
    data = Dataset(sites, times, mask, df["z"].to_numpy(float)[mask], df[hcols].to_numpy(float),
                   meta.get("metric", "euclidean"), site_ids=raw_ids)
    out = validate_dataset(data)
    if not np.allclose(out.locations[:, :-1], df[coords].to_numpy(float), atol=0, rtol=0) or \
            not np.array_equal(out.locations[:, -1], df["time"].to_numpy(float)):
        raise DimensionError("dataset rows are not in site-major, time-fastest order")
    return out


def write_truth(y, data: Dataset, path):
    df = grid_frame(data)
    df["y"] = np.asarray(y, dtype=float)
    _write_csv(df, path)


def read_truth(path):
    return pd.read_csv(path, **READ_OPTS)["y"].to_numpy(float)


def write_knots(knots: KnotSet, path):
    d = knots.locations.shape[1] - 1
    df = pd.DataFrame(knots.locations, columns=[f"x{i + 1}" for i in range(d)] + ["time"])
    _write_csv(df, path)


def read_knots(path) -> KnotSet:
    return KnotSet(pd.read_csv(path, **READ_OPTS).to_numpy(float), design="file")


def write_draws(store: SampleStore, path):
    """One row per kept iteration: iteration, all parameters, then ``w_star_1..m``."""
    df = pd.DataFrame(store.params, columns=store.names)
    df.insert(0, "iteration", store.iterations)
    ws = pd.DataFrame(store.w_star, columns=[f"w_star_{k + 1}" for k in range(store.w_star.shape[1])])
    _write_csv(pd.concat([df, ws], axis=1), path)
    t = store.template
    write_json({"alpha": t.theta1.alpha, "d": t.theta1.d, "space_family": t.theta2.space_family,
                "time_family": t.theta2.time_family, "accepted": store.accepted,
                "proposed": store.proposed}, _sidecar(path))


def read_draws(path) -> SampleStore:
    df = pd.read_csv(path, **READ_OPTS)
    meta = json.loads(_sidecar(path).read_text())
    wcols = [c for c in df.columns if c.startswith("w_star_")]
    names = [c for c in df.columns if c not in wcols and c != "iteration"]
    first = dict(zip(names, df[names].iloc[0].to_numpy(float)))
    b = np.array([first[c] for c in names if c.startswith("b_")])
    template = ModelParams(
        b, first["tau2"], first["sigma2_1"], first["sigma2_2"],
        NonsepParams(first["a"], first["c"], first["beta"], meta["alpha"], meta["d"]),
        SepParams(first["phi_s"], first["phi_u"], meta["space_family"], meta["time_family"]))
    return SampleStore(names, df[names].to_numpy(float), df[wcols].to_numpy(float),
                       df["iteration"].to_numpy(int), meta["accepted"], meta["proposed"],
                       np.empty(0), template)


def write_predictions(result, path, coord_names=None):
    _write_csv(result.to_frame(coord_names), path)


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=_json_default).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(outdir, command: str, config: dict, **extra):
    """Record what produced an output directory.

    ``manifest.json`` keeps one entry per command run in the directory.
    """
    import scipy
    from . import __version__
    entry = {
        "config": config, "config_sha256": config_hash(config),
        "versions": {"aagp": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "pandas": pd.__version__, "python": platform.python_version()},
    }
    entry.update(extra)
    path = Path(outdir) / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    manifest[command] = entry
    write_json(manifest, path)
    return entry
