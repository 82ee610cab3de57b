"""Weather-station records to a temporal graph.

The CSV has header
``station_id,lat,lon,step,omega,pr_wtr,rhum,temp,uwnd,vwnd,precip`` with one
row per (station, step) and an empty ``precip`` field when unobserved.
Attributes are expected already joined to stations (nearest reanalysis
grid point).
"""

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .graph import TemporalAttributedGraph

HEADER = ["station_id", "lat", "lon", "step", "omega", "pr_wtr", "rhum", "temp", "uwnd", "vwnd", "precip"]
ATTRIBUTES = HEADER[4:10]
EARTH_RADIUS_KM = 6371.0088
MIN_CO_OBSERVED = 12


class StationFileError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StationDataset:
    station_ids: tuple
    lat: np.ndarray
    lon: np.ndarray
    steps: np.ndarray
    attributes: np.ndarray  # (T, N, 6), raw units
    precip: np.ndarray  # (T, N), NaN where missing

    @property
    def n_stations(self):
        return len(self.station_ids)

    def to_graph(self, radius, train_window=None):
        return build_station_graph(self, radius, train_window)


def read_station_file(path):
    """Parse and validate a station CSV; errors carry line numbers."""
    rows = {}
    meta = {}
    order = []
    problems = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != HEADER:
            raise StationFileError(f"{path}:1: header must be {','.join(HEADER)}")
        for lineno, rec in enumerate(reader, 2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(HEADER):
                problems.append(f"line {lineno}: expected {len(HEADER)} fields, got {len(rec)}")
                continue
            sid = rec[0].strip()
            try:
                lat, lon = float(rec[1]), float(rec[2])
                step = int(rec[3])
                attrs = [float(v) for v in rec[4:10]]
                precip = float(rec[10]) if rec[10].strip() else np.nan
            except ValueError as exc:
                problems.append(f"line {lineno}: {exc}")
                continue
            if not (-90 <= lat <= 90 and -180 <= lon <= 180):
                problems.append(f"line {lineno}: invalid coordinates ({lat}, {lon})")
                continue
            if not np.isfinite(attrs).all():
                problems.append(f"line {lineno}: non-finite attribute")
                continue
            if precip < 0 or np.isinf(precip):
                problems.append(f"line {lineno}: precipitation must be a nonnegative amount")
                continue
            if sid not in meta:
                meta[sid] = (lat, lon)
                order.append(sid)
            elif meta[sid] != (lat, lon):
                problems.append(f"line {lineno}: station {sid} changes coordinates")
                continue
            if (sid, step) in rows:
                problems.append(f"line {lineno}: duplicate record for station {sid}, step {step}")
                continue
            rows[(sid, step)] = (attrs, precip)
    if problems:
        raise StationFileError(f"{path}: malformed rows\n  " + "\n  ".join(problems))
    if not rows:
        raise StationFileError(f"{path}: no records")
    steps = np.array(sorted({s for _, s in rows}))
    T, N = steps.size, len(order)
    X = np.empty((T, N, len(ATTRIBUTES)))
    y = np.empty((T, N))
    missing = []
    for i, sid in enumerate(order):
        for t, step in enumerate(steps):
            if (sid, step) not in rows:
                missing.append(f"{sid}@{step}")
                continue
            X[t, i], y[t, i] = rows[(sid, step)]
    if missing:
        raise StationFileError(f"{path}: missing attribute rows for " + ", ".join(missing[:10])
                               + (" ..." if len(missing) > 10 else ""))
    lat = np.array([meta[s][0] for s in order])
    lon = np.array([meta[s][1] for s in order])
    return StationDataset(tuple(order), lat, lon, steps, X, y)


def great_circle_km(lat, lon):
    """Pairwise haversine distances in km."""
    phi, lam = np.radians(lat), np.radians(lon)
    dphi = phi[:, None] - phi[None, :]
    dlam = lam[:, None] - lam[None, :]
    a = np.sin(dphi / 2) ** 2 + np.cos(phi)[:, None] * np.cos(phi)[None, :] * np.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def _pair_weight(a, b, dist, radius):
    both = ~np.isnan(a) & ~np.isnan(b)
    if both.sum() >= MIN_CO_OBSERVED:
        x, z = a[both], b[both]
        if x.std() > 0 and z.std() > 0:
            return float(np.clip(np.corrcoef(x, z)[0, 1], 0.0, 1.0))
        if np.array_equal(x, z):
            return 1.0
    return float(np.exp(-dist ** 2 / radius ** 2))


def build_station_graph(data, radius, train_window=None):
    """Distance-thresholded station graph with correlation weights.

    Labels are square-rooted precipitation; attributes are standardized
    per variable.  Edge weights are the Pearson correlation of co-observed
    transformed labels over the first `train_window` steps (default: all
    but the last), clamped to [0, 1]; pairs with fewer than 12 co-observed
    steps fall back to ``exp(-d^2 / radius^2)``.
    """
    if radius is None or radius <= 0:
        raise ValueError("radius (km) must be positive")
    T, N = data.precip.shape
    window = T - 1 if train_window is None else int(train_window)
    if not 1 <= window <= T:
        raise ValueError(f"train window must lie in [1, {T}]")
    y = np.sqrt(data.precip)
    X = data.attributes.reshape(-1, data.attributes.shape[-1])
    mean, std = X.mean(axis=0), X.std(axis=0)
    std[std == 0] = 1.0
    Xs = ((data.attributes - mean) / std)
    dist = great_circle_km(data.lat, data.lon)
    hist = y[:window]
    rows, cols, vals = [], [], []
    for i in range(N):
        for j in range(i + 1, N):
            if dist[i, j] > radius:
                continue
            w = _pair_weight(hist[:, i], hist[:, j], dist[i, j], radius)
            if w > 0:
                rows.append(i)
                cols.append(j)
                vals.append(w)
    S = sp.coo_matrix((vals, (rows, cols)), shape=(N, N))
    return TemporalAttributedGraph(Xs, y, ((S + S.T).tocsr(),))


def load_station_dataset(path, radius, train_window=None):
    return build_station_graph(read_station_file(path), radius, train_window)
