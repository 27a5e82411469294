"""Readers and writers for event CSVs, covariate rasters, window rings and configs."""
from __future__ import annotations

import csv
import datetime as _dt
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

try:  # Python >= 3.11
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover
    import tomli as _toml

from .domain import (CovariateField, EventCatalog, Projection, SpatialWindow, bbox_ring,
                     jitter_duplicates, lonlat_centroid)
from .errors import ConfigError, DataError, DomainError

EVENT_COLUMNS = ("group", "date", "lon", "lat", "specificity")


def parse_date(text: str) -> _dt.datetime:
    """UTC calendar day ``YYYY-MM-DD`` or an ISO date-time."""
    text = text.strip()
    try:
        if len(text) == 10:
            return _dt.datetime.strptime(text, "%Y-%m-%d")
        return _dt.datetime.fromisoformat(text.replace("Z", "")).replace(tzinfo=None)
    except ValueError as exc:
        raise DataError(f"bad date {text!r}") from exc


def days_between(epoch: _dt.datetime, when: _dt.datetime) -> float:
    return (when - epoch).total_seconds() / 86400.0


def format_time(epoch: _dt.datetime, t: float) -> str:
    return (epoch + _dt.timedelta(days=float(t))).isoformat(timespec="microseconds")


@dataclass
class IngestReport:
    n_rows: int = 0
    n_kept: int = 0
    dropped: List[dict] = field(default_factory=list)
    n_jittered: int = 0
    groups: List[str] = field(default_factory=list)
    epoch: str = ""
    T: float = 0.0
    window: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def reasons(self) -> Dict[str, int]:
        out: Dict[str, int] = {}
        for d in self.dropped:
            out[d["reason"]] = out.get(d["reason"], 0) + 1
        return out


def _rows(path):
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            yield lineno, [c.strip() for c in row]


def read_window_ring(path) -> np.ndarray:
    """Lon/lat ring from a text file.

    Accepts a JSON coordinate list (``[[lon, lat], ...]``, optionally nested
    one level as in GeoJSON polygons) or whitespace/comma separated pairs,
    one per line.
    """
    with open(path) as fh:
        text = fh.read().strip()
    if not text:
        raise DataError(f"{path}: empty window file")
    try:
        if text[0] in "[{":
            obj = json.loads(text)
            if isinstance(obj, dict):
                obj = obj.get("coordinates", obj.get("geometry", {}).get("coordinates"))
            ring = np.asarray(obj, dtype=float)
            while ring.ndim > 2:
                ring = ring[0]
        else:
            pts = [ln.replace(",", " ").split() for ln in text.splitlines()
                   if ln.strip() and not ln.lstrip().startswith("#")]
            ring = np.asarray(pts, dtype=float)
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: cannot parse window ring") from exc
    if ring.ndim != 2 or ring.shape[1] != 2 or ring.shape[0] < 3:
        raise DataError(f"{path}: ring needs at least three lon/lat pairs")
    return ring


def read_events_csv(path, epoch: Optional[str] = None, end: Optional[str] = None,
                    groups: Optional[Sequence[str]] = None,
                    specificity_max: Optional[int] = None, skip_bad_rows: bool = False,
                    window_ring: Optional[np.ndarray] = None, jitter_sd: float = 0.01,
                    seed: Optional[int] = 0):
    """Parse ``group,date,lon,lat[,specificity]`` rows into an EventCatalog.

    ``groups`` fixes the label-to-mark order (default: sorted labels).  The
    period starts at ``epoch`` (default: first event day) and ends at
    ``end`` (default: the day after the last event).  Rows failing to parse
    abort the run unless ``skip_bad_rows``; rows above ``specificity_max``
    or outside the window are dropped and reported.  Duplicate
    (lon, lat, date) events are jittered.
    """
    report = IngestReport()
    parsed = []
    bad = []
    for lineno, row in _rows(path):
        if row[0].lower() == "group":
            continue
        report.n_rows += 1
        try:
            if len(row) not in (4, 5):
                raise DataError(f"expected 4 or 5 fields, got {len(row)}")
            when = parse_date(row[1])
            lon, lat = float(row[2]), float(row[3])
            if not (np.isfinite(lon) and np.isfinite(lat)) or abs(lat) >= 89 or abs(lon) > 180:
                raise DataError("coordinates out of range")
            spec = int(row[4]) if len(row) == 5 and row[4] != "" else 0
            if spec and not 1 <= spec <= 5:
                raise DataError("specificity must be 1..5")
        except (DataError, ValueError) as exc:
            bad.append({"line": lineno, "reason": f"malformed: {exc}"})
            continue
        parsed.append((lineno, row[0], when, lon, lat, spec))
    if bad and not skip_bad_rows:
        lines = ", ".join(str(b["line"]) for b in bad[:10])
        raise DataError(f"{len(bad)} malformed row(s) at line(s) {lines}; use --skip-bad-rows")
    report.dropped.extend(bad)

    kept = []
    for rec in parsed:
        if specificity_max is not None and rec[5] > specificity_max:
            report.dropped.append({"line": rec[0], "reason": "specificity above threshold"})
            continue
        kept.append(rec)
    if not kept:
        raise DataError("no events left after filtering")

    labels = list(groups) if groups else sorted({r[1] for r in kept})
    index = {g: i for i, g in enumerate(labels)}
    unknown = [r for r in kept if r[1] not in index]
    for r in unknown:
        report.dropped.append({"line": r[0], "reason": f"unknown group {r[1]!r}"})
    kept = [r for r in kept if r[1] in index]

    t0 = parse_date(epoch) if epoch else min(r[2] for r in kept).replace(
        hour=0, minute=0, second=0, microsecond=0)
    t_end = parse_date(end) if end else max(r[2] for r in kept).replace(
        hour=0, minute=0, second=0, microsecond=0) + _dt.timedelta(days=1)
    T = days_between(t0, t_end)
    if not T > 0:
        raise DataError("end date must follow the epoch")

    lon = np.array([r[3] for r in kept])
    lat = np.array([r[4] for r in kept])
    if window_ring is None:
        window_ring = bbox_ring(lon, lat, 0.05)
        report.window = "bounding box of events inflated 5%"
    else:
        report.window = "polygon ring"
    proj = lonlat_centroid(window_ring)
    window = SpatialWindow.from_lonlat_ring(window_ring, proj)

    t = np.array([days_between(t0, r[2]) for r in kept])
    x, y = proj.forward(lon, lat)
    ok = (t >= 0) & (t < T)
    for r, good in zip(kept, ok):
        if not good:
            report.dropped.append({"line": r[0], "reason": "outside the observation period"})
    inside = window.contains(x, y)
    for r, good, in_t in zip(kept, inside, ok):
        if in_t and not good:
            report.dropped.append({"line": r[0], "reason": "outside the spatial window"})
    keep = ok & inside
    marks = np.array([index[r[1]] for r in kept], dtype=np.int64)
    spec = np.array([r[5] for r in kept], dtype=np.int64)
    cat = EventCatalog.from_arrays(t[keep], x[keep], y[keep], marks[keep], len(labels), T, window,
                                   projection=proj, lon=lon[keep], lat=lat[keep],
                                   specificity=spec[keep], mark_names=tuple(labels))
    jittered = jitter_duplicates(cat, jitter_sd, seed=seed)
    report.n_jittered = int(np.count_nonzero((jittered.lon != cat.lon) | (jittered.lat != cat.lat)))
    report.n_kept = len(jittered)
    report.groups = labels
    report.epoch = t0.isoformat()
    report.T = T
    report.dropped.sort(key=lambda d: d["line"])
    return jittered, report


def write_events_csv(path, catalog: EventCatalog, epoch: str = "2000-01-01",
                     header: Optional[Sequence[str]] = None):
    """Write the event schema; dates carry the fractional day as an ISO time."""
    t0 = parse_date(epoch)
    with open(path, "w", newline="") as fh:
        for line in header or ():
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "date", "lon", "lat", "specificity"])
        for i in range(len(catalog)):
            sp = int(catalog.specificity[i])
            w.writerow([catalog.mark_names[catalog.marks[i]], format_time(t0, catalog.t[i]),
                        repr(float(catalog.lon[i])), repr(float(catalog.lat[i])), sp or ""])


def read_covariate_csv(path, epoch: str) -> CovariateField:
    """Raster rows ``lon,lat,year,value``; one layer per calendar year.

    Every (lon, lat) node must be present for every year.
    """
    t0 = parse_date(epoch)
    recs = []
    for lineno, row in _rows(path):
        if row[0].lower() == "lon":
            continue
        try:
            recs.append((float(row[0]), float(row[1]), int(row[2]), float(row[3])))
        except (ValueError, IndexError) as exc:
            raise DataError(f"{path}:{lineno}: bad covariate row") from exc
    if not recs:
        raise DataError(f"{path}: no covariate rows")
    arr = np.array(recs)
    lons = np.unique(arr[:, 0])
    lats = np.unique(arr[:, 1])
    years = np.unique(arr[:, 2]).astype(int)
    vals = np.full((years.size, lats.size, lons.size), np.nan)
    k = np.searchsorted(years, arr[:, 2].astype(int))
    j = np.searchsorted(lats, arr[:, 1])
    i = np.searchsorted(lons, arr[:, 0])
    vals[k, j, i] = arr[:, 3]
    if np.isnan(vals).any():
        raise DataError(f"{path}: raster has missing (lon, lat, year) cells")
    edges = [days_between(t0, _dt.datetime(int(y), 1, 1)) for y in years]
    edges.append(days_between(t0, _dt.datetime(int(years[-1]) + 1, 1, 1)))
    try:
        return CovariateField(lons, lats, np.array(edges), vals)
    except DomainError as exc:
        raise DataError(str(exc)) from exc


def load_config(path) -> dict:
    """Read a TOML run configuration; syntax errors carry line and column."""
    try:
        with open(path, "rb") as fh:
            return _toml.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
