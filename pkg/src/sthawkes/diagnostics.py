"""Empirical pair-lag histograms, daily count series and cross-lag summaries."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .domain import EventCatalog
from .errors import DomainError


def _ordered_pairs(catalog: EventCatalog, mark_from: int, mark_to: int,
                   max_dt: Optional[float] = None):
    """Index pairs (i earlier of mark_from, j later of mark_to) with t_j > t_i."""
    t = catalog.t
    src = np.flatnonzero(catalog.marks == mark_from)
    tgt = np.flatnonzero(catalog.marks == mark_to)
    if src.size == 0 or tgt.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    ts = t[src]
    hi = np.searchsorted(ts, t[tgt], side="left")
    lo = np.zeros_like(hi) if max_dt is None else np.searchsorted(ts, t[tgt] - max_dt, side="left")
    c = hi - lo
    j = np.repeat(tgt, c)
    start = np.repeat(lo - (np.cumsum(c) - c), c)
    i = src[np.arange(int(c.sum())) + start]
    return i, j


@dataclass
class LagHistogram:
    counts: np.ndarray           # (n_dt_bins, n_ds_bins)
    dt_edges: np.ndarray
    ds_edges: np.ndarray
    mark_from: int
    mark_to: int

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def normalized(self) -> np.ndarray:
        """Counts divided by the total (zero matrix when empty)."""
        tot = self.counts.sum()
        return self.counts / tot if tot else np.zeros_like(self.counts, dtype=float)

    def spatial_mode(self) -> Tuple[int, float]:
        """Index and centre of the spatial-lag bin with the most pairs."""
        marg = self.counts.sum(axis=0)
        k = int(np.argmax(marg))
        return k, 0.5 * (self.ds_edges[k] + self.ds_edges[k + 1])

    def header(self) -> dict:
        return {"kind": "pair_lag_histogram", "mark_from": self.mark_from,
                "mark_to": self.mark_to, "max_dt": float(self.dt_edges[-1]),
                "max_ds": float(self.ds_edges[-1]), "bins": list(self.counts.shape),
                "rows": "temporal lag bins", "columns": "spatial lag bins"}


def pair_lag_histogram(catalog: EventCatalog, mark_from: int, mark_to: int,
                       max_dt: float = 400.0, max_ds: float = 1000.0,
                       bins=(80, 80)) -> LagHistogram:
    """2-D counts of (temporal lag, distance) over ordered pairs.

    Pairs run from an earlier event of ``mark_from`` to a strictly later
    event of ``mark_to``.  Bins are left-closed; lags equal to a bound are
    excluded.
    """
    if not (max_dt > 0 and max_ds > 0):
        raise DomainError("max_dt and max_ds must be positive")
    nb_t, nb_s = (bins, bins) if np.isscalar(bins) else bins
    if nb_t < 1 or nb_s < 1:
        raise DomainError("bins must be >= 1")
    dt_edges = np.linspace(0.0, max_dt, int(nb_t) + 1)
    ds_edges = np.linspace(0.0, max_ds, int(nb_s) + 1)
    counts = np.zeros((int(nb_t), int(nb_s)), dtype=np.int64)
    i, j = _ordered_pairs(catalog, mark_from, mark_to, max_dt)
    if i.size:
        dt = catalog.t[j] - catalog.t[i]
        ds = np.hypot(catalog.x[j] - catalog.x[i], catalog.y[j] - catalog.y[i])
        keep = (dt > 0) & (dt < max_dt) & (ds < max_ds)
        bt = np.floor(dt[keep] / (max_dt / nb_t)).astype(np.int64)
        bs = np.floor(ds[keep] / (max_ds / nb_s)).astype(np.int64)
        bt = np.minimum(bt, nb_t - 1)
        bs = np.minimum(bs, nb_s - 1)
        np.add.at(counts, (bt, bs), 1)
    return LagHistogram(counts, dt_edges, ds_edges, mark_from, mark_to)


@dataclass
class DailyCounts:
    counts: np.ndarray
    mark: Optional[int]
    outlier_day: Optional[int] = None
    outlier_ratio: float = 0.0

    @property
    def flagged(self) -> bool:
        return self.outlier_day is not None


def daily_counts(catalog: EventCatalog, mark: Optional[int] = None,
                 outlier_factor: float = 10.0) -> DailyCounts:
    """Events per day bucket floor(t - t_start), length ceil(T).

    ``mark=None`` counts every mark.  The busiest day is flagged when it
    exceeds ``outlier_factor`` times the median daily count (the mean when
    the median is zero).
    """
    n_days = int(np.ceil(catalog.T - 1e-12)) if catalog.T > 0 else 0
    sel = np.ones(len(catalog), bool) if mark is None else catalog.marks == mark
    day = np.floor(catalog.t[sel] - catalog.t_start).astype(np.int64)
    counts = np.bincount(day, minlength=n_days)[:max(n_days, 0)] if n_days else np.zeros(0, np.int64)
    out = DailyCounts(counts, mark)
    if counts.size and counts.max() > 0:
        ref = float(np.median(counts))
        if ref == 0:
            ref = float(counts.mean())
        top = int(np.argmax(counts))
        ratio = counts[top] / ref
        out.outlier_ratio = float(ratio)
        if ratio > outlier_factor:
            out.outlier_day = top
    return out


@dataclass
class LagSummary:
    median_km: Tuple[float, float]
    mean_km: Tuple[float, float]
    median_deg: Tuple[float, float]
    mean_deg: Tuple[float, float]
    n_pairs: int

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def lag_summary(catalog: EventCatalog, mark_a: int, mark_b: int,
                max_dt: Optional[float] = None, max_ds: Optional[float] = None,
                chunk: int = 512) -> LagSummary:
    """Median and mean (east, north) displacement from mark_a events to mark_b events.

    Every pair (i of mark_a, j of mark_b), i != j, contributes s_j - s_i,
    whichever event came first; optional ``max_dt`` (days, on |t_j - t_i|)
    and ``max_ds`` (km) restrict the pairs.  Degree lags use the lon/lat
    columns.
    """
    counts = catalog.counts()
    for m in (mark_a, mark_b):
        if not 0 <= m < catalog.n_marks or counts[m] == 0:
            raise DomainError(f"mark {m} has no events")
    a = np.flatnonzero(catalog.marks == mark_a)
    b = np.flatnonzero(catalog.marks == mark_b)
    cols = {k: [] for k in ("dx", "dy", "dlon", "dlat")}
    for s0 in range(0, a.size, chunk):
        ia = a[s0:s0 + chunk, None]
        keep = ia != b[None, :]
        if max_dt is not None:
            keep &= np.abs(catalog.t[b][None, :] - catalog.t[ia]) < max_dt
        dx = catalog.x[b][None, :] - catalog.x[ia]
        dy = catalog.y[b][None, :] - catalog.y[ia]
        if max_ds is not None:
            keep &= np.hypot(dx, dy) < max_ds
        cols["dx"].append(dx[keep])
        cols["dy"].append(dy[keep])
        cols["dlon"].append((catalog.lon[b][None, :] - catalog.lon[ia])[keep])
        cols["dlat"].append((catalog.lat[b][None, :] - catalog.lat[ia])[keep])
    v = {k: np.concatenate(c) for k, c in cols.items()}
    n = int(v["dx"].size)
    if n == 0:
        raise DomainError("no event pairs within the requested bounds")
    med = lambda k: float(np.median(v[k]))
    avg = lambda k: float(np.mean(v[k]))
    return LagSummary((med("dx"), med("dy")), (avg("dx"), avg("dy")),
                      (med("dlon"), med("dlat")), (avg("dlon"), avg("dlat")), n)


def write_matrix_csv(path, matrix, header: dict, fmt: str = "%d"):
    """CSV matrix preceded by a one-line JSON header behind '#'."""
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        np.savetxt(fh, np.atleast_2d(matrix), delimiter=",", fmt=fmt)
