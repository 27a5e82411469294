"""Domain primitives: projection, windows, event catalogs, covariates, grids.

Coordinates are planar kilometres obtained from an equirectangular
projection about the window centroid; times are days since the catalog
epoch.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
import shapely
from shapely.geometry import Polygon, box

from .errors import DomainError

KM_PER_DEG_LON = 111.32
KM_PER_DEG_LAT = 110.57


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Projection:
    """Equirectangular projection about a reference point (lon0, lat0)."""

    lon0: float
    lat0: float

    def __post_init__(self):
        if not abs(self.lat0) < 89.0:
            raise DomainError(f"reference latitude {self.lat0} outside (-89, 89)")

    def forward(self, lon, lat):
        lon = np.asarray(lon, dtype=float)
        lat = np.asarray(lat, dtype=float)
        if np.any(np.abs(lat) >= 89.0):
            raise DomainError("latitude must satisfy |lat| < 89 degrees")
        x = KM_PER_DEG_LON * np.cos(np.radians(self.lat0)) * (lon - self.lon0)
        y = KM_PER_DEG_LAT * (lat - self.lat0)
        return x, y

    def inverse(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        lon = self.lon0 + x / (KM_PER_DEG_LON * np.cos(np.radians(self.lat0)))
        lat = self.lat0 + y / KM_PER_DEG_LAT
        return lon, lat


def project(lon, lat, ref: Projection):
    """Project degrees to planar km about ``ref``."""
    return ref.forward(lon, lat)


@dataclass(frozen=True)
class SpatialWindow:
    """Observation window in projected km coordinates."""

    polygon: Polygon

    def __post_init__(self):
        if self.polygon.is_empty or not self.polygon.area > 0:
            raise DomainError("spatial window must have positive area")
        shapely.prepare(self.polygon)

    @classmethod
    def from_bbox(cls, xmin, xmax, ymin, ymax) -> "SpatialWindow":
        if not (xmax > xmin and ymax > ymin):
            raise DomainError("degenerate bounding box")
        return cls(box(xmin, ymin, xmax, ymax))

    @classmethod
    def from_ring(cls, ring_xy) -> "SpatialWindow":
        ring = np.asarray(ring_xy, dtype=float)
        if ring.ndim != 2 or ring.shape[0] < 3:
            raise DomainError("polygon ring needs at least three vertices")
        poly = Polygon(ring)
        if not poly.is_valid:
            poly = poly.buffer(0)
        return cls(poly)

    @classmethod
    def from_lonlat_ring(cls, ring_lonlat, projection: Projection) -> "SpatialWindow":
        ring = np.asarray(ring_lonlat, dtype=float)
        x, y = projection.forward(ring[:, 0], ring[:, 1])
        return cls.from_ring(np.column_stack([x, y]))

    @property
    def area(self) -> float:
        return float(self.polygon.area)

    @property
    def bounds(self):
        return self.polygon.bounds

    @property
    def is_rectangle(self) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return abs(self.area - (xmax - xmin) * (ymax - ymin)) <= 1e-12 * self.area

    def contains(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return shapely.intersects_xy(self.polygon, x, y)


def lonlat_centroid(ring_lonlat) -> Projection:
    """Projection about the centroid of a lon/lat polygon ring."""
    c = Polygon(np.asarray(ring_lonlat, dtype=float)).centroid
    return Projection(float(c.x), float(c.y))


def bbox_ring(lon, lat, inflate=0.05):
    """Bounding-box ring of points, each side inflated by ``inflate``."""
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    w = max(lon.max() - lon.min(), 1e-3)
    h = max(lat.max() - lat.min(), 1e-3)
    x0, x1 = lon.min() - inflate * w, lon.max() + inflate * w
    y0, y1 = lat.min() - inflate * h, lat.max() + inflate * h
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])


@dataclass(frozen=True)
class EventRecord:
    group_mark: int
    lon: float
    lat: float
    t: float
    x: float
    y: float
    specificity: Optional[int] = None


@dataclass(frozen=True, eq=False)
class EventCatalog:
    """Time-ordered multivariate point pattern.

    Columns are stored as read-only numpy arrays.  The observation period is
    ``[t_start, t_start + T)``.  ``specificity`` uses 0 for missing values.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    marks: np.ndarray
    n_marks: int
    T: float
    window: SpatialWindow
    projection: Projection = field(default_factory=lambda: Projection(0.0, 0.0))
    lon: Optional[np.ndarray] = None
    lat: Optional[np.ndarray] = None
    specificity: Optional[np.ndarray] = None
    t_start: float = 0.0
    mark_names: Optional[tuple] = None
    check_window: bool = True

    def __post_init__(self):
        t = _frozen(self.t)
        n = t.size
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", _frozen(self.x))
        object.__setattr__(self, "y", _frozen(self.y))
        object.__setattr__(self, "marks", _frozen(self.marks, dtype=np.int64))
        if self.lon is None or self.lat is None:
            lon, lat = self.projection.inverse(self.x, self.y)
        else:
            lon, lat = self.lon, self.lat
        object.__setattr__(self, "lon", _frozen(lon))
        object.__setattr__(self, "lat", _frozen(lat))
        spec = np.zeros(n, dtype=np.int64) if self.specificity is None else self.specificity
        object.__setattr__(self, "specificity", _frozen(spec, dtype=np.int64))
        if self.mark_names is None:
            object.__setattr__(self, "mark_names", tuple(str(k) for k in range(self.n_marks)))
        else:
            object.__setattr__(self, "mark_names", tuple(self.mark_names))

        for name in ("x", "y", "marks", "lon", "lat", "specificity"):
            if getattr(self, name).shape != (n,):
                raise DomainError(f"column {name} has the wrong length")
        if self.n_marks < 1 or len(self.mark_names) != self.n_marks:
            raise DomainError("n_marks must be >= 1 and match mark_names")
        if not self.T >= 0:
            raise DomainError("window length T must be nonnegative")
        if n:
            if np.any(np.diff(t) < 0):
                raise DomainError("catalog is not sorted by time")
            if t[0] < self.t_start or t[-1] >= self.t_end:
                raise DomainError("event times outside [t_start, t_start + T)")
            if self.marks.min() < 0 or self.marks.max() >= self.n_marks:
                raise DomainError("group mark out of range")
            s = self.specificity
            if np.any((s != 0) & ((s < 1) | (s > 5))):
                raise DomainError("specificity must lie in 1..5")
            if self.check_window and not np.all(self.window.contains(self.x, self.y)):
                raise DomainError("events outside the spatial window")

    @classmethod
    def from_arrays(cls, t, x, y, marks, n_marks, T, window, **kw) -> "EventCatalog":
        """Build a catalog from unsorted columns (stable sort by time)."""
        t = np.asarray(t, dtype=float)
        order = np.argsort(t, kind="stable")
        for key in ("lon", "lat", "specificity"):
            if kw.get(key) is not None:
                kw[key] = np.asarray(kw[key])[order]
        return cls(
            t=t[order],
            x=np.asarray(x, dtype=float)[order],
            y=np.asarray(y, dtype=float)[order],
            marks=np.asarray(marks, dtype=np.int64)[order],
            n_marks=n_marks,
            T=T,
            window=window,
            **kw,
        )

    def __len__(self):
        return int(self.t.size)

    @property
    def t_end(self) -> float:
        return self.t_start + self.T

    @property
    def records(self) -> Iterator[EventRecord]:
        for i in range(len(self)):
            sp = int(self.specificity[i])
            yield EventRecord(
                int(self.marks[i]), float(self.lon[i]), float(self.lat[i]),
                float(self.t[i]), float(self.x[i]), float(self.y[i]), sp or None,
            )

    def counts(self) -> np.ndarray:
        return np.bincount(self.marks, minlength=self.n_marks)

    def replace(self, **changes) -> "EventCatalog":
        base = dict(
            t=self.t, x=self.x, y=self.y, marks=self.marks, n_marks=self.n_marks,
            T=self.T, window=self.window, projection=self.projection, lon=self.lon,
            lat=self.lat, specificity=self.specificity, t_start=self.t_start,
            mark_names=self.mark_names, check_window=self.check_window,
        )
        base.update(changes)
        return EventCatalog(**base)

    def take(self, idx) -> "EventCatalog":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return self.replace(
            t=self.t[idx], x=self.x[idx], y=self.y[idx], marks=self.marks[idx],
            lon=self.lon[idx], lat=self.lat[idx], specificity=self.specificity[idx],
        )

    def merged(self) -> "EventCatalog":
        """Collapse all marks into a single stream."""
        return self.replace(
            marks=np.zeros(len(self), dtype=np.int64), n_marks=1,
            mark_names=("+".join(self.mark_names),),
        )

    def time_slice(self, start, end) -> "EventCatalog":
        """Events with ``start <= t < end`` on a catalog over that period."""
        keep = (self.t >= start) & (self.t < end)
        sub = self.take(keep)
        return sub.replace(t_start=float(start), T=float(end - start))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for a in (self.t, self.x, self.y, self.marks):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(repr((self.n_marks, self.T, self.t_start, self.window.area)).encode())
        return h.hexdigest()[:16]


def jitter_duplicates(catalog: EventCatalog, sd: float = 0.01, seed=None,
                      max_tries: int = 100) -> EventCatalog:
    """Perturb lon/lat of events sharing identical (lon, lat, t).

    Every member of a duplicate group gets an independent Normal(0, sd^2)
    displacement on each axis; draws landing outside the window are redrawn.
    """
    if sd < 0:
        raise DomainError("jitter sd must be nonnegative")
    n = len(catalog)
    if sd == 0 or n < 2:
        return catalog
    keys = np.column_stack([catalog.lon, catalog.lat, catalog.t])
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    dup = np.flatnonzero(counts[inverse.ravel()] > 1)
    if dup.size == 0:
        return catalog
    rng = np.random.default_rng(seed)
    lon = catalog.lon.copy()
    lat = catalog.lat.copy()
    for i in dup:
        for _ in range(max_tries):
            cand_lon = catalog.lon[i] + rng.normal(0.0, sd)
            cand_lat = catalog.lat[i] + rng.normal(0.0, sd)
            cx, cy = catalog.projection.forward(cand_lon, cand_lat)
            if catalog.window.contains(cx, cy):
                lon[i], lat[i] = cand_lon, cand_lat
                break
    x, y = catalog.x.copy(), catalog.y.copy()
    x[dup], y[dup] = catalog.projection.forward(lon[dup], lat[dup])
    return catalog.replace(x=x, y=y, lon=lon, lat=lat)


@dataclass(frozen=True)
class Standardization:
    mode: str
    scale: float = 1.0
    shift: float = 0.0
    log: bool = False

    def apply(self, values):
        v = np.asarray(values, dtype=float)
        if self.log:
            v = np.log1p(v)
        return (v - self.shift) / self.scale


@dataclass(frozen=True, eq=False)
class CovariateField:
    """Gridded covariate with one raster layer per time slice.

    ``values`` has shape (n_layers, n_lat, n_lon); layer ``i`` holds for
    ``time_edges[i] <= t < time_edges[i + 1]`` and the first/last layers are
    held constant beyond the covered period.  Lookup is nearest-cell.
    """

    lon: np.ndarray
    lat: np.ndarray
    time_edges: np.ndarray
    values: np.ndarray
    record: Optional[Standardization] = None
    projection: Optional[Projection] = None

    def __post_init__(self):
        lon, lat = _frozen(self.lon), _frozen(self.lat)
        edges, vals = _frozen(self.time_edges), _frozen(self.values)
        for a, name in ((lon, "lon"), (lat, "lat"), (edges, "time_edges")):
            if a.ndim != 1 or (a.size > 1 and np.any(np.diff(a) <= 0)):
                raise DomainError(f"covariate {name} axis must be strictly increasing")
        if vals.shape != (edges.size - 1, lat.size, lon.size):
            raise DomainError("covariate values shape mismatch")
        object.__setattr__(self, "lon", lon)
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "time_edges", edges)
        object.__setattr__(self, "values", vals)

    @property
    def n_layers(self) -> int:
        return self.values.shape[0]

    def with_values(self, values, record=None) -> "CovariateField":
        return CovariateField(self.lon, self.lat, self.time_edges, values, record, self.projection)

    def bind(self, projection: Projection) -> "CovariateField":
        return CovariateField(self.lon, self.lat, self.time_edges, self.values, self.record, projection)

    @staticmethod
    def _nearest(axis, q, name):
        if axis.size == 1:
            idx = np.zeros(q.shape, dtype=np.int64)
            half = 0.5
        else:
            mids = 0.5 * (axis[1:] + axis[:-1])
            idx = np.searchsorted(mids, q, side="right")
            half = 0.5 * max(axis[1] - axis[0], axis[-1] - axis[-2])
        lo, hi = axis[0] - half, axis[-1] + half
        if np.any((q < lo - 1e-9) | (q > hi + 1e-9)):
            raise DomainError(f"covariate lookup outside the {name} extent")
        return idx

    def layer_index(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.time_edges, t, side="right") - 1
        return np.clip(idx, 0, self.n_layers - 1)

    def value_at(self, lon, lat, t):
        lon = np.asarray(lon, dtype=float)
        lat = np.asarray(lat, dtype=float)
        i = self._nearest(self.lon, lon, "longitude")
        j = self._nearest(self.lat, lat, "latitude")
        k = self.layer_index(np.broadcast_to(t, lon.shape))
        return self.values[k, j, i]

    def value_at_xy(self, x, y, t):
        if self.projection is None:
            raise DomainError("covariate field is not bound to a projection")
        lon, lat = self.projection.inverse(x, y)
        return self.value_at(lon, lat, t)


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Regular spatial lattice clipped to a window, times a temporal grid.

    ``cell_area[ix, iy]`` is the area of lattice cell ``(ix, iy)``
    intersected with the window (zero for cells outside).  Temporal cells
    are ``[t_edges[k], t_edges[k + 1])``.
    """

    x_edges: np.ndarray
    y_edges: np.ndarray
    cell_area: np.ndarray
    t_edges: np.ndarray
    n_lag: int = 24

    def __post_init__(self):
        for name in ("x_edges", "y_edges", "cell_area", "t_edges"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def nx(self):
        return self.x_edges.size - 1

    @property
    def ny(self):
        return self.y_edges.size - 1

    @property
    def full_cell_area(self):
        return np.outer(np.diff(self.x_edges), np.diff(self.y_edges))

    @property
    def cell_fraction(self):
        return self.cell_area / self.full_cell_area

    @property
    def active(self):
        return self.cell_area > 0

    @property
    def is_full(self) -> bool:
        """Every lattice cell lies entirely inside the window."""
        return bool(np.all(np.abs(self.cell_fraction - 1.0) < 1e-12))

    @property
    def n_s(self) -> int:
        return int(np.count_nonzero(self.active))

    @property
    def n_t(self) -> int:
        return self.t_edges.size - 1

    @property
    def spatial_nodes(self):
        xc = 0.5 * (self.x_edges[1:] + self.x_edges[:-1])
        yc = 0.5 * (self.y_edges[1:] + self.y_edges[:-1])
        X, Y = np.meshgrid(xc, yc, indexing="ij")
        m = self.active
        return X[m], Y[m]

    @property
    def cell_areas(self):
        return self.cell_area[self.active]

    @property
    def time_nodes(self):
        return 0.5 * (self.t_edges[1:] + self.t_edges[:-1])

    @property
    def time_steps(self):
        return np.diff(self.t_edges)

    @property
    def weights(self):
        """Spatio-temporal weights, shape (n_s, n_t)."""
        return np.outer(self.cell_areas, self.time_steps)

    @property
    def area(self) -> float:
        return float(self.cell_area.sum())

    @property
    def total_measure(self) -> float:
        return self.area * float(self.time_steps.sum())

    def describe(self) -> dict:
        return {"n_s": self.n_s, "n_t": self.n_t, "nx": self.nx, "ny": self.ny,
                "n_lag": self.n_lag, "area_km2": self.area,
                "t_start": float(self.t_edges[0]), "t_end": float(self.t_edges[-1])}


def build_quadrature(window: SpatialWindow, T: float, n_s: int, n_t: int,
                     t_start: float = 0.0, n_lag: int = 24) -> QuadratureGrid:
    """Lattice of about ``n_s`` square-ish cells over the window's bounding box.

    Cells are clipped exactly to the window polygon.
    """
    if n_s < 1 or n_t < 1:
        raise DomainError("n_s and n_t must be >= 1")
    if window is None or window.polygon.is_empty:
        raise DomainError("empty window")
    xmin, ymin, xmax, ymax = window.bounds
    w, h = xmax - xmin, ymax - ymin
    nx = max(1, int(round(np.sqrt(n_s * w / h))))
    ny = max(1, int(round(n_s / nx)))
    xe = np.linspace(xmin, xmax, nx + 1)
    ye = np.linspace(ymin, ymax, ny + 1)
    full = np.outer(np.diff(xe), np.diff(ye))
    if window.is_rectangle:
        area = full
    else:
        X0, Y0 = np.meshgrid(xe[:-1], ye[:-1], indexing="ij")
        X1, Y1 = np.meshgrid(xe[1:], ye[1:], indexing="ij")
        cells = shapely.box(X0.ravel(), Y0.ravel(), X1.ravel(), Y1.ravel())
        area = shapely.area(shapely.intersection(cells, window.polygon)).reshape(nx, ny)
        area = np.minimum(area, full)
    if not area.sum() > 0:
        raise DomainError("quadrature grid does not intersect the window")
    te = np.linspace(t_start, t_start + T, n_t + 1)
    return QuadratureGrid(xe, ye, area, te, n_lag=n_lag)


def polygon_area(ring) -> float:
    """Shoelace area of a closed or open ring."""
    r = np.asarray(ring, dtype=float)
    x, y = r[:, 0], r[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def validate_sorted(t: Sequence[float]):
    if np.any(np.diff(np.asarray(t, dtype=float)) < 0):
        raise DomainError("catalog is not sorted by time")
