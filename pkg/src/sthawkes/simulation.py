"""Samplers for multivariate spatio-temporal Hawkes models.

``simulate_branching`` uses the cluster representation: immigrants from the
background, then generations of offspring.  ``simulate_thinning`` is a
sequential rejection sampler over time that also handles covariate-dependent
kernels.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .background import BackgroundSpec
from .domain import EventCatalog, Projection, SpatialWindow
from .errors import DomainError, SimulationError
from .kernels import KernelParams, dispersion, temporal_density
from .model import ModelSpec

EDGE_POLICIES = ("clip", "none")


@dataclass
class SimConfig:
    """Sampling setup.

    With ``edge="clip"`` offspring outside the window or after the end of
    the period are discarded and do not reproduce.  With ``edge="none"``
    every offspring is kept; the returned catalog's period and window are
    enlarged to cover them.
    """

    model: ModelSpec
    window: SpatialWindow
    T: float
    seed: Optional[int] = 0
    method: str = "branching"
    edge: str = "clip"
    t_start: float = 0.0
    projection: Projection = field(default_factory=lambda: Projection(0.0, 0.0))
    covariate: object = None
    max_events: int = 1_000_000
    mark_names: Optional[tuple] = None

    def __post_init__(self):
        if self.edge not in EDGE_POLICIES:
            raise DomainError(f"edge policy must be one of {EDGE_POLICIES}")
        if self.method not in ("branching", "thinning"):
            raise DomainError("method must be 'branching' or 'thinning'")
        if not self.T >= 0:
            raise DomainError("T must be nonnegative")

    @property
    def t_end(self) -> float:
        return self.t_start + self.T

    def field(self):
        f = self.covariate if self.covariate is not None else self.model.covariate_field()
        if f is not None and f.projection is None:
            f = f.bind(self.projection)
        return f


def _uniform_in_window(rng, window: SpatialWindow, n: int):
    xmin, ymin, xmax, ymax = window.bounds
    xs, ys = [], []
    need = n
    while need > 0:
        m = max(int(need * 1.3) + 8, 16)
        x = rng.uniform(xmin, xmax, m)
        y = rng.uniform(ymin, ymax, m)
        ok = window.contains(x, y)
        xs.append(x[ok][:need])
        ys.append(y[ok][:need])
        need -= int(min(ok.sum(), need))
    return np.concatenate(xs) if xs else np.empty(0), np.concatenate(ys) if ys else np.empty(0)


def _mu_bound(bg: BackgroundSpec, cfg: SimConfig, field_) -> float:
    if bg.variant == "constant":
        return max(bg.mu0, 0.0)
    if bg.variant == "time_linear":
        ends = bg.mu0 + bg.mu1 * bg.standardized_time(np.array([cfg.t_start, cfg.t_end]))
        return max(float(ends.max()), 0.0)
    vals = bg.from_covariate_values(np.array([field_.values.min(), field_.values.max()]))
    return max(float(vals.max()), 0.0)


def _mu_at(bg: BackgroundSpec, x, y, t, field_):
    if bg.variant == "constant":
        return np.full(np.shape(x), bg.mu0)
    if bg.variant == "time_linear":
        return bg.mu0 + bg.mu1 * bg.standardized_time(t)
    return bg.from_covariate_values(field_.value_at_xy(x, y, t))


def _immigrants(rng, cfg: SimConfig, field_):
    """Background events of every mark by thinning a homogeneous process."""
    area = cfg.window.area
    ts, xs, ys, ms = [], [], [], []
    for k, bg in enumerate(cfg.model.backgrounds):
        bound = _mu_bound(bg, cfg, field_)
        n = rng.poisson(bound * area * cfg.T) if bound > 0 else 0
        if n == 0:
            continue
        x, y = _uniform_in_window(rng, cfg.window, n)
        t = rng.uniform(cfg.t_start, cfg.t_end, n)
        keep = rng.uniform(0.0, bound, n) < _mu_at(bg, x, y, t, field_)
        ts.append(t[keep])
        xs.append(x[keep])
        ys.append(y[keep])
        ms.append(np.full(int(keep.sum()), k))
    if not ts:
        return np.empty(0), np.empty(0), np.empty(0), np.empty(0, dtype=np.int64)
    return np.concatenate(ts), np.concatenate(xs), np.concatenate(ys), np.concatenate(ms)


def _draw_lags(rng, p: KernelParams, n: int):
    if p.temporal == "exponential":
        dt = rng.exponential(p.beta, n)
    else:
        dt = np.abs(rng.normal(0.0, p.beta, n))
    sd = p.phi * np.sqrt(dispersion(dt, p.beta, p.gamma)) if p.nonseparable else np.full(n, p.phi)
    dx = p.shift[0] + sd * rng.normal(size=n)
    dy = p.shift[1] + sd * rng.normal(size=n)
    return dt, dx, dy


def _make_catalog(cfg: SimConfig, t, x, y, m):
    t, x, y, m = (np.asarray(a) for a in (t, x, y, m))
    T, window, check = cfg.T, cfg.window, True
    if cfg.edge == "none" and t.size:
        T = max(cfg.T, float(np.nextafter(t.max() - cfg.t_start, np.inf)))
        while cfg.t_start + T <= t.max():
            T = float(np.nextafter(T, np.inf))
        xmin, ymin, xmax, ymax = cfg.window.bounds
        window = SpatialWindow.from_bbox(min(xmin, x.min()), max(xmax, x.max()),
                                         min(ymin, y.min()), max(ymax, y.max()))
        check = False
    k = cfg.model.n_marks
    return EventCatalog.from_arrays(t, x, y, m, k, T, window, projection=cfg.projection,
                                    t_start=cfg.t_start, mark_names=cfg.mark_names,
                                    check_window=check)


def _check_model(cfg: SimConfig, field_):
    u_max = 1.0
    if field_ is not None:
        u_max = max(float(field_.values.max()), 0.0)
    cfg.model.check_stability(u_max)


def simulate_branching(cfg: SimConfig) -> EventCatalog:
    """Cluster-representation sampler (not for covariate-dependent kernels)."""
    field_ = cfg.field()
    _check_model(cfg, field_)
    if any(p.nonstationary for _, p in cfg.model.kernels.items()):
        raise DomainError("covariate-dependent kernels are simulated by thinning only")
    rng = np.random.default_rng(cfg.seed)
    t, x, y, m = _immigrants(rng, cfg, field_)
    all_t, all_x, all_y, all_m = [t], [x], [y], [m]
    total = t.size
    gen = (t, x, y, m)
    while gen[0].size:
        pt, px, py, pm = gen
        nt, nx, ny, nm = [], [], [], []
        for (src, tgt), p in cfg.model.kernels.items():
            idx = np.flatnonzero(pm == src)
            if idx.size == 0 or p.alpha <= 0:
                continue
            counts = rng.poisson(p.alpha, idx.size)
            parent = np.repeat(idx, counts)
            if parent.size == 0:
                continue
            dt, dx, dy = _draw_lags(rng, p, parent.size)
            ct, cx, cy = pt[parent] + dt, px[parent] + dx, py[parent] + dy
            if cfg.edge == "clip":
                keep = (ct < cfg.t_end) & cfg.window.contains(cx, cy)
                ct, cx, cy = ct[keep], cx[keep], cy[keep]
            nt.append(ct)
            nx.append(cx)
            ny.append(cy)
            nm.append(np.full(ct.size, tgt))
        if not nt:
            break
        gen = tuple(np.concatenate(a) for a in (nt, nx, ny, nm))
        total += gen[0].size
        if total > cfg.max_events:
            raise SimulationError(f"more than {cfg.max_events} events; model too close to critical")
        all_t.append(gen[0])
        all_x.append(gen[1])
        all_y.append(gen[2])
        all_m.append(gen[3])
    return _make_catalog(cfg, *(np.concatenate(a) for a in (all_t, all_x, all_y, all_m)))


def simulate_thinning(cfg: SimConfig, horizon: float = 20.0) -> EventCatalog:
    """Sequential thinning over time with one candidate stream per component.

    The dominating rate is the sum of the background bounds and, for each
    past event and target mark, the kernel's temporal density at the current
    time (nonincreasing in lag) times its productivity bound.  Sources older
    than ``horizon`` times the largest temporal scale are dropped.
    """
    field_ = cfg.field()
    _check_model(cfg, field_)
    model = cfg.model
    k = model.n_marks
    rng = np.random.default_rng(cfg.seed)
    area = cfg.window.area
    bg_bounds = np.array([_mu_bound(bg, cfg, field_) * area for bg in model.backgrounds])
    entries = list(model.kernels.items())
    H = horizon * model.kernels.max_beta() if entries else 0.0

    ns_info = {}
    if field_ is not None:
        u_lo, u_hi = float(field_.values.min()), float(field_.values.max())
    for (src, tgt), p in entries:
        if p.nonstationary:
            if field_ is None:
                raise DomainError("covariate-dependent kernel needs a covariate")
            lo, hi = sorted(p.phi_range(np.array([u_lo, u_hi])))
            if lo <= 0:
                raise DomainError("phi0 + phi1*u is not positive over the covariate range")
            a_max = p.alpha * max(abs(u_lo), abs(u_hi)) if p.vary_alpha else p.alpha
            ns_info[(src, tgt)] = (lo, hi, a_max)

    ev_t, ev_x, ev_y, ev_m, ev_u = [], [], [], [], []
    t_cur = cfg.t_start
    while True:
        # rates of every (source, target) component at t_cur
        arr_t = np.asarray(ev_t)
        start = np.searchsorted(arr_t, t_cur - H, side="left") if H > 0 else len(ev_t)
        rows = []
        for e, ((src, tgt), p) in enumerate(entries):
            idx = np.arange(start, len(ev_t))
            idx = idx[np.asarray(ev_m, dtype=np.int64)[idx] == src] if idx.size else idx
            if idx.size == 0:
                continue
            dens = temporal_density(t_cur - arr_t[idx], p.beta, p.temporal)
            if p.nonstationary:
                lo, hi, a_max = ns_info[(src, tgt)]
                scale = a_max * (hi / lo) ** 2
            else:
                scale = max(p.alpha, 0.0)
            rows.append((e, idx, dens * scale))
        trig_total = sum(float(r[2].sum()) for r in rows)
        bound = float(bg_bounds.sum()) + trig_total
        if bound <= 0:
            break
        t_new = t_cur + rng.exponential(1.0 / bound)
        if t_new >= cfg.t_end:
            break
        pick = rng.uniform(0.0, bound)
        t_prev, t_cur = t_cur, t_new
        if pick < bg_bounds.sum() or not rows:
            kk = int(np.searchsorted(np.cumsum(bg_bounds), pick, side="right"))
            kk = min(kk, k - 1)
            bg = model.backgrounds[kk]
            x, y = _uniform_in_window(rng, cfg.window, 1)
            mu_b = _mu_bound(bg, cfg, field_)
            if rng.uniform(0.0, mu_b) < float(_mu_at(bg, x, y, t_cur, field_)[0]):
                _append(cfg, field_, ev_t, ev_x, ev_y, ev_m, ev_u, t_cur, x[0], y[0], kk)
            continue
        pick -= bg_bounds.sum()
        for e, idx, w in rows:
            tot = float(w.sum())
            if pick < tot or e == rows[-1][0]:
                j = int(min(np.searchsorted(np.cumsum(w), pick, side="right"), idx.size - 1))
                break
            pick -= tot
        (src, tgt), p = entries[e]
        i = int(idx[j])
        d_prev = t_prev - ev_t[i]
        d_new = t_cur - ev_t[i]
        ratio = temporal_density(d_new, p.beta, p.temporal) / temporal_density(d_prev, p.beta, p.temporal)
        if rng.uniform() >= ratio:
            continue
        if p.nonstationary:
            lo, hi, a_max = ns_info[(src, tgt)]
            x = ev_x[i] + hi * rng.normal()
            y = ev_y[i] + hi * rng.normal()
            if not cfg.window.contains(x, y):
                continue
            u_t = float(field_.value_at_xy(x, y, t_cur))
            ubar = 0.5 * (ev_u[i] + u_t)
            phi = float(p.phi_range(ubar))
            a = p.alpha * ubar if p.vary_alpha else p.alpha
            r2 = (x - ev_x[i]) ** 2 + (y - ev_y[i]) ** 2
            f = (a / phi ** 2) * np.exp(-r2 / (2 * phi ** 2))
            q = (a_max / hi ** 2) * np.exp(-r2 / (2 * hi ** 2)) * (hi / lo) ** 2
            if rng.uniform() * q >= f:
                continue
        else:
            sd = p.phi * np.sqrt(dispersion(d_new, p.beta, p.gamma)) if p.nonseparable else p.phi
            x = ev_x[i] + p.shift[0] + sd * rng.normal()
            y = ev_y[i] + p.shift[1] + sd * rng.normal()
            if cfg.edge == "clip" and not cfg.window.contains(x, y):
                continue
        _append(cfg, field_, ev_t, ev_x, ev_y, ev_m, ev_u, t_cur, float(x), float(y), tgt)
        if len(ev_t) > cfg.max_events:
            raise SimulationError(f"more than {cfg.max_events} events; intensity bound overflow")
    return _make_catalog(cfg, ev_t, ev_x, ev_y, np.asarray(ev_m, dtype=np.int64))


def _append(cfg, field_, ev_t, ev_x, ev_y, ev_m, ev_u, t, x, y, mark):
    ev_t.append(float(t))
    ev_x.append(float(x))
    ev_y.append(float(y))
    ev_m.append(int(mark))
    if field_ is not None:
        ev_u.append(float(field_.value_at_xy(x, y, t)))
    else:
        ev_u.append(0.0)


def simulate(cfg: SimConfig) -> EventCatalog:
    if cfg.method == "thinning":
        return simulate_thinning(cfg)
    return simulate_branching(cfg)
