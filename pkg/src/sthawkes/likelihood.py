"""Conditional intensity, log-likelihood, expected counts and holdout scores.

The log-likelihood is the event term (sum of log intensities) minus the
space-time integral of the intensity over the observation window.  The
integral is a sum over the clipped spatial lattice of ``QuadratureGrid``:

* background: cell area times mu at the cell centre, summed over the
  temporal grid (midpoint rule; exact for constant and time-linear mu);
* triggering: for each source event, the kernel's temporal mass over the
  window (closed form) times the Gaussian mass of each lattice cell
  (closed form, scaled by the cell's in-window fraction).  Kernels whose
  spatial spread changes with lag hold the spread fixed on ``n_lag`` lag
  bins of equal temporal mass; covariate-dependent kernels hold it fixed
  within each covariate layer.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.special import ndtr

from .background import BackgroundSpec, eval_mu
from .domain import EventCatalog, QuadratureGrid
from .errors import DomainError
from .kernels import (KernelParams, density, dispersion, kernel_sum,
                      resolve_horizon, temporal_cdf, temporal_quantile)
from .model import ModelSpec


SPATIAL_CUTOFF = 80.0


@dataclass
class LikelihoodReport:
    loglik: float
    event_term: float
    integral_term: float
    log_intensities: np.ndarray
    background_integral: np.ndarray
    trigger_integral: np.ndarray
    negative_mu_mass: float = 0.0
    grid: dict = field(default_factory=dict)
    diagnostic: str = ""

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.loglik))

    def to_dict(self) -> dict:
        return {
            "loglik": self.loglik, "event_term": self.event_term,
            "integral_term": self.integral_term,
            "background_integral": self.background_integral.tolist(),
            "trigger_integral": self.trigger_integral.tolist(),
            "negative_mu_mass": self.negative_mu_mass, "grid": self.grid,
            "diagnostic": self.diagnostic,
            "log_intensities": [float(v) for v in self.log_intensities],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


@dataclass
class _Block:
    dt: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    tgt: np.ndarray
    src: np.ndarray
    r: np.ndarray            # source-target distance; blocks are sorted by it
    r2: Optional[np.ndarray] = None
    dt_max: float = 0.0

    def __post_init__(self):
        self.dt_max = float(self.dt.max()) if self.dt.size else 0.0


def gaussian_cell_mass(cx, cy, sigma, grid: QuadratureGrid):
    """Mass of isotropic Gaussians N((cx, cy), sigma^2 I) over the clipped lattice.

    ``cx``, ``cy`` have shape (n,); ``sigma`` is a scalar or shape (n,).
    """
    cx = np.asarray(cx, dtype=float)
    cy = np.asarray(cy, dtype=float)
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), cx.shape)[:, None]
    if grid.is_full:
        xe = grid.x_edges[[0, -1]]
        ye = grid.y_edges[[0, -1]]
        px = np.diff(ndtr((xe[None, :] - cx[:, None]) / sig), axis=1)[:, 0]
        py = np.diff(ndtr((ye[None, :] - cy[:, None]) / sig), axis=1)[:, 0]
        return px * py
    px = np.diff(ndtr((grid.x_edges[None, :] - cx[:, None]) / sig), axis=1)
    py = np.diff(ndtr((grid.y_edges[None, :] - cy[:, None]) / sig), axis=1)
    return np.einsum("iy,iy->i", px @ grid.cell_fraction, py)


class LikelihoodEvaluator:
    """Cached pair structure for repeated likelihood evaluations.

    ``history`` holds events before the catalog's period that act as
    sources only (holdout evaluation).  ``max_lag`` drops pairs with larger
    temporal lags when the cache is built.
    """

    def __init__(self, catalog: EventCatalog, grid: QuadratureGrid,
                 history: Optional[EventCatalog] = None, covariate=None,
                 max_lag: Optional[float] = None):
        self.catalog = catalog
        self.grid = grid
        self.k = catalog.n_marks
        self.n = len(catalog)
        self.t_start = float(grid.t_edges[0])
        self.t_end = float(grid.t_edges[-1])
        if history is not None and len(history):
            if history.n_marks != catalog.n_marks:
                raise DomainError("history and catalog disagree on marks")
            if history.t[-1] >= catalog.t_start:
                raise DomainError("history must precede the evaluation window")
            hist = history
        else:
            hist = None
        self.n_hist = len(hist) if hist is not None else 0
        cat = lambda name: np.concatenate(
            [getattr(hist, name), getattr(catalog, name)]) if hist is not None else getattr(catalog, name)
        self.src_t, self.src_x, self.src_y = cat("t"), cat("x"), cat("y")
        self.src_marks = cat("marks")
        self.src_lon, self.src_lat = cat("lon"), cat("lat")
        self._build_pairs(max_lag)
        self._covariate = None
        if covariate is not None:
            self.attach_covariate(covariate)
        self._node_x, self._node_y = grid.spatial_nodes
        self._node_area = grid.cell_areas
        self._tnodes = grid.time_nodes
        self._tsteps = grid.time_steps
        self.area_time = float(self._node_area.sum() * self._tsteps.sum())

    # cache construction ------------------------------------------------------
    def _build_pairs(self, max_lag):
        ts = self.src_t
        tt = self.catalog.t
        counts = np.searchsorted(ts, tt, side="left")
        if max_lag is not None:
            lo = np.searchsorted(ts, tt - max_lag, side="left")
        else:
            lo = np.zeros_like(counts)
        c = counts - lo
        total = int(c.sum())
        tgt = np.repeat(np.arange(self.n), c)
        offs = np.repeat(lo - (np.cumsum(c) - c), c)
        src = np.arange(total) + offs
        dt = tt[tgt] - ts[src]
        dx = self.catalog.x[tgt] - self.src_x[src]
        dy = self.catalog.y[tgt] - self.src_y[src]
        sm = self.src_marks[src]
        tm = self.catalog.marks[tgt]
        self.n_pairs = total
        self.blocks: Dict[tuple, _Block] = {}
        for a in range(self.k):
            for b in range(self.k):
                sel = np.flatnonzero((sm == a) & (tm == b))
                r = np.hypot(dx[sel], dy[sel])
                order = sel[np.argsort(r, kind="stable")]
                self.blocks[(a, b)] = _Block(dt[order], dx[order], dy[order],
                                             tgt[order], src[order], np.sort(r, kind="stable"))

    def attach_covariate(self, field):
        """Precompute covariate values at events, sources and lattice nodes."""
        if field.projection is None:
            field = field.bind(self.catalog.projection)
        self._covariate = field
        self.X_events = field.value_at(self.catalog.lon, self.catalog.lat, self.catalog.t)
        self.X_sources = field.value_at(self.src_lon, self.src_lat, self.src_t)
        nx, ny = self.grid.spatial_nodes
        nlon, nlat = field.projection.inverse(nx, ny)
        L = field.n_layers
        self.X_nodes = np.empty((nx.size, L))
        for layer in range(L):
            tt = 0.5 * (field.time_edges[layer] + field.time_edges[layer + 1])
            self.X_nodes[:, layer] = field.value_at(nlon, nlat, np.full(nx.size, tt))
        lay = field.layer_index(self.grid.time_nodes)
        self.layer_time = np.bincount(lay, weights=self.grid.time_steps, minlength=L)
        self.X_tnode_layer = lay
        edges = np.asarray(field.time_edges, dtype=float).copy()
        edges[0], edges[-1] = -np.inf, np.inf
        self.layer_edges = edges
        all_vals = np.concatenate([self.X_events, self.X_sources, self.X_nodes.ravel()])
        self.u_range = (float(all_vals.min()), float(all_vals.max()))

    def _need_covariate(self):
        if self._covariate is None:
            raise DomainError("model needs a covariate but none is attached")

    # background ---------------------------------------------------------------
    def _mu_events(self, model: ModelSpec):
        mu = np.empty(self.n)
        for k, bg in enumerate(model.backgrounds):
            m = self.catalog.marks == k
            if bg.variant == "covariate_linear":
                self._need_covariate()
                mu[m] = bg.from_covariate_values(self.X_events[m])
            else:
                mu[m] = eval_mu(self.catalog.x[m], self.catalog.y[m], self.catalog.t[m], bg)
        return mu

    def background_integrals(self, model: ModelSpec):
        """Per-mark background integral and the negative-mu mass at nodes."""
        out = np.zeros(self.k)
        neg = 0.0
        A = float(self._node_area.sum())
        for k, bg in enumerate(model.backgrounds):
            if bg.variant == "constant":
                out[k] = bg.mu0 * self.area_time
                neg += max(0.0, -bg.mu0) * self.area_time
            elif bg.variant == "time_linear":
                mu_t = bg.mu0 + bg.mu1 * bg.standardized_time(self._tnodes)
                out[k] = A * float(np.sum(mu_t * self._tsteps))
                neg += A * float(np.sum(np.maximum(-mu_t, 0.0) * self._tsteps))
            else:
                self._need_covariate()
                mu_n = bg.from_covariate_values(self.X_nodes)
                w = np.outer(self._node_area, self.layer_time)
                out[k] = float(np.sum(mu_n * w))
                neg += float(np.sum(np.maximum(-mu_n, 0.0) * w))
        return out, neg

    def background_daily(self, model: ModelSpec, edges):
        """Background integral per mark over consecutive intervals ``edges``.

        Each temporal grid cell's midpoint value is spread uniformly over
        the cell, so the intervals add up to ``background_integrals``.
        """
        te = self.grid.t_edges
        overlap = np.clip(np.minimum(te[None, 1:], edges[1:, None])
                          - np.maximum(te[None, :-1], edges[:-1, None]), 0.0, None)
        frac = overlap / self._tsteps[None, :]
        out = np.zeros((self.k, edges.size - 1))
        for k, bg in enumerate(model.backgrounds):
            if bg.variant == "constant":
                cell = np.full(self._tsteps.size, bg.mu0 * self._node_area.sum()) * self._tsteps
            elif bg.variant == "time_linear":
                mu_t = bg.mu0 + bg.mu1 * bg.standardized_time(self._tnodes)
                cell = mu_t * self._node_area.sum() * self._tsteps
            else:
                self._need_covariate()
                per_layer = self._node_area @ bg.from_covariate_values(self.X_nodes)
                cell = per_layer[self.X_tnode_layer] * self._tsteps
            out[k] = frac @ cell
        return out

    # triggering ---------------------------------------------------------------
    def _pair_values(self, p: KernelParams, blk: _Block, sel):
        dt = blk.dt[sel]
        if p.nonstationary:
            self._need_covariate()
            return density(p, dt, blk.dx[sel], blk.dy[sel], self.X_sources[blk.src[sel]],
                           self.X_events[blk.tgt[sel]])
        if p.shifted:
            ex = blk.dx[sel] - p.shift[0]
            r2 = np.multiply(ex, ex, out=ex)
            ey = blk.dy[sel] - p.shift[1]
            r2 += np.multiply(ey, ey, out=ey)
        else:
            if blk.r2 is None:
                blk.r2 = blk.r * blk.r
            r2 = blk.r2[sel].copy() if isinstance(sel, slice) else blk.r2[sel]
        var = p.phi * p.phi
        if p.temporal == "exponential":
            tpart = dt * (-1.0 / p.beta)
            tnorm = 1.0 / p.beta
        else:
            tpart = np.square(dt) * (-0.5 / (p.beta * p.beta))
            tnorm = np.sqrt(2.0 / np.pi) / p.beta
        if p.nonseparable:
            var = var * dispersion(dt, p.beta, p.gamma)
            r2 /= -2.0 * var
            r2 += tpart
            np.exp(r2, out=r2)
            r2 *= (p.alpha * tnorm / (2.0 * np.pi)) / var
            return r2
        r2 *= -0.5 / var
        r2 += tpart
        np.exp(r2, out=r2)
        r2 *= p.alpha * tnorm / (2.0 * np.pi * var)
        return r2

    def _selection(self, p: KernelParams, blk: _Block, H: float):
        """Pairs that can contribute: lag at most H and distance within reach.

        Pairs whose Gaussian exponent is below -SPATIAL_CUTOFF are skipped
        (relative contribution under exp(-80)).
        """
        n = blk.dt.size
        cut = n
        if not p.nonstationary and n:
            lag = min(H, blk.dt_max)
            sd = p.phi * np.sqrt(float(dispersion(lag, p.beta, p.gamma)))
            reach = float(np.hypot(*p.shift)) + sd * np.sqrt(2.0 * SPATIAL_CUTOFF)
            cut = int(np.searchsorted(blk.r, reach, side="right"))
        if cut == 0:
            return None
        if np.isfinite(H) and H < blk.dt_max:
            idx = np.flatnonzero(blk.dt[:cut] <= H)
            return idx if idx.size else None
        return slice(0, cut)

    def trigger_sums(self, model: ModelSpec, horizon="auto") -> np.ndarray:
        """Triggering part of the intensity at every catalog event."""
        H = resolve_horizon(horizon, model.kernels)
        S = np.zeros(self.n)
        for (a, b), p in model.kernels.items():
            blk = self.blocks[(a, b)]
            sel = self._selection(p, blk, H)
            if sel is None:
                continue
            vals = self._pair_values(p, blk, sel)
            S += np.bincount(blk.tgt[sel], weights=vals, minlength=self.n)
        return S

    def _spatial_bins(self, p: KernelParams, src_idx):
        """Spatial masses M (n_src, K) and absolute time edges for each bin."""
        cx = self.src_x[src_idx] + p.shift[0]
        cy = self.src_y[src_idx] + p.shift[1]
        ts = self.src_t[src_idx]
        if p.nonstationary:
            return self._nonstationary_masses(p, src_idx)
        if not p.nonseparable:
            M = gaussian_cell_mass(cx, cy, p.phi, self.grid)[:, None]
            edges = np.column_stack([ts, np.full(ts.size, np.inf)])
            return p.alpha * M, edges
        K = max(int(self.grid.n_lag), 1)
        u = np.linspace(0.0, 1.0, K + 1)
        tau_mid = temporal_quantile(0.5 * (u[1:] + u[:-1]), p.beta, p.temporal)
        sig = p.phi * np.sqrt(dispersion(tau_mid, p.beta, p.gamma))
        M = np.empty((ts.size, K))
        for j in range(K):
            M[:, j] = gaussian_cell_mass(cx, cy, sig[j], self.grid)
        tau_edges = temporal_quantile(u, p.beta, p.temporal)
        tau_edges[-1] = np.inf
        return p.alpha * M, ts[:, None] + tau_edges[None, :]

    def _nonstationary_masses(self, p: KernelParams, src_idx, chunk: int = 256):
        g = self.grid
        fx = g.x_edges
        fy = g.y_edges
        ix, iy = np.nonzero(g.active)
        frac = g.cell_fraction[ix, iy]
        xlo, xhi = fx[ix], fx[ix + 1]
        ylo, yhi = fy[iy], fy[iy + 1]
        L = self._covariate.n_layers
        lp_src = self.X_sources[src_idx]
        M = np.empty((src_idx.size, L))
        cx_all = self.src_x[src_idx]
        cy_all = self.src_y[src_idx]
        for start in range(0, src_idx.size, chunk):
            sl = slice(start, start + chunk)
            cx, cy = cx_all[sl, None], cy_all[sl, None]
            for layer in range(L):
                ubar = 0.5 * (lp_src[sl, None] + self.X_nodes[None, :, layer])
                sig = p.phi_range(ubar)
                alpha = p.alpha * ubar if p.vary_alpha else p.alpha
                mx = ndtr((xhi - cx) / sig) - ndtr((xlo - cx) / sig)
                my = ndtr((yhi - cy) / sig) - ndtr((ylo - cy) / sig)
                M[sl, layer] = np.sum(alpha * mx * my * frac, axis=1)
        edges = np.broadcast_to(self.layer_edges, (src_idx.size, L + 1))
        return M, edges

    def _interval_masses(self, p, ts, edges, A, B):
        """Temporal mass of each bin restricted to [A, B) and to lags > 0."""
        lo = np.maximum(np.maximum(edges[:, :-1], A), ts[:, None])
        hi = np.minimum(edges[:, 1:], B)
        valid = hi > lo
        d_lo = np.where(valid, lo - ts[:, None], 0.0)
        d_hi = np.where(valid, hi - ts[:, None], 0.0)
        return np.where(valid, temporal_cdf(d_hi, p.beta, p.temporal)
                        - temporal_cdf(d_lo, p.beta, p.temporal), 0.0)

    def trigger_contributions(self, model: ModelSpec, intervals=None):
        """Expected triggered counts by source event and target mark.

        Returns an array (n_intervals, n_sources, k) over the absolute time
        ``intervals`` (default: the whole window).
        """
        if intervals is None:
            intervals = np.array([self.t_start, self.t_end])
        intervals = np.asarray(intervals, dtype=float)
        n_int = intervals.size - 1
        n_src = self.src_t.size
        out = np.zeros((n_int, n_src, self.k))
        for (a, b), p in model.kernels.items():
            src_idx = np.flatnonzero(self.src_marks == a)
            src_idx = src_idx[self.src_t[src_idx] < self.t_end]
            if src_idx.size == 0:
                continue
            M, edges = self._spatial_bins(p, src_idx)
            ts = self.src_t[src_idx]
            for q in range(n_int):
                W = self._interval_masses(p, ts, edges, intervals[q], intervals[q + 1])
                out[q, src_idx, b] += np.sum(M * W, axis=1)
        return out

    # full evaluation ----------------------------------------------------------
    def evaluate(self, model: ModelSpec, horizon="auto", trigger=None) -> LikelihoodReport:
        """Full report; ``trigger`` may carry precomputed ``trigger_sums``."""
        if model.n_marks != self.k:
            raise DomainError("model and catalog disagree on the number of marks")
        mu = self._mu_events(model)
        S = self.trigger_sums(model, horizon) if trigger is None else trigger
        lam = mu + S
        bg, neg = self.background_integrals(model)
        trig = self.trigger_contributions(model)[0].sum(axis=0)
        integral = float(bg.sum() + trig.sum())
        meta = self.grid.describe()
        if np.any(~(lam > 0)):
            bad = int(np.flatnonzero(~(lam > 0))[0])
            return LikelihoodReport(-np.inf, -np.inf, integral, np.full(self.n, np.nan), bg,
                                    trig, neg, meta,
                                    f"nonpositive intensity {lam[bad]:.3g} at event {bad}")
        logs = np.log(lam)
        event_term = float(np.sum(logs))
        return LikelihoodReport(event_term - integral, event_term, integral, logs, bg, trig,
                                neg, meta)


# public functional API ----------------------------------------------------------

def _covariate_for(model: ModelSpec, covariate=None):
    field_ = covariate if covariate is not None else model.covariate_field()
    if model.needs_covariate and field_ is None:
        raise DomainError("model needs a covariate")
    return field_ if model.needs_covariate else None


def conditional_intensity(mark: int, s, t: float, catalog: EventCatalog, model: ModelSpec,
                          horizon="auto") -> float:
    """mu(s, t) plus the triggering sum from catalog events strictly before t."""
    field_ = _covariate_for(model)
    if field_ is not None and field_.projection is None:
        field_ = field_.bind(catalog.projection)
    bg = model.backgrounds[mark]
    X = None
    if bg.variant == "covariate_linear":
        X = field_.value_at_xy(s[0], s[1], t)
    mu = float(eval_mu(s[0], s[1], t, bg, X=X))
    lp = lp_t = None
    if any(p.nonstationary for _, p in model.kernels.items()):
        lp = field_.value_at(catalog.lon, catalog.lat, catalog.t)
        lp_t = field_.value_at_xy(s[0], s[1], t)
    return mu + kernel_sum(mark, s, t, catalog, model.kernels, horizon, lp, lp_t)


def log_likelihood(catalog: EventCatalog, model: ModelSpec, grid: QuadratureGrid,
                   horizon="auto", history: Optional[EventCatalog] = None) -> LikelihoodReport:
    ev = LikelihoodEvaluator(catalog, grid, history=history,
                             covariate=_covariate_for(model))
    return ev.evaluate(model, horizon)


@dataclass
class ExpectedCounts:
    background: np.ndarray
    marginal: np.ndarray
    cross: np.ndarray
    mark_names: tuple = ()

    @property
    def total(self) -> np.ndarray:
        return self.background + self.marginal + self.cross

    def to_dict(self) -> dict:
        names = self.mark_names or tuple(str(i) for i in range(self.background.size))
        return {name: {"background": float(self.background[i]),
                       "marginal_trigger": float(self.marginal[i]),
                       "cross_trigger": float(self.cross[i]),
                       "total": float(self.total[i])}
                for i, name in enumerate(names)}


def _split_components(ev: LikelihoodEvaluator, contrib):
    """contrib: (n_src, k) -> marginal and cross per target mark."""
    k = ev.k
    own = ev.src_marks[:, None] == np.arange(k)[None, :]
    marginal = np.where(own, contrib, 0.0).sum(axis=0)
    cross = np.where(own, 0.0, contrib).sum(axis=0)
    return marginal, cross


def expected_counts(model: ModelSpec, catalog: EventCatalog, grid: QuadratureGrid,
                    history: Optional[EventCatalog] = None) -> ExpectedCounts:
    """Integrated background, same-mark and cross-mark triggered counts per mark."""
    ev = LikelihoodEvaluator(catalog, grid, history=history, covariate=_covariate_for(model))
    bg, _ = ev.background_integrals(model)
    marginal, cross = _split_components(ev, ev.trigger_contributions(model)[0])
    return ExpectedCounts(bg, marginal, cross, catalog.mark_names)


@dataclass
class DailySeries:
    day_edges: np.ndarray
    background: np.ndarray   # (k, n_days)
    marginal: np.ndarray
    cross: np.ndarray

    @property
    def total(self):
        return self.background + self.marginal + self.cross


def expected_daily_series(model: ModelSpec, catalog: EventCatalog, grid: QuadratureGrid,
                          history: Optional[EventCatalog] = None) -> DailySeries:
    """Expected counts per day (bucket floor(t - t_start)) split by component."""
    ev = LikelihoodEvaluator(catalog, grid, history=history, covariate=_covariate_for(model))
    n_days = int(np.ceil(ev.t_end - ev.t_start - 1e-12))
    edges = np.minimum(ev.t_start + np.arange(n_days + 1, dtype=float), ev.t_end)
    bg = ev.background_daily(model, edges)
    contrib = ev.trigger_contributions(model, edges)
    marg = np.empty((ev.k, n_days))
    cross = np.empty((ev.k, n_days))
    for d in range(n_days):
        marg[:, d], cross[:, d] = _split_components(ev, contrib[d])
    return DailySeries(edges, bg, marg, cross)


def holdout_log_likelihood(train: EventCatalog, test: EventCatalog, model: ModelSpec,
                           grid_test: QuadratureGrid, condition_on_history: bool = True,
                           horizon="auto") -> float:
    """Log-likelihood of a later test period with parameters held fixed.

    The intensity conditions on every training event (unless
    ``condition_on_history`` is False) plus earlier test events; the
    integral covers the test period only.
    """
    if test.T == 0:
        return 0.0
    if test.t_start < train.t_end - 1e-9:
        raise DomainError("test window must follow the training window")
    if train.n_marks != test.n_marks:
        raise DomainError("train and test catalogs disagree on marks")
    if abs(grid_test.t_edges[0] - test.t_start) > 1e-9 or abs(grid_test.t_edges[-1] - test.t_end) > 1e-9:
        raise DomainError("grid does not cover the test window")
    history = train if condition_on_history else None
    return log_likelihood(test, model, grid_test, horizon=horizon, history=history).loglik
