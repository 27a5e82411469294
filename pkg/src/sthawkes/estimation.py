"""Maximum-likelihood fitting, numeric-Hessian standard errors and model comparison."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.optimize import brentq, minimize

from . import __version__
from .domain import EventCatalog, QuadratureGrid
from .errors import DomainError, OptimizerError, StabilityError
from .likelihood import LikelihoodEvaluator
from .model import ModelSpec, ModelTemplate, get_preset

_BAD = 1e12          # objective value for infeasible or non-finite points
_PENALTY = 1e6       # per unit of negative background mass


def information_criteria(loglik: float, k: int, n: int):
    """(AIC, BIC, HQ) = -2L + 2k, -2L + k ln n, -2L + 2k ln ln n."""
    if n < 3:
        raise DomainError("HQ needs n >= 3")
    base = -2.0 * loglik
    return base + 2.0 * k, base + k * math.log(n), base + 2.0 * k * math.log(math.log(n))


@dataclass
class FitOptions:
    n_starts: int = 3
    seed: int = 0
    jitter_sd: float = 0.5
    max_rounds: int = 8
    tol: float = 1e-6
    nm_maxfev: int = 4000
    bfgs_maxiter: int = 200
    grad_step: float = 1e-4
    hess_step: float = 1e-3
    step_floor: float = 1e-6
    horizon: object = "auto"
    compute_ses: bool = True
    init: Optional[Dict[str, float]] = None
    extra_starts: List[Dict[str, float]] = field(default_factory=list)
    lag_start: bool = True

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["extra_starts"] = [dict(s) for s in self.extra_starts]
        return d


@dataclass
class FitResult:
    model_name: str
    names: List[str]
    estimates: Dict[str, float]
    ses: Dict[str, Optional[float]]
    loglik: float
    k: int
    n: int
    aic: float
    bic: float
    hq: float
    converged: bool
    hessian_negative_definite: bool
    boundary_flags: List[str]
    trace: List[dict]
    catalog_id: str = ""
    grid: dict = field(default_factory=dict)
    profiled: List[str] = field(default_factory=list)
    t_scale: Optional[float] = None
    t_origin: float = 0.0
    version: str = __version__
    template: Optional[ModelTemplate] = field(default=None, repr=False, compare=False)

    def criteria_consistent(self) -> bool:
        return (self.aic, self.bic, self.hq) == information_criteria(self.loglik, self.k, self.n)

    def model(self, covariate=None) -> ModelSpec:
        tpl = self.template or get_preset(self.model_name)
        return tpl.build(self.estimates, covariate, self.t_scale, self.t_origin)

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "template"}
        d["ses"] = {k: (None if v is None or not np.isfinite(v) else float(v))
                    for k, v in self.ses.items()}
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        d = dict(d)
        d.pop("template", None)
        return cls(**d)

    def table_rows(self):
        """(name, estimate, se) rows in conventional parameter order."""
        return [(n, self.estimates[n], self.ses.get(n)) for n in self.names]


# objective -------------------------------------------------------------------

def _profile_mu(S: np.ndarray, area_time: float) -> float:
    """Root of sum 1/(mu + S_j) = A T; zero when the boundary is optimal."""
    n = S.size
    if n == 0:
        return 0.0
    hi = n / area_time
    if np.any(S <= 0):
        lo_val = np.inf
    else:
        with np.errstate(over="ignore"):      # tiny S gives inf, which is the right answer
            lo_val = float(np.sum(1.0 / S)) - area_time
    if lo_val <= 0:
        return 0.0
    f = lambda mu: float(np.sum(1.0 / (mu + S))) - area_time
    lo = hi * 1e-12
    if f(lo) <= 0:
        return lo
    return brentq(f, lo, hi, xtol=1e-14 * hi, rtol=1e-14)


class Objective:
    """Log-likelihood of a template as a function of natural or unconstrained values."""

    def __init__(self, template: ModelTemplate, catalog: EventCatalog, grid: QuadratureGrid,
                 covariate=None, horizon="auto"):
        self.template = template
        self.catalog = catalog
        self.ev = LikelihoodEvaluator(catalog, grid, covariate=covariate)
        self.covariate = self.ev._covariate
        self.u_range = self.ev.u_range if self.covariate is not None else (0.0, 1.0)
        self.u_max = max(self.u_range[1], 0.0) if self.covariate is not None else 1.0
        self.layer = template.layer(self.u_range)
        self.horizon = horizon
        self.t_scale = float(grid.t_edges[-1] - grid.t_edges[0])
        self.t_origin = float(grid.t_edges[0])
        self.n_evals = 0

    def build(self, natural) -> ModelSpec:
        return self.template.build(natural, self.covariate, self.t_scale, self.t_origin)

    def complete(self, natural: Dict[str, float]):
        """Fill profiled background levels in place.

        Returns the triggering sums at the events (reused by the caller) or
        None when nothing is profiled.
        """
        if not self.template.profile_background:
            return None
        probe = dict(natural)
        for name in self.template.profiled_names:
            probe.setdefault(name, 1.0)
        S = self.ev.trigger_sums(self.build(probe), self.horizon)
        for k, slot in enumerate(self.template.backgrounds):
            m = self.catalog.marks == k
            natural[slot.mu0] = _profile_mu(S[m], self.ev.area_time)
        return S

    def loglik_natural(self, natural: Dict[str, float], penalize: bool = True,
                       trigger=None) -> float:
        self.n_evals += 1
        try:
            model = self.build(natural)
        except DomainError:
            return -np.inf
        if penalize and not self._stable(model):
            return -np.inf
        rep = self.ev.evaluate(model, self.horizon, trigger)
        if not rep.finite:
            return -np.inf
        return rep.loglik - (_PENALTY * rep.negative_mu_mass if penalize else 0.0)

    def _stable(self, model: ModelSpec) -> bool:
        try:
            model.check_stability(self.u_max)
        except (StabilityError, DomainError):
            return False
        return True

    def natural_from_z(self, z) -> Dict[str, float]:
        nat = self.layer.from_unconstrained(z)
        self.complete(nat)
        return nat

    def __call__(self, z) -> float:
        """Negative log-likelihood on the unconstrained scale (for minimizers)."""
        try:
            nat = self.layer.from_unconstrained(z)
            S = self.complete(nat)
        except (DomainError, ValueError):
            return _BAD
        ll = self.loglik_natural(nat, trigger=S)
        return -ll if np.isfinite(ll) else _BAD


def central_gradient(f: Callable, z, rel=1e-4, floor=1e-6):
    z = np.asarray(z, dtype=float)
    g = np.empty_like(z)
    for i in range(z.size):
        h = max(rel * abs(z[i]), floor)
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        g[i] = (f(zp) - f(zm)) / (2.0 * h)
    return g


def numeric_hessian(f: Callable, x, rel=1e-3, floor=1e-6):
    """Central finite-difference Hessian of ``f`` at ``x``."""
    x = np.asarray(x, dtype=float)
    p = x.size
    h = np.maximum(rel * np.abs(x), floor)
    f0 = f(x)
    H = np.empty((p, p))
    for i in range(p):
        e = np.zeros(p)
        e[i] = h[i]
        H[i, i] = (f(x + e) - 2.0 * f0 + f(x - e)) / (h[i] * h[i])
    for i in range(p):
        for j in range(i + 1, p):
            ei = np.zeros(p)
            ej = np.zeros(p)
            ei[i] = h[i]
            ej[j] = h[j]
            v = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4.0 * h[i] * h[j])
            H[i, j] = H[j, i] = v
    return H


def ses_from_hessian(H):
    """SEs from the inverse negative Hessian; (None, False) when it is not negative definite."""
    H = np.asarray(H, dtype=float)
    if not np.all(np.isfinite(H)):
        return None, False
    try:
        w = np.linalg.eigvalsh(0.5 * (H + H.T))
    except np.linalg.LinAlgError:
        return None, False
    if not np.all(w < 0):
        return None, False
    cov = np.linalg.inv(-H)
    d = np.diag(cov)
    if np.any(d < 0):
        return None, False
    return np.sqrt(d), True


def asymptotic_ses(objective: Objective, natural: Dict[str, float], rel=1e-3, floor=1e-6):
    """Standard errors from the natural-scale Hessian of the log-likelihood.

    Profiled background levels are included as ordinary parameters.
    Returns (names, ses or None, negative_definite flag, Hessian).
    """
    names = objective.template.natural_names
    x0 = np.array([natural[n] for n in names])

    def f(x):
        ll = objective.loglik_natural(dict(zip(names, x)), penalize=False)
        return ll if np.isfinite(ll) else -_BAD

    H = numeric_hessian(f, x0, rel, floor)
    se, ok = ses_from_hessian(H)
    return names, se, ok, H


# fitting ---------------------------------------------------------------------

def _optimize_from(obj: Objective, z0, opts: FitOptions):
    z = np.asarray(z0, dtype=float)
    best = obj(z)
    rounds = []
    grad = lambda v: central_gradient(obj, v, opts.grad_step, opts.step_floor)
    for r in range(opts.max_rounds):
        start_val = best
        n0 = obj.n_evals
        res = minimize(obj, z, method="Nelder-Mead",
                       options={"maxfev": opts.nm_maxfev if r == 0 else
                                min(opts.nm_maxfev, 60 * z.size), "xatol": 1e-6, "fatol": 1e-8,
                                "adaptive": z.size > 4})
        if res.fun <= best:
            z, best = res.x, float(res.fun)
        n1 = obj.n_evals
        res2 = minimize(obj, z, jac=grad, method="BFGS",
                        options={"maxiter": opts.bfgs_maxiter, "gtol": 1e-5})
        if np.isfinite(res2.fun) and res2.fun <= best:
            z, best = res2.x, float(res2.fun)
        rounds.append({"round": r, "negloglik": best,
                       "nm_status": int(res.status), "nm_evals": n1 - n0,
                       "bfgs_status": int(res2.status), "bfgs_evals": obj.n_evals - n1})
        if start_val - best < opts.tol or res2.status == 0:
            break
    return z, best, rounds


def _lag_start(template: ModelTemplate, catalog: EventCatalog, base: Dict[str, float],
               window: float = 30.0, bins: int = 40):
    """Initial shift from the peak of cross-mark displacements of nearby pairs.

    Displacements from mark-0 events to mark-1 events up to ``window`` days
    later are histogrammed on a square of half-width half the shorter window
    side; the smoothed peak is refined by the median of displacements within
    one bin of it.  Unrelated pairs spread evenly and do not move the peak.
    """
    shifted = [s for s in template.kernels if s.shift]
    if not shifted or catalog.n_marks != 2:
        return None
    t, x, y, m = catalog.t, catalog.x, catalog.y, catalog.marks
    i0 = np.flatnonzero(m == 0)
    i1 = np.flatnonzero(m == 1)
    if i0.size == 0 or i1.size == 0:
        return None
    dxs, dys = [], []
    for j in i1:
        src = i0[(t[i0] < t[j]) & (t[i0] > t[j] - window)]
        dxs.append(x[j] - x[src])
        dys.append(y[j] - y[src])
    dx = np.concatenate(dxs)
    dy = np.concatenate(dys)
    if dx.size == 0:
        return None
    xmin, ymin, xmax, ymax = catalog.window.bounds
    half = 0.5 * min(xmax - xmin, ymax - ymin)
    H, xe, ye = np.histogram2d(dx, dy, bins=bins, range=[[-half, half], [-half, half]])
    kx, ky = np.unravel_index(np.argmax(uniform_filter(H, 3, mode="constant")), H.shape)
    cx, cy = 0.5 * (xe[kx] + xe[kx + 1]), 0.5 * (ye[ky] + ye[ky + 1])
    width = xe[1] - xe[0]
    near = np.hypot(dx - cx, dy - cy) < width
    if np.any(near):
        cx, cy = float(np.median(dx[near])), float(np.median(dy[near]))
    start = dict(base)
    slot = [s for s in shifted if s.src == 0][0]
    sign = slot.shift_sign
    start[slot.shift[0]] = sign * cx
    start[slot.shift[1]] = sign * cy
    return start


def fit(template, catalog: EventCatalog, grid: QuadratureGrid,
        options: Optional[FitOptions] = None, covariate=None) -> FitResult:
    """Maximize the log-likelihood of ``template`` (a ModelTemplate or preset name)."""
    opts = options or FitOptions()
    if isinstance(template, str):
        template = get_preset(template)
    if len(catalog) == 0:
        raise DomainError("cannot fit an empty catalog")
    if template.n_marks == 1 and catalog.n_marks > 1:
        catalog = catalog.merged()
    if template.n_marks != catalog.n_marks:
        raise DomainError(f"{template.name} needs {template.n_marks} marks, catalog has {catalog.n_marks}")
    obj = Objective(template, catalog, grid, covariate, opts.horizon)
    base = template.default_initial(catalog, obj.ev.area_time, obj.u_range)
    if opts.init:
        base.update(opts.init)
    starts = [base]
    if opts.lag_start:
        lag = _lag_start(template, catalog, base)
        if lag is not None:
            starts.append(lag)
    for s in opts.extra_starts:
        st = dict(base)
        st.update(s)
        starts.append(st)
    z_starts = [obj.layer.to_unconstrained(s, clamp=True) for s in starts]
    rng = np.random.default_rng(opts.seed)
    while len(z_starts) < max(opts.n_starts, 1):
        z_starts.append(z_starts[0] + rng.normal(0.0, opts.jitter_sd, z_starts[0].size))

    trace = []
    best_z, best_val = None, np.inf
    for i, z0 in enumerate(z_starts):
        if obj(z0) >= _BAD:
            trace.append({"start": i, "status": "infeasible start"})
            continue
        before = obj.n_evals
        z, val, rounds = _optimize_from(obj, z0, opts)
        trace.append({"start": i, "negloglik": val, "n_evals": obj.n_evals - before,
                      "rounds": rounds})
        if val < best_val:
            best_z, best_val = z, val
    if best_z is None or not best_val < _BAD:
        raise OptimizerError("every start failed", trace=trace)

    natural = obj.natural_from_z(best_z)
    loglik = obj.loglik_natural(natural)
    names = template.natural_names
    ses: Dict[str, Optional[float]] = {n: None for n in names}
    nd = False
    if opts.compute_ses:
        _, se, nd, _ = asymptotic_ses(obj, natural, opts.hess_step, opts.step_floor)
        if se is not None:
            ses = dict(zip(names, (float(v) for v in se)))
    flags = obj.layer.boundary_flags(natural)
    flags += [n for n in template.profiled_names if natural[n] <= 0]
    k, n = template.k, len(catalog)
    aic, bic, hq = information_criteria(loglik, k, n)
    converged = bool(np.isfinite(loglik)) and (nd or not opts.compute_ses)
    return FitResult(template.name, names, {n_: float(natural[n_]) for n_ in names}, ses,
                     float(loglik), k, n, aic, bic, hq, converged, nd, flags, trace,
                     catalog.fingerprint(), grid.describe(), template.profiled_names,
                     obj.t_scale, obj.t_origin, template=template)


# comparison --------------------------------------------------------------------

@dataclass
class ModelScore:
    """Minimal record for comparing reported or stored fits."""
    model_name: str
    loglik: float
    k: int
    n: int
    catalog_id: str = ""


def compare_models(fits: Sequence) -> List[dict]:
    """Rank fits by AIC with a best flag per criterion.

    Every fit must come from the same catalog (same event count and, when
    recorded, the same catalog fingerprint).
    """
    if not fits:
        return []
    ns = {f.n for f in fits}
    ids = {getattr(f, "catalog_id", "") for f in fits} - {""}
    if len(ns) > 1 or len(ids) > 1:
        raise DomainError("fits come from different catalogs")
    rows = []
    for f in fits:
        aic, bic, hq = information_criteria(f.loglik, f.k, f.n)
        rows.append({"model": f.model_name, "loglik": f.loglik, "k": f.k, "n": f.n,
                     "aic": aic, "bic": bic, "hq": hq})
    for crit in ("aic", "bic", "hq"):
        low = min(r[crit] for r in rows)
        for r in rows:
            r[f"best_{crit}"] = r[crit] == low
    rows.sort(key=lambda r: (r["aic"], r["k"]))
    for i, r in enumerate(rows, 1):
        r["rank"] = i
    return rows
