"""Parametric spatio-temporal triggering kernels and their matrix assembly.

A kernel maps temporal lag ``dt`` (days) and spatial lag ``(dx, dy)`` (km,
target minus source) to a rate density per km^2 per day.  Every variant is
``alpha`` times a temporal density times a spatial density, so with
constant parameters the space-time integral equals ``alpha``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf, erfinv

from .errors import DomainError, StabilityError

TEMPORAL_FAMILIES = ("exponential", "half-normal")
_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


@dataclass(frozen=True)
class KernelParams:
    """Parameters of one kernel entry.

    ``gamma`` switches on lag-dependent spatial dispersion (nonseparable
    form); ``phi0``/``phi1`` make the spatial range depend on the mean
    covariate value at the two endpoints; ``vary_alpha`` does the same for
    the productivity, with ``alpha`` read as its level ``alpha0``.
    """

    alpha: float
    beta: float
    phi: Optional[float] = None
    shift: tuple = (0.0, 0.0)
    gamma: Optional[float] = None
    temporal: str = "exponential"
    phi0: Optional[float] = None
    phi1: Optional[float] = None
    vary_alpha: bool = False

    def __post_init__(self):
        object.__setattr__(self, "shift", (float(self.shift[0]), float(self.shift[1])))
        if self.temporal not in TEMPORAL_FAMILIES:
            raise DomainError(f"unknown temporal family {self.temporal!r}")
        if not self.beta > 0:
            raise DomainError("beta must be positive")
        if self.varies_phi:
            if self.phi1 is None:
                raise DomainError("phi0 given without phi1")
        elif self.phi is None or not self.phi > 0:
            raise DomainError("phi must be positive")
        if self.gamma is not None and not 0.0 <= self.gamma <= 1.0:
            raise DomainError("gamma must lie in [0, 1]")

    @property
    def varies_phi(self) -> bool:
        return self.phi0 is not None

    @property
    def nonstationary(self) -> bool:
        return self.varies_phi or self.vary_alpha

    @property
    def nonseparable(self) -> bool:
        return self.gamma is not None and self.gamma > 0

    @property
    def shifted(self) -> bool:
        return self.shift != (0.0, 0.0)

    @property
    def kind(self) -> str:
        if self.nonstationary:
            return "g1-nonstationary"
        if self.nonseparable:
            return "g3"
        if self.shifted:
            return "g2"
        return "g1"

    def phi_range(self, u):
        """Spatial range for mean covariate value ``u``."""
        if not self.varies_phi:
            return np.full(np.shape(u), self.phi, dtype=float)
        return self.phi0 + self.phi1 * np.asarray(u, dtype=float)

    def check_phi_positive(self, u_lo: float, u_hi: float):
        """Reject phi0/phi1 pairs that make the range nonpositive on [u_lo, u_hi]."""
        if self.varies_phi and min(self.phi_range(u_lo), self.phi_range(u_hi)) <= 0:
            raise DomainError(
                f"phi0 + phi1*u must be positive for u in [{u_lo:g}, {u_hi:g}]"
            )


# temporal factor ------------------------------------------------------------

def temporal_density(dt, beta, family="exponential"):
    dt = np.asarray(dt, dtype=float)
    if family == "exponential":
        return np.exp(-dt / beta) / beta
    return _SQRT_2_OVER_PI / beta * np.exp(-0.5 * (dt / beta) ** 2)


def temporal_cdf(tau, beta, family="exponential"):
    """Mass of the temporal factor on ``[0, tau]``; ``tau`` may be inf."""
    tau = np.maximum(np.asarray(tau, dtype=float), 0.0)
    if family == "exponential":
        return -np.expm1(-tau / beta)
    return erf(tau / (beta * np.sqrt(2.0)))


def temporal_quantile(u, beta, family="exponential"):
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore"):
        if family == "exponential":
            return -beta * np.log1p(-u)
        return beta * np.sqrt(2.0) * erfinv(u)


def dispersion(dt, beta, gamma):
    """Variance inflation ``(1 + dt/beta)**gamma`` of the nonseparable kernel."""
    if gamma is None or gamma == 0:
        return np.ones(np.shape(dt))
    return (1.0 + np.asarray(dt, dtype=float) / beta) ** gamma


def _gauss2(dx, dy, var):
    return np.exp(-(dx * dx + dy * dy) / (2.0 * var)) / (2.0 * np.pi * var)


def _require_positive_lag(dt):
    dt = np.asarray(dt, dtype=float)
    if np.any(dt <= 0):
        raise DomainError("temporal lag must be positive")
    return dt


# public evaluators ------------------------------------------------------------

def eval_g1(dt, dx, dy, p: KernelParams):
    """Separable kernel: exponential (or half-normal) in time, Gaussian in space."""
    dt = _require_positive_lag(dt)
    return p.alpha * temporal_density(dt, p.beta, p.temporal) * _gauss2(
        np.asarray(dx, float), np.asarray(dy, float), p.phi ** 2)


def eval_g2(dt, dx, dy, p: KernelParams):
    """Separable kernel whose spatial Gaussian is centred on the shift ``m``."""
    dt = _require_positive_lag(dt)
    ex = np.asarray(dx, float) - p.shift[0]
    ey = np.asarray(dy, float) - p.shift[1]
    return p.alpha * temporal_density(dt, p.beta, p.temporal) * _gauss2(ex, ey, p.phi ** 2)


def eval_g3(dt, dx, dy, p: KernelParams):
    """Nonseparable kernel: spatial variance phi^2 (1 + dt/beta)^gamma."""
    dt = _require_positive_lag(dt)
    ex = np.asarray(dx, float) - p.shift[0]
    ey = np.asarray(dy, float) - p.shift[1]
    var = p.phi ** 2 * dispersion(dt, p.beta, p.gamma)
    return p.alpha * temporal_density(dt, p.beta, p.temporal) * _gauss2(ex, ey, var)


def eval_g1_nonstationary(s, t, w, u, p: KernelParams, field):
    """Separable kernel with covariate-dependent productivity and/or range.

    ``s``/``w`` are (x, y) km of the target and source, ``field`` a
    covariate bound to a projection (standardized values).
    """
    dt = _require_positive_lag(np.asarray(t, float) - np.asarray(u, float))
    lp_t = field.value_at_xy(s[0], s[1], t)
    lp_s = field.value_at_xy(w[0], w[1], u)
    return density(p, dt, np.asarray(s[0]) - w[0], np.asarray(s[1]) - w[1],
                   lp_src=lp_s, lp_tgt=lp_t)


def density(p: KernelParams, dt, dx, dy, lp_src=None, lp_tgt=None):
    """Vectorised kernel value; nonpositive lags give 0."""
    dt = np.asarray(dt, dtype=float)
    pos = dt > 0
    dts = np.where(pos, dt, 1.0)
    ex = np.asarray(dx, float) - p.shift[0]
    ey = np.asarray(dy, float) - p.shift[1]
    alpha = p.alpha
    if p.nonstationary:
        ubar = 0.5 * (np.asarray(lp_src, float) + np.asarray(lp_tgt, float))
        if p.vary_alpha:
            alpha = p.alpha * ubar
        var = p.phi_range(ubar) ** 2
    else:
        var = p.phi ** 2
    if p.nonseparable:
        var = var * dispersion(dts, p.beta, p.gamma)
    val = alpha * temporal_density(dts, p.beta, p.temporal) * _gauss2(ex, ey, var)
    return np.where(pos, val, 0.0)


@dataclass(frozen=True)
class KernelMatrix:
    """k x k kernel entries indexed ``[source][target]``; None means zero."""

    entries: tuple

    def __post_init__(self):
        rows = tuple(tuple(r) for r in self.entries)
        k = len(rows)
        if k == 0 or any(len(r) != k for r in rows):
            raise DomainError("kernel matrix must be square and nonempty")
        object.__setattr__(self, "entries", rows)

    @classmethod
    def empty(cls, k: int) -> "KernelMatrix":
        return cls(tuple((None,) * k for _ in range(k)))

    @property
    def k(self) -> int:
        return len(self.entries)

    def __getitem__(self, idx):
        src, tgt = idx
        return self.entries[src][tgt]

    def items(self):
        for i, row in enumerate(self.entries):
            for j, p in enumerate(row):
                if p is not None:
                    yield (i, j), p

    def productivity(self, u_max: float = 1.0) -> np.ndarray:
        """Productivity matrix P[src, tgt]; covariate-scaled alphas use ``u_max``."""
        P = np.zeros((self.k, self.k))
        for (i, j), p in self.items():
            P[i, j] = p.alpha * (u_max if p.vary_alpha else 1.0)
        return P

    def max_beta(self) -> float:
        betas = [p.beta for _, p in self.items()]
        return max(betas) if betas else 0.0

    @property
    def is_empty(self) -> bool:
        return not any(True for _ in self.items())

    def check_stability(self, u_max: float = 1.0):
        """Raise unless every alpha lies in (-1, 1) and the spectral radius is < 1."""
        from .constraints import spectral_radius

        for (i, j), p in self.items():
            if not abs(p.alpha) < 1:
                raise StabilityError(f"|alpha| must be < 1 (entry {i},{j})")
        rho = spectral_radius(self.productivity(u_max))
        if not rho < 1:
            raise StabilityError(f"spectral radius {rho:.6g} >= 1")
        return rho


def resolve_horizon(horizon, K: KernelMatrix):
    """``"auto"`` means 20 times the largest temporal scale; None disables."""
    if horizon is None:
        return np.inf
    if horizon == "auto":
        mb = K.max_beta()
        return 20.0 * mb if mb > 0 else np.inf
    return float(horizon)


def kernel_sum(target_mark: int, s, t: float, catalog, K: KernelMatrix,
               horizon="auto", lp=None, lp_target=None) -> float:
    """Sum of kernels from all catalog events before ``t`` onto mark ``target_mark``.

    ``lp`` holds the standardized covariate at each catalog event and
    ``lp_target`` its value at ``(s, t)``; both are needed only for
    nonstationary entries.
    """
    H = resolve_horizon(horizon, K)
    t_arr = catalog.t
    hi = np.searchsorted(t_arr, t, side="left")
    lo = np.searchsorted(t_arr, t - H, side="left") if np.isfinite(H) else 0
    if hi <= lo:
        return 0.0
    sl = slice(lo, hi)
    dt = t - t_arr[sl]
    dx = s[0] - catalog.x[sl]
    dy = s[1] - catalog.y[sl]
    marks = catalog.marks[sl]
    total = 0.0
    for src in range(K.k):
        p = K[src, target_mark]
        if p is None:
            continue
        m = marks == src
        if not m.any():
            continue
        lps = None if lp is None else np.asarray(lp)[sl][m]
        total += float(np.sum(density(p, dt[m], dx[m], dy[m], lps, lp_target)))
    return total


def with_alpha(p: KernelParams, alpha: float) -> KernelParams:
    return replace(p, alpha=alpha)


def separability_gap(p: KernelParams, dts: Sequence[float], lags: Sequence[tuple]):
    """Max relative violation of g(t1,a) g(t2,b) = g(t1,b) g(t2,a)."""
    worst = 0.0
    for t1 in dts:
        for t2 in dts:
            for a in lags:
                for b in lags:
                    lhs = density(p, t1, *a) * density(p, t2, *b)
                    rhs = density(p, t1, *b) * density(p, t2, *a)
                    scale = max(abs(lhs), abs(rhs), 1e-300)
                    worst = max(worst, float(abs(lhs - rhs) / scale))
    return worst
