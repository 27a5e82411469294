"""Background rate mu(s, t): constant, covariate-linear and time-linear."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .domain import CovariateField, Standardization
from .errors import DomainError

VARIANTS = ("constant", "covariate_linear", "time_linear")


@dataclass(frozen=True)
class BackgroundSpec:
    """Background intensity in events per km^2 per day.

    For ``time_linear`` the slope multiplies ``(t - t_origin) / t_scale``,
    normally ``t / T`` of the training catalog so that holdout periods reuse
    the same scaling.
    """

    variant: str = "constant"
    mu0: float = 0.0
    mu1: float = 0.0
    covariate: Optional[CovariateField] = None
    t_scale: Optional[float] = None
    t_origin: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DomainError(f"unknown background variant {self.variant!r}")
        if self.variant == "covariate_linear" and self.covariate is None:
            raise DomainError("covariate_linear background needs a covariate")
        if self.variant == "time_linear" and not (self.t_scale and self.t_scale > 0):
            raise DomainError("time_linear background needs a positive t_scale")

    def standardized_time(self, t):
        return (np.asarray(t, dtype=float) - self.t_origin) / self.t_scale

    def from_covariate_values(self, X):
        """mu at points whose standardized covariate values are ``X``."""
        return self.mu0 + self.mu1 * np.asarray(X, dtype=float)


def eval_mu(x, y, t, spec: BackgroundSpec, X=None):
    """Evaluate mu at (x, y, t); ``X`` may carry precomputed covariate values.

    Negative values are returned as-is; the likelihood penalizes them.
    """
    x = np.asarray(x, dtype=float)
    shape = np.broadcast(x, np.asarray(y), np.asarray(t)).shape
    if spec.variant == "constant":
        return np.full(shape, float(spec.mu0))
    if spec.variant == "time_linear":
        return np.broadcast_to(spec.mu0 + spec.mu1 * spec.standardized_time(t), shape).copy()
    if X is None:
        if spec.covariate is None:
            raise DomainError("missing covariate")
        X = spec.covariate.value_at_xy(x, y, t)
    return spec.from_covariate_values(X)


def standardize_covariate(field: CovariateField, mode: str = "log_max",
                          record: Optional[Standardization] = None) -> CovariateField:
    """Standardize raw covariate values.

    ``log_max`` maps v to log(1 + v) / max over all pixels and layers;
    ``z_score`` centres and scales; ``unit_time`` rescales to [0, 1] by the
    observed min and max.  Passing a stored ``record`` reapplies a previous
    standardization (holdout rasters may then exceed the training range).
    """
    raw = np.asarray(field.values, dtype=float)
    if record is None:
        if mode == "log_max":
            if np.any(raw < 0):
                raise DomainError("log_max standardization needs nonnegative values")
            top = float(np.log1p(raw).max())
            if top <= 0:
                raise DomainError("covariate is identically zero")
            record = Standardization("log_max", scale=top, log=True)
        elif mode == "z_score":
            sd = float(raw.std())
            if sd <= 0:
                raise DomainError("covariate has zero variance")
            record = Standardization("z_score", scale=sd, shift=float(raw.mean()))
        elif mode == "unit_time":
            lo, hi = float(raw.min()), float(raw.max())
            if hi <= lo:
                raise DomainError("covariate is constant")
            record = Standardization("unit_time", scale=hi - lo, shift=lo)
        else:
            raise DomainError(f"unknown standardization mode {mode!r}")
    return field.with_values(record.apply(raw), record)
