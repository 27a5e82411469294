"""Parameter transforms and the stability-preserving productivity block.

Optimizers work on an unconstrained vector ``z``; ``ParameterLayer`` maps it
to named natural-scale parameters and back.  Positive scales use ``exp``,
bounded quantities a scaled logistic, and the bivariate productivity matrix
is built from a rotation of a diagonal eigenvalue matrix plus an
asymmetry offset, which keeps its spectral radius below one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, logit

from .errors import DomainError, StabilityError

HALF_PI = 0.5 * math.pi


def spectral_radius(A) -> float:
    """Largest eigenvalue modulus; closed form for 2 x 2 matrices."""
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise DomainError("matrix entries must be finite")
    if A.shape == (1, 1):
        return abs(float(A[0, 0]))
    if A.shape == (2, 2):
        a, b, c, d = A[0, 0], A[0, 1], A[1, 0], A[1, 1]
        # discriminant written without the tr^2/4 - det cancellation
        half = (a + d) / 2.0
        disc = ((a - d) / 2.0) ** 2 + b * c
        if disc >= 0:
            return float(abs(half) + math.sqrt(disc))
        return float(math.sqrt(half * half - disc))
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def subcritical_2x2(A) -> bool:
    """Exact test that both eigenvalues of a real 2 x 2 matrix lie inside the unit disk.

    Uses the Schur-Cohn conditions |det| < 1 and |tr| < 1 + det on the
    characteristic polynomial, evaluated in rational arithmetic on the float
    entries so the decision has no rounding error.
    """
    a, b, c, d = (Fraction(float(v)) for v in np.asarray(A, dtype=float).ravel())
    tr, det = a + d, a * d - b * c
    return abs(det) < 1 and abs(tr) < 1 + det


@dataclass(frozen=True)
class BranchingBlock:
    theta: float
    lambda_b: float
    lambda_f: float
    b: float

    def __post_init__(self):
        if not -HALF_PI <= self.theta <= HALF_PI:
            raise DomainError("theta must lie in [-pi/2, pi/2]")
        if not 0.0 <= self.lambda_f <= self.lambda_b <= 1.0:
            raise DomainError("need 0 <= lambda_f <= lambda_b <= 1")
        if not 0.0 <= self.b <= 1.0 - self.lambda_b:
            raise DomainError("need 0 <= b <= 1 - lambda_b")


def _block_alphas(theta, lb, lf, b):
    c, s = math.cos(theta), math.sin(theta)
    a11 = lb * c * c + lf * s * s
    a22 = lb * s * s + lf * c * c
    a12 = (lb - lf) * s * c
    return a11, a12 + b, a22, a12


def build_branching_matrix(block: BranchingBlock) -> Dict[str, float]:
    """Productivities from a rotated eigenvalue block.

    Returns ``alpha_b, alpha_bf, alpha_f, alpha_fb`` and the matrix
    ``A = [[alpha_b, alpha_bf], [alpha_fb, alpha_f]]``; raises
    StabilityError if the spectral radius of A is not below one.
    """
    a_b, a_bf, a_f, a_fb = _block_alphas(block.theta, block.lambda_b, block.lambda_f, block.b)
    A = np.array([[a_b, a_bf], [a_fb, a_f]])
    rho = spectral_radius(A)
    if not subcritical_2x2(A):
        raise StabilityError(f"spectral radius {rho:.17g} is not below 1")
    # exact radius is below 1 here, float evaluation may still round up to 1.0
    rho = min(rho, math.nextafter(1.0, 0.0))
    return {"alpha_b": a_b, "alpha_bf": a_bf, "alpha_f": a_f, "alpha_fb": a_fb,
            "matrix": A, "spectral_radius": rho}


def block_from_alphas(a_b, a_bf, a_f, a_fb) -> BranchingBlock:
    """Inverse of the block construction (theta chosen in (-pi/2, pi/2])."""
    b = a_bf - a_fb
    S = np.array([[a_b, a_fb], [a_fb, a_f]])
    w, V = np.linalg.eigh(S)
    lf, lb = float(w[0]), float(w[1])
    v = V[:, 1]
    if v[0] < 0 or (v[0] == 0 and v[1] < 0):
        v = -v
    theta = math.atan2(v[1], v[0])
    if lb - lf < 1e-15:
        theta = 0.0
    return BranchingBlock(theta, lb, max(lf, 0.0) if lf > -1e-15 else lf, b)


# elementary transforms ------------------------------------------------------

@dataclass(frozen=True)
class Transform:
    """Smooth bijection between the real line and a natural-scale interval."""

    kind: str = "identity"
    lo: float = 0.0
    hi: float = 1.0

    def to_natural(self, z):
        if self.kind == "identity":
            return z
        if self.kind == "log":
            return math.exp(z)
        return self.lo + (self.hi - self.lo) * float(expit(z))

    def to_unconstrained(self, v):
        if self.kind == "identity":
            return v
        if self.kind == "log":
            if not v > 0:
                raise DomainError(f"value {v} not positive")
            return math.log(v)
        if not self.lo < v < self.hi:
            raise DomainError(f"value {v} outside ({self.lo}, {self.hi})")
        return float(logit((v - self.lo) / (self.hi - self.lo)))

    def near_bound(self, v, tol=1e-4) -> bool:
        if self.kind != "logit":
            return False
        width = self.hi - self.lo
        return min(v - self.lo, self.hi - v) < tol * width

    def clamp(self, v, eps=1e-9):
        if self.kind == "log":
            return max(v, eps)
        if self.kind == "logit":
            width = self.hi - self.lo
            return min(max(v, self.lo + eps * width), self.hi - eps * width)
        return v


IDENTITY = Transform("identity")
LOG = Transform("log")


def logit_on(lo, hi) -> Transform:
    return Transform("logit", lo, hi)


UNIT = logit_on(0.0, 1.0)
# the optimizer keeps theta in [0, pi/2]: a negative angle makes the
# cross productivities negative, which no offspring process allows
THETA = logit_on(0.0, HALF_PI)


@dataclass
class ParameterLayer:
    """Map between an unconstrained vector and named natural parameters.

    ``scalars`` lists (name, Transform) for ordinary parameters.  ``block``
    names the four productivities (alpha_b, alpha_bf, alpha_f, alpha_fb)
    driven by a BranchingBlock.  ``phi_pairs`` lists (phi0, phi1, u_lo, u_hi)
    whose range is parametrized by its logs at the covariate extremes, so
    phi0 + phi1*u stays positive over [u_lo, u_hi].
    """

    scalars: List[Tuple[str, Transform]] = field(default_factory=list)
    block: Optional[Tuple[str, str, str, str]] = None
    phi_pairs: List[Tuple[str, str, float, float]] = field(default_factory=list)

    @property
    def unconstrained_names(self) -> List[str]:
        names = [n for n, _ in self.scalars]
        if self.block:
            names += ["theta", "lambda_b", "lambda_f_ratio", "b_ratio"]
        for p0, p1, _, _ in self.phi_pairs:
            names += [f"log_{p0}_at_lo", f"log_{p1}_at_hi"]
        return names

    @property
    def natural_names(self) -> List[str]:
        names = [n for n, _ in self.scalars]
        if self.block:
            names += list(self.block)
        for p0, p1, _, _ in self.phi_pairs:
            names += [p0, p1]
        return names

    @property
    def size(self) -> int:
        return len(self.unconstrained_names)

    def from_unconstrained(self, z) -> Dict[str, float]:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.size,):
            raise DomainError(f"expected {self.size} unconstrained values, got {z.shape}")
        if not np.all(np.isfinite(z)):
            raise DomainError("non-finite unconstrained vector")
        out: Dict[str, float] = {}
        k = 0
        for name, tr in self.scalars:
            out[name] = tr.to_natural(float(z[k]))
            k += 1
        if self.block:
            theta = THETA.to_natural(float(z[k]))
            lb = UNIT.to_natural(float(z[k + 1]))
            lf = lb * UNIT.to_natural(float(z[k + 2]))
            b = (1.0 - lb) * UNIT.to_natural(float(z[k + 3]))
            k += 4
            vals = _block_alphas(theta, lb, lf, b)
            out.update(dict(zip(self.block, vals)))
        for p0, p1, u_lo, u_hi in self.phi_pairs:
            r_lo, r_hi = math.exp(z[k]), math.exp(z[k + 1])
            k += 2
            if u_hi > u_lo:
                slope = (r_hi - r_lo) / (u_hi - u_lo)
            else:
                slope = 0.0
            out[p1] = slope
            out[p0] = r_lo - slope * u_lo
        return out

    def block_params(self, natural: Dict[str, float]) -> BranchingBlock:
        return block_from_alphas(*(natural[n] for n in self.block))

    def to_unconstrained(self, natural: Dict[str, float], clamp: bool = False) -> np.ndarray:
        z = []
        for name, tr in self.scalars:
            v = natural[name]
            z.append(tr.to_unconstrained(tr.clamp(v) if clamp else v))
        if self.block:
            blk = self.block_params(natural)
            lb = blk.lambda_b
            ratio_f = blk.lambda_f / lb if lb > 0 else 0.0
            ratio_b = blk.b / (1.0 - lb) if lb < 1 else 0.0
            parts = [(THETA, blk.theta), (UNIT, lb), (UNIT, ratio_f), (UNIT, ratio_b)]
            for tr, v in parts:
                z.append(tr.to_unconstrained(tr.clamp(v) if clamp else v))
        for p0, p1, u_lo, u_hi in self.phi_pairs:
            r_lo = natural[p0] + natural[p1] * u_lo
            r_hi = natural[p0] + natural[p1] * u_hi
            if clamp:
                r_lo, r_hi = max(r_lo, 1e-9), max(r_hi, 1e-9)
            if r_lo <= 0 or r_hi <= 0:
                raise DomainError(f"{p0} + {p1}*u not positive over [{u_lo}, {u_hi}]")
            z += [math.log(r_lo), math.log(r_hi)]
        return np.array(z, dtype=float)

    def boundary_flags(self, natural: Dict[str, float], tol: float = 1e-4) -> List[str]:
        """Names of parameters within ``tol`` (relative) of a transform bound."""
        flags = [n for n, tr in self.scalars if tr.near_bound(natural[n], tol)]
        if self.block:
            blk = self.block_params(natural)
            if min(blk.theta, HALF_PI - blk.theta) < tol * math.pi:
                flags.append("theta")
            if blk.lambda_b > 1 - tol or blk.lambda_b < tol:
                flags.append("lambda_b")
            if blk.lambda_f < tol or blk.lambda_b - blk.lambda_f < tol:
                flags.append("lambda_f")
            if blk.b < tol or (1 - blk.lambda_b) - blk.b < tol:
                flags.append("b")
        return flags


def check_univariate(alpha: float):
    if not abs(alpha) < 1:
        raise StabilityError("univariate stability needs |alpha| < 1")
