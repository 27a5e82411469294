"""Model specifications, templates with named parameters, and presets.

A ``ModelSpec`` is a fully numeric model (backgrounds plus kernel matrix).
A ``ModelTemplate`` describes its structure with parameter *names* so that
parameters can be shared between entries, transformed for optimization and
reported with the conventional table names (mu0, alpha_b, beta_c, eta_c...).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .background import BackgroundSpec
from .constraints import (IDENTITY, LOG, UNIT, ParameterLayer, Transform,
                          spectral_radius)
from .domain import CovariateField, EventCatalog
from .errors import ConfigError, DomainError, StabilityError
from .kernels import KernelMatrix, KernelParams


@dataclass(frozen=True)
class ModelSpec:
    backgrounds: tuple
    kernels: KernelMatrix
    covariate: Optional[CovariateField] = None

    def __post_init__(self):
        object.__setattr__(self, "backgrounds", tuple(self.backgrounds))
        if len(self.backgrounds) != self.kernels.k:
            raise DomainError("background count must equal kernel matrix size")

    @property
    def n_marks(self) -> int:
        return self.kernels.k

    def check_stability(self, u_max: float = 1.0) -> float:
        return self.kernels.check_stability(u_max)

    def covariate_field(self) -> Optional[CovariateField]:
        if self.covariate is not None:
            return self.covariate
        for b in self.backgrounds:
            if b.covariate is not None:
                return b.covariate
        return None

    @property
    def needs_covariate(self) -> bool:
        return (any(b.variant == "covariate_linear" for b in self.backgrounds)
                or any(p.nonstationary for _, p in self.kernels.items()))


@dataclass(frozen=True)
class BackgroundSlot:
    variant: str = "constant"
    mu0: str = "mu0"
    mu1: Optional[str] = None


@dataclass(frozen=True)
class KernelSlot:
    src: int
    tgt: int
    alpha: str
    beta: str
    phi: Optional[str] = None
    shift: Optional[Tuple[str, str]] = None
    shift_sign: float = 1.0
    gamma: Optional[str] = None
    temporal: str = "exponential"
    phi0: Optional[str] = None
    phi1: Optional[str] = None
    vary_alpha: bool = False


_ROLE_ORDER = ["mu", "alpha", "beta", "phi", "eta", "xi", "gamma"]


def _role(name: str) -> str:
    for r in _ROLE_ORDER:
        if name.startswith(r):
            return r
    return "other"


@dataclass
class ModelTemplate:
    """Structure of a model with named free parameters.

    ``branching`` names (alpha_b, alpha_bf, alpha_f, alpha_fb) for the
    source/target pairs (0,0), (1,0), (1,1), (0,1): ``alpha_bf`` is the
    productivity of mark-1 events onto mark 0.  ``profile_background``
    concentrates constant background levels out of the optimization; they
    are then not counted in ``k``.
    """

    name: str
    n_marks: int
    backgrounds: List[BackgroundSlot]
    kernels: List[KernelSlot] = field(default_factory=list)
    branching: Optional[Tuple[str, str, str, str]] = None
    profile_background: bool = False
    description: str = ""
    properties: Dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.backgrounds) != self.n_marks:
            raise ConfigError(f"{self.name}: need one background per mark")
        seen = set()
        for s in self.kernels:
            if not (0 <= s.src < self.n_marks and 0 <= s.tgt < self.n_marks):
                raise ConfigError(f"{self.name}: kernel entry out of range")
            if (s.src, s.tgt) in seen:
                raise ConfigError(f"{self.name}: duplicate kernel entry {(s.src, s.tgt)}")
            seen.add((s.src, s.tgt))
        if self.branching is not None:
            if self.n_marks != 2:
                raise ConfigError("the rotation block applies to two marks only")
            want = dict(zip([(0, 0), (1, 0), (1, 1), (0, 1)], self.branching))
            for s in self.kernels:
                if s.alpha != want.get((s.src, s.tgt), s.alpha):
                    raise ConfigError(f"{self.name}: block alpha name mismatch at {(s.src, s.tgt)}")
        if self.profile_background and any(b.variant != "constant" for b in self.backgrounds):
            raise ConfigError("profiling applies to constant backgrounds only")

    # names ---------------------------------------------------------------
    @property
    def background_names(self) -> List[str]:
        out = []
        for b in self.backgrounds:
            for n in (b.mu0, b.mu1):
                if n and n not in out:
                    out.append(n)
        return out

    @property
    def kernel_names(self) -> List[str]:
        out = []
        for s in self.kernels:
            for n in (s.alpha, s.beta, s.phi, s.phi0, s.phi1, s.gamma):
                if n and n not in out:
                    out.append(n)
            if s.shift:
                for n in s.shift:
                    if n not in out:
                        out.append(n)
        return out

    @property
    def natural_names(self) -> List[str]:
        names = self.background_names + self.kernel_names
        return sorted(names, key=lambda n: (_ROLE_ORDER.index(_role(n))
                                            if _role(n) in _ROLE_ORDER else 99,
                                            names.index(n)))

    @property
    def profiled_names(self) -> List[str]:
        return [b.mu0 for b in self.backgrounds] if self.profile_background else []

    @property
    def k(self) -> int:
        """Parameter count used for information criteria."""
        return len(self.natural_names) - len(set(self.profiled_names))

    @property
    def uses_covariate(self) -> bool:
        return (any(b.variant == "covariate_linear" for b in self.backgrounds)
                or any(s.phi0 or s.vary_alpha for s in self.kernels))

    # transforms ----------------------------------------------------------
    def layer(self, u_range: Tuple[float, float] = (0.0, 1.0),
              include_profiled: bool = False) -> ParameterLayer:
        block = set(self.branching or ())
        pair_names = set()
        pairs = []
        for s in self.kernels:
            if s.phi0 and (s.phi0, s.phi1) not in [(a, b) for a, b, _, _ in pairs]:
                pairs.append((s.phi0, s.phi1, float(u_range[0]), float(u_range[1])))
                pair_names |= {s.phi0, s.phi1}
        skip = block | pair_names
        if not include_profiled:
            skip |= set(self.profiled_names)
        scalars = []
        for n in self.natural_names:
            if n in skip:
                continue
            scalars.append((n, self._transform(n)))
        return ParameterLayer(scalars, self.branching, pairs)

    def _transform(self, name: str) -> Transform:
        role = _role(name)
        if role == "mu":
            slope = any(b.mu1 == name for b in self.backgrounds)
            return IDENTITY if slope else LOG
        if role in ("alpha", "gamma"):
            return UNIT
        if role in ("beta", "phi"):
            return LOG
        return IDENTITY

    # construction ----------------------------------------------------------
    def build(self, natural: Dict[str, float], covariate: Optional[CovariateField] = None,
              t_scale: Optional[float] = None, t_origin: float = 0.0) -> ModelSpec:
        bgs = []
        for b in self.backgrounds:
            bgs.append(BackgroundSpec(
                b.variant, natural[b.mu0], natural[b.mu1] if b.mu1 else 0.0,
                covariate if b.variant == "covariate_linear" else None,
                t_scale if b.variant == "time_linear" else None, t_origin))
        rows = [[None] * self.n_marks for _ in range(self.n_marks)]
        for s in self.kernels:
            shift = (0.0, 0.0)
            if s.shift:
                shift = (s.shift_sign * natural[s.shift[0]], s.shift_sign * natural[s.shift[1]])
            rows[s.src][s.tgt] = KernelParams(
                alpha=natural[s.alpha], beta=natural[s.beta],
                phi=natural[s.phi] if s.phi else None, shift=shift,
                gamma=natural[s.gamma] if s.gamma else None, temporal=s.temporal,
                phi0=natural[s.phi0] if s.phi0 else None,
                phi1=natural[s.phi1] if s.phi1 else None, vary_alpha=s.vary_alpha)
        return ModelSpec(tuple(bgs), KernelMatrix(tuple(tuple(r) for r in rows)),
                         covariate if self.uses_covariate else None)

    def productivity(self, natural: Dict[str, float]) -> np.ndarray:
        P = np.zeros((self.n_marks, self.n_marks))
        for s in self.kernels:
            P[s.src, s.tgt] = natural[s.alpha]
        return P

    def is_stable(self, natural: Dict[str, float]) -> bool:
        P = self.productivity(natural)
        if np.any(np.abs(P) >= 1):
            return False
        return spectral_radius(P) < 1

    # initial values ------------------------------------------------------
    def default_initial(self, catalog: EventCatalog, area_time: float,
                        u_range=(0.0, 1.0)) -> Dict[str, float]:
        """Starting point well inside the feasible region.

        Productivities 0.3 (block at theta=0, lambda_b=0.5, lambda_f=0.25,
        b=0.05), beta 30 days, phi 25 km, gamma 0.5, shift equal to the offset
        between the two marks' mean locations, background from the Poisson
        closed form.
        """
        counts = catalog.counts() if len(catalog) else np.zeros(self.n_marks)
        init: Dict[str, float] = {}
        for k, b in enumerate(self.backgrounds):
            init.setdefault(b.mu0, max(counts[k], 1.0) / area_time)
            if b.mu1:
                init.setdefault(b.mu1, 0.0)
        offset = (0.0, 0.0)
        if self.n_marks == 2 and np.all(counts > 0):
            m0 = catalog.marks == 0
            offset = (float(catalog.x[~m0].mean() - catalog.x[m0].mean()),
                      float(catalog.y[~m0].mean() - catalog.y[m0].mean()))
        for s in self.kernels:
            init.setdefault(s.alpha, 0.3)
            init.setdefault(s.beta, 30.0)
            if s.phi:
                init.setdefault(s.phi, 25.0)
            if s.phi0:
                init.setdefault(s.phi0, 25.0)
                init.setdefault(s.phi1, 0.0)
            if s.gamma:
                init.setdefault(s.gamma, 0.5)
            if s.shift:
                sign = s.shift_sign
                init.setdefault(s.shift[0], sign * offset[0] if s.src == 0 else -sign * offset[0])
                init.setdefault(s.shift[1], sign * offset[1] if s.src == 0 else -sign * offset[1])
        if self.branching:
            a_b, a_bf, a_f, a_fb = self.branching
            init.update({a_b: 0.5, a_f: 0.25, a_bf: 0.05, a_fb: 0.0})
        return init


# presets ---------------------------------------------------------------------

def _g1(src, tgt, a, b, p, **kw):
    return KernelSlot(src, tgt, a, b, p, **kw)


def _table1(bivariate, cross, non_decreasing, nonseparable):
    return {"bivariate": bivariate, "cross_triggering": cross,
            "non_decreasing": non_decreasing, "nonseparable": nonseparable}


def _bivariate_block(cross_family: str, gamma_diag: bool = False) -> ModelTemplate:
    """Cross-triggering two-mark layout shared by the M2-3 .. M2-6 presets."""
    diag_kw_b = {"gamma": "gamma_b"} if gamma_diag else {}
    diag_kw_f = {"gamma": "gamma_f"} if gamma_diag else {}
    kernels = [
        _g1(0, 0, "alpha_b", "beta_b", "phi_b", **diag_kw_b),
        _g1(1, 1, "alpha_f", "beta_f", "phi_f", **diag_kw_f),
    ]
    # alpha_bf: mark 1 (f) triggering mark 0 (b); alpha_fb: b triggering f.
    if cross_family == "g1":
        kernels += [_g1(1, 0, "alpha_bf", "beta_c", "phi_c"),
                    _g1(0, 1, "alpha_fb", "beta_c", "phi_c")]
    elif cross_family == "g2-common":
        kernels += [_g1(1, 0, "alpha_bf", "beta_c", "phi_c", shift=("eta_c", "xi_c")),
                    _g1(0, 1, "alpha_fb", "beta_c", "phi_c", shift=("eta_c", "xi_c"))]
    elif cross_family == "g2-opposite":
        kernels += [_g1(1, 0, "alpha_bf", "beta_c", "phi_c", shift=("eta_c", "xi_c"),
                        shift_sign=-1.0),
                    _g1(0, 1, "alpha_fb", "beta_c", "phi_c", shift=("eta_c", "xi_c"))]
    elif cross_family == "g3-opposite":
        kernels += [_g1(1, 0, "alpha_bf", "beta_c", "phi_c", shift=("eta_c", "xi_c"),
                        shift_sign=-1.0, gamma="gamma_b"),
                    _g1(0, 1, "alpha_fb", "beta_c", "phi_c", shift=("eta_c", "xi_c"),
                        gamma="gamma_f")]
    return ModelTemplate(
        name="", n_marks=2,
        backgrounds=[BackgroundSlot("constant", "mu_b"), BackgroundSlot("constant", "mu_f")],
        kernels=kernels, branching=("alpha_b", "alpha_bf", "alpha_f", "alpha_fb"),
        profile_background=True)


def _named(t: ModelTemplate, name, description, props) -> ModelTemplate:
    t.name, t.description, t.properties = name, description, props
    return t


def _preset_table():
    cov = BackgroundSlot("covariate_linear", "mu0", "mu1")
    const = BackgroundSlot("constant", "mu0")
    ns_kernel = KernelSlot(0, 0, "alpha", "beta", phi0="phi0", phi1="phi1")
    presets = {
        "poisson-const": ModelTemplate(
            "poisson-const", 1, [const], [],
            description="homogeneous Poisson, constant background"),
        "m1-1": ModelTemplate("m1-1", 1, [cov], [],
                              description="Poisson; background linear in standardized log population"),
        "m1-2": ModelTemplate("m1-2", 1, [BackgroundSlot("time_linear", "mu0", "mu1")], [],
                              description="Poisson; background linear in standardized time"),
        "m1-3": ModelTemplate("m1-3", 1, [cov], [ns_kernel],
                              description="separable kernel with covariate-dependent range; "
                                          "covariate background"),
        "m1-4": ModelTemplate("m1-4", 1, [const], [ns_kernel],
                              description="separable kernel with covariate-dependent range; "
                                          "constant background"),
        "m1-5": ModelTemplate("m1-5", 1, [cov],
                              [KernelSlot(0, 0, "alpha", "beta", "phi", temporal="half-normal")],
                              description="isotropic kernel with half-normal temporal decay; "
                                          "covariate background"),
        "m2-1": ModelTemplate("m2-1", 1, [BackgroundSlot("constant", "mu")],
                              [KernelSlot(0, 0, "alpha", "beta", "phi")],
                              profile_background=True,
                              description="univariate separable model on merged marks",
                              properties=_table1(False, False, False, False)),
        "m2-2": ModelTemplate(
            "m2-2", 2, [BackgroundSlot("constant", "mu_b"), BackgroundSlot("constant", "mu_f")],
            [_g1(0, 0, "alpha_b", "beta_b", "phi_b"), _g1(1, 1, "alpha_f", "beta_f", "phi_f")],
            profile_background=True,
            description="bivariate separable, no cross-triggering",
            properties=_table1(True, False, False, False)),
        "m2-3": _named(_bivariate_block("g1"), "m2-3",
                       "bivariate separable with cross-triggering (shared beta_c, phi_c)",
                       _table1(True, True, False, False)),
        "m2-4": _named(_bivariate_block("g2-common"), "m2-4",
                       "shifted cross kernels with a common shift m",
                       _table1(True, True, True, False)),
        "m2-5": _named(_bivariate_block("g2-opposite"), "m2-5",
                       "shifted cross kernels with shifts m and -m",
                       _table1(True, True, True, False)),
        "m2-6": _named(_bivariate_block("g3-opposite", gamma_diag=True), "m2-6",
                       "nonseparable marginal and shifted cross kernels",
                       _table1(True, True, True, True)),
    }
    return presets


PRESETS = _preset_table()


def get_preset(name: str) -> ModelTemplate:
    key = name.lower()
    if key not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return _preset_table()[key]


def template_from_dict(d: dict) -> ModelTemplate:
    """Custom layout from a configuration mapping."""
    try:
        n = int(d["n_marks"])
        bgs = [BackgroundSlot(b.get("variant", "constant"), b["mu0"], b.get("mu1"))
               for b in d["background"]]
        kernels = []
        for e in d.get("kernel", []):
            shift = tuple(e["shift"]) if e.get("shift") else None
            kernels.append(KernelSlot(
                int(e["src"]), int(e["tgt"]), e["alpha"], e["beta"], e.get("phi"),
                shift, float(e.get("shift_sign", 1.0)), e.get("gamma"),
                e.get("temporal", "exponential"), e.get("phi0"), e.get("phi1"),
                bool(e.get("vary_alpha", False))))
        branching = tuple(d["branching"]) if d.get("branching") else None
        return ModelTemplate(d.get("name", "custom"), n, bgs, kernels, branching,
                             bool(d.get("profile_background", False)))
    except KeyError as exc:
        raise ConfigError(f"custom model is missing field {exc}") from exc
