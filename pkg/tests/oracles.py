"""Numerical oracles shared by unit and acceptance tests."""
import numpy as np
from scipy.integrate import quad

from sthawkes.kernels import KernelParams, density


def spatial_mass(p: KernelParams, dt: float, half_width_sd: float = 10.0, per_sd: int = 3) -> float:
    """Trapezoid integral over space of density(p, dt, ., .) on a box around the mode."""
    var = p.phi ** 2
    if p.gamma:
        var *= (1 + dt / p.beta) ** p.gamma
    sd = np.sqrt(var)
    n = int(2 * half_width_sd * per_sd) + 1
    ax = np.linspace(-half_width_sd * sd, half_width_sd * sd, n)
    h = ax[1] - ax[0]
    X, Y = np.meshgrid(ax + p.shift[0], ax + p.shift[1], indexing="ij")
    vals = density(p, np.full(X.shape, dt), X, Y)
    return float(vals.sum() * h * h)


def space_time_integral(p: KernelParams) -> float:
    """Numeric integral of the kernel over R^2 x (0, inf)."""
    f = lambda dt: spatial_mass(p, dt)
    tail = 40.0 * p.beta
    a, _ = quad(f, 0.0, p.beta, epsabs=0, epsrel=1e-11, limit=200)
    b, _ = quad(f, p.beta, tail, epsabs=0, epsrel=1e-11, limit=200)
    return a + b


def random_kernel(rng, variant: str) -> KernelParams:
    alpha = rng.uniform(0.05, 0.95)
    beta = float(np.exp(rng.uniform(np.log(0.5), np.log(200))))
    phi = float(np.exp(rng.uniform(np.log(0.5), np.log(100))))
    if variant == "g1-exponential":
        return KernelParams(alpha, beta, phi)
    if variant == "g1-half-normal":
        return KernelParams(alpha, beta, phi, temporal="half-normal")
    shift = tuple(rng.uniform(-200, 200, 2))
    if variant == "g2":
        return KernelParams(alpha, beta, phi, shift=shift)
    if variant == "g3":
        return KernelParams(alpha, beta, phi, shift=shift, gamma=rng.uniform(0.01, 1.0))
    raise ValueError(variant)


KERNEL_VARIANTS = ("g1-exponential", "g1-half-normal", "g2", "g3")


def spectral_radius_hp(A, dps: int = 60):
    """Spectral radius of a float 2 x 2 matrix from its characteristic roots at high precision."""
    import mpmath

    with mpmath.workdps(dps):
        a, b, c, d = (mpmath.mpf(float(v)) for v in np.asarray(A, dtype=float).ravel())
        tr, det = a + d, a * d - b * c
        r = mpmath.sqrt(mpmath.mpc(tr * tr / 4 - det))
        return max(abs(tr / 2 + r), abs(tr / 2 - r))
