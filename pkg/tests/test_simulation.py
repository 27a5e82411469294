import numpy as np
import pytest
from scipy import stats

from sthawkes.background import BackgroundSpec
from sthawkes.domain import CovariateField, Projection, SpatialWindow, build_quadrature
from sthawkes.errors import DomainError, StabilityError
from sthawkes.kernels import KernelMatrix, KernelParams
from sthawkes.likelihood import log_likelihood
from sthawkes.model import ModelSpec, get_preset
from sthawkes.simulation import SimConfig, simulate, simulate_branching, simulate_thinning

WIN = SpatialWindow.from_bbox(0, 50, 0, 50)


def _uni(mu, p):
    return ModelSpec((BackgroundSpec("constant", mu),), KernelMatrix(((p,),)))


def _poisson(mu):
    return ModelSpec((BackgroundSpec("constant", mu),), KernelMatrix.empty(1))


@pytest.mark.parametrize("sampler", [simulate_branching, simulate_thinning])
def test_poisson_counts(sampler):
    mu, T = 4e-4, 50.0
    lam = mu * WIN.area * T     # 50
    counts = np.array([len(sampler(SimConfig(_poisson(mu), WIN, T, seed=s))) for s in range(500)])
    assert abs(counts.mean() - lam) < 3 * np.sqrt(lam / 500)
    # chi-square goodness of fit against Poisson(lam) on pooled tail bins
    edges = np.array([0, 40, 44, 47, 50, 53, 56, 60, 1000])
    obs = np.histogram(counts, edges)[0]
    cdf = stats.poisson.cdf(edges[1:] - 1, lam) - stats.poisson.cdf(edges[:-1] - 1, lam)
    p = stats.chisquare(obs, 500 * cdf / cdf.sum()).pvalue
    assert p > 0.01


def test_events_inside_window_and_sorted():
    model = _uni(4e-4, KernelParams(0.5, 5.0, 5.0))
    for sampler in (simulate_branching, simulate_thinning):
        cat = sampler(SimConfig(model, WIN, 100.0, seed=3))
        assert np.all(np.diff(cat.t) >= 0)
        assert np.all(WIN.contains(cat.x, cat.y))
        assert np.all((cat.t >= 0) & (cat.t < 100.0))


def test_empty_background():
    model = _uni(0.0, KernelParams(0.5, 5.0, 5.0))
    assert len(simulate_branching(SimConfig(model, WIN, 100.0))) == 0
    assert len(simulate_thinning(SimConfig(model, WIN, 100.0))) == 0


def test_determinism_under_seed():
    model = get_preset("m2-5").build(dict(
        mu_b=2e-4, mu_f=2e-4, alpha_b=0.3, alpha_f=0.2, alpha_bf=0.2, alpha_fb=0.1,
        beta_b=5, beta_f=5, beta_c=5, phi_b=3, phi_f=3, phi_c=3, eta_c=5, xi_c=4))
    for method in ("branching", "thinning"):
        a = simulate(SimConfig(model, WIN, 100.0, seed=9, method=method))
        b = simulate(SimConfig(model, WIN, 100.0, seed=9, method=method))
        assert np.array_equal(a.t, b.t) and np.array_equal(a.x, b.x)
        assert np.array_equal(a.marks, b.marks)


def test_unstable_model_rejected():
    with pytest.raises(StabilityError):
        simulate_branching(SimConfig(_uni(1e-3, KernelParams(1.2, 5.0, 5.0)), WIN, 10.0))
    K = KernelMatrix(((KernelParams(0.8, 1, 1), KernelParams(0.5, 1, 1)),
                      (KernelParams(0.5, 1, 1), KernelParams(0.5, 1, 1))))
    spec = ModelSpec((BackgroundSpec("constant", 1e-3),) * 2, K)
    with pytest.raises(StabilityError):
        simulate_thinning(SimConfig(spec, WIN, 10.0))


def test_bad_config():
    with pytest.raises(DomainError):
        SimConfig(_poisson(1e-3), WIN, 10.0, edge="reflect")
    with pytest.raises(DomainError):
        SimConfig(_poisson(1e-3), WIN, 10.0, method="exact")


def _covariate():
    lon = np.linspace(-1, 1, 21)
    lat = np.linspace(-1, 1, 21)
    vals = np.broadcast_to(np.linspace(0.2, 1.0, 21)[None, None, :], (1, 21, 21)).copy()
    return CovariateField(lon, lat, np.array([-1e5, 1e5]), vals).bind(Projection(0.0, 0.0))


def test_nonstationary_kernels_need_thinning():
    cov = _covariate()
    p = KernelParams(0.4, 5.0, phi0=2.0, phi1=6.0)
    model = ModelSpec((BackgroundSpec("constant", 4e-4),), KernelMatrix(((p,),)), cov)
    with pytest.raises(DomainError):
        simulate_branching(SimConfig(model, WIN, 50.0, covariate=cov))
    cat = simulate_thinning(SimConfig(model, WIN, 50.0, seed=1, covariate=cov))
    assert len(cat) > 0 and np.all(WIN.contains(cat.x, cat.y))


def test_samplers_agree_on_count_moments():
    model = _uni(2e-4, KernelParams(0.5, 4.0, 4.0))
    n_b = np.array([len(simulate_branching(SimConfig(model, WIN, 60.0, seed=s))) for s in range(500)])
    n_t = np.array([len(simulate_thinning(SimConfig(model, WIN, 60.0, seed=10_000 + s)))
                    for s in range(500)])
    se_mean = np.sqrt(n_b.var(ddof=1) / 500 + n_t.var(ddof=1) / 500)
    assert abs(n_b.mean() - n_t.mean()) < 3 * se_mean
    # variance of the sample variance, estimated from fourth central moments
    def var_of_var(a):
        m2, m4 = a.var(), np.mean((a - a.mean()) ** 4)
        return (m4 - m2 ** 2) / a.size
    se_var = np.sqrt(var_of_var(n_b) + var_of_var(n_t))
    assert abs(n_b.var(ddof=1) - n_t.var(ddof=1)) < 3 * se_var


def test_samplers_agree_on_lags():
    # offspring displacement: mean pair distance among close-in-time pairs
    model = _uni(1e-4, KernelParams(0.6, 2.0, 3.0, shift=(4.0, 0.0)))
    def mean_dx(sampler, base):
        out = []
        for s in range(150):
            c = sampler(SimConfig(model, SpatialWindow.from_bbox(0, 100, 0, 100), 100.0, seed=base + s))
            for i in range(len(c)):
                j = np.flatnonzero((c.t > c.t[i]) & (c.t < c.t[i] + 1.0))
                out.extend(c.x[j] - c.x[i])
        return np.array(out)
    a, b = mean_dx(simulate_branching, 0), mean_dx(simulate_thinning, 5000)
    se = np.sqrt(a.var() / a.size + b.var() / b.size)
    assert abs(a.mean() - b.mean()) < 3 * se


def test_true_model_beats_perturbed_model():
    p = KernelParams(0.5, 5.0, 4.0)
    true = _uni(2e-4, p)
    grid = build_quadrature(WIN, 200.0, 100, 40)
    wins = 0
    for s in range(50):
        cat = simulate_branching(SimConfig(true, WIN, 200.0, seed=s))
        perturbed = _uni(3e-4, KernelParams(0.75, 7.5, 6.0))
        wins += log_likelihood(cat, true, grid).loglik > log_likelihood(cat, perturbed, grid).loglik
    assert wins >= 45
