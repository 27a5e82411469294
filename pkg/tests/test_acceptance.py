"""Acceptance criteria 1-10.

Each test records one PASS/FAIL line (shown in the terminal summary) and then
asserts.  Criteria 6 and 9 refit many simulated catalogs and take tens of
minutes in total.
"""
import math

import numpy as np
import pytest

from sthawkes.background import BackgroundSpec
from sthawkes.constraints import HALF_PI, BranchingBlock, _block_alphas, build_branching_matrix
from sthawkes.diagnostics import lag_summary, pair_lag_histogram
from sthawkes.domain import Projection, SpatialWindow, build_quadrature
from sthawkes.errors import StabilityError
from sthawkes.estimation import (FitOptions, ModelScore, compare_models, fit,
                                 information_criteria)
from sthawkes.kernels import KernelMatrix, KernelParams
from sthawkes.likelihood import holdout_log_likelihood, log_likelihood
from sthawkes.model import ModelSpec, get_preset, template_from_dict
from sthawkes.simulation import SimConfig, simulate_branching

from conftest import ACCEPTANCE, random_catalog, ref_loglik
from oracles import KERNEL_VARIANTS, random_kernel, space_time_integral, spectral_radius_hp


def verdict(n: int, ok: bool, detail: str):
    ACCEPTANCE[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[n])
    assert ok, detail


def _uni(mu, p):
    return ModelSpec((BackgroundSpec("constant", mu),), KernelMatrix(((p,),)))


# 1 ---------------------------------------------------------------------------

def test_c1_criterion_arithmetic():
    aic, _, hq = information_criteria(5224.97, 3, 2557)
    aic2 = information_criteria(9265.80, 1, 3170)[0]
    got = (round(aic, 2), round(hq, 2), round(aic2, 2))
    verdict(1, got == (-10443.94, -10437.58, -18529.60), f"AIC, HQ, AIC = {got}")


# 2 ---------------------------------------------------------------------------

def test_c2_kernel_normalization():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for variant in KERNEL_VARIANTS:
        for _ in range(100):
            p = random_kernel(rng, variant)
            worst = max(worst, abs(space_time_integral(p) / p.alpha - 1))
    verdict(2, worst < 1e-6, f"max relative error {worst:.2e} over 400 kernels")


# 3 ---------------------------------------------------------------------------

def test_c3_stability_decisions():
    rng = np.random.default_rng(3)
    mismatches = accepted_bad = rejected = 0
    for i in range(10_000):
        theta = rng.uniform(-HALF_PI, HALF_PI)
        lb = rng.uniform(0, 1)
        lf = rng.uniform(0, lb)
        b = rng.uniform(0, 1 - lb)
        if i % 4 == 0:          # leading eigenvalue on the boundary
            lb, lf, b = 1.0, rng.uniform(0, 1), 0.0
        elif i % 4 == 1:        # asymmetry offset at its upper limit
            b = 1.0 - lb
        a_b, a_bf, a_f, a_fb = _block_alphas(theta, lb, lf, b)
        rho = spectral_radius_hp([[a_b, a_bf], [a_fb, a_f]])
        try:
            A = build_branching_matrix(BranchingBlock(theta, lb, lf, b))["matrix"]
            accepted = True
            accepted_bad += spectral_radius_hp(A) >= 1
        except StabilityError:
            accepted = False
            rejected += 1
        mismatches += accepted != (rho < 1)
    verdict(3, mismatches == 0 and accepted_bad == 0,
            f"{mismatches} mismatches, {accepted_bad} accepted with radius >= 1, "
            f"{rejected} rejections in 10^4 blocks")


# 4 ---------------------------------------------------------------------------

M25 = dict(mu_b=4e-4, mu_f=3e-4, alpha_b=0.35, alpha_f=0.25, alpha_bf=0.3, alpha_fb=0.2,
           beta_b=5.0, beta_f=8.0, beta_c=4.0, phi_b=6.0, phi_f=9.0, phi_c=7.0,
           eta_c=20.0, xi_c=-15.0)


def test_c4_brute_force_equivalence():
    rng = np.random.default_rng(4)
    worst = 0.0
    for i in range(20):
        n = int(rng.integers(20, 101))
        if i % 4 == 0:
            cat = random_catalog(rng, n, T=80.0)
            model = _uni(3e-4, KernelParams(0.5, 6.0, 8.0))
        elif i % 4 == 1:
            cat = random_catalog(rng, n, T=80.0)
            model = _uni(3e-4, KernelParams(0.4, 6.0, 8.0, temporal="half-normal"))
        elif i % 4 == 2:
            cat = random_catalog(rng, n, n_marks=2, T=80.0)
            model = get_preset("m2-3").build({k: v for k, v in M25.items()
                                             if k not in ("eta_c", "xi_c")})
        else:
            cat = random_catalog(rng, n, n_marks=2, T=80.0)
            model = get_preset("m2-5").build(M25)
        grid = build_quadrature(cat.window, cat.T, 64, 16)
        got = log_likelihood(cat, model, grid, horizon=None).loglik
        want = ref_loglik(cat, model)
        worst = max(worst, abs(got - want) / abs(want))
    verdict(4, worst <= 1e-12, f"max relative difference {worst:.2e} over 20 catalogs")


# shared bivariate scenario (criteria 5 and 6) ----------------------------------

BIV_WINDOW = SpatialWindow.from_bbox(0, 400, 0, 400)
BIV_T = 1000.0
BIV_TRUTH = dict(mu_b=2.2e-6, mu_f=2.2e-6, alpha_b=0.35, alpha_f=0.25, alpha_bf=0.2,
                 alpha_fb=0.15, beta_b=10.0, beta_f=15.0, beta_c=20.0, phi_b=8.0, phi_f=10.0,
                 phi_c=12.0, eta_c=60.0, xi_c=45.0)
BIV_GRID = (400, 100)


@pytest.fixture(scope="module")
def bivariate_fits():
    model = get_preset("m2-5").build(BIV_TRUTH)
    grid = build_quadrature(BIV_WINDOW, BIV_T, *BIV_GRID)
    out = []
    for seed in range(20):
        cat = simulate_branching(SimConfig(model, BIV_WINDOW, BIV_T, seed=seed))
        out.append((cat, fit("m2-5", cat, grid, FitOptions(n_starts=1, seed=seed))))
    return out


# 5 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_c5_quadrature_convergence(bivariate_fits):
    cat, res = bivariate_fits[0]
    model = res.model()
    ns, nt = BIV_GRID
    a = log_likelihood(cat, model, build_quadrature(BIV_WINDOW, BIV_T, ns, nt)).loglik
    b = log_likelihood(cat, model, build_quadrature(BIV_WINDOW, BIV_T, 2 * ns, 2 * nt)).loglik
    rel = abs(a - b) / abs(a)
    verdict(5, rel < 1e-3, f"loglik {a:.4f} vs {b:.4f} after doubling, relative change {rel:.1e}")


# 6 ---------------------------------------------------------------------------

def _coverage(fits, truth):
    hits = {k: 0 for k in truth}
    for res in fits:
        for k, v in truth.items():
            se = res.ses.get(k)
            hits[k] += se is not None and abs(res.estimates[k] - v) <= 3 * se
    return hits


@pytest.mark.slow
def test_c6_parameter_recovery(bivariate_fits):
    win = SpatialWindow.from_bbox(0, 200, 0, 200)
    T = 1000.0
    uni_truth = {"mu": 1.875e-5, "alpha": 0.5, "beta": 20.0, "phi": 10.0}
    model = _uni(uni_truth["mu"], KernelParams(0.5, 20.0, 10.0))
    grid = build_quadrature(win, T, 400, 200)
    uni, sizes = [], []
    for seed in range(20):
        cat = simulate_branching(SimConfig(model, win, T, seed=seed))
        sizes.append(len(cat))
        uni.append(fit("m2-1", cat, grid, FitOptions(n_starts=1, seed=seed)))
    hits_u = _coverage(uni, uni_truth)
    hits_b = _coverage([r for _, r in bivariate_fits], BIV_TRUTH)
    worst_u = min(hits_u.values())
    worst_b = min(hits_b.values())
    detail = (f"univariate (mean n={np.mean(sizes):.0f}) min coverage {worst_u}/20 {hits_u}; "
              f"bivariate min coverage {worst_b}/20 {hits_b}")
    verdict(6, worst_u >= 18 and worst_b >= 18, detail)


# 7 ---------------------------------------------------------------------------

def test_c7_branching_ratio():
    win = SpatialWindow.from_bbox(0, 50, 0, 50)
    mu, T = 4e-4, 100.0
    model = _uni(mu, KernelParams(0.5, 5.0, 4.0))
    counts = np.array([len(simulate_branching(SimConfig(model, win, T, seed=s, edge="none")))
                       for s in range(500)])
    expect = mu * win.area * T / (1 - 0.5)
    se = counts.std(ddof=1) / math.sqrt(counts.size)
    z = (counts.mean() - expect) / se
    verdict(7, abs(z) < 3, f"mean count {counts.mean():.2f} vs {expect:.2f}, z = {z:.2f}")


# 8 ---------------------------------------------------------------------------

def test_c8_cross_shift_diagnostic():
    win = SpatialWindow.from_bbox(-250, 250, -250, 250)
    truth = dict(mu_b=2e-7, mu_f=2e-7, alpha_b=0.1, alpha_f=0.1, alpha_bf=0.6, alpha_fb=0.6,
                 beta_b=2.0, beta_f=2.0, beta_c=2.0, phi_b=5.0, phi_f=5.0, phi_c=5.0,
                 eta_c=60.0, xi_c=45.0)
    model = get_preset("m2-5").build(truth)
    cat = simulate_branching(SimConfig(model, win, 6000.0, seed=0,
                                       projection=Projection(44.0, 33.0)))
    h = pair_lag_histogram(cat, 0, 1, max_dt=6.0, max_ds=200.0, bins=(6, 40))
    k, centre = h.spatial_mode()
    k_true = int(math.hypot(60.0, 45.0) // 5.0)
    s = lag_summary(cat, 0, 1, max_dt=6.0, max_ds=200.0)
    rel = (abs(s.median_km[0] / 60.0 - 1), abs(s.median_km[1] / 45.0 - 1))
    ok = abs(k - k_true) <= 1 and max(rel) < 0.10
    verdict(8, ok, f"mode bin {k} (centre {centre} km) vs |m| bin {k_true}; median lags "
                   f"({s.median_km[0]:.1f}, {s.median_km[1]:.1f}) km vs (60, 45)")


# 9 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_c9_holdout_ordering():
    win = SpatialWindow.from_bbox(0, 200, 0, 200)
    T, split = 1000.0, 600.0
    true = _uni(1.5e-5, KernelParams(0.5, 10.0, 3.0, gamma=1.0))
    base = {"n_marks": 1, "background": [{"mu0": "mu0"}],
            "kernel": [{"src": 0, "tgt": 0, "alpha": "alpha", "beta": "beta", "phi": "phi"}]}
    separable = template_from_dict(base)
    nonseparable = template_from_dict({**base, "kernel": [{**base["kernel"][0], "gamma": "gamma"}]})
    g_train = build_quadrature(win, split, 100, 60)
    g_test = build_quadrature(win, T - split, 100, 40, t_start=split)
    opts = FitOptions(n_starts=1, compute_ses=False)
    wins, margins = 0, []
    for seed in range(50):
        cat = simulate_branching(SimConfig(true, win, T, seed=seed))
        train, test = cat.time_slice(0, split), cat.time_slice(split, T)
        h = [holdout_log_likelihood(train, test, fit(tpl, train, g_train, opts).model(), g_test)
             for tpl in (nonseparable, separable)]
        wins += h[0] > h[1]
        margins.append(h[0] - h[1])
    verdict(9, wins >= 45, f"true model higher in {wins}/50 replicates "
                           f"(median margin {np.median(margins):.2f})")


# 10 --------------------------------------------------------------------------

@pytest.mark.slow
def test_c10_nesting_and_ordering():
    win = SpatialWindow.from_bbox(0, 200, 0, 200)
    truth = dict(mu_b=1e-5, mu_f=8e-6, alpha_b=0.35, alpha_f=0.25, alpha_bf=0.2, alpha_fb=0.1,
                 beta_b=10.0, beta_f=15.0, beta_c=20.0, phi_b=6.0, phi_f=9.0, phi_c=12.0)
    cat = simulate_branching(SimConfig(get_preset("m2-3").build(truth), win, 1000.0, seed=0))
    grid = build_quadrature(win, 1000.0, 400, 100)
    # the M2-1 shape on marked data: one (alpha, beta, phi) shared by both marks
    tied = template_from_dict({
        "name": "m2-1-shape", "n_marks": 2, "profile_background": True,
        "background": [{"mu0": "mu_b"}, {"mu0": "mu_f"}],
        "kernel": [{"src": m, "tgt": m, "alpha": "alpha", "beta": "beta", "phi": "phi"}
                   for m in (0, 1)]})
    f1 = fit(tied, cat, grid, FitOptions(n_starts=1))
    e = f1.estimates
    init2 = {f"{p}_{m}": e[p] for p in ("alpha", "beta", "phi") for m in ("b", "f")}
    f2 = fit("m2-2", cat, grid, FitOptions(n_starts=1, init=init2))
    init3 = {k: f2.estimates[k] for k in init2}
    init3.update(alpha_bf=1e-10, alpha_fb=1e-10, beta_c=f2.estimates["beta_b"],
                 phi_c=f2.estimates["phi_b"])
    f3 = fit("m2-3", cat, grid, FitOptions(n_starts=1, init=init3))
    nested = f3.loglik >= f2.loglik - 1e-4 and f2.loglik >= f1.loglik - 1e-4

    reference = [("m2-1", 5224.97, 3), ("m2-2", 5391.46, 6), ("m2-3", 8155.75, 10),
               ("m2-4", 8378.62, 12), ("m2-5", 8696.67, 12), ("m2-6", 8723.65, 14)]
    rows = compare_models([ModelScore(n, ll, k, 2557) for n, ll, k in reference])
    order = [r["model"] for r in rows]
    ordered = order == ["m2-6", "m2-5", "m2-4", "m2-3", "m2-2", "m2-1"]
    verdict(10, nested and ordered,
            f"loglik {f1.loglik:.4f} <= {f2.loglik:.4f} <= {f3.loglik:.4f}; AIC order {order}")
