import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from kawasaki_lab.model import (JumpKernel, ModelParams, Potential, delta_theta,
                                kernel_expectation, phi_alpha_total, psi, psi_alpha,
                                psi_mass, radius_T, rate_c, rho_eps, tau_theta, total_rate)

FAMILIES = ("gaussian", "laplace", "uniform_ball")


def box(height=1.0, rng=1.0, d=1):
    return Potential("box", height, rng, d)


def params_1d(family="gaussian", scale=1.0, height=0.0, alpha=0.0, pot="box", rng=1.0):
    return ModelParams(JumpKernel(family, scale, 1), Potential(pot, height, rng, 1), alpha)


# psi -----------------------------------------------------------------------

def test_psi_examples():
    assert psi([0.0]) == 1.0
    assert psi([2.0]) == pytest.approx(0.2, abs=1e-15)
    for d in (1, 2, 3):
        x = np.zeros(d)
        x[0] = 1.0
        assert psi(x) == 0.5


def test_psi_alpha_examples():
    assert psi_alpha([2.0], 0.5) == pytest.approx(1 / 3, abs=1e-15)
    assert psi_alpha([7.0], 0.0) == 1.0
    x = np.array([[0.3], [-2.5], [10.0]])
    assert np.array_equal(psi_alpha(x, 1.0), psi(x))


def test_psi_alpha_rejects_bad_alpha():
    for a in (-0.1, 1.5):
        with pytest.raises(ValueError):
            psi_alpha([1.0], a)


@given(st.floats(1e-3, 50), st.floats(0.01, 0.99))
def test_psi_alpha_sandwich(r, alpha):
    x = [r]
    assert psi(x) < psi_alpha(x, alpha) <= psi(x) / alpha * (1 + 1e-15)


def test_psi_mass_matches_quadrature():
    val = 2 * integrate.quad(lambda r: 1 / (1 + r * r), 0, np.inf)[0]
    assert psi_mass(1) == pytest.approx(val, rel=1e-12)
    val2 = 2 * math.pi * integrate.quad(lambda r: r / (1 + r**3), 0, np.inf)[0]
    assert psi_mass(2) == pytest.approx(val2, rel=1e-10)


# kernels --------------------------------------------------------------------

def _radial_integral(kern, f=lambda r: 1.0):
    R = kern.support_radius
    breaks = [b for b in kern.radial_breaks if 0 < b < R] or None
    if kern.d == 1:
        g = lambda r: 2 * kern([r]) * f(r)
    else:
        g = lambda r: 2 * math.pi * r * kern([r, 0.0]) * f(r)
    return integrate.quad(g, 0, R, points=breaks, limit=200, epsabs=1e-13, epsrel=1e-12)[0]


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("d", (1, 2))
@pytest.mark.parametrize("scale", (0.5, 1.0, 2.3))
def test_kernel_normalized(family, d, scale):
    kern = JumpKernel(family, scale, d)
    assert abs(_radial_integral(kern) - 1.0) <= 1e-8
    assert kern([0.0] * d) == pytest.approx(kern.sup)


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("d", (1, 2))
def test_kernel_moments_match_quadrature(family, d):
    kern = JumpKernel(family, 0.7, d)
    for l in range(d + 2):
        assert kern.moment(l) == pytest.approx(_radial_integral(kern, lambda r: r**l), rel=1e-8)


def test_uniform_kernel_constants():
    p = ModelParams(JumpKernel("uniform_ball", 0.5, 1), box(0.0), 0.0)
    assert np.allclose(p.kernel.moments(), [1.0, 0.25, 1 / 12], atol=1e-12)
    assert abs(p.c_a - 43 / 12) <= 1e-10
    assert abs(p.C_a - 5 / 6) <= 1e-10


@pytest.mark.parametrize("family", FAMILIES)
def test_kernel_sampler_exact_1d(family):
    kern = JumpKernel(family, 0.8, 1)
    xs = kern.sample(np.random.default_rng(11), 20000)[:, 0]
    law = {"gaussian": stats.norm(0, 0.8), "laplace": stats.laplace(0, 0.8),
           "uniform_ball": stats.uniform(-0.8, 1.6)}[family]
    cdf = law.cdf
    assert stats.kstest(xs, cdf).pvalue > 1e-3


@pytest.mark.parametrize("family", FAMILIES)
def test_kernel_sampler_moments_2d(family):
    kern = JumpKernel(family, 0.8, 2)
    xs = kern.sample(np.random.default_rng(5), 40000)
    r = np.linalg.norm(xs, axis=1)
    for l in (1, 2):
        se = np.std(r**l) / math.sqrt(r.size)
        assert abs(np.mean(r**l) - kern.moment(l)) < 4 * se
    # isotropy: mean direction vanishes
    assert np.all(np.abs(xs.mean(axis=0)) < 4 * xs.std(axis=0) / math.sqrt(r.size))


@pytest.mark.parametrize("family", FAMILIES)
def test_char_function_matches_quadrature(family):
    kern = JumpKernel(family, 0.9, 1)
    for k in (0.0, 0.5, 1.7, 4.0):
        R = kern.support_radius
        ref = 2 * integrate.quad(lambda r: kern([r]) * math.cos(k * r), 0, R, limit=400)[0]
        assert float(kern.char_function(k)) == pytest.approx(ref, abs=1e-9)


def test_kernel_rejects_bad_input():
    with pytest.raises(ValueError):
        JumpKernel("cauchy", 1.0, 1)
    with pytest.raises(ValueError):
        JumpKernel("gaussian", 0.0, 1)
    with pytest.raises(ValueError):
        JumpKernel("gaussian", 1.0, 3)


# potentials ------------------------------------------------------------------

@pytest.mark.parametrize("family", ("box", "bump", "truncated_gaussian"))
@pytest.mark.parametrize("d", (1, 2))
def test_potential_bounded_and_mass(family, d):
    pot = Potential(family, 0.7, 1.2, d)
    r = np.linspace(0, 3 * pot.support_radius, 2001)
    pts = np.zeros((r.size, d))
    pts[:, 0] = r
    vals = pot(pts)
    assert np.all(vals >= 0) and np.all(vals <= 0.7 + 1e-15)
    assert np.all(pot(pts[r > pot.support_radius]) < 1e-14)
    R = pot.support_radius
    if d == 1:
        ref = 2 * integrate.quad(lambda s: pot([s]), 0, R, points=[1.2], limit=200)[0]
    else:
        ref = 2 * math.pi * integrate.quad(lambda s: s * pot([s, 0.0]), 0, R, points=[1.2],
                                           limit=200)[0]
    assert pot.mass == pytest.approx(ref, rel=1e-8)


# rates -------------------------------------------------------------------------

def test_rate_free_case_is_kernel():
    p = params_1d()
    gamma = np.array([[0.0], [0.4], [3.0]])
    y = np.array([[0.9]])
    assert rate_c([0.0], y, gamma, p) == pytest.approx(p.kernel([-0.9]))


def test_rate_singleton():
    p = params_1d(height=2.0, alpha=0.5)
    val = rate_c([2.0], [[1.0]], np.array([[2.0]]), p)
    assert val == pytest.approx(p.kernel([1.0]) / 3)


def test_rate_box_example():
    p = params_1d(height=1.0)
    x, y, z = 0.0, 1.0, 1.5
    val = rate_c([x], [[y]], np.array([[x], [z]]), p)
    assert val == pytest.approx(p.kernel([x - y]) * math.exp(-1.0), rel=1e-14)


def test_rate_rejects_foreign_point():
    with pytest.raises(ValueError):
        rate_c([5.0], [[0.0]], np.array([[0.0]]), params_1d())


config_strategy = st.lists(st.floats(-4, 4), min_size=1, max_size=6)


@settings(max_examples=60, deadline=None)
@given(config_strategy, st.floats(-4, 4), st.floats(-4, 4), st.floats(0, 1),
       st.sampled_from(("box", "bump", "truncated_gaussian")))
def test_rate_monotone_and_dominated(xs, y, z, alpha, pot):
    p = params_1d(height=1.3, alpha=alpha, pot=pot)
    gamma = np.array(xs).reshape(-1, 1)
    x = gamma[0]
    base = float(rate_c(x, [[y]], gamma, p)[0])
    more = float(rate_c(x, [[y]], np.vstack([gamma, [[z]]]), p)[0])
    assert more <= base + 1e-300
    cap = float(psi_alpha(x, alpha) * p.kernel(x - y))
    assert base <= cap * (1 + 1e-14)
    assert cap <= float(p.kernel(x - y)) * (1 + 1e-15)


def test_total_rate_examples():
    assert total_rate([0.3], np.array([[0.3], [1.0]]), params_1d()) == 1.0
    p = params_1d(height=3.0, alpha=0.5)
    assert total_rate([2.0], np.array([[2.0]]), p) == pytest.approx(1 / 3, abs=1e-12)
    p1 = params_1d(height=3.0, alpha=1.0)
    gamma = np.array([[0.0], [0.2], [-0.5]])
    assert total_rate([0.0], gamma, p1) <= 1.0


def test_total_rate_matches_independent_quadrature():
    p = params_1d("laplace", 0.6, height=0.8, alpha=0.3, pot="bump", rng=0.9)
    gamma = np.array([[0.1], [0.5], [-0.7]])
    x = 0.1
    others = gamma[1:, 0]
    f = lambda y: float(p.kernel([x - y]) * math.exp(-sum(p.potential([z - y]) for z in others)))
    ref = integrate.quad(f, -40, 40, points=[x, *others], limit=400, epsabs=1e-13)[0]
    ref *= float(psi_alpha([x], 0.3))
    assert total_rate([x], gamma, p) == pytest.approx(ref, rel=1e-8)


def test_total_rate_2d_below_cap():
    p = ModelParams(JumpKernel("gaussian", 1.0, 2), box(1.0, 1.0, 2), 0.0)
    gamma = np.array([[0.0, 0.0], [0.5, 0.2]])
    v = total_rate([0.0, 0.0], gamma, p)
    assert 0 < v < 1
    y = np.random.default_rng(2).normal(size=(10**6, 2))
    hits = np.linalg.norm(y - gamma[1], axis=1) <= 1.0
    w = np.exp(-hits.astype(float))
    assert abs(v - w.mean()) < 4 * w.std() / 1e3


def test_phi_alpha_total_examples():
    assert phi_alpha_total(np.zeros((0, 1)), params_1d()) == 0.0
    gamma = np.array([[0.0], [1.0], [5.0], [-2.0]])
    assert phi_alpha_total(gamma, params_1d()) == 4.0
    assert phi_alpha_total(np.array([[0.0]]), params_1d(alpha=1.0)) == 1.0


def test_phi_alpha_total_two_sided_bound():
    p = params_1d(height=0.5, alpha=0.4)
    gamma = np.random.default_rng(3).uniform(-3, 3, size=(8, 1))
    total = phi_alpha_total(gamma, p)
    assert total <= len(gamma)
    assert total <= psi(gamma).sum() / 0.4


def test_convolution_bound():
    p = ModelParams(JumpKernel("uniform_ball", 0.5, 1), box(0.0), 0.0)
    for x in np.linspace(-20, 20, 41):
        conv = kernel_expectation(p, [x], lambda y: psi(y))
        assert conv + psi([x]) <= p.c_a * psi([x])


# analytic radii -------------------------------------------------------------------

def test_radius_T_examples():
    assert radius_T(0.0, -1.0, 1.0) == pytest.approx(0.5 * math.exp(-1), abs=1e-15)
    assert radius_T(0.0, -1.0, 1.0) == pytest.approx(0.183940, abs=5e-7)
    assert radius_T(1.0, 0.2, 0.0) == pytest.approx(0.4)
    assert radius_T(1e-9, 0.0, 1.0) < 1e-9
    with pytest.raises(ValueError):
        radius_T(0.0, 0.0, 1.0)


def test_delta_theta_omega_constant():
    d = delta_theta(0.0, 1.0)
    assert abs(d * math.exp(d) - 1.0) <= 1e-12
    assert d == pytest.approx(0.567143290409784, abs=1e-12)


def test_tau_theta_value_and_maximizer():
    tau = tau_theta(0.0, 1.0)
    d = delta_theta(0.0, 1.0)
    assert tau == pytest.approx(0.5 * d * math.exp(-1 / d), abs=1e-15)
    assert tau == pytest.approx(0.0486301, abs=1e-7)
    assert abs(radius_T(d, 0.0, 1.0) - tau) <= 1e-10
    grid = np.linspace(1e-4, 5, 200001)
    scan = max(radius_T(t, 0.0, 1.0) for t in grid[::50])
    assert scan <= tau + 1e-12


@given(st.floats(-3, 3), st.floats(0.05, 5))
def test_delta_theta_solves_equation(theta, mass):
    d = delta_theta(theta, mass)
    rhs = math.exp(-theta) / mass
    assert abs(d * math.exp(d) - rhs) <= 1e-12 * max(1.0, rhs)
    assert abs(radius_T(theta + d, theta, mass) - tau_theta(theta, mass)) <= 1e-10


def test_delta_theta_free_case():
    assert delta_theta(0.0, 0.0) == math.inf
    assert tau_theta(0.3, 0.0) == math.inf
    with pytest.raises(ValueError):
        delta_theta(0.0, -1.0)


def test_rho_eps_examples():
    assert rho_eps(0.5, 43 / 12) == pytest.approx((math.log(1 + math.e - 0.5) - 1) * 12 / 43)
    assert rho_eps(0.5, 43 / 12) == pytest.approx(0.0471203, abs=1e-7)
    assert rho_eps(1 - 1e-12, 3.0) == pytest.approx(0.0, abs=1e-11)
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            rho_eps(bad, 3.0)


@given(st.floats(0.01, 0.98), st.floats(0.001, 0.01))
def test_rho_eps_decreasing(eps, step):
    assert rho_eps(eps + step, 2.0) < rho_eps(eps, 2.0)
