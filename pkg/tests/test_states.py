import math

import mpmath
import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from survlab.states import (
    CompactBump,
    ConvergenceError,
    FreeEvolved,
    GaussianMonomial,
    KQuadrature,
    SampledGrid,
    default_quadrature,
    derivative,
    evaluate,
    gaussian_packet,
    inner_product,
    monomial_packet,
    odd_packet,
)

K = sp.symbols("k", real=True)


def sympy_monomial(n, a):
    """Normalized N k^n e^{-a k^2} built symbolically, normalization included."""
    a_r = sp.nsimplify(a)
    f = K**n * sp.exp(-a_r * K**2)
    norm2 = sp.integrate(f**2, (K, -sp.oo, sp.oo))
    return f / sp.sqrt(norm2)


# --- named values ---------------------------------------------------------


def test_gaussian_packet_at_zero():
    assert evaluate(gaussian_packet(), 0.0) == pytest.approx(math.pi ** -0.25, rel=1e-15)


def test_odd_packet_vanishes_at_zero_with_unit_slope_constant():
    s = odd_packet()
    assert evaluate(s, 0.0) == 0
    assert derivative(s, 0.0, 1) == pytest.approx((4 / math.pi) ** 0.25, rel=1e-15)


def test_gaussian_packet_even_so_derivative_zero():
    assert derivative(gaussian_packet(), 0.0, 1) == 0


def test_monomial_two_at_one():
    expected = math.sqrt(4 / (3 * math.sqrt(math.pi))) * math.exp(-0.5)
    assert evaluate(monomial_packet(2), 1.0) == pytest.approx(expected, rel=1e-14)


def test_monomial_two_derivative_closed_form():
    k = np.linspace(-4, 4, 33)
    n_const = math.sqrt(4 / (3 * math.sqrt(math.pi)))
    expected = n_const * (2 * k - k**3) * np.exp(-k * k / 2)
    np.testing.assert_allclose(derivative(monomial_packet(2), k, 1), expected, rtol=1e-13, atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(0, 6), a=st.sampled_from([0.25, 0.5, 1.0, 1.5, 3.0]), order=st.integers(1, 2))
def test_monomial_derivatives_match_symbolic(n, a, order):
    expr = sp.diff(sympy_monomial(n, a), K, order)
    fn = sp.lambdify(K, expr, "numpy")
    k = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(derivative(GaussianMonomial(n, a), k, order), fn(k), rtol=1e-11, atol=1e-13)


# --- norms and quadrature ---------------------------------------------------


def test_quadrature_gaussian_integral_and_no_zero_node():
    q = KQuadrature()
    assert np.sum(q.weights * np.exp(-q.nodes**2)) == pytest.approx(math.sqrt(math.pi), rel=1e-10)
    assert not np.any(q.nodes == 0)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(0, 8), a=st.floats(0.2, 3.0))
def test_norm_matches_gaussian_moment(n, a):
    s = GaussianMonomial(n, a, normalize=False)
    exact = float(mpmath.quad(lambda k: k ** (2 * n) * mpmath.exp(-2 * a * k * k), [-mpmath.inf, 0, mpmath.inf]))
    assert s.norm2(default_quadrature(s)) == pytest.approx(exact, rel=1e-10)
    assert s.exact_norm2() == pytest.approx(exact, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(0, 8), a=st.floats(0.2, 3.0))
def test_normalized_states_have_unit_norm(n, a):
    s = GaussianMonomial(n, a)
    assert s.norm2(default_quadrature(s)) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("bump", [CompactBump(0.5, 2.5), CompactBump(0.3, 1.0, p=2.0, mirror=True),
                                  CompactBump(1.0, 4.0, p=0.5)])
def test_bump_normalized_and_zero_near_origin(bump):
    assert bump.norm2(default_quadrature(bump)) == pytest.approx(1.0, abs=1e-10)
    k = np.linspace(-bump.k_lo, bump.k_lo, 101)
    assert np.all(bump(k) == 0)


def test_bump_normalization_against_adaptive_quadrature():
    b = CompactBump(0.5, 2.5, p=1.0, normalize=False)
    exact, _ = integrate.quad(lambda k: float(abs(b(k)) ** 2), 0.5, 2.5, epsabs=1e-15, epsrel=1e-13)
    assert b.norm2(default_quadrature(b)) == pytest.approx(exact, rel=1e-10)


def test_bump_derivatives_match_finite_differences():
    b = CompactBump(0.5, 2.5, mirror=True)
    k = np.linspace(-2.4, 2.4, 41)
    k = k[np.abs(np.abs(k) - 1.5) < 0.95]
    h = 1e-5
    fd1 = (b(k + h) - b(k - h)) / (2 * h)
    fd2 = (b(k + h) - 2 * b(k) + b(k - h)) / h**2
    np.testing.assert_allclose(b.derivative(k, 1), fd1, rtol=1e-7, atol=1e-9)
    np.testing.assert_allclose(b.derivative(k, 2), fd2, rtol=1e-4, atol=1e-5)


# --- inner products -----------------------------------------------------------


def test_inner_products_named_states():
    assert inner_product(gaussian_packet(), gaussian_packet()) == pytest.approx(1.0, abs=1e-12)
    assert abs(inner_product(gaussian_packet(), odd_packet())) < 1e-15
    assert inner_product(monomial_packet(2), monomial_packet(2)) == pytest.approx(1.0, abs=1e-12)


def test_inner_product_analytic_overlap():
    # <phi_2, psi_0> = N2 N0 int k^2 e^{-k^2} dk = N2 N0 sqrt(pi)/2
    n0, n2 = math.pi ** -0.25, math.sqrt(4 / (3 * math.sqrt(math.pi)))
    assert inner_product(monomial_packet(2), gaussian_packet()) == pytest.approx(n2 * n0 * math.sqrt(math.pi) / 2,
                                                                                 rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(n1=st.integers(0, 5), n2=st.integers(0, 5), a1=st.floats(0.2, 2.0), a2=st.floats(0.2, 2.0),
       phase=st.floats(0, 2 * math.pi), t=st.floats(-5, 5))
def test_conjugate_symmetry_and_conjugate_linearity(n1, n2, a1, a2, phase, t):
    a = FreeEvolved(GaussianMonomial(n1, a1), t)
    b = GaussianMonomial(n2, a2)
    q = default_quadrature(a, b)
    ab = inner_product(a, b, q, check=False)
    ba = inner_product(b, a, q, check=False)
    assert abs(ab - np.conj(ba)) <= 1e-14
    c = complex(math.cos(phase), math.sin(phase)) * 2.0
    assert abs(inner_product(a * c, b, q, check=False) - np.conj(c) * ab) <= 1e-13
    assert inner_product(a, a, q, check=False).real >= 0
    assert abs(inner_product(a, a, q, check=False).imag) <= 1e-15


def test_inner_product_flags_unconverged_quadrature():
    s = FreeEvolved(monomial_packet(2), 40.0)
    with pytest.raises(ConvergenceError):
        inner_product(s, monomial_packet(2), KQuadrature(order=4, depth=4))


# --- sampled grids ------------------------------------------------------------


def test_sampled_grid_interpolates_and_vanishes_outside():
    nodes = np.linspace(-6, 6, 241)
    ref = monomial_packet(2)
    grid = SampledGrid(nodes, ref(nodes))
    k = np.linspace(-5.9, 5.9, 57) + 0.013
    np.testing.assert_allclose(grid(k), ref(k), atol=2e-6)
    np.testing.assert_array_equal(grid(np.array([-7.0, 6.5])), 0)


def test_sampled_grid_derivatives_close_to_analytic():
    nodes = np.linspace(-6, 6, 481)
    ref = monomial_packet(2)
    grid = SampledGrid(nodes, ref(nodes))
    k = np.linspace(-4, 4, 17) + 0.01
    np.testing.assert_allclose(grid.derivative(k, 1), ref.derivative(k, 1), atol=1e-5)
    hermite = SampledGrid(nodes, ref(nodes), ref.derivative(nodes, 1))
    np.testing.assert_allclose(hermite.derivative(k, 1), ref.derivative(k, 1), atol=1e-6)


def test_sampled_grid_rejects_unsorted_nodes():
    with pytest.raises(ValueError):
        SampledGrid([0.0, 2.0, 1.0, 3.0], [1, 1, 1, 1])


def test_constructor_validation():
    with pytest.raises(ValueError):
        GaussianMonomial(-1, 0.5)
    with pytest.raises(ValueError):
        GaussianMonomial(1, 0.0)
    with pytest.raises(ValueError):
        CompactBump(1.0, 0.5)


# --- position side --------------------------------------------------------------


@pytest.mark.parametrize("n", [0, 1, 2, 3])
def test_position_closed_form_matches_quadrature(n):
    s = GaussianMonomial(n, 0.7)
    x = np.linspace(-5, 5, 11)
    direct = np.array([integrate.quad(lambda q: (s(q) * np.exp(1j * q * xi)).real, -12, 12)[0]
                       + 1j * integrate.quad(lambda q: (s(q) * np.exp(1j * q * xi)).imag, -12, 12)[0]
                       for xi in x]) / math.sqrt(2 * math.pi)
    np.testing.assert_allclose(s.position(x), direct, atol=1e-12)


def _half_line_direct(s, c, k, side, moment):
    """int x^m e^{-ikx} psi(x) dx over a half line by adaptive quadrature in x."""
    def piece(part):
        f = lambda x: part(x**moment * np.exp(-1j * k * x) * s.position(x))  # noqa: E731
        lo, hi = (c, np.inf) if side == "+" else (-np.inf, c)
        return integrate.quad(f, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=400)[0]
    return piece(np.real) + 1j * piece(np.imag)


@pytest.mark.parametrize("n,c,side,moment", [(0, 0.5, "+", 0), (2, -0.5, "+", 0), (2, 0.5, "-", 1),
                                             (3, -1.0, "-", 0), (1, 0.25, "+", 1)])
def test_gaussian_half_line_matches_direct_integration(n, c, side, moment):
    s = GaussianMonomial(n, 0.5)
    for k in (-3.0, -0.4, 0.7, 2.5):
        got = complex(s.half_line(c, k, side, moment)[0])
        assert abs(got - _half_line_direct(s, c, k, side, moment)) < 1e-10


def _qawf_half_line(s, c, k):
    """int_c^inf e^{-ikx} psi(x) dx, with psi(x) from its momentum integral, by QAWF.

    The bump's position tail decays slowly, so the infinite interval is done
    by a Fourier-weighted rule on a finite head plus the oscillatory tail.
    """
    def psi(x):
        return complex(s.position(np.array([x]))[0])

    head = 40.0
    total = 0.0 + 0.0j
    for part, cplx in ((np.real, 1.0), (np.imag, 1j)):
        f = lambda x: part(psi(x))  # noqa: E731
        # e^{-ikx} = cos(kx) - i sin(kx)
        cos_head = integrate.quad(f, c, c + head, weight="cos", wvar=k, limit=400)[0]
        sin_head = integrate.quad(f, c, c + head, weight="sin", wvar=k, limit=400)[0]
        g = lambda y: f(y + c + head)  # noqa: E731
        cos_tail = integrate.quad(g, 0, np.inf, weight="cos", wvar=k, limlst=200)[0]
        sin_tail = integrate.quad(g, 0, np.inf, weight="sin", wvar=k, limlst=200)[0]
        ck, sk = math.cos(k * (c + head)), math.sin(k * (c + head))
        cos_full = cos_head + ck * cos_tail - sk * sin_tail
        sin_full = sin_head + sk * cos_tail + ck * sin_tail
        total += cplx * (cos_full - 1j * sin_full)
    return total


@pytest.mark.parametrize("k", [-1.3, 0.9, 2.0])
def test_bump_half_line_matches_oscillatory_quadrature(k):
    s = CompactBump(0.5, 2.5)
    got = complex(s.half_line(0.5, k, "+")[0])
    assert abs(got - _qawf_half_line(s, 0.5, k)) < 1e-6


def test_half_lines_sum_to_full_transform():
    s = CompactBump(0.5, 2.5)
    k = np.linspace(-3, 3, 13)
    total = s.half_line(0.3, k, "+") + s.half_line(0.3, k, "-")
    np.testing.assert_allclose(total, s.fourier(k), atol=1e-13)


def test_reflected_state():
    s = monomial_packet(3)
    r = s.reflected()
    k = np.linspace(-2, 2, 9)
    np.testing.assert_allclose(r(k), s(-k))
    np.testing.assert_allclose(r.derivative(k, 1), -s.derivative(-k, 1))
    np.testing.assert_allclose(r.half_line(0.2, k, "+"), s.half_line(-0.2, -k, "-"), atol=1e-14)
