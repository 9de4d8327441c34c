"""Momentum-space wavefunctions and the k-space quadrature they are integrated on.

Every state is a callable ``psi_hat(k)`` acting on numpy arrays.  States also
know how to produce their position representation and the half-line Fourier
integrals needed by the scattering pullback; Gaussian monomials do this in
closed form, everything else through momentum-space principal values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial import hermite as _herm
from numpy.polynomial import polynomial as _poly
from scipy.interpolate import CubicHermiteSpline, CubicSpline
from scipy.special import gamma, gammaincc, wofz

SQRT2PI = math.sqrt(2.0 * math.pi)


class ConvergenceError(ArithmeticError):
    """Two quadrature refinement levels disagree beyond tolerance."""


def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(order)


def map_panels(edges: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes/weights on consecutive ``edges``."""
    s, w = gauss_legendre(order)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    return ((lo + hi) * 0.5 + half * s).ravel(), (half * w).ravel()


def panel_edges(k_max: float, depth: int, breakpoints=(), step: float = 0.5) -> np.ndarray:
    """Positive panel edges: 0, dyadic 2^-j toward zero, uniform up to k_max."""
    dyadic = 2.0 ** -np.arange(depth, 0, -1, dtype=float)
    uniform = np.arange(1.0, k_max + 0.5 * step, step)
    extra = [abs(b) for b in breakpoints if 0.0 < abs(b) < k_max]
    edges = np.unique(np.concatenate([[0.0], dyadic, uniform, [k_max], extra]))
    edges = edges[edges <= k_max]
    # merge slivers produced by breakpoints landing next to an existing edge
    keep = np.concatenate([[True], np.diff(edges) > 1e-9 * np.maximum(edges[1:], 1.0)])
    return edges[keep]


@dataclass(frozen=True)
class KQuadrature:
    """Composite Gauss-Legendre rule on [-k_max, k_max], graded toward k=0."""

    k_max: float = 12.0
    depth: int = 30
    order: int = 24
    breakpoints: tuple = ()

    @cached_property
    def edges(self) -> np.ndarray:
        return panel_edges(self.k_max, self.depth, self.breakpoints)

    @cached_property
    def _rule(self):
        x, w = map_panels(self.edges, self.order)
        return np.concatenate([-x[::-1], x]), np.concatenate([w[::-1], w])

    @property
    def nodes(self) -> np.ndarray:
        return self._rule[0]

    @property
    def weights(self) -> np.ndarray:
        return self._rule[1]

    def integrate(self, values) -> complex:
        return np.sum(self.weights * values)

    def refined(self) -> "KQuadrature":
        return KQuadrature(self.k_max, self.depth + 10, self.order + 8, self.breakpoints)

    def with_breakpoints(self, *points) -> "KQuadrature":
        return KQuadrature(self.k_max, self.depth, self.order, tuple(self.breakpoints) + tuple(points))

    def describe(self) -> dict:
        return {
            "k_max": self.k_max,
            "depth": self.depth,
            "order": self.order,
            "breakpoints": [float(b) for b in self.breakpoints],
            "n_nodes": int(self.nodes.size),
        }


# ---------------------------------------------------------------------------
# states


class MomentumState:
    """Base class: a square-integrable psi_hat(k) with derivative access."""

    kind = "abstract"

    def __call__(self, k):
        raise NotImplementedError

    def derivative(self, k, order: int = 1):
        raise NotImplementedError

    def breakpoints(self) -> tuple:
        """|k| values where the state is not analytic; used as panel edges."""
        return ()

    def support(self) -> list[tuple[float, float]]:
        """Intervals outside of which psi_hat vanishes (or is negligible)."""
        return [(-12.0, 12.0)]

    def norm2(self, quad: KQuadrature | None = None) -> float:
        quad = quad or KQuadrature(breakpoints=self.breakpoints())
        return float(quad.integrate(np.abs(self(quad.nodes)) ** 2))

    def tail_bound(self, k_max: float) -> float | None:
        """Mass of |psi_hat|^2 beyond |k| = k_max, when known analytically."""
        return None

    def describe(self) -> dict:
        return {"kind": self.kind}

    # position side ---------------------------------------------------------

    def _momentum_rule(self, order: int = 24, panels: int = 40):
        nodes, weights = [], []
        for lo, hi in self.support():
            x, w = map_panels(np.linspace(lo, hi, panels + 1), order)
            nodes.append(x)
            weights.append(w)
        return np.concatenate(nodes), np.concatenate(weights)

    def position(self, x):
        """psi(x) = (2 pi)^{-1/2} int psi_hat(q) e^{iqx} dq."""
        q, w = self._momentum_rule()
        x = np.asarray(x, dtype=float)
        phase = np.exp(1j * np.multiply.outer(x, q))
        return phase @ (w * self(q)) / SQRT2PI

    def fourier(self, k, moment: int = 0):
        """int x^m e^{-ikx} psi(x) dx over the whole line (m = 0, 1)."""
        k = np.asarray(k, dtype=float)
        if moment == 0:
            return SQRT2PI * self(k)
        return SQRT2PI * 1j * self.derivative(k, 1)

    def half_line(self, c: float, k, side: str = "+", moment: int = 0):
        """int x^m e^{-ikx} psi(x) dx over (c, inf) for side '+', (-inf, c) for '-'.

        Generic route: the distributional identity
        int_c^inf e^{isx} dx = e^{isc} (pi delta(s) + i PV 1/s)
        turns the half-line integral into a momentum principal value.
        """
        k = np.atleast_1d(np.asarray(k, dtype=float))
        spectral = self if moment == 0 else _XMultiplied(self)
        plus = _principal_value_half_line(spectral, c, k)
        if side == "+":
            return plus
        return self.fourier(k, moment) - plus

    # algebra ---------------------------------------------------------------

    def __mul__(self, c):
        return Scaled(self, complex(c))

    __rmul__ = __mul__

    def reflected(self) -> "MomentumState":
        return Reflected(self)


def _principal_value_half_line(spectral, c, k, order: int = 24, panels: int = 40):
    q, w = spectral._momentum_rule(order, panels)
    f_q = spectral(q) * np.exp(1j * q * c)
    f_k = spectral(k) * np.exp(1j * k * c)
    df_k = (spectral.derivative(k, 1) + 1j * c * spectral(k)) * np.exp(1j * k * c)
    pv = np.zeros(k.shape, dtype=complex)
    for lo, hi in spectral.support():
        sel = (q >= lo) & (q <= hi)
        qs, ws, fs = q[sel], w[sel], f_q[sel]
        diff = qs[None, :] - k[:, None]
        close = np.abs(diff) < 1e-9 * max(hi - lo, 1.0)
        safe = np.where(close, 1.0, diff)
        quotient = np.where(close, df_k[:, None], (fs[None, :] - f_k[:, None]) / safe)
        pv += quotient @ ws
        with np.errstate(divide="ignore", invalid="ignore"):
            log_ratio = np.log(np.abs((hi - k) / (lo - k)))
            # at k on a support edge f_k = 0, so the log singularity contributes nothing
            pv += np.where(np.isfinite(log_ratio), f_k * log_ratio, 0.0)
    return (math.pi * spectral(k) + 1j * np.exp(-1j * k * c) * pv) / SQRT2PI


class _XMultiplied(MomentumState):
    """Fourier image of x psi(x), i.e. i psi_hat'(k)."""

    def __init__(self, base):
        self.base = base

    def __call__(self, k):
        return 1j * self.base.derivative(k, 1)

    def derivative(self, k, order=1):
        return 1j * self.base.derivative(k, order + 1)

    def support(self):
        return self.base.support()

    def _momentum_rule(self, order=24, panels=40):
        return self.base._momentum_rule(order, panels)


@dataclass(frozen=True, eq=False)
class GaussianMonomial(MomentumState):
    """psi_hat(k) = N k^n exp(-a k^2)."""

    n: int
    a: float
    normalize: bool = True
    kind = "gaussian_monomial"

    def __post_init__(self):
        if self.n < 0 or int(self.n) != self.n:
            raise ValueError("n must be a non-negative integer")
        if not self.a > 0:
            raise ValueError("a must be positive")

    @cached_property
    def norm_constant(self) -> float:
        if not self.normalize:
            return 1.0
        return 1.0 / math.sqrt(self.exact_norm2(unit=True))

    def exact_norm2(self, unit: bool = False) -> float:
        # int k^{2n} e^{-2a k^2} dk = Gamma(n + 1/2) / (2a)^{n + 1/2}
        base = gamma(self.n + 0.5) / (2 * self.a) ** (self.n + 0.5)
        return base if unit else base * self.norm_constant**2

    def __call__(self, k):
        k = np.asarray(k, dtype=float)
        return (self.norm_constant * k**self.n * np.exp(-self.a * k * k)).astype(complex)

    def derivative(self, k, order: int = 1):
        k = np.asarray(k, dtype=float)
        n, a = self.n, self.a
        # coefficients of the polynomial p with d^order/dk^order = p(k) e^{-ak^2}
        p = np.zeros(n + 1)
        p[n] = 1.0
        for _ in range(order):
            p = _poly.polyadd(_poly.polyder(p), _poly.polymulx(p) * (-2 * a))
        return (self.norm_constant * _poly.polyval(k, p) * np.exp(-a * k * k)).astype(complex)

    def support(self):
        kc = math.sqrt(1.0 / self.a)
        while kc**self.n * math.exp(-self.a * kc * kc) > 1e-18:
            kc *= 1.1
        return [(-kc, kc)]

    def tail_bound(self, k_max):
        return float(gammaincc(self.n + 0.5, 2 * self.a * k_max**2)) * self.exact_norm2()

    def describe(self):
        return {"kind": self.kind, "n": self.n, "a": self.a, "normalize": self.normalize}

    # closed-form position side ---------------------------------------------

    @cached_property
    def _position_poly(self) -> np.ndarray:
        """Coefficients h_m with psi(x) = sum h_m x^m exp(-x^2/(4a))."""
        n, a = self.n, self.a
        herm = np.zeros(n + 1)
        herm[n] = 1.0
        in_z = _herm.herm2poly(herm)  # H_n(z) in powers of z
        scale = (1.0 / (2 * math.sqrt(a))) ** np.arange(n + 1)  # z = x / (2 sqrt a)
        pre = self.norm_constant * math.sqrt(math.pi / a) / SQRT2PI * (1j / (2 * math.sqrt(a))) ** n
        return pre * in_z * scale

    def position(self, x):
        x = np.asarray(x, dtype=float)
        return _poly.polyval(x, self._position_poly) * np.exp(-x * x / (4 * self.a))

    def half_line(self, c, k, side="+", moment=0):
        k = np.atleast_1d(np.asarray(k, dtype=float))
        coeffs = self._position_poly
        if moment:
            coeffs = _poly.polymulx(coeffs)
        alpha = 1.0 / (4 * self.a)
        if c >= 0:
            plus = _gauss_poly_tail(coeffs, alpha, c, k)
        else:
            # (c, inf) = R minus (-inf, c); reflect x -> -x in the latter
            flipped = coeffs * (-1.0) ** np.arange(coeffs.size)
            plus = self.fourier(k, moment) - _gauss_poly_tail(flipped, alpha, -c, -k)
        if side == "+":
            return plus
        return self.fourier(k, moment) - plus


def _gauss_poly_tail(coeffs, alpha, c, beta):
    """sum_m coeffs[m] int_c^inf x^m exp(-alpha x^2 - i beta x) dx for c >= 0.

    I_0 via the Faddeeva function (stable for large beta), higher moments by
    the integration-by-parts recursion
    I_m = ((m-1) I_{m-2} - i beta I_{m-1} + c^{m-1} e_c) / (2 alpha).
    """
    sa = math.sqrt(alpha)
    e_c = np.exp(-alpha * c * c - 1j * beta * c)
    arg = 1j * sa * c - beta / (2 * sa)
    moments = [0.5 * math.sqrt(math.pi) / sa * e_c * wofz(arg)]
    for m in range(1, len(coeffs)):
        prev2 = moments[m - 2] if m >= 2 else 0.0
        moments.append(((m - 1) * prev2 - 1j * beta * moments[m - 1] + c ** (m - 1) * e_c) / (2 * alpha))
    return sum(cm * im for cm, im in zip(coeffs, moments))


@dataclass(frozen=True, eq=False)
class CompactBump(MomentumState):
    """Smooth bump supported on k_lo <= k <= k_hi (and the mirror image if ``mirror``).

    Profile exp(-p / (1 - u^2)) with u the position across the support; it is
    identically zero on (-k_lo, k_lo).
    """

    k_lo: float
    k_hi: float
    p: float = 1.0
    mirror: bool = False
    normalize: bool = True
    kind = "compact_bump"

    def __post_init__(self):
        if not 0 < self.k_lo < self.k_hi:
            raise ValueError("need 0 < k_lo < k_hi")
        if not self.p > 0:
            raise ValueError("p must be positive")

    @property
    def _mid(self):
        return 0.5 * (self.k_lo + self.k_hi)

    @property
    def _half(self):
        return 0.5 * (self.k_hi - self.k_lo)

    @cached_property
    def norm_constant(self) -> float:
        if not self.normalize:
            return 1.0
        x, w = map_panels(np.linspace(-1, 1, 65), 24)
        mass = self._half * np.sum(w * np.exp(-2 * self.p / (1 - x * x)))
        return 1.0 / math.sqrt(mass * (2 if self.mirror else 1))

    def _profile(self, k, order):
        k = np.asarray(k, dtype=float)
        out = np.zeros(np.shape(k))
        for sign in ((1, -1) if self.mirror else (1,)):
            u = (sign * k - self._mid) / self._half
            inside = np.abs(u) < 1
            ui = np.where(inside, u, 0.0)
            d = 1 - ui * ui
            g = -self.p / d
            base = np.where(inside, np.exp(g), 0.0)
            if order == 0:
                val = base
            elif order == 1:
                g1 = -2 * self.p * ui / d**2
                val = base * g1 * sign / self._half
            else:
                g1 = -2 * self.p * ui / d**2
                g2 = -2 * self.p * (1 + 3 * ui * ui) / d**3
                val = base * (g2 + g1 * g1) / self._half**2
            out = out + val
        return (self.norm_constant * out).astype(complex)

    def __call__(self, k):
        return self._profile(k, 0)

    def derivative(self, k, order=1):
        return self._profile(k, order)

    def breakpoints(self):
        # the support edges, plus interior edges so the flat-topped profile gets several panels
        return tuple(float(v) for v in np.linspace(self.k_lo, self.k_hi, 9))

    def support(self):
        s = [(self.k_lo, self.k_hi)]
        return [(-self.k_hi, -self.k_lo)] + s if self.mirror else s

    def tail_bound(self, k_max):
        return 0.0 if k_max >= self.k_hi else None

    def describe(self):
        return {"kind": self.kind, "k_lo": self.k_lo, "k_hi": self.k_hi, "p": self.p,
                "mirror": self.mirror, "normalize": self.normalize}


@dataclass(frozen=True, eq=False)
class SampledGrid(MomentumState):
    """Tabulated psi_hat on sorted nodes; cubic interpolation, zero outside.

    With ``derivatives`` supplied the interpolant is cubic Hermite and its own
    derivative is used; otherwise derivatives come from 4th-order finite
    differences of the interpolant.
    """

    nodes: np.ndarray
    values: np.ndarray
    derivatives: np.ndarray | None = None
    kind = "sampled_grid"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 4 or np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be a strictly increasing sequence of >= 4 points")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", np.asarray(self.values, dtype=complex))

    @cached_property
    def _spline(self):
        if self.derivatives is not None:
            return CubicHermiteSpline(self.nodes, self.values, np.asarray(self.derivatives, dtype=complex))
        return CubicSpline(self.nodes, self.values)

    def _eval(self, k, nu=0):
        k = np.asarray(k, dtype=float)
        inside = (k >= self.nodes[0]) & (k <= self.nodes[-1])
        return np.where(inside, self._spline(k, nu), 0.0).astype(complex)

    def __call__(self, k):
        return self._eval(k)

    def derivative(self, k, order=1):
        if self.derivatives is not None:
            return self._eval(k, order)
        k = np.asarray(k, dtype=float)
        h = 1e-3 * float(np.min(np.diff(self.nodes)))
        f = self._eval
        centered = (
            (-f(k + 2 * h) + 8 * f(k + h) - 8 * f(k - h) + f(k - 2 * h)) / (12 * h)
            if order == 1
            else (-f(k + 2 * h) + 16 * f(k + h) - 30 * f(k) + 16 * f(k - h) - f(k - 2 * h)) / (12 * h * h)
        )
        fwd = (
            (-25 * f(k) + 48 * f(k + h) - 36 * f(k + 2 * h) + 16 * f(k + 3 * h) - 3 * f(k + 4 * h)) / (12 * h)
            if order == 1
            else (35 * f(k) - 104 * f(k + h) + 114 * f(k + 2 * h) - 56 * f(k + 3 * h) + 11 * f(k + 4 * h)) / (12 * h * h)
        )
        bwd = (
            (25 * f(k) - 48 * f(k - h) + 36 * f(k - 2 * h) - 16 * f(k - 3 * h) + 3 * f(k - 4 * h)) / (12 * h)
            if order == 1
            else (35 * f(k) - 104 * f(k - h) + 114 * f(k - 2 * h) - 56 * f(k - 3 * h) + 11 * f(k - 4 * h)) / (12 * h * h)
        )
        near_lo = k - 2 * h < self.nodes[0]
        near_hi = k + 2 * h > self.nodes[-1]
        return np.where(near_lo, fwd, np.where(near_hi, bwd, centered))

    def support(self):
        return [(float(self.nodes[0]), float(self.nodes[-1]))]

    def _momentum_rule(self, order=6, panels=None):
        return map_panels(self.nodes, order)

    def breakpoints(self):
        return (abs(self.nodes[0]), abs(self.nodes[-1]))

    def tail_bound(self, k_max):
        return 0.0 if max(abs(self.nodes[0]), abs(self.nodes[-1])) <= k_max else None

    def describe(self):
        return {"kind": self.kind, "nodes": self.nodes.tolist(),
                "re": self.values.real.tolist(), "im": self.values.imag.tolist()}


class Scaled(MomentumState):
    """c * psi."""

    kind = "scaled"

    def __init__(self, base: MomentumState, c: complex):
        self.base, self.c = base, c

    def __call__(self, k):
        return self.c * self.base(k)

    def derivative(self, k, order=1):
        return self.c * self.base.derivative(k, order)

    def breakpoints(self):
        return self.base.breakpoints()

    def support(self):
        return self.base.support()

    def tail_bound(self, k_max):
        t = self.base.tail_bound(k_max)
        return None if t is None else abs(self.c) ** 2 * t

    def position(self, x):
        return self.c * self.base.position(x)

    def half_line(self, c, k, side="+", moment=0):
        return self.c * self.base.half_line(c, k, side, moment)

    def _momentum_rule(self, order=24, panels=40):
        return self.base._momentum_rule(order, panels)

    def describe(self):
        return {"kind": self.kind, "factor": [self.c.real, self.c.imag], "base": self.base.describe()}


class Reflected(MomentumState):
    """psi(-x), i.e. psi_hat(-k)."""

    kind = "reflected"

    def __init__(self, base: MomentumState):
        self.base = base

    def __call__(self, k):
        return self.base(-np.asarray(k, dtype=float))

    def derivative(self, k, order=1):
        return (-1) ** order * self.base.derivative(-np.asarray(k, dtype=float), order)

    def breakpoints(self):
        return self.base.breakpoints()

    def support(self):
        return sorted((-hi, -lo) for lo, hi in self.base.support())

    def position(self, x):
        return self.base.position(-np.asarray(x, dtype=float))

    def half_line(self, c, k, side="+", moment=0):
        flip = "-" if side == "+" else "+"
        return (-1) ** moment * self.base.half_line(-c, -np.asarray(k, dtype=float), flip, moment)

    def _momentum_rule(self, order=24, panels=40):
        q, w = self.base._momentum_rule(order, panels)
        return -q[::-1], w[::-1]

    def reflected(self):
        return self.base


class FreeEvolved(MomentumState):
    """e^{-i t k^2} psi_hat(k): the free evolution in momentum space."""

    kind = "free_evolved"

    def __init__(self, base: MomentumState, t: float):
        self.base, self.t = base, float(t)

    def __call__(self, k):
        k = np.asarray(k, dtype=float)
        return np.exp(-1j * self.t * k * k) * self.base(k)

    def derivative(self, k, order=1):
        k = np.asarray(k, dtype=float)
        ph = np.exp(-1j * self.t * k * k)
        d0, d1 = self.base(k), self.base.derivative(k, 1)
        if order == 1:
            return ph * (d1 - 2j * self.t * k * d0)
        d2 = self.base.derivative(k, 2)
        t = self.t
        return ph * (d2 - 4j * t * k * d1 + (-2j * t - 4 * t * t * k * k) * d0)

    def breakpoints(self):
        return self.base.breakpoints()

    def support(self):
        return self.base.support()


# ---------------------------------------------------------------------------
# named states


def gaussian_packet() -> GaussianMonomial:
    """pi^{-1/4} exp(-k^2/2)."""
    return GaussianMonomial(0, 0.5)


def odd_packet() -> GaussianMonomial:
    """(4/pi)^{1/4} k exp(-k^2/2)."""
    return GaussianMonomial(1, 0.5)


def monomial_packet(n: int, a: float = 0.5) -> GaussianMonomial:
    """Normalized k^n exp(-a k^2), n >= 2 lies in the time-operator domain."""
    return GaussianMonomial(n, a)


def evaluate(state: MomentumState, k):
    return state(k)


def derivative(state: MomentumState, k, order: int = 1):
    return state.derivative(k, order)


def default_quadrature(*states, **overrides) -> KQuadrature:
    points = tuple(sorted({float(p) for s in states for p in s.breakpoints()}))
    return KQuadrature(breakpoints=points, **overrides)


def inner_product(a: MomentumState, b: MomentumState, quad: KQuadrature | None = None,
                  check: bool = True, rtol: float = 1e-8) -> complex:
    """<a, b> = int conj(a_hat) b_hat dk, conjugate-linear in the first slot."""
    quad = quad or default_quadrature(a, b)

    def on(q):
        k = q.nodes
        return complex(q.integrate(np.conj(a(k)) * b(k)))

    value = on(quad)
    if check:
        fine = on(quad.refined())
        scale = max(abs(value), math.sqrt(a.norm2(quad) * b.norm2(quad)))
        if abs(fine - value) > rtol * scale:
            raise ConvergenceError(f"inner product unconverged: {value} vs {fine} on refinement")
    return value
