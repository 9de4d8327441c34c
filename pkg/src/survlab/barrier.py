"""Scattering eigenfunctions of the square barrier V(x) = V0 on |x| <= a/2.

For k > 0 the outgoing solution is

    x < -a/2 :  A e^{ikx} + B e^{-ikx}
    |x| <= a/2:  C e^{i kappa x} + D e^{-i kappa x}
    x > a/2  :  F e^{ikx}

with kappa^2 = k^2 - V0 and A = (2 pi)^{-1/2}.  Everything is evaluated
through the entire functions

    c(z, s) = cos(sqrt(z) s),   sn(z, s) = sin(sqrt(z) s) / sqrt(z),   z = k^2 - V0,

which are real for real z, so the propagating (z > 0), evanescent (z < 0) and
threshold (z ~ 0) momenta share one formula.  Near z s^2 = 0 a Taylor series
replaces the trigonometric forms to avoid cancellation.

Negative k follows from phi_-(x, k) = phi_-(-x, -k); the incoming family from
phi_+(x, k) = conj(phi_-(x, -k)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .states import ConvergenceError, gauss_legendre

AMPLITUDE = 1.0 / math.sqrt(2 * math.pi)
SERIES_TERMS = 14
SERIES_RADIUS = 0.5


@dataclass(frozen=True)
class BarrierSpec:
    V0: float
    a: float

    def __post_init__(self):
        if not (self.a > 0 and math.isfinite(self.a)):
            raise ValueError("barrier width a must be positive")
        if not (self.V0 >= 0 and math.isfinite(self.V0)):
            raise ValueError("barrier height V0 must be non-negative")

    @property
    def k0(self) -> float:
        return math.sqrt(self.V0)

    @property
    def A(self) -> float:
        return AMPLITUDE

    @property
    def band(self) -> float:
        """Half-width of the threshold band around k0."""
        return 1e-4 * self.k0

    def potential(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) <= self.a / 2, self.V0, 0.0)

    def kappa(self, k):
        """Interior wavenumber sqrt(k^2 - V0), imaginary below threshold."""
        return np.sqrt(np.asarray(k, dtype=float) ** 2 - self.V0 + 0j)

    def rho(self, k):
        return np.sqrt(self.V0 - np.asarray(k, dtype=float) ** 2 + 0j)

    def branch(self, k):
        k = np.asarray(k, dtype=float)
        kk = np.abs(k)
        tag = np.where(kk > self.k0, "Propagating", "Evanescent").astype(object)
        tag = np.where(np.abs(kk - self.k0) < self.band, "Critical", tag)
        return np.where(k < 0, "NegativeK", tag)

    def describe(self) -> dict:
        return {"type": "barrier", "V0": self.V0, "a": self.a}


# ---------------------------------------------------------------------------
# entire functions


_FACT = np.array([math.factorial(m) for m in range(2 * SERIES_TERMS + 2)], dtype=float)


def entire_pair(z, s):
    """c, sn and their z-derivatives at (z, s), broadcasting; all real."""
    z, s = np.broadcast_arrays(np.asarray(z, dtype=float), np.asarray(s, dtype=float))
    w = z * s * s
    small = np.abs(w) < SERIES_RADIUS

    # series: c = sum (-w)^n/(2n)!, sn = s sum (-w)^n/(2n+1)!
    ws = np.where(small, w, 0.0)
    c_ser = np.zeros_like(ws)
    sn_ser = np.zeros_like(ws)
    cz_ser = np.zeros_like(ws)
    snz_ser = np.zeros_like(ws)
    power = np.ones_like(ws)  # (-w)^n
    for n in range(SERIES_TERMS):
        c_ser += power / _FACT[2 * n]
        sn_ser += power / _FACT[2 * n + 1]
        if n + 1 < SERIES_TERMS:
            # d/dz of (-1)^{n+1} z^{n+1} s^{2n+2} = -(n+1) s^2 (-w)^n
            cz_ser -= (n + 1) * power / _FACT[2 * n + 2]
            snz_ser -= (n + 1) * power / _FACT[2 * n + 3]
        power = power * (-ws)
    sn_ser = s * sn_ser
    cz_ser = s * s * cz_ser
    snz_ser = s**3 * snz_ser

    pos = ~small & (z > 0)
    neg = ~small & (z < 0)
    root = np.sqrt(np.abs(np.where(small, 1.0, z)))
    arg = root * s
    c_dir = np.where(pos, np.cos(np.where(pos, arg, 0.0)), np.cosh(np.where(neg, arg, 0.0)))
    sn_dir = np.where(pos, np.sin(np.where(pos, arg, 0.0)), np.sinh(np.where(neg, arg, 0.0))) / root
    zs = np.where(small, 1.0, z)
    cz_dir = -0.5 * s * sn_dir
    snz_dir = (s * c_dir - sn_dir) / (2 * zs)

    return (np.where(small, c_ser, c_dir), np.where(small, sn_ser, sn_dir),
            np.where(small, cz_ser, cz_dir), np.where(small, snz_ser, snz_dir))


# ---------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True)
class EigenCoefficients:
    """Coefficients of the outgoing solution at |k|.

    For k < 0 (tag NegativeK) they describe phi(-x, |k|), and for the
    incoming family they are the complex conjugates.
    """

    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    F: np.ndarray
    kappa: np.ndarray
    branch: np.ndarray


@dataclass(frozen=True)
class _Positive:
    F: np.ndarray
    F_k: np.ndarray
    B: np.ndarray
    B_k: np.ndarray
    E: np.ndarray
    E_k: np.ndarray
    z: np.ndarray


def _positive_coefficients(bar: BarrierSpec, k) -> _Positive:
    k = np.asarray(k, dtype=float)
    a, V0 = bar.a, bar.V0
    z = k * k - V0
    c_a, sn_a, cz_a, snz_a = entire_pair(z, a)
    mix = (2 * k * k - V0) / (2 * k)
    denom = c_a - 1j * mix * sn_a
    denom_k = 2 * k * cz_a - 1j * (1 + V0 / (2 * k * k)) * sn_a - 1j * (2 * k * k - V0) * snz_a
    F = AMPLITUDE * np.exp(-1j * k * a) / denom
    F_k = -1j * a * F - F * denom_k / denom
    half = np.exp(0.5j * k * a)
    E = half * F
    E_k = half * (F_k + 0.5j * a * F)
    B = -0.5j * V0 * sn_a * F / k
    B_k = -0.5j * V0 * (2 * k * snz_a * F / k + sn_a * F_k / k - sn_a * F / (k * k))
    return _Positive(F, F_k, B, B_k, E, E_k, z)


def _reject_zero(k):
    if np.any(np.asarray(k) == 0):
        raise ValueError("k = 0 is not a scattering momentum")


def coefficients(bar: BarrierSpec, k, sign: str = "-") -> EigenCoefficients:
    _check_sign(sign)
    _reject_zero(k)
    k = np.asarray(k, dtype=float)
    kk = np.abs(k)
    pc = _positive_coefficients(bar, kk)
    kappa = bar.kappa(kk)
    with np.errstate(divide="ignore", invalid="ignore"):
        C = (kappa + kk) / (2 * kappa) * np.exp(0.5j * (kk - kappa) * bar.a) * pc.F
        D = (kappa - kk) / (2 * kappa) * np.exp(0.5j * (kk + kappa) * bar.a) * pc.F
    B, F = pc.B, pc.F
    if sign == "+":
        B, C, D, F = np.conj(B), np.conj(C), np.conj(D), np.conj(F)
    tag_k = k if sign == "-" else -k
    return EigenCoefficients(B, C, D, F, kappa, bar.branch(tag_k))


def transmission_limit(bar: BarrierSpec) -> complex:
    """lim_{k -> 0+} F(k)/k."""
    return AMPLITUDE / (0.5j * bar.k0 * math.sinh(bar.k0 * bar.a))


def _check_sign(sign):
    if sign not in ("-", "+"):
        raise ValueError("sign must be '-' or '+'")


# ---------------------------------------------------------------------------
# eigenfunctions


@dataclass(frozen=True)
class EigenValues:
    phi: np.ndarray
    dphi_dx: np.ndarray
    d2phi_dx2: np.ndarray
    dphi_dk: np.ndarray
    branch: np.ndarray


def _positive_eigen(bar: BarrierSpec, x, k):
    x, k = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(k, dtype=float))
    pc = _positive_coefficients(bar, k)
    half = bar.a / 2
    A = AMPLITUDE

    s = np.clip(x, -half, half) - half
    c, sn, cz, snz = entire_pair(pc.z, s)
    u = c + 1j * k * sn
    u_x = -pc.z * sn + 1j * k * c
    u_k = 2 * k * cz + 1j * sn + 2j * k * k * snz
    inner = (pc.E * u, pc.E * u_x, -pc.z * pc.E * u, pc.E_k * u + pc.E * u_k)

    ep = np.exp(1j * k * x)
    right = (pc.F * ep, 1j * k * pc.F * ep, -k * k * pc.F * ep, (pc.F_k + 1j * x * pc.F) * ep)

    em = np.conj(ep)
    lv = A * ep + pc.B * em
    left = (lv, 1j * k * (A * ep - pc.B * em), -k * k * lv, 1j * x * A * ep + (pc.B_k - 1j * x * pc.B) * em)

    is_left, is_right = x < -half, x > half
    return tuple(np.where(is_left, l, np.where(is_right, r, i)) for l, i, r in zip(left, inner, right))


def evaluate(bar: BarrierSpec, x, k, sign: str = "-") -> EigenValues:
    """phi_sign(x, k), its x-derivatives and its k-derivative, broadcasting x and k."""
    _check_sign(sign)
    _reject_zero(k)
    x, k = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(k, dtype=float))
    km = k if sign == "-" else -k  # momentum of the outgoing solution to use
    neg = km < 0
    xx = np.where(neg, -x, x)
    phi, phi_x, phi_xx, phi_k = _positive_eigen(bar, xx, np.abs(km))
    # phi_-(x, k) = phi_-(-x, -k)
    phi_x = np.where(neg, -phi_x, phi_x)
    phi_k = np.where(neg, -phi_k, phi_k)
    if sign == "+":
        # phi_+(x, k) = conj(phi_-(x, -k))
        phi, phi_x, phi_xx, phi_k = np.conj(phi), np.conj(phi_x), np.conj(phi_xx), -np.conj(phi_k)
    return EigenValues(phi, phi_x, phi_xx, phi_k, bar.branch(k))


def eigenfunction(bar: BarrierSpec, x, k, sign: str = "-"):
    return evaluate(bar, x, k, sign).phi


def eigenfunction_k_derivative(bar: BarrierSpec, x, k, sign: str = "-"):
    return evaluate(bar, x, k, sign).dphi_dk


def interior_from_coefficients(bar: BarrierSpec, x, k):
    """C e^{i kappa x} + D e^{-i kappa x} for k > 0 straight from the coefficient formulas."""
    co = coefficients(bar, k)
    x = np.asarray(x, dtype=float)
    return co.C * np.exp(1j * co.kappa * x) + co.D * np.exp(-1j * co.kappa * x)


def plane_wave(x, k):
    return AMPLITUDE * np.exp(1j * np.asarray(k) * np.asarray(x))


# ---------------------------------------------------------------------------
# residuals


def schrodinger_residual(bar: BarrierSpec, x, k, sign: str = "-"):
    """|-phi'' + V phi - k^2 phi| from the exact piecewise second derivative."""
    ev = evaluate(bar, x, k, sign)
    k = np.asarray(k, dtype=float)
    return np.abs(-ev.d2phi_dx2 + bar.potential(x) * ev.phi - k * k * ev.phi)


def scattered_part_integral(bar: BarrierSpec, x, k, sign: str = "-", order: int = 64):
    """g(x, k) = -+ (1/(2i|k|)) int_I exp(-+ i|k||x-y|) V(y) phi(y, k) dy by quadrature.

    The interval is split at y = x so each piece has a smooth integrand.
    """
    _check_sign(sign)
    _reject_zero(k)
    x, k = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(k, dtype=float))
    half = bar.a / 2
    cut = np.clip(x, -half, half)
    s, w = gauss_legendre(order)
    total = np.zeros(x.shape, dtype=complex)
    outgoing = 1.0 if sign == "-" else -1.0
    for lo, hi in ((np.full(x.shape, -half), cut), (cut, np.full(x.shape, half))):
        mid, rad = 0.5 * (lo + hi), 0.5 * (hi - lo)
        y = mid[..., None] + rad[..., None] * s
        kk = np.abs(k)[..., None]
        kern = np.exp(1j * outgoing * kk * np.abs(x[..., None] - y))
        phi = evaluate(bar, y, np.broadcast_to(k[..., None], y.shape), sign).phi
        total += rad * np.sum(w * kern * bar.V0 * phi, axis=-1)
    return outgoing * total / (2j * np.abs(k))


def lippmann_schwinger_residual(bar: BarrierSpec, x, k, sign: str = "-", check: bool = True):
    """|g_integral - (phi - A e^{ikx})|."""
    g = scattered_part_integral(bar, x, k, sign)
    if check:
        g_fine = scattered_part_integral(bar, x, k, sign, order=96)
        scale = np.maximum(np.abs(g_fine), AMPLITUDE)
        if np.any(np.abs(g_fine - g) > 1e-10 * scale):
            raise ConvergenceError("Lippmann-Schwinger quadrature unconverged")
    phi = eigenfunction(bar, x, k, sign)
    return np.abs(g - (phi - plane_wave(x, k)))


# ---------------------------------------------------------------------------
# suprema and envelopes


def default_k_grid(bar: BarrierSpec, k_max: float = 12.0, count: int = 2001, depth: int = 30) -> np.ndarray:
    """Uniform plus dyadic positive momenta, with points hugging k0."""
    uniform = np.linspace(k_max / count, k_max, count)
    dyadic = 2.0 ** -np.arange(1, depth + 1)
    extra = []
    if bar.k0 > 0:
        extra = bar.k0 * (1 + np.array([-1e-3, -1e-5, 0.0, 1e-5, 1e-3]))
    return np.unique(np.concatenate([dyadic, uniform, extra]))


def default_x_grid(bar: BarrierSpec, count: int = 201) -> np.ndarray:
    return np.linspace(-bar.a / 2, bar.a / 2, count)


@dataclass(frozen=True)
class Supremum:
    value: float
    x: float
    k: float


@dataclass(frozen=True)
class BoundConstants:
    gamma: Supremum
    delta: Supremum
    gamma_partial: Supremum
    grid: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            name: {"value": s.value, "x": s.x, "k": s.k}
            for name, s in (("gamma", self.gamma), ("delta", self.delta), ("gamma_partial", self.gamma_partial))
        } | {"grid": self.grid}


def _quantities(bar, x, k, sign):
    ev = evaluate(bar, x, k, sign)
    return np.abs(ev.phi), np.abs(ev.phi / k), np.abs(ev.dphi_dk)


def _polish(fn, x0, k0, bar, k_lo, k_hi):
    half = bar.a / 2
    res = minimize(lambda p: -fn(p[0], p[1]), np.array([x0, k0]), method="L-BFGS-B",
                   bounds=[(-half, half), (k_lo, k_hi)], options={"ftol": 1e-15, "gtol": 1e-13})
    return -res.fun, float(res.x[0]), float(res.x[1])


def bound_constants(bar: BarrierSpec, sign: str = "-", x_grid=None, k_grid=None,
                    polish: bool = True, candidates: int = 4) -> BoundConstants:
    """Suprema over x in I and k != 0 of |phi|, |phi/k| and |d phi/dk|.

    Grid maxima are refined by a bounded local search started from the best
    few grid points, so they dominate off-grid samples as well.
    """
    x = default_x_grid(bar) if x_grid is None else np.asarray(x_grid, dtype=float)
    kp = default_k_grid(bar) if k_grid is None else np.asarray(k_grid, dtype=float)
    kp = kp[kp > 0]
    k = np.concatenate([-kp[::-1], kp])
    X, K = np.meshgrid(x, k, indexing="ij")
    grids = _quantities(bar, X, K, sign)
    out = []
    for idx, values in enumerate(grids):
        flat = np.argsort(values, axis=None)[::-1][:candidates]
        best = Supremum(float(values.flat[flat[0]]), float(X.flat[flat[0]]), float(K.flat[flat[0]]))
        if polish:
            for f in flat:
                x0, kk0 = float(X.flat[f]), float(K.flat[f])
                j = int(np.searchsorted(kp, abs(kk0)))
                lo = kp[j - 1] if j > 0 else kp[0] * 2.0**-10
                hi = kp[j + 1] if j + 1 < kp.size else kp[-1]
                sgn = math.copysign(1.0, kk0)

                def fn(xv, kv, idx=idx, sgn=sgn):
                    return float(_quantities(bar, np.array(xv), np.array(sgn * kv), sign)[idx])

                val, xv, kv = _polish(fn, x0, abs(kk0), bar, lo, hi)
                if val > best.value:
                    best = Supremum(val, xv, sgn * kv)
        out.append(best)
    grid = {"x_points": int(x.size), "k_points": int(k.size), "k_max": float(kp.max()),
            "k_min": float(kp.min()), "polished": polish}
    return BoundConstants(*out, grid=grid)


def dominating_function(bar: BarrierSpec, k, constants: BoundConstants | None = None, sign: str = "-"):
    """delta |k| for |k| <= 1, gamma beyond."""
    constants = constants or bound_constants(bar, sign)
    k = np.asarray(k, dtype=float)
    return np.where(np.abs(k) <= 1, constants.delta.value * np.abs(k), constants.gamma.value)


def propagating_bound(bar: BarrierSpec) -> float:
    """Ceiling for |phi|^2 on I x (k0, inf)."""
    return (2 + bar.k0 * bar.a) ** 2 * AMPLITUDE**2


def evanescent_bound(bar: BarrierSpec) -> float:
    """Ceiling for |phi|^2 on I x (0, k0)."""
    t = bar.k0 * bar.a
    return (math.cosh(t) + 2 * math.sinh(t)) ** 2 * AMPLITUDE**2


SINC_REMAINDER_SUP = 1.0 / 3.0  # sup_{x>0} |(sin x - x cos x)/x^3|, attained as x -> 0


def hyperbolic_remainder_sup(upper: float) -> float:
    """sup over (0, upper) of |(sinh x - x cosh x)/x^3|."""
    if upper <= 0:
        return 1.0 / 3.0
    x = np.linspace(upper * 1e-6, upper, 20001)
    small = x < 1e-2
    series = -(1 / 3 + x**2 / 30 + x**4 / 840)
    direct = (np.sinh(x) - x * np.cosh(x)) / np.where(small, 1.0, x) ** 3
    return float(np.max(np.abs(np.where(small, series, direct))))


def transmission_ratio_sup(bar: BarrierSpec, count: int = 4001) -> float:
    """sup over 0 < k < k0 of |F(k)|^2 / k^2, grid plus local refinement."""
    if bar.k0 == 0:
        return 0.0
    k = np.linspace(bar.k0 * 1e-8, bar.k0 * (1 - 1e-9), count)
    vals = np.abs(_positive_coefficients(bar, k).F / k) ** 2
    i = int(np.argmax(vals))
    lo, hi = k[max(i - 1, 0)], k[min(i + 1, count - 1)]
    res = minimize(lambda p: -float(np.abs(_positive_coefficients(bar, p).F[0] / p[0]) ** 2),
                   np.array([k[i]]), method="L-BFGS-B", bounds=[(lo, hi)])
    return float(max(vals[i], -res.fun))


def derivative_envelopes(bar: BarrierSpec) -> dict:
    """Analytic ceilings for |d phi/dk| on I x (k0, inf) and on I x (0, k0)."""
    A, a, k0, V0 = AMPLITUDE, bar.a, bar.k0, bar.V0
    ch = SINC_REMAINDER_SUP
    above = (4 + k0 * a + ch * a * a) * a * A + (2 + k0 * a) * (6.5 + k0 * a + a * a * V0 * ch / 2) * a * A
    if k0 == 0:
        return {"propagating": above, "evanescent": 0.0}
    cl = hyperbolic_remainder_sup(k0 * a)
    sh, co = math.sinh(k0 * a), math.cosh(k0 * a)
    first = (a * (2 * sh + co + V0 * a * a * cl) + 2 * sh / k0) * A
    second = (co + 2 * sh) * ((a * sh + sh / k0 + V0 * a**3 * cl) * A
                              + k0 * sh / (2 * A) * transmission_ratio_sup(bar) + 0.5 * a * A)
    return {"propagating": above, "evanescent": first + second}
