"""Survival amplitude under the square barrier.

Spectral route: pull the state back through the wave operator,
(W* psi)^(k) = int conj(phi(x, k)) psi(x) dx, then integrate
|(W* psi)^|^2 exp(-i t k^2) with the free-evolution quadrature.

Independent route: Strang split-step propagation of psi on a periodic grid.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import barrier as bmod
from .barrier import AMPLITUDE, BarrierSpec
from .free import EnergyQuadrature, SurvivalSeries, energy_quadrature_for, spectral_survival, time_grid
from .states import ConvergenceError, KQuadrature, MomentumState, gauss_legendre

SQRT2PI = math.sqrt(2 * math.pi)


class _Conjugated(MomentumState):
    """The state conj(psi(x)), i.e. k -> conj(psi_hat(-k))."""

    kind = "conjugated"

    def __init__(self, base):
        self.base = base

    def __call__(self, k):
        return np.conj(self.base(-np.asarray(k, dtype=float)))

    def derivative(self, k, order=1):
        return (-1) ** order * np.conj(self.base.derivative(-np.asarray(k, dtype=float), order))

    def support(self):
        return [(-hi, -lo) for lo, hi in self.base.support()][::-1]

    def breakpoints(self):
        return self.base.breakpoints()

    def position(self, x):
        return np.conj(self.base.position(x))

    def half_line(self, c, k, side="+", moment=0):
        return np.conj(self.base.half_line(c, -np.asarray(k, dtype=float), side, moment))


class PulledBackState(MomentumState):
    """k -> int conj(phi_sign(x, k)) psi(x) dx as a momentum-space state.

    The x-line is split at the barrier edges.  Outside the barrier the
    eigenfunction is a pair of plane waves, so those pieces are half-line
    Fourier transforms of psi; across the barrier a Gauss-Legendre rule is
    applied to the closed-form eigenfunction.
    """

    kind = "pulled_back"

    def __init__(self, state: MomentumState, bar: BarrierSpec, sign: str = "-", interior_order: int = 64):
        if sign not in ("-", "+"):
            raise ValueError("sign must be '-' or '+'")
        self.state, self.barrier, self.sign = state, bar, sign
        self.interior_order = interior_order
        s, w = gauss_legendre(interior_order)
        half = bar.a / 2
        self._y, self._w = half * s, half * w

    # outgoing family ---------------------------------------------------------

    def _positive(self, psi: MomentumState, k, want_derivative: bool):
        """Pull back of psi at k > 0 with the outgoing family, optional k-derivative."""
        bar = self.barrier
        half = bar.a / 2
        pc = bmod._positive_coefficients(bar, k)
        Bc, Fc = np.conj(pc.B), np.conj(pc.F)

        L0p = psi.half_line(-half, k, "-", 0)
        L0m = psi.half_line(-half, -k, "-", 0)
        R0 = psi.half_line(half, k, "+", 0)
        y, w = self._y, self._w
        psi_y = psi.position(y)
        ev = bmod.evaluate(bar, y[None, :], k[:, None])
        inner = np.conj(ev.phi) @ (w * psi_y)

        value = AMPLITUDE * L0p + Bc * L0m + Fc * R0 + inner
        g_part = Bc * L0m + (Fc - AMPLITUDE) * R0 + (np.conj(ev.phi) - AMPLITUDE * np.exp(-1j * np.outer(k, y))) @ (w * psi_y)
        if not want_derivative:
            return value, g_part, None
        L1p = psi.half_line(-half, k, "-", 1)
        L1m = psi.half_line(-half, -k, "-", 1)
        R1 = psi.half_line(half, k, "+", 1)
        d_inner = np.conj(ev.dphi_dk) @ (w * psi_y)
        deriv = (-1j * AMPLITUDE * L1p + np.conj(pc.B_k) * L0m + 1j * Bc * L1m
                 + np.conj(pc.F_k) * R0 - 1j * Fc * R1 + d_inner)
        return value, g_part, deriv

    def _outgoing(self, psi, k, want_derivative):
        """Pull back through the outgoing family at any k != 0."""
        k = np.atleast_1d(np.asarray(k, dtype=float))
        if np.any(k == 0):
            raise ValueError("k = 0 is not a scattering momentum")
        value = np.empty(k.shape, dtype=complex)
        g_part = np.empty(k.shape, dtype=complex)
        deriv = np.empty(k.shape, dtype=complex) if want_derivative else None
        pos = k > 0
        reflected = psi.reflected()
        for mask, source, flip in ((pos, psi, 1.0), (~pos, reflected, -1.0)):
            if not np.any(mask):
                continue
            v, g, d = self._positive(source, np.abs(k[mask]), want_derivative)
            value[mask], g_part[mask] = v, g
            if want_derivative:
                # phi(x, k) = phi(-x, -k) for k < 0
                deriv[mask] = flip * d
        return value, g_part, deriv

    def transform(self, k, want_derivative: bool = False):
        """(value, g_part, derivative) at k."""
        k = np.asarray(k, dtype=float)
        shape = k.shape
        flat = k.ravel()
        if self.sign == "-":
            v, g, d = self._outgoing(self.state, flat, want_derivative)
        else:
            # conj(phi_+(x, k)) = phi_-(x, -k): conj of the outgoing pullback of conj(psi) at -k
            v, g, d = self._outgoing(_Conjugated(self.state), -flat, want_derivative)
            v, g = np.conj(v), np.conj(g)
            d = -np.conj(d) if want_derivative else None
        out = (v.reshape(shape), g.reshape(shape), d.reshape(shape) if want_derivative else None)
        return out

    def __call__(self, k):
        return self.transform(k)[0]

    def derivative(self, k, order=1):
        if order == 1:
            return self.transform(k, want_derivative=True)[2]
        if order == 2:
            k = np.asarray(k, dtype=float)
            h = 1e-4 * np.maximum(1.0, np.abs(k))
            return (self.derivative(k + h, 1) - self.derivative(k - h, 1)) / (2 * h)
        raise NotImplementedError

    def breakpoints(self):
        pts = set(self.state.breakpoints())
        if self.barrier.k0 > 0:
            pts.add(self.barrier.k0)
        return tuple(sorted(pts))

    def support(self):
        return [(-12.0, 12.0)]

    def describe(self):
        return {"kind": self.kind, "state": self.state.describe(), "barrier": self.barrier.describe(),
                "sign": self.sign, "interior_order": self.interior_order}


def pulled_back_state(state: MomentumState, bar: BarrierSpec, sign: str = "-") -> PulledBackState:
    return PulledBackState(state, bar, sign)


@dataclass
class SpectralTransform:
    nodes: np.ndarray
    values: np.ndarray
    g_part: np.ndarray
    free_part: np.ndarray
    sign: str = "-"

    def split_residual(self) -> float:
        """max |values - (free_part + g_part)|."""
        return float(np.max(np.abs(self.values - self.free_part - self.g_part)))


def pullback(state: MomentumState, bar: BarrierSpec, sign: str = "-", nodes=None) -> SpectralTransform:
    """Tabulate (W* psi)^ at the nodes (default: the survival quadrature nodes)."""
    pulled = PulledBackState(state, bar, sign)
    if nodes is None:
        nodes = energy_quadrature_for(pulled).nodes
    nodes = np.asarray(nodes, dtype=float)
    values, g_part, _ = pulled.transform(nodes)
    return SpectralTransform(nodes, values, g_part, state(nodes), sign)


def pullback_norm2(state: MomentumState, bar: BarrierSpec, sign: str = "-", quad: KQuadrature | None = None) -> float:
    """int |(W* psi)^|^2 dk."""
    pulled = PulledBackState(state, bar, sign)
    quad = quad or KQuadrature(breakpoints=pulled.breakpoints())
    return float(quad.integrate(np.abs(pulled(quad.nodes)) ** 2).real)


# ---------------------------------------------------------------------------
# spectral survival


@dataclass
class BarrierSurvival:
    series: SurvivalSeries
    transform: SpectralTransform
    quad: EnergyQuadrature

    def four_terms(self, times) -> np.ndarray:
        """Columns: <psi_hat, U psi_hat>, <G, U psi_hat>, <psi_hat, U G>, <G, U G>."""
        return _four_terms(self.transform, self.quad, times)


def _four_terms(tr: SpectralTransform, quad: EnergyQuadrature, times) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    f, g = tr.free_part, tr.g_part
    densities = (np.abs(f) ** 2, np.conj(g) * f, np.conj(f) * g, np.abs(g) ** 2)
    cols = []
    for d in densities:
        cols.append(quad.integrate(d, np.abs(times)))
    out = np.stack(cols, axis=1)
    # the cross terms swap under t -> -t combined with conjugation
    neg = times < 0
    if np.any(neg):
        swapped = np.conj(out[:, [0, 2, 1, 3]])
        out = np.where(neg[:, None], swapped, out)
    return out


def survival_barrier(state: MomentumState, bar: BarrierSpec, times=None, sign: str = "-",
                     quad: EnergyQuadrature | None = None, check: bool = False, rtol: float = 1e-6) -> BarrierSurvival:
    """A1(t) = int |(W* psi)^(k)|^2 exp(-i t k^2) dk."""
    times = time_grid() if times is None else np.asarray(times, dtype=float)
    pulled = PulledBackState(state, bar, sign)
    quad = quad or energy_quadrature_for(pulled)
    tr = pullback(state, bar, sign, quad.nodes)
    density = np.abs(tr.values) ** 2

    def amplitude(ts):
        return spectral_survival(lambda _k: density, quad, ts)

    amps = amplitude(times)
    if check:
        fine_q = quad.refined()
        fine_density = np.abs(pulled(fine_q.nodes)) ** 2
        fine = spectral_survival(lambda _k: fine_density, fine_q, times)
        bad = np.abs(fine - amps) > rtol * max(abs(amps[0]), 1e-300) * 1e-3 + rtol * np.abs(fine)
        if np.any(bad):
            raise ConvergenceError(f"barrier survival quadrature unconverged at t={float(times[np.argmax(bad)])}")
    series = SurvivalSeries(times, amps, bar.describe() | {"sign": sign}, quad.describe(), amplitude)
    return BarrierSurvival(series, tr, quad)


def four_term_split(state: MomentumState, bar: BarrierSpec, t, sign: str = "-",
                    quad: EnergyQuadrature | None = None) -> np.ndarray:
    """The four terms of <W* psi, U(t) W* psi> with W* psi = psi_hat + G; rows per t."""
    pulled = PulledBackState(state, bar, sign)
    quad = quad or energy_quadrature_for(pulled)
    tr = pullback(state, bar, sign, quad.nodes)
    return _four_terms(tr, quad, t)


# ---------------------------------------------------------------------------
# grid oracle


@dataclass
class GridPropagator:
    half_width: float
    points: int
    dt: float
    scheme: str = "strang split-step, periodic box"

    @property
    def dx(self) -> float:
        return 2 * self.half_width / self.points

    @property
    def x(self) -> np.ndarray:
        return -self.half_width + self.dx * np.arange(self.points)

    @property
    def k(self) -> np.ndarray:
        return 2 * math.pi * np.fft.fftfreq(self.points, d=self.dx)

    def describe(self) -> dict:
        return {"half_width": self.half_width, "points": self.points, "dx": self.dx, "dt": self.dt,
                "scheme": self.scheme}


@dataclass
class GridRun:
    propagator: GridPropagator
    times: np.ndarray
    overlaps: np.ndarray
    norm_drift: float
    edge_probability: float
    truncated: bool = False
    meta: dict = field(default_factory=dict)


def momentum_quantile(state: MomentumState, tail: float = 1e-12, k_max: float = 40.0) -> float:
    """Smallest K with int_{|k|>K} |psi_hat|^2 <= tail (relative)."""
    quad = KQuadrature(k_max=k_max, breakpoints=state.breakpoints())
    k, w = quad.nodes, quad.weights
    mass = w * np.abs(state(k)) ** 2
    order = np.argsort(-np.abs(k))
    beyond = np.cumsum(mass[order])
    total = beyond[-1]
    idx = np.searchsorted(beyond, tail * total)
    return float(np.abs(k[order][min(idx, k.size - 1)]))


def position_extent(state: MomentumState, tail: float = 1e-12) -> float:
    """Half-width containing all but ``tail`` of |psi(x)|^2, on FFT grids of growing size."""
    width = 32.0
    while True:
        n = 1 << max(12, int(math.ceil(math.log2(width * 32))))
        prop = GridPropagator(width, n, 1.0)
        dens = np.abs(_initial(state, prop)) ** 2
        dens /= dens.sum()
        x = np.abs(prop.x)
        order = np.argsort(-x)
        beyond = np.cumsum(dens[order])
        extent = float(x[order][min(int(np.searchsorted(beyond, tail)), n - 1)])
        if extent < 0.5 * width or width >= 4096:
            return extent
        width *= 2


def _initial(state: MomentumState, prop: GridPropagator) -> np.ndarray:
    k = prop.k
    dk = 2 * math.pi / (prop.points * prop.dx)
    return prop.points * np.fft.ifft(state(k) * np.exp(-1j * k * prop.half_width)) * dk / SQRT2PI


def make_propagator(state: MomentumState, bar: BarrierSpec, t_max: float, points: int = 2**14,
                    dt: float | None = None) -> GridPropagator:
    """Size the box so nothing reaches the edge by t_max, with the barrier edges on grid points."""
    k_eff = momentum_quantile(state)
    need = position_extent(state) + bar.a / 2 + 2 * k_eff * t_max
    need *= 1.25
    # dx = a/(2m) puts x = +-a/2 on nodes
    m = max(1, int(math.floor(points * bar.a / (4 * need))))
    half_width = points * bar.a / (4 * m)
    if dt is None:
        dt = min(0.01, 0.1 / bar.V0) if bar.V0 > 0 else 0.01
    return GridPropagator(half_width, points, dt)


def grid_potential(bar: BarrierSpec, x: np.ndarray) -> np.ndarray:
    half = bar.a / 2
    tol = 1e-9 * max(1.0, half)
    v = np.where(np.abs(x) < half - tol, bar.V0, 0.0)
    return np.where(np.abs(np.abs(x) - half) <= tol, 0.5 * bar.V0, v)


def propagate_grid(state: MomentumState, bar: BarrierSpec, times, prop: GridPropagator | None = None,
                   points: int = 2**14, dt: float | None = None, edge_tol: float = 1e-8) -> GridRun:
    """Overlaps <psi(0), psi(t)> on the requested times by Strang splitting."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("grid propagation runs forward in time only")
    prop = prop or make_propagator(state, bar, float(times.max()), points, dt)
    x, k = prop.x, prop.k
    v = grid_potential(bar, x)
    psi0 = _initial(state, prop)
    psi = psi0.copy()
    norm0 = np.sum(np.abs(psi0) ** 2) * prop.dx
    edge = np.abs(x) > prop.half_width * (1 - 1 / 50)
    # the overlap is diagonal in k and the barrier conserves energy, so only
    # momenta carried by psi(0) can feed wrapped-around probability back into
    # it; faster components (kink tails, splitting noise near Nyquist) cannot
    # a smooth window avoids the ringing a sharp spectral cut would spread
    # across the whole box
    band = np.exp(-((k / momentum_quantile(state)) ** 8))

    order = np.argsort(times)
    overlaps = np.full(times.size, np.nan + 0j)
    t_now = 0.0
    drift = 0.0
    edge_p = 0.0
    truncated = False
    for i in order:
        span = times[i] - t_now
        if span > 0:
            n = max(1, int(math.ceil(span / prop.dt - 1e-9)))
            h = span / n
            half_phase = np.exp(-0.5j * h * v)
            kin = np.exp(-1j * h * k * k)
            psi = psi * half_phase
            for step in range(n):
                psi = np.fft.ifft(kin * np.fft.fft(psi))
                psi = psi * (half_phase if step == n - 1 else half_phase * half_phase)
            t_now = times[i]
        prob = np.abs(psi) ** 2 * prop.dx
        drift = max(drift, abs(prob.sum() - norm0))
        in_band = np.fft.ifft(band * np.fft.fft(psi))
        edge_p = max(edge_p, float((np.abs(in_band[edge]) ** 2).sum() * prop.dx))
        if edge_p > edge_tol:
            warnings.warn(f"grid propagation: probability {edge_p:.2e} near the box edge at t={t_now}; "
                          "truncating the run", RuntimeWarning, stacklevel=2)
            truncated = True
            break
        overlaps[i] = np.sum(np.conj(psi0) * psi) * prop.dx
    return GridRun(prop, times, overlaps, drift, edge_p, truncated, {"norm0": float(norm0)})
