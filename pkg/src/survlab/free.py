"""Free-particle survival amplitude A0(t) = <psi, exp(-i t H0) psi>, H0 = k^2.

The spectral integral int f(k) exp(-i t k^2) dk is evaluated after the
substitution E = k^2.  Away from k = 0 each energy panel uses a Filon rule:
the non-oscillatory factor is interpolated at Gauss-Legendre nodes and its
Legendre expansion is integrated exactly against exp(-i t E), which brings in
spherical Bessel functions.  The innermost |k| < 2^-depth is integrated in k
directly, where the phase is negligible for every t of interest.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.special import eval_legendre

from .states import MomentumState, gauss_legendre, map_panels, panel_edges


def spherical_bessel_table(x, count: int) -> np.ndarray:
    """j_0 .. j_{count-1} at every x >= 0.5, shape x.shape + (count,).

    Upward recurrence where x >= count (stable there), Miller's downward
    recurrence normalized against j_0 and j_1 elsewhere.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (count,))
    j0 = np.sin(x) / x
    j1 = np.sin(x) / x**2 - np.cos(x) / x
    up = x >= count
    if np.any(up):
        xu = x[up]
        a, b = j0[up], j1[up]
        cols = [a, b]
        for m in range(1, count - 1):
            a, b = b, (2 * m + 1) / xu * b - a
            cols.append(b)
        out[up] = np.stack(cols[:count], axis=-1)
    down = ~up
    if np.any(down):
        xd = x[down]
        start = count + 40
        f_next = np.zeros_like(xd)
        f = np.full_like(xd, 1e-200)
        cols = [None] * count
        for m in range(start, 0, -1):
            f_next, f = f, (2 * m + 1) / xd * f - f_next
            # growth per step is below (2m+1)/x < 400, so checking every 8 steps cannot overflow
            big = np.abs(f) > 1e150 if m % 8 == 0 else None
            if big is not None and np.any(big):
                factor = np.where(big, 1e-150, 1.0)
                f, f_next = f * factor, f_next * factor
                cols = [c if c is None else c * factor for c in cols]
            if m - 1 < count:
                cols[m - 1] = f
        vals = np.stack(cols, axis=-1)
        vals /= np.max(np.abs(vals[..., :2]), axis=-1, keepdims=True)
        f0, f1 = vals[..., 0], vals[..., 1]
        scale = (j0[down] * f0 + j1[down] * f1) / (f0 * f0 + f1 * f1)
        out[down] = vals * scale[..., None]
    return out


@dataclass(frozen=True)
class EnergyQuadrature:
    """Fixed node set for int f(k) exp(-i t k^2) dk, reusable across all t."""

    k_max: float = 12.0
    depth: int = 30
    order: int = 40
    inner_order: int = 16
    breakpoints: tuple = ()
    filon_threshold: float = 1.0
    chunk: int = 64

    @cached_property
    def edges(self) -> np.ndarray:
        return panel_edges(self.k_max, self.depth, self.breakpoints)

    @cached_property
    def _inner(self):
        return map_panels(np.array([0.0, self.edges[1]]), self.inner_order)

    @cached_property
    def _panels(self):
        e_edges = self.edges[1:] ** 2
        lo, hi = e_edges[:-1], e_edges[1:]
        s, w = gauss_legendre(self.order)
        centre, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        energies = centre[:, None] + half[:, None] * s[None, :]
        return centre, half, energies, s, w

    @cached_property
    def _legendre(self) -> np.ndarray:
        s = self._panels[3]
        m = np.arange(self.order)
        return eval_legendre(m[:, None], s[None, :])  # [m, j]

    @property
    def positive_nodes(self) -> np.ndarray:
        """All |k| at which the integrand is sampled (inner nodes first)."""
        return np.concatenate([self._inner[0], np.sqrt(self._panels[2]).ravel()])

    @property
    def nodes(self) -> np.ndarray:
        pos = self.positive_nodes
        return np.concatenate([-pos[::-1], pos])

    def split(self, values):
        """Split samples on ``nodes`` into (negative-k, positive-k) halves on positive_nodes."""
        values = np.asarray(values)
        n = values.shape[-1] // 2
        return values[..., :n][..., ::-1], values[..., n:]

    def integrate(self, values, times) -> np.ndarray:
        """int f(k) exp(-i t k^2) dk for each t, with f sampled on ``nodes``."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        f_neg, f_pos = self.split(values)
        n_in = self._inner[0].size
        k_in, w_in = self._inner
        inner_f = f_neg[:n_in] + f_pos[:n_in]
        inner = np.exp(-1j * np.outer(times, k_in**2)) @ (w_in * inner_f)

        centre, half, energies, s, w = self._panels
        shape = energies.shape
        # f(k) dk + f(-k) dk  ->  (f(sqrt E) + f(-sqrt E)) / (2 sqrt E) dE
        g = (f_neg[n_in:] + f_pos[n_in:]).reshape(shape) / (2 * np.sqrt(energies))

        m = np.arange(self.order)
        coeff_m = (2 * m + 1) * (-1j) ** m
        parity = (-1.0) ** m
        # Legendre coefficients of each panel's integrand, contracted with the weights once
        legendre_g = (g * w[None, :]) @ self._legendre.T  # [panel, m]
        out = np.empty(times.size, dtype=complex)
        for start in range(0, times.size, self.chunk):
            ts = times[start:start + self.chunk]
            omega = ts[:, None] * half[None, :]  # [t, panel]
            use_filon = np.abs(omega) * 2 > self.filon_threshold
            jm = spherical_bessel_table(np.where(use_filon, np.abs(omega), 1.0), self.order)
            # j_m(-x) = (-1)^m j_m(x)
            jm = np.where(omega[:, :, None] < 0, jm * parity, jm)
            panel_sums = np.exp(-1j * ts[:, None] * centre[None, :]) * np.einsum("tpm,m,pm->tp", jm, coeff_m, legendre_g)
            if not np.all(use_filon):
                ti, pi = np.nonzero(~use_filon)
                phase = np.exp(-1j * ts[ti, None] * energies[pi])
                panel_sums[ti, pi] = np.sum(phase * (g * w[None, :])[pi], axis=1)
            out[start:start + ts.size] = inner[start:start + ts.size] + panel_sums @ half
        return out

    def refined(self) -> "EnergyQuadrature":
        return EnergyQuadrature(self.k_max, self.depth + 10, self.order + 8, self.inner_order + 8,
                                self.breakpoints, self.filon_threshold)

    def with_breakpoints(self, *points) -> "EnergyQuadrature":
        return EnergyQuadrature(self.k_max, self.depth, self.order, self.inner_order,
                                tuple(self.breakpoints) + tuple(points), self.filon_threshold)

    def describe(self) -> dict:
        return {
            "scheme": "filon-legendre in E=k^2, gauss-legendre below threshold",
            "k_max": self.k_max,
            "depth": self.depth,
            "order": self.order,
            "inner_order": self.inner_order,
            "breakpoints": [float(b) for b in self.breakpoints],
            "filon_threshold": self.filon_threshold,
            "n_nodes": int(self.nodes.size),
        }


def energy_quadrature_for(*states, **overrides) -> EnergyQuadrature:
    points = tuple(sorted({float(p) for s in states for p in s.breakpoints()}))
    return EnergyQuadrature(breakpoints=points, **overrides)


def time_grid(t_min: float = 0.1, t_max: float = 1e3, per_decade: int = 40) -> np.ndarray:
    """{0} plus log-spaced samples."""
    decades = math.log10(t_max / t_min)
    count = int(round(decades * per_decade)) + 1
    return np.concatenate([[0.0], np.logspace(math.log10(t_min), math.log10(t_max), count)])


@dataclass
class SurvivalSeries:
    times: np.ndarray
    amplitudes: np.ndarray
    hamiltonian: dict = field(default_factory=lambda: {"type": "free"})
    quadrature: dict = field(default_factory=dict)
    amplitude_fn: Callable | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)

    @property
    def probability(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def at(self, times) -> np.ndarray:
        """Amplitudes at new times; negative times by conjugation."""
        if self.amplitude_fn is None:
            raise ValueError("series carries no evaluator")
        times = np.atleast_1d(np.asarray(times, dtype=float))
        values = self.amplitude_fn(np.abs(times))
        return np.where(times < 0, np.conj(values), values)

    def to_csv(self, extra: dict | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        extra = extra or {}
        header = ["t", "re_A", "im_A", "abs2_A"]
        for name in extra:
            header += [f"re_{name}", f"im_{name}"]
        writer.writerow(header)
        for i, (t, a) in enumerate(zip(self.times, self.amplitudes)):
            row = [repr(float(t)), repr(float(a.real)), repr(float(a.imag)), repr(float(abs(a) ** 2))]
            for values in extra.values():
                row += [repr(float(values[i].real)), repr(float(values[i].imag))]
            writer.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SurvivalSeries":
        rows = list(csv.DictReader(io.StringIO(text)))
        times = np.array([float(r["t"]) for r in rows])
        if rows and "re_A" in rows[0]:
            amps = np.array([complex(float(r["re_A"]), float(r["im_A"])) for r in rows])
        else:
            amps = np.sqrt(np.array([float(r["abs2_A"]) for r in rows])).astype(complex)
        return cls(times, amps, {"type": "from_csv"})


def spectral_survival(density_fn: Callable, quad: EnergyQuadrature, times) -> np.ndarray:
    """int density(k) exp(-i t k^2) dk with negative t by conjugation."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    values = quad.integrate(density_fn(quad.nodes), np.abs(times))
    return np.where(times < 0, np.conj(values), values)


def survival_free(state: MomentumState, times=None, quad: EnergyQuadrature | None = None,
                  check: bool = False, rtol: float = 1e-8) -> SurvivalSeries:
    """A0(t) = int |psi_hat(k)|^2 exp(-i t k^2) dk.

    With ``check`` the computation is repeated on a refined quadrature and a
    ConvergenceError names the first time where the two disagree.
    """
    from .states import ConvergenceError

    times = time_grid() if times is None else np.asarray(times, dtype=float)
    quad = quad or energy_quadrature_for(state)
    density = np.abs(state(quad.nodes)) ** 2

    def amplitude(ts):
        return spectral_survival(lambda _k: density, quad, ts)

    amps = amplitude(times)
    if check:
        fine_q = quad.refined()
        fine = spectral_survival(lambda k: np.abs(state(k)) ** 2, fine_q, times)
        # roundoff in the panel sums sits near 1e-14 ||psi||^2 whatever |A(t)| is
        scale = abs(amplitude([0.0])[0])
        bad = np.abs(fine - amps) > rtol * np.abs(fine) + 1e-13 * scale
        if np.any(bad):
            t_bad = float(times[np.argmax(bad)])
            raise ConvergenceError(f"free survival quadrature unconverged at t={t_bad}")
    return SurvivalSeries(times, amps, {"type": "free"}, quad.describe(), amplitude)


@dataclass(frozen=True)
class HalfTime:
    value: float
    lower_bound: bool = False


def half_time(series: SurvivalSeries, level: float = 0.5, tol: float = 1e-6) -> HalfTime:
    """Largest t at which |A(t)|^2 = level, refined by bisection.

    Without a crossing inside the sampled window the last sampled time is
    returned as a lower bound.
    """
    t = series.times
    p = series.probability
    order = np.argsort(t)
    t, p = t[order], p[order]
    above = np.nonzero(p >= level)[0]
    if above.size == 0:
        return HalfTime(0.0)
    i = above[-1]
    if i == t.size - 1:
        return HalfTime(float(t[-1]), lower_bound=True)
    lo, hi = float(t[i]), float(t[i + 1])
    if series.amplitude_fn is None:
        frac = (p[i] - level) / (p[i] - p[i + 1])
        return HalfTime(lo + frac * (hi - lo))
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if abs(series.at(mid)[0]) ** 2 >= level:
            lo = mid
        else:
            hi = mid
    return HalfTime(0.5 * (lo + hi))


def gaussian_monomial_oracle(n: int, a: float, times) -> np.ndarray:
    """Closed form for normalized k^n e^{-a k^2}: (1 + i t / (2a))^{-(n + 1/2)}."""
    times = np.asarray(times, dtype=float)
    return (1 + 1j * times / (2 * a)) ** (-(n + 0.5))
