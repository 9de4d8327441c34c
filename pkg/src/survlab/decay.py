"""Tail exponents of survival probabilities and the bound checks built on them.

A series is said to lie in the class of exponent n when |A(t)|^2 <= C^2/|t|^n.
Finite data cannot decide that, so membership is judged operationally: the
supremum of t^n |A(t)|^2 over the fit window must not move by more than 5%
when the window is extended by half a decade.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .free import SurvivalSeries

HALF_DECADE = 10**0.5
STABILITY = 0.05


@dataclass(frozen=True)
class DecayReport:
    exponent: float
    prefactor: float
    window: tuple
    fit_residual: float
    envelope_used: bool
    n_points: int
    classification: str
    requested_n: float | None = None
    sup_scaled: float | None = None
    sup_scaled_extended: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        d["note"] = ("class membership is judged by stability of the windowed supremum of t^n |A|^2 "
                     "under half-decade extension; only the tail is informative since |A|^2 <= ||psi||^4")
        return d


def envelope(times, values, half_width: float = 0.25):
    """Upper envelope: points that are maximal within +-half_width decades of themselves.

    Returns the (t, value) pairs actually attaining those maxima, so a pure
    power law is reproduced exactly while oscillations are skipped.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    lt = np.log10(t)
    keep = set()
    lo = hi = 0
    for i in range(t.size):
        while lt[lo] < lt[i] - half_width:
            lo += 1
        while hi + 1 < t.size and lt[hi + 1] <= lt[i] + half_width:
            hi += 1
        keep.add(lo + int(np.argmax(v[lo:hi + 1])))
    idx = np.array(sorted(keep), dtype=int)
    return t[idx], v[idx]


def _window(series: SurvivalSeries, window, floor: float):
    t, p = series.times, series.probability
    sel = (t >= window[0]) & (t <= window[1]) & (t > 0) & (p > floor)
    return t[sel], p[sel]


def fit_exponent(series: SurvivalSeries, window=(10.0, 1e3), n: float | None = None,
                 floor: float = 1e-300, use_envelope: bool = True) -> DecayReport:
    """Least-squares slope of log|A|^2 against log t on the upper envelope."""
    window = (float(window[0]), float(window[1]))
    if window[0] <= 0 or window[1] <= window[0]:
        raise ValueError("window must satisfy 0 < t_lo < t_hi")
    t, p = _window(series, window, floor)
    if t.size < 30:
        raise ValueError(f"need at least 30 samples in the fit window, got {t.size}")
    if use_envelope:
        t, p = envelope(t, p)
    if t.size < 3:
        return DecayReport(math.nan, math.nan, window, math.nan, use_envelope, int(t.size), "Inconclusive", n)
    x, y = np.log(t), np.log(p)
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    exponent = float(-slope) + 0.0
    classification, sup_base, sup_ext = "Unclassified", None, None
    if n is not None:
        classification, sup_base, sup_ext = classify(series, n, window, floor, exponent)
    return DecayReport(exponent, float(math.exp(intercept)), window, resid, use_envelope, int(t.size),
                       classification, n, sup_base, sup_ext)


def classify(series: SurvivalSeries, n: float, window=(10.0, 1e3), floor: float = 1e-300,
             exponent: float | None = None):
    """(label, sup on the base window, sup on the extended window).

    The base window is the given one shortened by half a decade at the top;
    the extension is the full window, so the test stays inside the data.
    """
    t, p = _window(series, window, floor)
    if t.size == 0:
        return "Inconclusive", None, None
    scaled = t**n * p
    cut = window[1] / HALF_DECADE
    base = scaled[t <= cut]
    if base.size == 0:
        return "Inconclusive", None, None
    s_base, s_ext = float(base.max()), float(scaled.max())
    if s_ext <= s_base * (1 + STABILITY):
        return f"InC({n:g})", s_base, s_ext
    if exponent is not None and exponent < n:
        return f"NotInC({n:g})", s_base, s_ext
    return "Inconclusive", s_base, s_ext


@dataclass(frozen=True)
class BoundCheck:
    holds: bool
    worst_t: float
    worst_value: float
    coefficient: float

    def to_dict(self) -> dict:
        return asdict(self)


def check_bound(series: SurvivalSeries, coefficient: float, rtol: float = 1e-6) -> BoundCheck:
    """t^2 |A(t)|^2 <= coefficient (1 + rtol) at every sampled t != 0."""
    if coefficient < 0:
        raise ValueError("coefficient must be non-negative")
    t, p = series.times, series.probability
    sel = t != 0
    if not np.any(sel):
        return BoundCheck(True, math.nan, 0.0, coefficient)
    scaled = t[sel] ** 2 * p[sel]
    i = int(np.argmax(scaled))
    return BoundCheck(bool(scaled[i] <= coefficient * (1 + rtol)), float(t[sel][i]), float(scaled[i]), coefficient)


def bound_fails_on_extension(amplitude, coefficient: float, t_start: float = 10.0, max_decades: int = 12,
                             per_decade: int = 40):
    """Extend a log grid decade by decade until t^2|A|^2 exceeds the coefficient.

    Returns the first failing t, or None if the bound held up to
    t_start * 10^max_decades.
    """
    for d in range(1, max_decades + 1):
        t = np.logspace(math.log10(t_start) + d - 1, math.log10(t_start) + d, per_decade + 1)
        p = np.abs(amplitude(t)) ** 2
        scaled = t * t * p
        over = scaled > coefficient * (1 + 1e-6)
        if np.any(over):
            return float(t[np.argmax(over)])
    return None


def wiener_average(series: SurvivalSeries, T: float) -> float:
    """(1/T) int_0^T |A(t)|^2 dt by the trapezoidal rule on the samples."""
    t, p = series.times, series.probability
    order = np.argsort(t)
    t, p = t[order], p[order]
    if t[0] > 0 or t[-1] < T * (1 - 1e-12):
        raise ValueError("series must cover [0, T]")
    sel = t <= T
    ts, ps = t[sel], p[sel]
    if ts[-1] < T:
        ts = np.append(ts, T)
        ps = np.append(ps, np.interp(T, t, p))
    return float(np.trapezoid(ps, ts) / T)
