"""The time operator conjugate to H0 = k^2, acting in momentum space:

    (T psi)^(k) = (i/4) [ (psi_hat/k)' + psi_hat'/k ]
                = (i/(2k)) psi_hat' - (i/(4k^2)) psi_hat

plus its domain test, moments, and the survival / half-time bounds it yields.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .states import (
    ConvergenceError,
    FreeEvolved,
    KQuadrature,
    MomentumState,
    SampledGrid,
    default_quadrature,
)


class DomainError(ValueError):
    """Raised when a state is outside the time-operator domain."""

    def __init__(self, verdict: "DomainVerdict", context: str = ""):
        self.verdict = verdict
        failed = ", ".join(verdict.failed) or "unknown"
        prefix = f"{context}: " if context else ""
        super().__init__(f"{prefix}state not in the time-operator domain (failed: {failed})")


class TimeOperatorImage(MomentumState):
    """T psi as a state, evaluable anywhere except k = 0."""

    kind = "time_operator_image"

    def __init__(self, base: MomentumState):
        self.base = base

    def __call__(self, k):
        k = np.asarray(k, dtype=float)
        psi, dpsi = self.base(k), self.base.derivative(k, 1)
        return 0.5j * dpsi / k - 0.25j * psi / k**2

    def compact_form(self, k):
        """(i/4)[(psi/k)' + psi'/k] with the quotient rule left unexpanded."""
        k = np.asarray(k, dtype=float)
        psi, dpsi = self.base(k), self.base.derivative(k, 1)
        quotient_derivative = (dpsi * k - psi) / k**2
        return 0.25j * (quotient_derivative + dpsi / k)

    def derivative(self, k, order=1):
        if order != 1:
            raise NotImplementedError("only the first derivative of T psi is provided")
        k = np.asarray(k, dtype=float)
        p0, p1, p2 = self.base(k), self.base.derivative(k, 1), self.base.derivative(k, 2)
        return 0.5j * p2 / k - 0.75j * p1 / k**2 + 0.5j * p0 / k**3

    def breakpoints(self):
        return self.base.breakpoints()

    def support(self):
        return self.base.support()

    def sampled(self, quad: KQuadrature) -> SampledGrid:
        k = quad.nodes
        return SampledGrid(k, self(k))


def apply_T0(state: MomentumState) -> TimeOperatorImage:
    return TimeOperatorImage(state)


# ---------------------------------------------------------------------------
# domain


@dataclass(frozen=True)
class Check:
    value: float
    passed: bool


@dataclass(frozen=True)
class DomainVerdict:
    checks: dict

    @property
    def in_domain(self) -> bool:
        return all(c.passed for c in self.checks.values())

    @property
    def failed(self) -> list[str]:
        return [name for name, c in self.checks.items() if not c.passed]

    def to_dict(self) -> dict:
        return {
            "in_domain": self.in_domain,
            "failed": list(self.failed),
            "checks": {name: {"value": _jsonable(c.value), "pass": bool(c.passed)} for name, c in self.checks.items()},
        }


def _jsonable(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


DYADIC_EXPONENTS = np.arange(5, 41)


def _value_near_zero(state, order):
    """One-sided limits at 0 (mean of +-tiny), robust to states undefined at 0."""
    tiny = 2.0**-60
    k = np.array([-tiny, tiny])
    vals = state(k) if order == 0 else state.derivative(k, 1)
    return complex(np.mean(vals)), vals


def sublinear_sequence(state: MomentumState) -> np.ndarray:
    """|psi_hat(k)| / |k|^{1/2} along k = 2^-j, j = 5..40, both signs (max)."""
    k = 2.0 ** (-DYADIC_EXPONENTS.astype(float))
    both = np.maximum(np.abs(state(k)), np.abs(state(-k)))
    return both / np.sqrt(k)


def domain_check(state: MomentumState, quad: KQuadrature | None = None,
                 value_tol: float = 1e-10, limit_tol: float = 1e-6, norm_rtol: float = 1e-6) -> DomainVerdict:
    """Test psi_hat(0) = 0, psi_hat'(0) = 0, psi_hat(k)/|k|^{1/2} -> 0 and ||T psi|| < inf."""
    quad = quad or default_quadrature(state)
    scale = math.sqrt(max(state.norm2(quad), 1e-300))
    checks = {}

    v0, _ = _value_near_zero(state, 0)
    checks["value_at_zero"] = Check(abs(v0), abs(v0) <= value_tol * scale)

    _, sides = _value_near_zero(state, 1)
    d0 = float(np.max(np.abs(sides)))
    checks["derivative_at_zero"] = Check(d0, d0 <= value_tol * scale * 100)

    seq = sublinear_sequence(state)
    monotone = bool(np.all(np.diff(seq) <= 1e-12 * scale))
    final = float(seq[-1])
    tail = seq[-10:]
    if np.all(tail > 0):
        slope = -np.polyfit(DYADIC_EXPONENTS[-10:] * math.log(2), np.log(tail), 1)[0]
    else:
        slope = math.inf
    # reaching the threshold, or a clean power-law approach to zero in the tail
    vanishing = final < limit_tol * scale or slope >= 0.25
    checks["sublinear_limit"] = Check(final, monotone and vanishing)

    image = apply_T0(state)
    coarse = quad.integrate(np.abs(image(quad.nodes)) ** 2).real
    fine_q = quad.refined()
    fine = fine_q.integrate(np.abs(image(fine_q.nodes)) ** 2).real
    finite = math.isfinite(coarse) and math.isfinite(fine)
    rel = abs(fine - coarse) / max(abs(fine), 1e-300) if finite else math.inf
    checks["Tpsi_norm_finite"] = Check(math.sqrt(fine) if finite else math.inf, finite and rel < norm_rtol)
    return DomainVerdict(checks)


# ---------------------------------------------------------------------------
# moments


@dataclass(frozen=True)
class TimeOperatorStats:
    mean: float
    deviation: float
    norm: float
    mean_imag: float = 0.0
    quadrature: dict = field(default_factory=dict)

    @property
    def bound_coefficient(self) -> float:
        return 4 * self.deviation**2 * self.norm**2

    @property
    def half_time_bound(self) -> float:
        return 2 * math.sqrt(2) * self.deviation * self.norm

    def survival_bound(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return self.bound_coefficient / t**2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bound_coefficient"] = self.bound_coefficient
        d["half_time_bound"] = self.half_time_bound
        return d


def stats(state: MomentumState, quad: KQuadrature | None = None, verdict: DomainVerdict | None = None,
          context: str = "stats") -> TimeOperatorStats:
    """mean = <psi, T psi>/||psi||^2 and deviation = ||(T - mean) psi||."""
    quad = quad or default_quadrature(state)
    verdict = verdict or domain_check(state, quad)
    if not verdict.in_domain:
        raise DomainError(verdict, context)
    k = quad.nodes
    psi = state(k)
    tpsi = apply_T0(state)(k)
    norm2 = quad.integrate(np.abs(psi) ** 2).real
    raw_mean = quad.integrate(np.conj(psi) * tpsi)
    tnorm = math.sqrt(quad.integrate(np.abs(tpsi) ** 2).real)
    if abs(raw_mean.imag) > 1e-8 * math.sqrt(norm2) * tnorm + 1e-14:
        raise ConvergenceError(f"<psi, T psi> has imaginary part {raw_mean.imag:.3e}; quadrature too coarse")
    mean = raw_mean.real / norm2
    dev2 = quad.integrate(np.abs(tpsi - mean * psi) ** 2).real
    return TimeOperatorStats(float(mean), math.sqrt(max(dev2, 0.0)), math.sqrt(norm2),
                             float(raw_mean.imag), quad.describe())


def weyl_relation_residual(state: MomentumState, probe: MomentumState, t: float,
                           quad: KQuadrature | None = None) -> float:
    """|<probe, T U(t) psi> - <probe, U(t)(T + t) psi>| with U(t) = exp(-i t k^2)."""
    quad = quad or default_quadrature(state, probe)
    k = quad.nodes
    conj_probe = np.conj(probe(k))
    left = quad.integrate(conj_probe * apply_T0(FreeEvolved(state, t))(k))
    phase = np.exp(-1j * t * k * k)
    right = quad.integrate(conj_probe * phase * (apply_T0(state)(k) + t * state(k)))
    return float(abs(left - right))


def ccr_residual(psi: MomentumState, phi: MomentumState, quad: KQuadrature | None = None) -> float:
    """|<T psi, H0 phi> - <H0 psi, T phi> - i <psi, phi>|."""
    quad = quad or default_quadrature(psi, phi)
    k = quad.nodes
    tpsi, tphi = apply_T0(psi)(k), apply_T0(phi)(k)
    p, f = psi(k), phi(k)
    lhs = quad.integrate(np.conj(tpsi) * k * k * f) - quad.integrate(np.conj(k * k * p) * tphi)
    return float(abs(lhs - 1j * quad.integrate(np.conj(p) * f)))


def pullback_stats(state: MomentumState, barrier, sign: str = "-", quad: KQuadrature | None = None) -> TimeOperatorStats:
    """Moments of W T W* in the state psi, computed as moments of T in W* psi.

    The pulled-back spectral function is re-checked against the domain
    conditions; a DomainError names the failing condition.
    """
    from .scattering import pulled_back_state

    pulled = pulled_back_state(state, barrier, sign)
    quad = quad or default_quadrature(state).with_breakpoints(*pulled.breakpoints())
    verdict = domain_check(pulled, quad)
    return stats(pulled, quad, verdict, context="pullback")
