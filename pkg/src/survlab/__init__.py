"""Survival amplitudes, time-operator bounds and decay exponents for the free
particle and the square barrier in one dimension."""
from importlib.metadata import PackageNotFoundError, version

from .barrier import BarrierSpec, bound_constants, coefficients, eigenfunction
from .decay import DecayReport, check_bound, classify, fit_exponent, wiener_average
from .free import EnergyQuadrature, SurvivalSeries, half_time, survival_free, time_grid
from .scattering import propagate_grid, pullback, pullback_norm2, survival_barrier
from .states import (
    CompactBump,
    ConvergenceError,
    GaussianMonomial,
    KQuadrature,
    MomentumState,
    SampledGrid,
    gaussian_packet,
    inner_product,
    monomial_packet,
    odd_packet,
)
from .timeop import DomainError, apply_T0, domain_check, pullback_stats, stats

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.1.0"
