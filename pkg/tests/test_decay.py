import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from survlab.decay import (
    bound_fails_on_extension,
    check_bound,
    classify,
    envelope,
    fit_exponent,
    wiener_average,
)
from survlab.free import SurvivalSeries, gaussian_monomial_oracle, survival_free, time_grid
from survlab.states import gaussian_packet, monomial_packet, odd_packet


def series_from_probability(t, p):
    return SurvivalSeries(t, np.sqrt(p).astype(complex))


@settings(max_examples=25, deadline=None)
@given(n=st.floats(0.5, 8.0), c=st.floats(1e-3, 1e3))
def test_pure_power_law_recovered(n, c):
    t = time_grid(1.0, 1e4, 40)[1:]
    r = fit_exponent(series_from_probability(t, c * t**-n))
    assert r.exponent == pytest.approx(n, abs=1e-10)
    assert r.prefactor == pytest.approx(c, rel=1e-8)
    assert r.fit_residual < 1e-10


def test_envelope_keeps_pure_power_law_intact():
    t = np.logspace(1, 3, 81)
    et, ev = envelope(t, t**-2.0)
    # a decreasing sequence keeps only the left end of each window; both ends survive
    assert et[0] == t[0] and np.all(np.diff(et) > 0)
    np.testing.assert_array_equal(ev, et**-2.0)


def test_envelope_skips_oscillation_zeros():
    t = np.logspace(1, 3, 2001)
    p = t**-3.0 * np.cos(t) ** 2
    r_env = fit_exponent(series_from_probability(t, p))
    assert r_env.exponent == pytest.approx(3.0, abs=0.05)
    raw = fit_exponent(series_from_probability(t, p + 1e-300), use_envelope=False)
    assert raw.fit_residual > 10 * r_env.fit_residual


@pytest.mark.parametrize("n,expected", [(0, 1.0), (1, 3.0), (2, 5.0), (3, 7.0)])
def test_closed_form_tails(n, expected):
    # |A|^2 = (1 + t^2)^{-(n + 1/2)} has exponent 2n + 1; the window starts at t = 10
    t = time_grid()
    series = SurvivalSeries(t, gaussian_monomial_oracle(n, 0.5, t))
    r = fit_exponent(series)
    assert r.exponent == pytest.approx(expected, abs=0.01)


def test_classification_labels():
    t = time_grid(0.1, 1e3, 40)
    p = (1 + t * t) ** -1.5
    assert classify(series_from_probability(t, p), 3.0)[0] == "InC(3)"
    assert classify(series_from_probability(t, p), 2.0)[0] == "InC(2)"
    label, s_base, s_ext = classify(series_from_probability(t, p), 4.0, exponent=3.0)
    assert label == "NotInC(4)" and s_ext > s_base * 1.05
    assert classify(series_from_probability(t, p), 4.0)[0] == "Inconclusive"
    assert classify(series_from_probability(t, p), 2.0, window=(2e3, 5e3))[0] == "Inconclusive"


def test_fit_report_carries_classification():
    r = fit_exponent(survival_free(monomial_packet(2)), n=2)
    assert r.classification == "InC(2)"
    assert r.sup_scaled_extended <= r.sup_scaled * 1.05
    d = r.to_dict()
    assert d["window"] == [10.0, 1000.0] and "note" in d


def test_fit_rejects_bad_windows():
    series = survival_free(monomial_packet(2))
    with pytest.raises(ValueError):
        fit_exponent(series, window=(0.0, 10.0))
    with pytest.raises(ValueError):
        fit_exponent(series, window=(100.0, 10.0))
    with pytest.raises(ValueError, match="at least 30"):
        fit_exponent(series, window=(10.0, 12.0))


def test_check_bound_finds_worst_point():
    t = np.array([0.0, 1.0, 2.0, 4.0])
    p = np.array([1.0, 0.5, 0.5, 0.1])
    res = check_bound(series_from_probability(t, p), 2.0)
    assert res.holds and res.worst_t == 2.0 and res.worst_value == pytest.approx(2.0)
    assert not check_bound(series_from_probability(t, p), 1.9).holds
    with pytest.raises(ValueError):
        check_bound(series_from_probability(t, p), -1.0)


def test_bound_holds_for_phi2_coefficient():
    # t^2 (1 + t^2)^{-5/2} peaks at t^2 = 2/3
    series = survival_free(monomial_packet(2))
    peak = (2 / 3) * (5 / 3) ** -2.5
    res = check_bound(series, peak * 1.001)
    assert res.holds and res.worst_value == pytest.approx(peak, rel=1e-3)


@pytest.mark.parametrize("coefficient", [1.0, 8.0, 1e3, 1e6])
def test_gaussian_fails_any_finite_bound_on_extension(coefficient):
    # t^2 |A|^2 = t^2 / sqrt(1 + t^2) grows without limit
    amp = survival_free(gaussian_packet(), [0.0]).amplitude_fn
    t_fail = bound_fails_on_extension(amp, coefficient)
    assert t_fail is not None
    assert t_fail**2 / math.sqrt(1 + t_fail**2) > coefficient


def test_decaying_state_survives_extension():
    amp = survival_free(odd_packet(), [0.0]).amplitude_fn
    # sup t^2 (1 + t^2)^{-3/2} = 2 / 3^{3/2}
    assert bound_fails_on_extension(amp, 2 / 3**1.5 * 1.001, max_decades=6) is None


@pytest.mark.parametrize("n", [0, 1, 2, 3])
def test_wiener_average_against_quadrature(n):
    T = 1e3
    t = np.linspace(0, T, 200001)
    series = SurvivalSeries(t, gaussian_monomial_oracle(n, 0.5, t))
    exact = integrate.quad(lambda s: (1 + s * s) ** -(n + 0.5), 0, T, limit=200)[0] / T
    assert wiener_average(series, T) == pytest.approx(exact, rel=1e-6)


def test_wiener_average_interpolates_endpoint_and_checks_cover():
    t = np.array([0.0, 1.0, 3.0])
    series = series_from_probability(t, np.array([1.0, 1.0, 1.0]))
    assert wiener_average(series, 2.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        wiener_average(series, 5.0)
    with pytest.raises(ValueError):
        wiener_average(series_from_probability(t[1:], np.ones(2)), 2.0)
