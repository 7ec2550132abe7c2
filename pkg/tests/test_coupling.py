import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from djump.coupling import (
    MAGIC_ANGLE,
    SCAN_HEADER,
    Geometry,
    Transition,
    TransitionRates,
    coupling_scan,
    coupling_terms,
    cross_coupling,
    write_scan_csv,
)
from djump.errors import InvalidGeometryError

GAMMA = 0.02
RATES = TransitionRates(gamma13=1.0, gamma12=GAMMA, gamma23=GAMMA)
X_GRID = np.geomspace(1e-3, 1e2, 60)
THETA_GRID = np.linspace(0.0, math.pi, 9)


def coupling_at(x, theta, gamma=GAMMA):
    re, im = coupling_terms(x, theta)
    return 1.5 * gamma * re, 1.5 * gamma * im


def near_field_bracket_series(x):
    # cos x / x^2 - sin x / x^3, expanded about x = 0
    return -1 / 3 + x**2 / 30 - x**4 / 840 + x**6 / 45360


def test_series_oracle_matches_closed_form_bracket_at_moderate_x():
    x = 0.05
    exact = math.cos(x) / x**2 - math.sin(x) / x**3
    assert exact == pytest.approx(near_field_bracket_series(x), rel=1e-12)


def test_gamma_dd_small_x_limit_at_right_angle():
    x = 1e-3
    g, _ = coupling_at(x, math.pi / 2)
    # A = 1, B = 1: 1.5 * (sin x / x + series)
    oracle = 1.5 * GAMMA * (math.sin(x) / x + near_field_bracket_series(x))
    assert g == pytest.approx(oracle, rel=1e-6)
    assert g / GAMMA == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("theta", [0.0, math.pi / 2, math.pi / 5])
def test_omega_dd_near_field_asymptote(theta):
    x = 1e-3
    b = 1 - 3 * math.cos(theta) ** 2
    _, w = coupling_at(x, theta)
    ratio = w * x**3 / (1.5 * GAMMA * b)
    assert abs(abs(ratio) - 1.0) < 1e-2
    assert ratio > 0


@pytest.mark.parametrize("x", np.geomspace(1e-2, 50, 20))
def test_magic_angle_modulus(x):
    g, w = coupling_at(x, MAGIC_ANGLE)
    assert math.hypot(g, w) == pytest.approx(GAMMA / x, rel=1e-12)


def test_far_field_decay():
    g, w = coupling_at(1e4, math.pi / 2)
    assert abs(g) < 1e-3 * GAMMA and abs(w) < 1e-3 * GAMMA


def test_positive_semidefinite_damping_on_grid():
    for theta in THETA_GRID:
        for x in X_GRID:
            g, _ = coupling_at(x, theta)
            assert abs(g) <= GAMMA * (1 + 1e-9)


def test_decay_envelope_in_far_zone():
    # at theta = 0 the modulus is 3 gamma sqrt(1 + 1/x^2) / x^2, which only
    # drops under 3 gamma / x once x^2 exceeds the golden ratio (x > 1.272)
    for theta in THETA_GRID:
        for x in X_GRID[X_GRID >= 1.3]:
            g, w = coupling_at(x, theta)
            assert math.hypot(g, w) <= 3 * GAMMA / x


def test_theta_continuity():
    h = 1e-6
    for x in X_GRID:
        bound = 1.5 * GAMMA * (1 + 2 / x**2 + 2 / x**3) * 3 + 1e-12
        for theta in THETA_GRID[1:-1]:
            d_re = (coupling_at(x, theta + h)[0] - coupling_at(x, theta - h)[0]) / (2 * h)
            d_im = (coupling_at(x, theta + h)[1] - coupling_at(x, theta - h)[1]) / (2 * h)
            assert abs(d_re) <= bound and abs(d_im) <= bound


@given(st.floats(1e-3, 1e3), st.floats(0.0, math.pi))
def test_bracket_stays_finite(x, theta):
    re, im = coupling_terms(x, theta)
    assert math.isfinite(re) and math.isfinite(im)
    assert abs(re) <= 1.0 / 1.5 + 1e-9


def test_cross_coupling_uses_transition_wavelength_and_rate():
    geom = Geometry(r=0.4)
    c = cross_coupling(Transition.T13, RATES, geom)
    x = 2 * math.pi * 0.4 / geom.wavelength_ratio_13
    assert (c.gamma_dd, c.omega_dd) == pytest.approx(coupling_at(x, math.pi / 2, gamma=1.0))
    assert c.abs_sq == pytest.approx(c.gamma_dd**2 + c.omega_dd**2)


def test_invalid_geometry():
    with pytest.raises(InvalidGeometryError):
        Geometry(r=0.0)
    with pytest.raises(InvalidGeometryError):
        Geometry(theta12=4.0)
    with pytest.raises(ValueError):
        TransitionRates(gamma12=-1.0)


def test_scan_examples():
    rows = coupling_scan(Transition.T12, RATES, math.pi / 2, 0.1, 3.0, 30)
    assert rows.shape == (30, 4)
    assert np.all(np.diff(rows[:, 0]) > 0)
    assert rows[0, 0] == 0.1 and rows[-1, 0] == 3.0
    for row in (rows[0], rows[-1]):
        c = cross_coupling(Transition.T12, RATES, Geometry(r=row[0]))
        assert (row[1], row[2], row[3]) == (c.gamma_dd, c.omega_dd, c.abs_sq)
    np.testing.assert_allclose(rows[:, 3], rows[:, 1] ** 2 + rows[:, 2] ** 2, rtol=1e-14)


def test_scan_rejects_bad_range():
    with pytest.raises(InvalidGeometryError):
        coupling_scan(Transition.T12, RATES, 1.0, 2.0, 1.0, 10)
    with pytest.raises(ValueError):
        coupling_scan(Transition.T12, RATES, 1.0, 0.1, 1.0, 1)


def test_scan_csv_format():
    rows = coupling_scan(Transition.T12, RATES, math.pi / 2, 0.1, 3.0, 5)
    buf = io.StringIO()
    write_scan_csv(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(SCAN_HEADER)
    assert len(lines) == 6
    first = [float(v) for v in lines[1].split(",")]
    np.testing.assert_allclose(first, rows[0], rtol=1e-11)
