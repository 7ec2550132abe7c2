"""Distance- and angle-dependent dipole-dipole coefficients.

All rates are in units of the 1 <-> 3 half-rate (gamma13 = 1) and all
lengths in units of the 1 <-> 2 wavelength.  For a transition with
half-rate ``gamma``, reduced distance ``x = 2 pi r / lambda`` and dipole
angle ``theta`` relative to the interatomic axis, the cross coefficient
``gamma_dd + i omega_dd`` is

    gamma_dd = 3/2 gamma [A sin x / x + B (cos x / x^2 - sin x / x^3)]
    omega_dd = 3/2 gamma [-A cos x / x + B (sin x / x^2 + cos x / x^3)]

with ``A = 1 - cos^2 theta`` and ``B = 1 - 3 cos^2 theta``.  ``gamma_dd``
tends to ``gamma`` at short distance (Dicke limit) and ``omega_dd``
diverges like ``x^-3``.
"""

from __future__ import annotations

import csv
import math
import sys
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, TextIO

import numpy as np

from .errors import InvalidGeometryError

MAGIC_ANGLE = math.acos(1.0 / math.sqrt(3.0))

# In+ motivates the defaults: 1<->3 at 230.6 nm, 2<->3 at 236.5 nm, 1<->2 at 9.3 um.
DEFAULT_RATIO_13 = 0.2306 / 9.3
DEFAULT_RATIO_23 = 0.2365 / 9.3

SCAN_HEADER = ("r_over_lambda12", "gamma_dd", "omega_dd", "abs_gamma12_sq")


class Transition(Enum):
    T12 = (1, 2)
    T13 = (1, 3)
    T23 = (2, 3)

    @property
    def upper(self) -> int:
        return self.value[0]

    @property
    def lower(self) -> int:
        return self.value[1]


@dataclass(frozen=True)
class TransitionRates:
    """Per-atom half-rates; the Einstein A coefficient is twice each value."""

    gamma13: float = 1.0
    gamma12: float = 2e-2
    gamma23: float = 2e-2

    def __post_init__(self):
        for name in ("gamma13", "gamma12", "gamma23"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and >= 0, got {v!r}")

    def of(self, transition: Transition) -> float:
        return {
            Transition.T12: self.gamma12,
            Transition.T13: self.gamma13,
            Transition.T23: self.gamma23,
        }[transition]


@dataclass(frozen=True)
class Geometry:
    r: float = 0.5
    theta12: float = math.pi / 2
    theta13: float = math.pi / 2
    theta23: float = math.pi / 2
    wavelength_ratio_13: float = DEFAULT_RATIO_13
    wavelength_ratio_23: float = DEFAULT_RATIO_23

    def __post_init__(self):
        if not (math.isfinite(self.r) and self.r > 0.0):
            raise InvalidGeometryError(f"separation must be > 0, got r={self.r!r}")
        for name in ("theta12", "theta13", "theta23"):
            th = getattr(self, name)
            if not 0.0 <= th <= math.pi:
                raise InvalidGeometryError(f"{name}={th!r} outside [0, pi]")
        for name in ("wavelength_ratio_13", "wavelength_ratio_23"):
            if not getattr(self, name) > 0.0:
                raise InvalidGeometryError(f"{name} must be > 0")

    def theta(self, transition: Transition) -> float:
        return {
            Transition.T12: self.theta12,
            Transition.T13: self.theta13,
            Transition.T23: self.theta23,
        }[transition]

    def wavelength(self, transition: Transition) -> float:
        """Wavelength in units of lambda12."""
        return {
            Transition.T12: 1.0,
            Transition.T13: self.wavelength_ratio_13,
            Transition.T23: self.wavelength_ratio_23,
        }[transition]

    def with_r(self, r: float) -> "Geometry":
        return replace(self, r=r)


@dataclass(frozen=True)
class CrossCoupling:
    gamma_dd: float = 0.0
    omega_dd: float = 0.0

    @property
    def complex(self) -> complex:
        return complex(self.gamma_dd, self.omega_dd)

    @property
    def abs_sq(self) -> float:
        return self.gamma_dd**2 + self.omega_dd**2


NO_COUPLING = CrossCoupling()


_B_ROUNDING = 8 * sys.float_info.epsilon


def coupling_terms(x: float, theta: float) -> tuple[float, float]:
    """Bracketed real and imaginary factors (without the 3/2 gamma prefactor)."""
    c2 = math.cos(theta) ** 2
    a = 1.0 - c2
    b = 1.0 - 3.0 * c2
    if abs(b) < _B_ROUNDING:
        # at the magic angle cos^2 only rounds to 1/3; the residue would be
        # amplified by 1/x^3 in the near field
        b = 0.0
    s, c = math.sin(x), math.cos(x)
    re = a * s / x + b * (c / x**2 - s / x**3)
    im = -a * c / x + b * (s / x**2 + c / x**3)
    return re, im


def cross_coupling(transition: Transition, rates: TransitionRates, geom: Geometry) -> CrossCoupling:
    if not geom.r > 0.0:
        raise InvalidGeometryError(f"separation must be > 0, got r={geom.r!r}")
    gamma = rates.of(transition)
    x = 2.0 * math.pi * geom.r / geom.wavelength(transition)
    re, im = coupling_terms(x, geom.theta(transition))
    return CrossCoupling(1.5 * gamma * re, 1.5 * gamma * im)


def coupling_scan(
    transition: Transition,
    rates: TransitionRates,
    theta: float,
    r_min: float,
    r_max: float,
    points: int,
    geom: Geometry | None = None,
) -> np.ndarray:
    """Rows of (r, gamma_dd, omega_dd, |gamma_12|^2) on a uniform grid in r."""
    if not 0.0 < r_min < r_max:
        raise InvalidGeometryError(f"need 0 < r_min < r_max, got {r_min!r}, {r_max!r}")
    if points < 2:
        raise ValueError("a scan needs at least 2 points")
    base = geom if geom is not None else Geometry()
    attr = {Transition.T12: "theta12", Transition.T13: "theta13", Transition.T23: "theta23"}
    base = replace(base, **{attr[transition]: theta})
    rows = np.empty((points, 4))
    for i, r in enumerate(np.linspace(r_min, r_max, points)):
        cc = cross_coupling(transition, rates, base.with_r(float(r)))
        rows[i] = (r, cc.gamma_dd, cc.omega_dd, cc.abs_sq)
    return rows


def write_scan_csv(rows: Iterable[Iterable[float]], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SCAN_HEADER)
    for row in rows:
        w.writerow([f"{v:.12g}" for v in row])
