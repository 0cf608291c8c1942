"""Analytic benchmark solutions and the relative RMS error metric.

Three closed-form references are provided:

* a semienclosed tidal channel with linearly sloping depth, whose harmonic
  surface amplitude solves a Bessel equation in 2 k sqrt(x);
* a semienclosed annular sector with flat bottom, whose amplitude separates
  into an order-nu Bessel radial factor times a cosine in the angle;
* a small-amplitude standing wave in a closed deep basin, with dispersion
  relation omega = sqrt(g kappa tanh(kappa H)).

The channel and sector problems come with coefficient-field constructors so
the elliptic solver can be pointed at them directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bessel
from .fluxops import CoefficientField, dirichlet, neumann

GRAVITY = 9.81


class ResonanceError(ValueError):
    """The forcing frequency sits on an eigenfrequency of the basin."""


@dataclass(frozen=True)
class ChannelParams:
    """Sloping-depth tidal channel on (length_min, length), open at x=length."""

    length: float = 300e3  # m
    length_min: float = 10e3  # m, closed wall
    depth_at_mouth: float = 20.1  # m
    frequency: float = 2.0 * np.pi / (12.42 * 3600.0)  # rad/s, M2 tide
    amplitude: float = 0.01  # m
    gravity: float = GRAVITY

    def __post_init__(self):
        if not (self.length > self.length_min > 0.0):
            raise ValueError("need length > length_min > 0")
        if self.depth_at_mouth <= 0.0:
            raise ValueError("depth must be positive")

    @property
    def wavenumber_scale(self) -> float:
        """k such that the radial argument is 2 k sqrt(x)."""
        return self.frequency * np.sqrt(self.length) / np.sqrt(
            self.gravity * self.depth_at_mouth
        )

    def depth(self, x):
        return np.asarray(x) * self.depth_at_mouth / self.length


@dataclass(frozen=True)
class SectorParams:
    """Flat-bottom sector channel, open along the outer arc r=length."""

    depth: float = 1.0  # m
    alpha: float = np.pi / 4.0  # rad, angular opening
    length_min: float = 90e3  # m, closed inner arc
    length: float = 158e3  # m, open outer arc
    mode: float = 1.0  # angular mode count of the forcing
    frequency: float = 2.0 * np.pi / (12.42 * 3600.0)  # rad/s
    amplitude: float = 0.01  # m
    gravity: float = GRAVITY

    def __post_init__(self):
        if not (self.length > self.length_min > 0.0):
            raise ValueError("need length > length_min > 0")
        if not 0.0 < self.alpha < 2.0 * np.pi:
            raise ValueError("alpha must lie in (0, 2 pi)")

    @property
    def order(self) -> float:
        """Bessel order nu = mode * pi / alpha."""
        return self.mode * np.pi / self.alpha

    @property
    def wavenumber(self) -> float:
        return self.frequency / np.sqrt(self.gravity * self.depth)


@dataclass(frozen=True)
class StandingWaveParams:
    """Unimodal standing wave in a closed basin of depth H and length L."""

    length: float = 10.0  # m
    depth: float = 10.0  # m
    surface_amplitude: float = 0.1  # m
    density: float = 1000.0  # kg/m^3
    gravity: float = GRAVITY

    @property
    def wavenumber(self) -> float:
        return np.pi / self.length

    @property
    def frequency(self) -> float:
        k = self.wavenumber
        return float(np.sqrt(self.gravity * k * np.tanh(k * self.depth)))


def channel_solution(params: ChannelParams):
    """Surface amplitude x -> zeta0(x); raises ResonanceError at resonance."""
    k = params.wavenumber_scale
    s1 = 2.0 * k * np.sqrt(params.length_min)
    sL = 2.0 * k * np.sqrt(params.length)
    y0p = bessel.bessel_deriv("second", 0, s1)
    j0p = bessel.bessel_deriv("first", 0, s1)
    den = y0p * bessel.j0(sL) - j0p * bessel.y0(sL)
    if abs(den) < 1e-14:
        raise ResonanceError(f"channel forcing at resonance (denominator {den:.3e})")

    def zeta0(x):
        s = 2.0 * k * np.sqrt(np.asarray(x, dtype=float))
        return params.amplitude * (y0p * bessel.j0(s) - j0p * bessel.y0(s)) / den

    return zeta0


def channel_coefficients(params: ChannelParams) -> CoefficientField:
    """Elliptic problem matching the channel: -(H p')' - (sigma^2/g) p = 0."""
    sq = params.frequency**2 / params.gravity
    return CoefficientField(
        dimension=1,
        diffusion=(params.depth,),
        reaction=-sq,
        boundary={
            "left": neumann(0.0),
            "right": dirichlet(params.amplitude),
        },
    )


def sector_solution(params: SectorParams):
    """Surface amplitude (r, theta) -> eta0; raises ResonanceError at resonance."""
    nu = params.order
    kap = params.wavenumber
    yp = bessel.bessel_deriv("second", nu, params.length_min * kap)
    jp = bessel.bessel_deriv("first", nu, params.length_min * kap)
    den = yp * bessel.bessel("first", nu, params.length * kap) - jp * bessel.bessel(
        "second", nu, params.length * kap
    )
    if abs(den) < 1e-14:
        raise ResonanceError(f"sector forcing at resonance (denominator {den:.3e})")

    def eta0(r, theta):
        r = np.asarray(r, dtype=float)
        radial = (
            yp * bessel.bessel("first", nu, r * kap)
            - jp * bessel.bessel("second", nu, r * kap)
        ) / den
        angular = np.cos(nu * (np.asarray(theta) + params.alpha / 2.0))
        return params.amplitude * radial * angular

    return eta0


def sector_coefficients(params: SectorParams) -> CoefficientField:
    """Polar-rectangle form of the sector problem on (r, theta)."""
    helm = params.frequency**2 / (params.gravity * params.depth)
    alpha = params.alpha

    def forcing(r, theta):
        return params.amplitude * np.cos(
            params.order * (np.asarray(theta) + alpha / 2.0)
        )

    return CoefficientField(
        dimension=2,
        diffusion=(1.0, lambda r, theta: 1.0 / np.asarray(r) ** 2),
        advection=(lambda r, theta: -1.0 / np.asarray(r), 0.0),
        reaction=-helm,
        boundary={
            "left": neumann(0.0),  # inner arc r = length_min
            "right": dirichlet(forcing),  # open outer arc
            "bottom": neumann(0.0),  # theta = -alpha/2 wall
            "top": neumann(0.0),  # theta = +alpha/2 wall
        },
    )


def standing_wave_fields(params: StandingWaveParams):
    """Analytic (eta(t, x), q(t, x, z)) of the standing wave."""
    k = params.wavenumber
    om = params.frequency
    rg = params.density * params.gravity
    H = params.depth
    cosh_kh = np.cosh(k * H)

    def eta(t, x):
        return params.surface_amplitude * np.cos(k * np.asarray(x)) * np.cos(om * t)

    def pressure(t, x, z):
        # cosh(k (z + H)) decays from the surface toward the bottom no-flux wall
        profile = np.cosh(k * (np.asarray(z) + H)) / cosh_kh
        return rg * params.surface_amplitude * profile * np.cos(k * np.asarray(x)) * np.cos(om * t)

    return eta, pressure


def e2_error(numeric, reference) -> float:
    """Relative root mean square error ||numeric - reference|| / ||reference||."""
    num = np.asarray(numeric, dtype=float).ravel()
    ref = np.asarray(reference, dtype=float).ravel()
    if num.size == 0 or num.shape != ref.shape:
        raise ValueError(
            f"sample vectors must be nonempty and equal length, got {num.size} and {ref.size}"
        )
    ref_norm = np.linalg.norm(ref)
    if ref_norm == 0.0:
        raise ValueError("reference samples have zero norm")
    return float(np.linalg.norm(num - ref) / ref_norm)
