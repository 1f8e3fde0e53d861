"""Model data shared by the micro and macro solvers: parameters, boundary flux, state."""
from dataclasses import dataclass, field, replace
import math

import numpy as np
from scipy.special import j0, j1

from .errors import ConfigError

N_SPECIES = 3
# reaction sign per species: a1, a2 gain r = a3 - a1 a2, a3 loses it
REACTION_SIGN = np.array([1.0, 1.0, -1.0])

PAPER_CONVENTION = "paper"
DIFFUSIVE_CONVENTION = "diffusive"


@dataclass(frozen=True)
class PhysicalParams:
    d_coeffs: tuple = (1.0, 1.0, 1.0)
    T: float = 1.0
    dt: float = 0.01

    def __post_init__(self):
        if len(self.d_coeffs) != N_SPECIES:
            raise ConfigError("exactly three diffusion coefficients are required", field="d")
        for i, di in enumerate(self.d_coeffs, start=1):
            if not di > 0:
                raise ConfigError(f"diffusion coefficient d{i}={di} must be > 0", field=f"d{i}")
        if self.T < 0:
            raise ConfigError(f"final time T={self.T} must be >= 0", field="T")
        if not self.dt > 0:
            raise ConfigError(f"time step dt={self.dt} must be > 0", field="dt")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))


def reaction_rate(a1, a2, a3):
    """Net forward rate ``a3 - a1*a2``; species 1, 2 gain it, species 3 loses it."""
    return a3 - a1 * a2


# --- time profiles ---------------------------------------------------------


@dataclass(frozen=True)
class TimeRamp:
    """Ramp ``s(t)`` with ``s(0) = 0`` reaching 1 at ``t = tau``.

    ``linear``: ``min(t/tau, 1)``. ``smooth``: ``3u^2 - 2u^3`` with
    ``u = min(t/tau, 1)``, continuously differentiable.
    """

    kind: str = "linear"
    tau: float = 0.5

    def __post_init__(self):
        if self.kind not in ("linear", "smooth"):
            raise ConfigError(f"unknown ramp {self.kind!r}", field="ramp")
        if not self.tau > 0:
            raise ConfigError(f"ramp time tau={self.tau} must be > 0", field="tau")

    def __call__(self, t):
        u = np.minimum(np.asarray(t, dtype=float) / self.tau, 1.0)
        if self.kind == "smooth":
            return u * u * (3.0 - 2.0 * u)
        return u

    def integral(self, t0, t1):
        """Exact integral of s over [t0, t1]."""

        def prim(t):
            t = float(t)
            tau = self.tau
            if self.kind == "linear":
                return t * t / (2 * tau) if t <= tau else tau / 2 + (t - tau)
            if t <= tau:
                u = t / tau
                return tau * (u**3 - u**4 / 2)
            return tau / 2 + (t - tau)

        return prim(t1) - prim(t0)


# --- spatial factors g(x) --------------------------------------------------


@dataclass(frozen=True)
class SpatialFactor:
    """Nonnegative macroscopic factor of the flux.

    ``one``: 1. ``bump``: product of ``cos^2(pi (x_j - c_j) / (2 w))`` on
    ``|x_j - c_j| < w``, zero outside. ``cosine``: ``1 + b prod_j cos(pi x_j / L)``
    with ``|b| <= 1``.
    """

    kind: str = "one"
    center: tuple = ()
    width: float = 0.0
    amp: float = 0.0
    L: float = 1.0

    def __post_init__(self):
        if self.kind not in ("one", "bump", "cosine"):
            raise ConfigError(f"unknown spatial factor {self.kind!r}", field="g")
        if self.kind == "bump" and not self.width > 0:
            raise ConfigError("bump width must be > 0", field="g_width")
        if self.kind == "cosine" and abs(self.amp) > 1:
            raise ConfigError("cosine amplitude must satisfy |b| <= 1 to keep g >= 0", field="g_amp")

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "one":
            return np.ones(len(x))
        if self.kind == "bump":
            return bump(x, self.center, self.width)
        prod = np.ones(len(x))
        for j in range(x.shape[1]):
            prod = prod * np.cos(np.pi * x[:, j] / self.L)
        return 1.0 + self.amp * prod


def bump(x, center, width):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.ones(len(x))
    for j in range(x.shape[1]):
        z = (x[:, j] - center[j]) / width
        out = out * np.where(np.abs(z) < 1.0, np.cos(0.5 * np.pi * z) ** 2, 0.0)
    return out


# --- cell factors q(y) -----------------------------------------------------


@dataclass(frozen=True)
class CellFactor:
    """Nonnegative Y-periodic factor ``1 + amp * cos(2 pi y_axis)``, ``|amp| <= 1``."""

    amp: float = 0.0
    axis: int = 0

    def __post_init__(self):
        if abs(self.amp) > 1:
            raise ConfigError("cell factor amplitude must satisfy |amp| <= 1", field="q_amp")

    def __call__(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if self.amp == 0.0:
            return np.ones(len(y))
        return 1.0 + self.amp * np.cos(2.0 * np.pi * y[:, self.axis])

    def surface_integral(self, Theta, d):
        """Closed-form integral over the sphere ``|y| = Theta``."""
        if Theta == 0:
            return 0.0
        k = 2.0 * np.pi
        if d == 2:
            return 2.0 * np.pi * Theta * (1.0 + self.amp * float(j0(k * Theta)))
        area = 4.0 * np.pi * Theta**2
        return area * (1.0 + self.amp * math.sin(k * Theta) / (k * Theta))


@dataclass(frozen=True)
class BoundaryFlux:
    """``psi_i(t, x, y) = A_i s(t) g_i(x) q_i(y)`` for the three species."""

    amplitudes: tuple = (0.0, 0.0, 0.0)
    ramp: TimeRamp = field(default_factory=TimeRamp)
    spatial: tuple = (SpatialFactor(), SpatialFactor(), SpatialFactor())
    cell: tuple = (CellFactor(), CellFactor(), CellFactor())

    def __post_init__(self):
        if len(self.amplitudes) != N_SPECIES:
            raise ConfigError("three flux amplitudes are required", field="amplitudes")
        for i, a in enumerate(self.amplitudes, start=1):
            if a < 0:
                raise ConfigError(f"flux amplitude A{i}={a} must be >= 0", field=f"A{i}")

    @property
    def active(self):
        return any(a > 0 for a in self.amplitudes)

    def __call__(self, i, t, x, y):
        if self.amplitudes[i] == 0.0:
            return np.zeros(len(np.atleast_2d(x)))
        return self.amplitudes[i] * float(self.ramp(t)) * self.spatial[i](x) * self.cell[i](y)

    def surface_integral(self, i, t, x, Theta, d, N_q=64, quadrature=None):
        """``int_Gamma psi_i(t, x, y) dsigma(y)`` at the points x.

        The y-integral is done once with ``quadrature`` (a callable
        ``(f, Theta, N_q, d) -> float``) and scaled by the x and t factors.
        """
        if self.amplitudes[i] == 0.0:
            return np.zeros(len(np.atleast_2d(x)))
        if quadrature is None:
            from .numerics import circle_quadrature as quadrature
        q = quadrature(self.cell[i], Theta, N_q, d)
        return self.amplitudes[i] * float(self.ramp(t)) * self.spatial[i](x) * q

    def with_amplitudes(self, amplitudes):
        return replace(self, amplitudes=tuple(amplitudes))


NO_FLUX = BoundaryFlux()


@dataclass
class SpeciesState:
    """Packed concentrations ``values[i]`` on the fluid cells at time t."""

    values: np.ndarray
    t: float = 0.0

    def copy(self):
        return SpeciesState(self.values.copy(), self.t)

    @property
    def min(self):
        return float(self.values.min()) if self.values.size else 0.0


def flux_factor(convention, d_i):
    """Multiplier turning the boundary datum into a diffusive flux per unit area."""
    if convention == PAPER_CONVENTION:
        return d_i
    if convention == DIFFUSIVE_CONVENTION:
        return 1.0
    raise ConfigError(f"unknown flux_convention {convention!r}", field="flux_convention")


def fluid_integral_cos(Theta, d, k_norm):
    """``int_T cos(k . y) dy`` over the ball of radius Theta, ``|k| = k_norm``."""
    if Theta == 0:
        return 0.0
    if d == 2:
        return 2.0 * np.pi * Theta * float(j1(k_norm * Theta)) / k_norm
    kr = k_norm * Theta
    return 4.0 * np.pi * (math.sin(kr) - kr * math.cos(kr)) / k_norm**3
