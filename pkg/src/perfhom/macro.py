"""Homogenized system on the unperforated box."""
from dataclasses import dataclass, field

import numpy as np

from .cell_problem import cell_gradient, cell_operator
from .errors import ConfigError
from .geometry import security_zone_mask
from .numerics import NEUMANN, assemble_diffusion, circle_quadrature
from .physics import NO_FLUX, N_SPECIES, PAPER_CONVENTION, SpeciesState, flux_factor
from .timestepping import ImexIntegrator, run

ZONE = "zone"
GLOBAL = "global"


@dataclass(frozen=True)
class EffectiveModel:
    """Coefficients of ``theta da/dt - d_i div(D grad a) = theta (+-r) + c_i Psi_i``.

    ``source_support`` selects where ``Psi_i`` acts: the security zone
    ``{dist(x, boundary) > delta}`` or the whole box. ``coefficient_support``
    does the same for ``theta`` and ``D``; outside the zone the micro domain has
    no holes, so ``theta = 1`` and ``D = I`` there.
    """

    D: np.ndarray
    theta: float
    gamma: float
    Theta: float
    d: int = 2
    delta: float = 0.0
    N_q: int = 64
    source_support: str = ZONE
    coefficient_support: str = ZONE
    convention: str = PAPER_CONVENTION

    def __post_init__(self):
        D = np.asarray(self.D, dtype=float)
        if D.shape != (self.d, self.d):
            raise ConfigError(f"D must be {self.d}x{self.d}", field="D")
        if not np.allclose(D, D.T, atol=1e-12) or np.linalg.eigvalsh(D).min() <= 0:
            raise ConfigError("effective tensor must be symmetric positive definite", field="D")
        if not 0 < self.theta <= 1:
            raise ConfigError(f"porosity theta={self.theta} must lie in (0, 1]", field="theta")
        for name in ("source_support", "coefficient_support"):
            if getattr(self, name) not in (ZONE, GLOBAL):
                raise ConfigError(f"{name} must be 'zone' or 'global'", field=name)

    @classmethod
    def from_tensor(cls, eff, d, delta, **kw):
        return cls(D=eff.D, theta=eff.theta, gamma=eff.gamma, Theta=eff.Theta, d=d, delta=delta, **kw)

    @property
    def alpha(self):
        return 1.0 / self.theta


def homogenized_source(flux, i, t, x, model):
    """``Psi_i(t, x) = int_Gamma psi_i(t, x, y) dsigma(y)`` (no ``d_i`` factor)."""
    return flux.surface_integral(i, t, x, model.Theta, model.d, N_q=model.N_q, quadrature=circle_quadrature)


class MacroSolver:
    """IMEX integration of the effective model on a box grid with spacing h."""

    def __init__(self, L, h, model, params, flux=NO_FLUX, method="direct"):
        n = int(round(L / h))
        if abs(n * h - L) > 1e-9 * L:
            raise ConfigError(f"L/h={L / h} is not an integer", field="h")
        self.L, self.h, self.n = float(L), float(h), n
        self.model = model
        self.params = params
        self.flux = flux
        d = model.d
        self.shape = (n,) * d
        self.zone = security_zone_mask(n, h, L, model.delta, d)
        if model.coefficient_support == ZONE:
            theta = np.where(self.zone, model.theta, 1.0)
            K = np.where(self.zone[..., None, None], model.D, np.eye(d))
        else:
            theta = np.full(self.shape, model.theta)
            K = model.D
        self.op = assemble_diffusion(np.ones(self.shape, dtype=bool), h, K, NEUMANN)
        self.theta_field = theta
        self.weights = self.op.pack(theta)
        support = self.zone if model.source_support == ZONE else np.ones(self.shape, dtype=bool)
        self.support = support
        self._src_cells = np.flatnonzero(support.ravel())
        c = (np.arange(n) + 0.5) * h
        pts = np.stack([g.ravel() for g in np.meshgrid(*([c] * d), indexing="ij")], axis=1)
        self._src_x = pts[self._src_cells]
        self.coef = [flux_factor(model.convention, di) for di in params.d_coeffs]
        source = self._source if flux.active else None
        self.integrator = ImexIntegrator(self.op, params.d_coeffs, source=source,
                                         weights=self.weights, method=method)

    @property
    def support_volume(self):
        return len(self._src_cells) * self.h ** self.model.d

    def _source(self, t, dt):
        size = self.op.size
        mass = np.zeros((N_SPECIES, size))
        inflow = np.zeros(N_SPECIES)
        vol = self.h ** self.model.d
        for i in range(N_SPECIES):
            if self.flux.amplitudes[i] == 0.0:
                continue
            psi = homogenized_source(self.flux, i, t, self._src_x, self.model)
            per_cell = dt * self.coef[i] * psi * vol
            mass[i, self._src_cells] = per_cell
            inflow[i] = float(np.sum(per_cell))
        return mass, inflow

    def state_from_constants(self, values, t=0.0):
        values = np.asarray(values, dtype=float)
        if values.shape != (N_SPECIES,) or np.any(values < 0):
            raise ConfigError("three nonnegative initial constants are required", field="ic")
        return SpeciesState(np.repeat(values[:, None], self.op.size, axis=1), t)

    def state_from_grids(self, grids, t=0.0):
        return SpeciesState(np.array([np.asarray(g, dtype=float).ravel() for g in grids]), t)

    def step(self, state):
        new, _, _ = self.integrator.step(state, self.params.dt)
        return new

    def run(self, state0, n_snapshots=0):
        record, snaps, final = run(self.integrator, state0, self.params, n_snapshots, epsilon=0.0)
        return MacroRun(self, record, snaps, final)


@dataclass
class MacroRun:
    solver: MacroSolver = field(repr=False)
    record: object = field(repr=False)
    snapshots: list = field(repr=False)
    final: SpeciesState = field(repr=False)

    def grid_values(self, values):
        return np.asarray(values).reshape((-1,) + self.solver.shape)


def macro_gradient(field_grid, h):
    """Central differences inside, one-sided at the box faces; shape ``(d, *shape)``."""
    return np.array(np.gradient(np.asarray(field_grid, dtype=float), h))


def corrector_reconstruction(grad_x, cell, correctors, y, op=None):
    """``grad_x a + grad_y a1`` with ``a1 = w_j(y) da/dx_j``.

    ``grad_x`` has shape ``(npts, d)`` and ``y`` shape ``(npts, d)`` with entries
    in ``[-1/2, 1/2)``. The corrector gradient is taken at the unit-cell voxel
    containing y (cell-averaged face differences). Points in a hole return the
    macro gradient unchanged.
    """
    grad_x = np.atleast_2d(np.asarray(grad_x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    d = cell.d
    if cell.Theta == 0 or not correctors:
        return grad_x.copy()
    op = op or cell_operator(cell)
    omegas = sorted(correctors, key=lambda c: c.direction)
    # J[k, j] = d w_j / d y_k on each voxel
    J = np.zeros((d, d) + (cell.m,) * d)
    for j, c in enumerate(omegas):
        g = cell_gradient(cell, op, c.values)
        for k in range(d):
            J[k, j] = op.unpack(g[k])
    idx = np.floor((y + 0.5) * cell.m).astype(int) % cell.m
    Jp = J[(slice(None), slice(None)) + tuple(idx.T)]  # (d, d, npts)
    return grad_x + np.einsum("kjp,pj->pk", Jp, grad_x)
