"""eps-scale reaction-diffusion system on the perforated grid."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .numerics import NEUMANN, assemble_diffusion
from .physics import NO_FLUX, N_SPECIES, PAPER_CONVENTION, SpeciesState, flux_factor
from .timestepping import ImexIntegrator, run


@dataclass
class MicroRun:
    grid: object = field(repr=False)
    record: object = field(repr=False)
    snapshots: list = field(repr=False)
    final: SpeciesState = field(repr=False)
    op: object = field(default=None, repr=False)

    @property
    def epsilon(self):
        return self.grid.epsilon


class MicroSolver:
    """Backward-Euler diffusion, explicit reaction, eps-scaled influx on the holes.

    A fluid cell next to hole faces receives, per step,
    ``dt * c_i * eps * psi_i(t, x_f, y_f) * |face|`` of mass, where
    ``c_i = d_i`` for the ``"paper"`` flux convention (boundary datum on
    ``grad a . n``) and ``c_i = 1`` for ``"diffusive"`` (datum on
    ``d_i grad a . n``).
    """

    def __init__(self, grid, params, flux=NO_FLUX, convention=PAPER_CONVENTION, method="direct"):
        self.grid = grid
        self.params = params
        self.flux = flux
        self.convention = convention
        self.coef = [flux_factor(convention, di) for di in params.d_coeffs]
        self.op = assemble_diffusion(grid.fluid_mask, grid.h, 1.0, NEUMANN)
        faces = grid.faces
        self._face_unknown = self.op.index[faces.cell] if len(faces) else np.zeros(0, int)
        if len(faces):
            self._face_y = (faces.center - grid.hole_centers[faces.hole]) / grid.epsilon
        else:
            self._face_y = np.zeros((0, grid.d))
        source = self._source if flux.active and len(faces) else None
        self.integrator = ImexIntegrator(self.op, params.d_coeffs, source=source, method=method)

    def _source(self, t, dt):
        g = self.grid
        n = self.op.size
        mass = np.zeros((N_SPECIES, n))
        inflow = np.zeros(N_SPECIES)
        for i in range(N_SPECIES):
            if self.flux.amplitudes[i] == 0.0:
                continue
            psi = self.flux(i, t, g.faces.center, self._face_y)
            per_face = dt * self.coef[i] * g.epsilon * psi * g.faces.measure
            mass[i] = np.bincount(self._face_unknown, weights=per_face, minlength=n)
            inflow[i] = float(np.sum(per_face))
        return mass, inflow

    def boundary_inflow_rate(self, t):
        """Instantaneous ``sum_faces c_i eps psi_i |face|`` per species."""
        g = self.grid
        out = np.zeros(N_SPECIES)
        for i in range(N_SPECIES):
            if len(g.faces) and self.flux.amplitudes[i] > 0:
                psi = self.flux(i, t, g.faces.center, self._face_y)
                out[i] = self.coef[i] * g.epsilon * float(np.sum(psi * g.faces.measure))
        return out

    def state_from_constants(self, values, t=0.0):
        values = np.asarray(values, dtype=float)
        if values.shape != (N_SPECIES,):
            raise ConfigError("three initial constants are required", field="ic")
        if np.any(values < 0):
            raise ConfigError("initial constants must be >= 0", field="ic")
        return SpeciesState(np.repeat(values[:, None], self.op.size, axis=1), t)

    def state_from_grids(self, grids, t=0.0):
        """Pack full-grid fields (shape ``(3, *grid.shape)``)."""
        return SpeciesState(np.array([self.op.pack(g) for g in grids]), t)

    def step(self, state):
        new, inflow, dt_used = self.integrator.step(state, self.params.dt)
        return new

    def run(self, state0, n_snapshots=0):
        record, snaps, final = run(self.integrator, state0, self.params, n_snapshots, self.grid.epsilon)
        return MicroRun(self.grid, record, snaps, final, self.op)

    def extend_by_zero(self, values):
        return extend_by_zero(values, self.op)


def extend_by_zero(values, op):
    """Full-grid arrays with exact zeros in the holes.

    ``values`` is a packed state (``(3, n)`` array or :class:`SpeciesState`) or
    a single packed field.
    """
    if isinstance(values, SpeciesState):
        values = values.values
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        return op.unpack(values)
    return np.array([op.unpack(v) for v in values])
