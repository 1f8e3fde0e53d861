"""IMEX stepping shared by the micro and macro solvers.

One step for species i::

    a*   = a + dt * sign_i * r + source_i / (w * h^d)      r = a3 - a1 a2
    (w + dt d_i A) a+ = w a*

``w`` is the porosity weight per cell (1 for the micro problem). The same
``r`` is used for every species, so ``a1 + a3`` and ``a2 + a3`` change only by
the boundary/volume source.
"""
from dataclasses import dataclass, field
import csv
import logging

import numpy as np

from .errors import ConfigError, SolverError
from .numerics import ShiftedSolver
from .physics import N_SPECIES, REACTION_SIGN, SpeciesState, reaction_rate

logger = logging.getLogger(__name__)

NEG_TOL = 1e-14
MAX_HALVINGS = 6
GUARD = 0.5

RECORD_COLUMNS = (
    "step", "t", "mass_a1", "mass_a2", "mass_a3", "inflow_1", "inflow_2", "inflow_3",
    "min_a", "L2L2_partial", "dt_used",
)


@dataclass
class RunRecord:
    """Per-step time series. Row 0 is the initial state.

    ``inflow_i`` is the mass delivered by the source during the step ending at
    that row (zero on row 0).
    """

    rows: list = field(default_factory=list)
    epsilon: float = 0.0

    def append(self, **row):
        self.rows.append(row)

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)

    def mass_balance_residuals(self):
        """Relative per-step defects of ``a1 + a3`` and ``a2 + a3`` vs tallied inflow."""
        m = [self.column(f"mass_a{i}") for i in (1, 2, 3)]
        q = [self.column(f"inflow_{i}") for i in (1, 2, 3)]
        out = []
        for a, b in ((0, 2), (1, 2)):
            total = m[a] + m[b]
            lhs = np.diff(total)
            rhs = (q[a] + q[b])[1:]
            scale = np.maximum(np.abs(total[1:]), np.abs(total[:-1]))
            scale = np.where(scale > 0, scale, 1.0)
            out.append(np.abs(lhs - rhs) / scale)
        return np.array(out)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RECORD_COLUMNS)
            for r in self.rows:
                w.writerow([int(r["step"])] + [repr(float(r[c])) for c in RECORD_COLUMNS[1:]])


@dataclass
class Snapshot:
    t: float
    values: np.ndarray = field(repr=False)


class ImexIntegrator:
    """Time stepper on packed fluid vectors.

    ``source(t, dt)`` returns ``(mass, inflow)``: mass added per unknown over
    the step, shape ``(3, n)``, and its per-species totals.
    """

    def __init__(self, op, d_coeffs, source=None, weights=None, method="direct", tol=1e-9):
        self.op = op
        self.d_coeffs = tuple(float(v) for v in d_coeffs)
        self.source = source
        self.weights = np.ones(op.size) if weights is None else np.asarray(weights, dtype=float)
        self.cell_volume = op.h ** len(op.shape)
        # one solver for all species: equal d_i share a factorisation
        self.solver = ShiftedSolver(op, self.weights, method=method, tol=tol)

    def masses(self, values):
        return [float(np.sum(self.weights * v)) * self.cell_volume for v in values]

    def l2_squared(self, values):
        return sum(float(np.sum(v * v)) for v in values) * self.cell_volume

    def _substep(self, a, t, dt):
        a1, a2, a3 = a
        if a.size and dt * max(float(a1.max()), float(a2.max()), 1.0) > GUARD:
            return None, None
        r = reaction_rate(a1, a2, a3)
        inflow = np.zeros(N_SPECIES)
        if self.source is not None:
            mass, inflow = self.source(t + 0.5 * dt, dt)
            add = mass / (self.weights * self.cell_volume)
        else:
            add = 0.0
        star = a + dt * REACTION_SIGN[:, None] * r[None, :] + add
        new = np.empty_like(a)
        for i in range(N_SPECIES):
            new[i] = self.solver.solve(star[i], dt * self.d_coeffs[i])
        if new.size and new.min() < -NEG_TOL:
            return None, None
        return new, np.asarray(inflow, dtype=float)

    def step(self, state, dt):
        """Advance by dt, subdividing into 2^k equal substeps if needed.

        Returns ``(new_state, inflow, dt_used)`` where dt_used is the substep
        length actually taken.
        """
        for k in range(MAX_HALVINGS + 1):
            n_sub = 2**k
            h = dt / n_sub
            a = state.values
            t = state.t
            total = np.zeros(N_SPECIES)
            ok = True
            for _ in range(n_sub):
                a, q = self._substep(a, t, h)
                if a is None:
                    ok = False
                    break
                total += q
                t += h
            if ok:
                if k:
                    logger.info("step at t=%.4g split into %d substeps", state.t, n_sub)
                return SpeciesState(a, state.t + dt), total, h
        raise SolverError(
            f"nonnegativity could not be kept at t={state.t:.4g} after {MAX_HALVINGS} halvings"
        )


def snapshot_stride(n_steps, n_snapshots):
    if n_snapshots <= 0 or n_steps == 0:
        return 0
    if n_steps % n_snapshots:
        raise ConfigError(
            f"{n_snapshots} snapshots do not divide {n_steps} steps evenly", field="snapshots"
        )
    return n_steps // n_snapshots


def run(integrator, state0, params, n_snapshots=0, epsilon=0.0):
    """Integrate to ``params.T``. Returns ``(RunRecord, snapshots, final_state)``.

    Snapshots are taken at ``j T / n_snapshots`` for ``j = 0..n_snapshots``.
    """
    n_steps = params.n_steps
    if abs(n_steps * params.dt - params.T) > 1e-9 * max(params.T, 1.0):
        raise ConfigError(f"T={params.T} is not a multiple of dt={params.dt}", field="dt")
    stride = snapshot_stride(n_steps, n_snapshots)
    state = state0.copy()
    record = RunRecord(epsilon=epsilon)
    masses = integrator.masses(state.values)
    l2 = integrator.l2_squared(state.values)
    record.append(step=0, t=state.t, mass_a1=masses[0], mass_a2=masses[1], mass_a3=masses[2],
                  inflow_1=0.0, inflow_2=0.0, inflow_3=0.0, min_a=state.min,
                  L2L2_partial=0.0, dt_used=0.0)
    snapshots = [Snapshot(state.t, state.values.copy())] if n_snapshots > 0 else []
    partial = 0.0
    for n in range(1, n_steps + 1):
        t_target = n * params.dt
        new, inflow, dt_used = integrator.step(state, t_target - state.t)
        new.t = t_target
        l2_new = integrator.l2_squared(new.values)
        partial += 0.5 * (l2 + l2_new) * (new.t - state.t)
        masses = integrator.masses(new.values)
        record.append(step=n, t=new.t, mass_a1=masses[0], mass_a2=masses[1], mass_a3=masses[2],
                      inflow_1=inflow[0], inflow_2=inflow[1], inflow_3=inflow[2], min_a=new.min,
                      L2L2_partial=partial, dt_used=dt_used)
        state, l2 = new, l2_new
        if stride and n % stride == 0:
            snapshots.append(Snapshot(state.t, state.values.copy()))
    return record, snapshots, state
