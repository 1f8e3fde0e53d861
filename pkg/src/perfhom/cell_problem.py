"""Periodic corrector problems on the perforated unit cell and the effective tensor."""
from dataclasses import dataclass, field
import logging

import numpy as np

from .errors import ConsistencyError, SolverError
from .geometry import UnitCellSpec, build_unit_cell
from .numerics import PERIODIC, SolveReport, assemble_diffusion, cg_solve

logger = logging.getLogger(__name__)

CELL_TOL = 1e-10
GAP_TOL = 1e-4


@dataclass(frozen=True)
class CorrectorField:
    direction: int
    values: np.ndarray = field(repr=False)
    report: SolveReport = field(repr=False)

    @property
    def mean(self):
        return float(self.values.mean())


@dataclass(frozen=True)
class EffectiveTensor:
    D: np.ndarray
    theta: float
    theta_exact: float
    gamma: float
    formula_gap: float
    D_flux: np.ndarray = field(repr=False)
    m: int = 0
    Theta: float = 0.0

    def to_dict(self):
        return {
            "theta": self.theta,
            "theta_exact": self.theta_exact,
            "gamma": self.gamma,
            "D": [float(v) for v in self.D.ravel()],
            "D_flux": [float(v) for v in self.D_flux.ravel()],
            "formula_gap": self.formula_gap,
            "m": self.m,
            "Theta": self.Theta,
        }


def cell_operator(cell):
    return assemble_diffusion(cell.fluid_mask, cell.h, 1.0, PERIODIC)


def corrector_rhs(cell, j, op=None):
    """Load vector moving the known flux of e_j across the hole faces to the right.

    A fluid cell whose +e_j neighbour is solid gets ``-1/h``; one whose -e_j
    neighbour is solid gets ``+1/h``.
    """
    op = op or cell_operator(cell)
    mask = cell.fluid_mask
    solid_plus = ~np.roll(mask, -1, axis=j)
    solid_minus = ~np.roll(mask, 1, axis=j)
    b = (solid_minus.astype(float) - solid_plus.astype(float)) / cell.h
    return op.pack(b)


def solve_corrector(cell, j, tol=CELL_TOL, maxit=50000, op=None):
    op = op or cell_operator(cell)
    b = corrector_rhs(cell, j, op)
    omega, report = cg_solve(op, b, tol=tol, maxit=maxit, nullspace="project-mean")
    if not report.converged:
        raise SolverError(f"corrector {j} did not converge (residual {report.residual:.2e})", report)
    return CorrectorField(direction=j, values=omega, report=report)


def _face_differences(cell, op, u, ax):
    """(u[q] - u[p]) / h over periodic fluid-fluid faces q = p + e_ax."""
    full = op.unpack(u)
    mask = cell.fluid_mask
    nb = np.roll(full, -1, axis=ax)
    keep = mask & np.roll(mask, -1, axis=ax)
    return (nb - full) / cell.h, keep


def cell_gradient(cell, op, u):
    """Cell-wise gradient from averaged face differences, skipping solid faces.

    Returns an array of shape ``(d, n_fluid)``.
    """
    d = cell.d
    grads = []
    for ax in range(d):
        diff, keep = _face_differences(cell, op, u, ax)
        up = np.where(keep, diff, 0.0)
        down = np.roll(up, 1, axis=ax)
        n_up = keep.astype(float)
        n_down = np.roll(n_up, 1, axis=ax)
        count = n_up + n_down
        g = np.where(count > 0, (up + down) / np.where(count > 0, count, 1.0), 0.0)
        grads.append(op.pack(g))
    return np.array(grads)


def effective_tensor(cell, correctors, gap_tol=GAP_TOL, op=None):
    """Effective tensor from the energy form, cross-checked by the flux form.

    The energy form sums ``(e_i + grad w_i) . (e_j + grad w_j)`` over fluid
    faces (each face owns a volume h^d) and is exactly symmetric. The flux form
    integrates ``delta_ij + d w_j / d y_i`` with cell-averaged gradients.
    """
    op = op or cell_operator(cell)
    d = cell.d
    vol = cell.h**d
    omegas = [c.values for c in sorted(correctors, key=lambda c: c.direction)]
    if len(omegas) != d:
        raise ValueError(f"need {d} correctors, got {len(omegas)}")

    D = np.zeros((d, d))
    for ax in range(d):
        fields = []
        for i in range(d):
            diff, keep = _face_differences(cell, op, omegas[i], ax)
            fields.append(diff[keep] + (1.0 if i == ax else 0.0))
        for i in range(d):
            for j in range(i, d):
                D[i, j] += float(np.sum(fields[i] * fields[j])) * vol
    D = np.triu(D) + np.triu(D, 1).T

    D_flux = np.zeros((d, d))
    n_fluid = op.size
    for j in range(d):
        grad = cell_gradient(cell, op, omegas[j])
        for i in range(d):
            D_flux[i, j] = (n_fluid * (1.0 if i == j else 0.0) + float(np.sum(grad[i]))) * vol

    gap = float(np.abs(D_flux - D).max())
    result = EffectiveTensor(
        D=D,
        theta=cell.theta_discrete,
        theta_exact=cell.theta_exact,
        gamma=cell.gamma_exact,
        formula_gap=gap,
        D_flux=D_flux,
        m=cell.m,
        Theta=cell.Theta,
    )
    if gap_tol is not None and gap > gap_tol:
        raise ConsistencyError(f"flux and energy forms of D differ by {gap:.3e} > {gap_tol:.1e}")
    return result


def compute_effective_tensor(d, Theta, m, gap_tol=GAP_TOL, tol=CELL_TOL):
    """Build the cell, solve all correctors and return ``(EffectiveTensor, correctors, cell)``."""
    cell = build_unit_cell(d, Theta, m)
    op = cell_operator(cell)
    correctors = [solve_corrector(cell, j, tol=tol, op=op) for j in range(d)]
    return effective_tensor(cell, correctors, gap_tol=gap_tol, op=op), correctors, cell


def refinement_table(d, Theta, ms, gap_tol=None):
    """Rows ``(m, D11, D12, formula_gap)`` plus a Richardson estimate of D11."""
    rows = []
    for m in ms:
        eff, _, _ = compute_effective_tensor(d, Theta, m, gap_tol=gap_tol)
        rows.append((m, float(eff.D[0, 0]), float(eff.D[0, 1]), eff.formula_gap))
    return rows, richardson(rows)


def richardson(rows):
    """Extrapolate D11 from the last three refinement levels (ratio 2 assumed).

    Returns ``(value, order)``; with fewer than three rows, or a non-monotone
    sequence, the finest value and ``nan`` are returned.
    """
    if len(rows) < 3:
        return rows[-1][1], float("nan")
    f1, f2, f3 = (r[1] for r in rows[-3:])
    d1, d2 = f2 - f1, f3 - f2
    if d1 == 0 or d2 == 0 or d1 * d2 < 0:
        return f3, float("nan")
    p = float(np.log2(d1 / d2))
    return f3 + d2 / (2.0**p - 1.0), p
