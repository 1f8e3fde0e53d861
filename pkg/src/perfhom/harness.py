"""Epsilon studies: two-scale functionals, micro/macro comparison, norm ladder."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import csv
import json
import logging
import math

import numpy as np

from .cell_problem import compute_effective_tensor
from .errors import ConfigError
from .geometry import build_perforated_grid, build_unit_cell
from .initial_data import DEFAULT_PROFILES, assemble_well_prepared
from .macro import EffectiveModel, MacroSolver, ZONE
from .micro import MicroSolver
from .numerics import circle_quadrature
from .physics import NO_FLUX, PAPER_CONVENTION, PhysicalParams, bump, fluid_integral_cos

logger = logging.getLogger(__name__)

ORDER_FLOOR = 1e-12
LADDER_RATIO = 2.0
PERIODIC_KINDS = ("one", "cos", "sin", "coscos")
NORM_NAMES = ("L2L2", "LinfL2", "gradL2L2", "LinfL4", "dtL2L2")


# --- test functions ---------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """``phi(t, x, y) = phi0(t, x) * phi_Y(y)``.

    ``phi0 = bump(x) * (1 + time_amp * t)``, with a global option ``support =
    "global"`` replacing the bump by 1. ``phi_Y`` is one of ``one``,
    ``cos`` (``cos 2 pi y_axis``), ``sin`` (``sin 2 pi y_axis``) and ``coscos``
    (``cos 2 pi y_1 cos 2 pi y_2``); y is measured from the hole centre.
    """

    __test__ = False  # not a pytest class

    name: str
    center: tuple = (0.5, 0.5)
    width: float = 0.25
    periodic: str = "one"
    axis: int = 0
    time_amp: float = 0.0
    support: str = ZONE

    def __post_init__(self):
        if self.periodic not in PERIODIC_KINDS:
            raise ConfigError(f"unknown periodic factor {self.periodic!r}", field="phi_Y")

    def phi0(self, t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        base = np.ones(len(x)) if self.support == "global" else bump(x, self.center, self.width)
        return base * (1.0 + self.time_amp * t)

    def phi_y(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        k = 2.0 * np.pi
        if self.periodic == "one":
            return np.ones(len(y))
        if self.periodic == "cos":
            return np.cos(k * y[:, self.axis])
        if self.periodic == "sin":
            return np.sin(k * y[:, self.axis])
        return np.cos(k * y[:, 0]) * np.cos(k * y[:, 1])

    def __call__(self, t, x, y):
        return self.phi0(t, x) * self.phi_y(y)

    def fluid_integral(self, Theta, d=2):
        """Closed form of ``int_{Y*} phi_Y dy``."""
        k = 2.0 * np.pi
        hole_vol = math.pi * Theta**2 if d == 2 else 4.0 / 3.0 * math.pi * Theta**3
        if self.periodic == "one":
            return 1.0 - hole_vol
        if self.periodic == "sin":
            return 0.0
        if self.periodic == "cos":
            return -fluid_integral_cos(Theta, d, k)
        # cos a cos b = (cos(a + b) + cos(a - b)) / 2, both with |k| = 2 pi sqrt 2
        return -fluid_integral_cos(Theta, d, k * math.sqrt(2.0))

    def discrete_fluid_integral(self, cell):
        """``int_{Y*} phi_Y`` by the midpoint rule on the rasterised unit cell."""
        y = cell.centers()
        pts = np.stack([c.ravel() for c in y], axis=1)
        vals = self.phi_y(pts)
        return float(np.sum(vals[cell.fluid_mask.ravel()])) * cell.h**cell.d


DEFAULT_TESTS = (
    TestFunction("bump_one", (0.5, 0.5), 0.25, "one"),
    TestFunction("bump_cos", (0.45, 0.55), 0.2, "cos", axis=0, time_amp=0.5),
    TestFunction("bump_coscos", (0.55, 0.5), 0.22, "coscos"),
)


def cell_coords(x, epsilon):
    """Coordinate in the reference cell, centred on the hole: ``frac(x/eps) - 1/2``."""
    z = np.asarray(x, dtype=float) / epsilon
    return z - np.floor(z) - 0.5


def time_weights(times):
    """Trapezoid weights on the (possibly single-point) time grid."""
    times = np.asarray(times, dtype=float)
    if len(times) == 1:
        return np.ones(1)
    w = np.zeros(len(times))
    dt = np.diff(times)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def _points(shape, h):
    c = (np.arange(shape[0]) + 0.5) * h
    grids = np.meshgrid(*([c] * len(shape)), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def volume_two_scale_functional(fields, phi, epsilon, h, times):
    """``sum_t w_t sum_cells field * phi0(t, x) * phi_Y(x/eps) h^d``.

    ``fields`` is ``(n_times, *shape)`` of full-grid values (zero in holes).
    A single time gives the purely spatial integral.
    """
    fields = np.asarray(fields, dtype=float)
    shape = fields.shape[1:]
    x = _points(shape, h)
    py = phi.phi_y(cell_coords(x, epsilon))
    total = 0.0
    for w, t, f in zip(time_weights(times), times, fields):
        total += w * float(np.dot(f.ravel(), phi.phi0(t, x) * py))
    return total * h ** len(shape)


def macro_target(fields, phi, theta, h, times, grid=None, cell=None, Theta=None):
    """``theta * sum_t w_t int a phi0 dx * mean_{Y*}(phi_Y)``.

    ``theta * mean_{Y*} = int_{Y*} phi_Y``; taken on the discrete unit cell
    when ``cell`` (or a matching ``grid``) is supplied, else analytic at Theta.
    """
    fields = np.asarray(fields, dtype=float)
    shape = fields.shape[1:]
    if cell is None and grid is not None and grid.Theta > 0:
        cell = build_unit_cell(grid.d, grid.Theta, grid.block_cells)
    if cell is not None:
        fy = phi.discrete_fluid_integral(cell)
    elif Theta is not None:
        fy = phi.fluid_integral(Theta, len(shape))
    elif grid is not None:
        fy = phi.fluid_integral(grid.Theta, grid.d)
    else:
        raise ValueError("need a unit cell, a grid or Theta for the Y* mean")
    x = _points(shape, h)
    total = 0.0
    for w, t, f in zip(time_weights(times), times, fields):
        total += w * float(np.dot(f.ravel(), phi.phi0(t, x)))
    return total * h ** len(shape) * fy


def surface_two_scale_functional(flux, i, phi, grid, t0, t1, n_t=1, convention_factor=1.0):
    """``eps sum_faces psi_i phi |face|`` integrated over ``[t0, t1]`` by n_t midpoints.

    With ``t0 == t1`` the spatial value at that instant is returned.
    """
    faces = grid.faces
    if len(faces) == 0:
        return 0.0
    y = (faces.center - grid.hole_centers[faces.hole]) / grid.epsilon
    if t1 == t0:
        ts, ws = [t0], [1.0]
    else:
        dt = (t1 - t0) / n_t
        ts = t0 + dt * (np.arange(n_t) + 0.5)
        ws = [dt] * n_t
    total = 0.0
    for t, w in zip(ts, ws):
        psi = flux(i, t, faces.center, y)
        total += w * float(np.sum(psi * phi(t, faces.center, y) * faces.measure))
    return convention_factor * grid.epsilon * total


def surface_target(flux, i, phi, grid, t0, t1, n_t=1, N_q=64, h=None):
    """``int_t int_{Omega^delta} int_Gamma psi_i phi`` by midpoint rules in t and x."""
    if grid.Theta == 0:
        return 0.0
    h = grid.h if h is None else h
    n = int(round(grid.L / h))
    x = _points((n,) * grid.d, h)
    zone = np.all((x > grid.delta) & (x < grid.L - grid.delta), axis=1)
    x = x[zone]
    if t1 == t0:
        ts, ws = [t0], [1.0]
    else:
        dt = (t1 - t0) / n_t
        ts = t0 + dt * (np.arange(n_t) + 0.5)
        ws = [dt] * n_t
    qy = circle_quadrature(lambda y: flux.cell[i](y) * phi.phi_y(y), grid.Theta, N_q, grid.d)
    total = 0.0
    for t, w in zip(ts, ws):
        gx = flux.amplitudes[i] * float(flux.ramp(t)) * flux.spatial[i](x) * phi.phi0(t, x)
        total += w * float(np.sum(gx)) * h**grid.d
    return total * qy


# --- convergence report -----------------------------------------------------


def estimated_orders(errors):
    """``log2(e_k / e_{k+1})`` for consecutive halvings; nan when either is tiny."""
    out = [float("nan")]
    for a, b in zip(errors[:-1], errors[1:]):
        if a > ORDER_FLOOR and b > ORDER_FLOOR:
            out.append(math.log2(a / b))
        else:
            out.append(float("nan"))
    return out


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)  # (epsilon, phi_id, error, order)
    ladder: dict = field(default_factory=dict)
    ladder_flags: list = field(default_factory=list)
    mass_residuals: dict = field(default_factory=dict)
    min_values: dict = field(default_factory=dict)
    inflow: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def errors(self, phi_id):
        rows = sorted((r for r in self.rows if r[1] == phi_id), key=lambda r: -r[0])
        return [r[2] for r in rows]

    @property
    def test_ids(self):
        seen = []
        for r in self.rows:
            if r[1] not in seen:
                seen.append(r[1])
        return seen

    def monotone(self, phi_id):
        e = self.errors(phi_id)
        return all(b <= a for a, b in zip(e[:-1], e[1:]))

    @property
    def worst_order(self):
        orders = [r[3] for r in self.rows if not math.isnan(r[3])]
        return min(orders) if orders else float("nan")

    @property
    def passed(self):
        ok = all(self.monotone(p) for p in self.test_ids)
        wo = self.worst_order
        return bool(ok and (math.isnan(wo) or wo > 0) and not self.ladder_flags)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("epsilon", "phi_id", "error", "order"))
            for eps, pid, err, order in sorted(self.rows, key=lambda r: (-r[0], r[1])):
                w.writerow((repr(float(eps)), pid, repr(float(err)), repr(float(order))))

    def summary(self):
        wo = self.worst_order
        return {
            "passed": self.passed,
            "worst_order": None if math.isnan(wo) else wo,
            "ladder_flags": self.ladder_flags,
            "monotone": {p: self.monotone(p) for p in self.test_ids},
            "max_mass_residual": max(self.mass_residuals.values()) if self.mass_residuals else 0.0,
            "min_value": min(self.min_values.values()) if self.min_values else None,
            "inflow": self.inflow,
            **self.extra,
        }

    def write_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def micro_macro_error(micro_runs, macro_run, tests, cell=None, Theta=None):
    """Rows ``(epsilon, phi_id, error, order)`` comparing extended micro fields with the macro run.

    All runs must share their snapshot times. ``cell`` (the matched unit cell)
    sets the Y* mean; without it the analytic mean at Theta is used.
    """
    m_times = [s.t for s in macro_run.snapshots]
    solver = macro_run.solver
    theta_eff = solver.model.theta
    rows = []
    runs = sorted(micro_runs, key=lambda r: -r.epsilon)
    for run in runs:
        times = [s.t for s in run.snapshots]
        if len(times) != len(m_times) or not np.allclose(times, m_times, rtol=0, atol=1e-12):
            raise ConfigError("micro and macro snapshot times differ", field="snapshots")
    n_species = macro_run.snapshots[0].values.shape[0]
    for i in range(n_species):
        macro_fields = np.array([s.values[i].reshape(solver.shape) for s in macro_run.snapshots])
        micro_fields = [np.array([r.op.unpack(s.values[i]) for s in r.snapshots]) for r in runs]
        for phi in tests:
            target = macro_target(macro_fields, phi, theta_eff, solver.h, m_times, cell=cell, Theta=Theta)
            errs = [abs(volume_two_scale_functional(f, phi, r.epsilon, r.grid.h, m_times) - target)
                    for f, r in zip(micro_fields, runs)]
            pid = f"{phi.name}/a{i + 1}"
            for r, err, order in zip(runs, errs, estimated_orders(errs)):
                rows.append((r.epsilon, pid, err, order))
    return rows


# --- diagnostic norms -------------------------------------------------------


def _face_gradient_sq(full, fluid, h):
    """``sum over fluid-fluid faces of (du/h)^2 h^d``."""
    total = 0.0
    for ax in range(full.ndim):
        a = np.moveaxis(full, ax, 0)
        m = np.moveaxis(fluid, ax, 0)
        keep = m[1:] & m[:-1]
        diff = (a[1:] - a[:-1])[keep] / h
        total += float(np.sum(diff * diff))
    return total * h**full.ndim


def norm_ladder(snapshots, fluid, h):
    """Five diagnostic norms per species from full-grid snapshots ``(n_t, 3, *shape)``.

    Time integrals use the trapezoid rule; time derivatives forward differences.
    """
    times = np.array([s[0] for s in snapshots])
    data = [np.asarray(s[1]) for s in snapshots]
    d = fluid.ndim
    vol = h**d
    w = time_weights(times)
    out = {}
    for i in range(data[0].shape[0]):
        l2 = np.array([float(np.sum(f[i][fluid] ** 2)) * vol for f in data])
        l4 = np.array([float(np.sum(f[i][fluid] ** 4)) * vol for f in data])
        grad = np.array([_face_gradient_sq(f[i], fluid, h) for f in data])
        dt_sq = 0.0
        for k in range(len(data) - 1):
            tau = times[k + 1] - times[k]
            diff = (data[k + 1][i][fluid] - data[k][i][fluid]) / tau
            dt_sq += tau * float(np.sum(diff * diff)) * vol
        out[i] = {
            "L2L2": math.sqrt(float(np.dot(w, l2))) if len(times) > 1 else 0.0,
            "LinfL2": math.sqrt(float(l2.max())),
            "gradL2L2": math.sqrt(float(np.dot(w, grad))) if len(times) > 1 else 0.0,
            "LinfL4": float(l4.max()) ** 0.25,
            "dtL2L2": math.sqrt(dt_sq),
        }
    return out


def ladder_flags(ladders, ratio=LADDER_RATIO):
    """Quantities whose max/min over the study exceeds ``ratio``.

    ``ladders`` maps epsilon to a norm_ladder result. Returns
    ``(flags, ratios)`` with ratios keyed ``"a{i}:{name}"``.
    """
    flags, ratios = [], {}
    eps_list = sorted(ladders, reverse=True)
    first = ladders[eps_list[0]]
    for i in first:
        for name in NORM_NAMES:
            vals = np.array([ladders[e][i][name] for e in eps_list])
            key = f"a{i + 1}:{name}"
            if vals.max() == 0:
                ratios[key] = 1.0
                continue
            r = float(vals.max() / vals.min()) if vals.min() > 0 else float("inf")
            ratios[key] = r
            if r > ratio:
                flags.append(key)
    return flags, ratios


# --- study orchestration ----------------------------------------------------


@dataclass
class Study:
    """Everything an epsilon study needs; built by the config loader or by hand."""

    d: int = 2
    L: float = 1.0
    Theta: float = 0.25
    delta: float = 0.157
    epsilons: tuple = (1 / 8, 1 / 16, 1 / 32)
    cells_per_eps: int = 16
    params: PhysicalParams = field(default_factory=PhysicalParams)
    flux: object = NO_FLUX
    ic_mode: str = "constant"
    ic_values: tuple = (1.0, 1.0, 1.0)
    profiles: tuple = DEFAULT_PROFILES
    n_snapshots: int = 20
    source_support: str = ZONE
    coefficient_support: str = ZONE
    convention: str = PAPER_CONVENTION
    tests: tuple = DEFAULT_TESTS
    method: str = "direct"
    macro_h: float = None
    N_q: int = 64
    N_rho: int = 64
    N_phi: int = 128
    threads: int = 1

    def grid(self, eps):
        return build_perforated_grid(self.L, eps / self.cells_per_eps, eps, self.delta, self.Theta, d=self.d)


@dataclass
class StudyResult:
    report: ConvergenceReport
    micro: list
    macro: object
    effective: object
    cell: object


def _initial_state(study, solver, grid):
    if study.ic_mode == "well_prepared":
        ic = assemble_well_prepared(grid, study.profiles, N_rho=study.N_rho, N_phi=study.N_phi)
        return solver.state_from_grids(ic.values), ic
    return solver.state_from_constants(study.ic_values), None


def _micro_job(study, eps):
    grid = study.grid(eps)
    solver = MicroSolver(grid, study.params, study.flux, study.convention, study.method)
    state0, _ = _initial_state(study, solver, grid)
    run = solver.run(state0, study.n_snapshots)
    logger.info("micro run eps=%g done (%d unknowns)", eps, solver.op.size)
    return run


def run_macro(study, eff, cell):
    h = study.macro_h or min(study.epsilons) / study.cells_per_eps
    model = EffectiveModel.from_tensor(
        eff, study.d, study.delta, N_q=study.N_q, source_support=study.source_support,
        coefficient_support=study.coefficient_support, convention=study.convention,
    )
    solver = MacroSolver(study.L, h, model, study.params, study.flux, study.method)
    if study.ic_mode == "well_prepared":
        x = _points(solver.shape, h)
        vals = [model.alpha * p(x) for p in study.profiles]
        state0 = solver.state_from_grids(vals)
    else:
        state0 = solver.state_from_constants(study.ic_values)
    return solver.run(state0, study.n_snapshots)


def run_study(study):
    """Micro runs for every epsilon, one macro run, and the resulting report."""
    if study.n_snapshots < 1:
        raise ConfigError("a study needs snapshots", field="snapshots")
    eff, _, cell = compute_effective_tensor(study.d, study.Theta, study.cells_per_eps, gap_tol=None)
    eps_sorted = sorted(study.epsilons, reverse=True)
    if study.threads > 1:
        with ThreadPoolExecutor(max_workers=study.threads) as pool:
            micro = list(pool.map(lambda e: _micro_job(study, e), eps_sorted))
    else:
        micro = [_micro_job(study, e) for e in eps_sorted]
    macro = run_macro(study, eff, cell)
    report = build_report(study, micro, macro, cell)
    return StudyResult(report=report, micro=micro, macro=macro, effective=eff, cell=cell)


def build_report(study, micro, macro, cell):
    report = ConvergenceReport()
    report.rows = micro_macro_error(micro, macro, study.tests, cell=cell)
    ladders = {}
    for run in micro:
        snaps = [(s.t, np.array([run.op.unpack(v) for v in s.values])) for s in run.snapshots]
        ladders[run.epsilon] = norm_ladder(snaps, run.grid.fluid_mask, run.grid.h)
        res = run.record.mass_balance_residuals()
        report.mass_residuals[run.epsilon] = float(res.max()) if res.size else 0.0
        report.min_values[run.epsilon] = float(run.record.column("min_a").min())
        report.inflow[run.epsilon] = [float(run.record.column(f"inflow_{i}").sum()) for i in (1, 2, 3)]
    res = macro.record.mass_balance_residuals()
    report.mass_residuals[0.0] = float(res.max()) if res.size else 0.0
    report.min_values[0.0] = float(macro.record.column("min_a").min())
    report.inflow[0.0] = [float(macro.record.column(f"inflow_{i}").sum()) for i in (1, 2, 3)]
    report.ladder = ladders
    report.ladder_flags, ratios = ladder_flags(ladders)
    report.extra["ladder_ratios"] = ratios
    finest = min(e for e in report.inflow if e > 0)
    rel = []
    for a, b in zip(report.inflow[finest], report.inflow[0.0]):
        rel.append(abs(a - b) / abs(b) if b else 0.0)
    report.extra["inflow_rel_diff_finest"] = rel
    return report
