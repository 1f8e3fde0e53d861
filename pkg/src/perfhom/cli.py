"""Command-line entry point: ``perfhom [--threads N] [--out DIR] COMMAND [CONFIG]``."""
import argparse
import csv
import json
import logging
from pathlib import Path
import sys

import numpy as np

from .cell_problem import compute_effective_tensor, refinement_table
from .config import parse_config
from .errors import ConfigError, ConsistencyError, InvariantError, SolverError
from .geometry import build_perforated_grid
from .harness import run_study
from .initial_data import assemble_well_prepared, raw_normal_flux, verify_compatibility
from .macro import EffectiveModel, MacroSolver
from .micro import MicroSolver
from .physics import PhysicalParams
from .timestepping import NEG_TOL

logger = logging.getLogger("perfhom")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_INVARIANT = 4

MASS_TOL = 1e-12
COMPAT_C = 200.0


class Output:
    """Output directory; every file written gets the resolved config next to it."""

    def __init__(self, root, cfg):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.written = []

    def path(self, name):
        p = self.root / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def done(self, p):
        self.written.append(Path(p))
        self.cfg.write_resolved(Path(str(p) + ".config.ini"))

    def json(self, name, obj):
        p = self.path(name)
        with open(p, "w", newline="\n") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.done(p)
        return p

    def csv(self, name, header, rows):
        p = self.path(name)
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self.done(p)
        return p


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_snapshot(out, name, values, t, epsilon, h, fmt):
    """Grid dump (``.csv`` with one row per grid row, or raw little-endian float64) plus JSON sidecar."""
    values = np.asarray(values, dtype=float)
    if fmt == "binary":
        p = out.path(name + ".bin")
        values.astype("<f8").tofile(p)
    else:
        p = out.path(name + ".csv")
        flat = values.reshape(-1, values.shape[-1])
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in flat:
                w.writerow([repr(float(v)) for v in row])
    out.done(p)
    out.json(name + ".json", {"t": float(t), "epsilon": float(epsilon), "h": float(h),
                              "shape": list(values.shape), "format": fmt, "dtype": "<f8"})


def _micro_setup(cfg):
    g = cfg["geometry"]
    eps = g["epsilon"]
    grid = build_perforated_grid(g["L"], eps / g["cells_per_eps"], eps, g["delta"], g["hole_radius"], d=g["d"])
    return grid


def _initial(cfg, solver, grid=None, macro_alpha=None):
    ic = cfg["ic"]
    if ic["mode"] == "constant":
        return solver.state_from_constants(ic["values"])
    if grid is not None:
        wp = assemble_well_prepared(grid, cfg.profiles, N_rho=ic["N_rho"], N_phi=ic["N_phi"])
        return solver.state_from_grids(wp.values)
    c = (np.arange(solver.n) + 0.5) * solver.h
    pts = np.stack([m.ravel() for m in np.meshgrid(*([c] * len(solver.shape)), indexing="ij")], axis=1)
    return solver.state_from_grids([macro_alpha * p(pts) for p in cfg.profiles])


def _dump_run(out, run, prefix, epsilon, h, unpack, fmt):
    rec = out.path(f"{prefix}_record.csv")
    run.record.to_csv(rec)
    out.done(rec)
    for k, snap in enumerate(run.snapshots):
        write_snapshot(out, f"{prefix}_snapshots/snap_{k:04d}", np.array([unpack(v) for v in snap.values]),
                       snap.t, epsilon, h, fmt)


def _check_run(record, label):
    res = record.mass_balance_residuals()
    worst = float(res.max()) if res.size else 0.0
    if worst > MASS_TOL:
        raise InvariantError(f"{label}: mass-balance residual {worst:.3e} > {MASS_TOL:g}")
    mn = float(record.column("min_a").min())
    if mn < -NEG_TOL:
        raise InvariantError(f"{label}: negative concentration {mn:.3e}")
    return worst, mn


def _matched_model(cfg, gap_tol=None):
    g = cfg["geometry"]
    eff, _, _ = compute_effective_tensor(g["d"], g["hole_radius"], g["cells_per_eps"], gap_tol=gap_tol)
    r = cfg["run"]
    model = EffectiveModel.from_tensor(eff, g["d"], g["delta"], N_q=r["N_q"], source_support=r["source_support"],
                                       coefficient_support=r["coefficient_support"],
                                       convention=cfg["flux"]["flux_convention"])
    return eff, model


# --- subcommands ------------------------------------------------------------


def cmd_cell(cfg, out, args):
    g = cfg["geometry"]
    m = g["m"]
    eff, _, _ = compute_effective_tensor(g["d"], g["hole_radius"], m, gap_tol=cfg.gap_tol(m))
    out.json("effective_tensor.json", eff.to_dict())
    rows, (value, order) = refinement_table(g["d"], g["hole_radius"], cfg["cell"]["ms"])
    out.csv("refinement.csv", ("m", "D11", "D12", "formula_gap"), rows)
    out.json("richardson.json", {"D11_extrapolated": value, "order": order})
    print(json.dumps({"D": eff.to_dict()["D"], "theta": eff.theta}))
    return EXIT_OK


def cmd_micro(cfg, out, args):
    grid = _micro_setup(cfg)
    solver = MicroSolver(grid, cfg.params, cfg.flux, cfg["flux"]["flux_convention"], cfg["run"]["method"])
    run = solver.run(_initial(cfg, solver, grid), cfg["run"]["snapshots"])
    out.json("grid.json", grid.summary())
    _dump_run(out, run, "micro", grid.epsilon, grid.h, solver.op.unpack, cfg["run"]["snapshot_format"])
    worst, mn = _check_run(run.record, "micro")
    print(f"micro: {len(run.record) - 1} steps, mass residual {worst:.2e}, min {mn:.4g}")
    return EXIT_OK


def cmd_macro(cfg, out, args):
    g = cfg["geometry"]
    eff, model = _matched_model(cfg)
    h = g["epsilon"] / g["cells_per_eps"]
    solver = MacroSolver(g["L"], h, model, cfg.params, cfg.flux, cfg["run"]["method"])
    run = solver.run(_initial(cfg, solver, macro_alpha=model.alpha), cfg["run"]["snapshots"])
    out.json("effective_tensor.json", eff.to_dict())
    _dump_run(out, run, "macro", 0.0, h, lambda v: v.reshape(solver.shape), cfg["run"]["snapshot_format"])
    worst, mn = _check_run(run.record, "macro")
    print(f"macro: {len(run.record) - 1} steps, mass residual {worst:.2e}, min {mn:.4g}")
    return EXIT_OK


def cmd_prepare_ic(cfg, out, args):
    grid = _micro_setup(cfg)
    ic = cfg["ic"]
    if ic["mode"] != "well_prepared":
        raise ConfigError("prepare-ic needs [ic] mode = well_prepared", field="mode")
    wp = assemble_well_prepared(grid, cfg.profiles, N_rho=ic["N_rho"], N_phi=ic["N_phi"])
    write_snapshot(out, "initial_condition", wp.values, 0.0, grid.epsilon, grid.h, cfg["run"]["snapshot_format"])
    rep = verify_compatibility(wp, grid, C=COMPAT_C)
    report = rep.to_dict()
    report.update({
        "alpha": wp.alpha,
        "r": wp.r,
        "minimum": wp.minimum,
        "I_min": wp.i_min,
        "W": wp.W,
        "lower_bound": wp.i_min - wp.W * wp.r,
        "raw_normal_flux": raw_normal_flux(wp.profiles, grid, wp.alpha),
        "annulus_residual": wp.residual,
    })
    out.json("compatibility.json", report)
    print(json.dumps({"passed": report["passed"], "residual": rep.residual, "minimum": wp.minimum}))
    return EXIT_OK


def cmd_converge(cfg, out, args):
    res = run_study(cfg.study(threads=args.threads))
    rep = res.report
    p = out.path("convergence.csv")
    rep.to_csv(p)
    out.done(p)
    p = out.path("summary.json")
    rep.write_summary(p)
    out.done(p)
    rows = []
    for eps in sorted(rep.ladder, reverse=True):
        for i, norms in rep.ladder[eps].items():
            for name, val in norms.items():
                rows.append((eps, f"a{i + 1}", name, val))
    out.csv("ladder.csv", ("epsilon", "species", "norm", "value"), rows)
    for run in res.micro:
        _check_run(run.record, f"micro eps={run.epsilon:g}")
    _check_run(res.macro.record, "macro")
    print(json.dumps({"passed": rep.passed, "worst_order": rep.summary()["worst_order"]}))
    return EXIT_OK


def cmd_check(cfg, out, args):
    """Fast invariants: D symmetry, conservation and nonnegativity on short runs."""
    g = cfg["geometry"]
    results = {}
    eff, _, _ = compute_effective_tensor(g["d"], g["hole_radius"], g["cells_per_eps"], gap_tol=None)
    asym = float(np.abs(eff.D - eff.D.T).max())
    results["D_asymmetry"] = asym
    if asym > 1e-12:
        raise InvariantError(f"effective tensor not symmetric ({asym:.2e})")
    p = cfg.params
    n = min(p.n_steps, 10)
    short = PhysicalParams(p.d_coeffs, n * p.dt, p.dt)
    eps = max(g["epsilon_list"] + [g["epsilon"]])
    grid = build_perforated_grid(g["L"], eps / g["cells_per_eps"], eps, g["delta"], g["hole_radius"], d=g["d"])
    solver = MicroSolver(grid, short, cfg.flux, cfg["flux"]["flux_convention"], cfg["run"]["method"])
    run = solver.run(_initial(cfg, solver, grid))
    results["micro"] = _check_run(run.record, "micro")
    _, model = _matched_model(cfg)
    msolver = MacroSolver(g["L"], grid.h, model, short, cfg.flux, cfg["run"]["method"])
    mrun = msolver.run(_initial(cfg, msolver, macro_alpha=model.alpha))
    results["macro"] = _check_run(mrun.record, "macro")
    out.json("check.json", {"D_asymmetry": asym,
                            "micro": {"mass_residual": results["micro"][0], "min": results["micro"][1]},
                            "macro": {"mass_residual": results["macro"][0], "min": results["macro"][1]},
                            "passed": True})
    print("check passed")
    return EXIT_OK


COMMANDS = {
    "cell": cmd_cell,
    "micro": cmd_micro,
    "macro": cmd_macro,
    "prepare-ic": cmd_prepare_ic,
    "converge": cmd_converge,
    "check": cmd_check,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="perfhom", description="Reaction-diffusion homogenization in perforated boxes.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config", nargs="?", default=None, help="config file (default: the shipped default.ini)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads (default 1, deterministic)")
    ap.add_argument("--out", default=None, help="output directory (overrides [run] output)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_intermixed_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(args.config)
        out = Output(args.out or cfg["run"]["output"], cfg)
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v[1] if isinstance(v, tuple) else v}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InvariantError, ConsistencyError) as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
