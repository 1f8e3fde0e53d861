"""Sectioned ``key = value`` run configuration."""
import configparser
from dataclasses import dataclass, field
from fractions import Fraction
import io
from pathlib import Path

from .errors import ConfigError
from .initial_data import CosineProfile, DEFAULT_PROFILES
from .physics import (BoundaryFlux, CellFactor, PhysicalParams, SpatialFactor, TimeRamp,
                      DIFFUSIVE_CONVENTION, PAPER_CONVENTION)

DEFAULT_CONFIG = Path(__file__).with_name("default.ini")

# section -> key -> (kind, default)
SCHEMA = {
    "geometry": {
        "d": ("int", "2"),
        "L": ("float", "1"),
        "epsilon": ("float", "1/8"),
        "epsilon_list": ("floats", "1/8, 1/16, 1/32"),
        "delta": ("float", "0.157"),
        "hole_radius": ("float", "1/4"),
        "cells_per_eps": ("int", "16"),
        "m": ("int", "64"),
    },
    "physics": {
        "d1": ("float", "1"),
        "d2": ("float", "1"),
        "d3": ("float", "1"),
        "T": ("float", "2"),
        "dt": ("float", "0.01"),
    },
    "flux": {
        "ramp": ("str", "linear"),
        "tau": ("float", "0.5"),
        "amplitudes": ("floats", "1, 1, 1"),
        "g": ("str", "one"),
        "g_center": ("floats", "0.5, 0.5"),
        "g_width": ("float", "0.3"),
        "g_amp": ("float", "0.5"),
        "q_amps": ("floats", "0, 0, 0"),
        "q_axis": ("int", "0"),
        "flux_convention": ("str", PAPER_CONVENTION),
    },
    "ic": {
        "mode": ("str", "well_prepared"),
        "values": ("floats", "1, 1, 1"),
        "a0_c": ("floats", ", ".join(repr(p.c) for p in DEFAULT_PROFILES)),
        "a0_b": ("floats", ", ".join(repr(p.b) for p in DEFAULT_PROFILES)),
        "N_rho": ("int", "64"),
        "N_phi": ("int", "128"),
    },
    "run": {
        "snapshots": ("int", "40"),
        "output": ("str", "out"),
        "deterministic": ("bool", "true"),
        "source_support": ("str", "zone"),
        "coefficient_support": ("str", "zone"),
        "method": ("str", "direct"),
        "N_q": ("int", "64"),
        "snapshot_format": ("str", "csv"),
    },
    "cell": {
        "ms": ("ints", "64, 128, 256"),
        "gap_tol": ("str", "auto"),
    },
}


def _number(text):
    return float(Fraction(text.strip()))


def _convert(kind, text):
    text = text.strip()
    if kind == "str":
        return text
    if kind == "int":
        v = Fraction(text)
        if v.denominator != 1:
            raise ValueError(f"{text!r} is not an integer")
        return int(v)
    if kind == "float":
        return _number(text)
    if kind == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{text!r} is not a boolean")
    body = text.strip("[]() ")
    items = [t for t in body.replace(";", ",").split(",") if t.strip()]
    if kind == "ints":
        return [_convert("int", t) for t in items]
    return [_number(t) for t in items]


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)  # section -> key -> parsed value
    raw: dict = field(default_factory=dict)  # section -> key -> text
    source: str = "<defaults>"

    def __getitem__(self, section):
        return self.values[section]

    # --- derived objects ---

    @property
    def params(self):
        p = self.values["physics"]
        return PhysicalParams((p["d1"], p["d2"], p["d3"]), p["T"], p["dt"])

    @property
    def flux(self):
        f = self.values["flux"]
        L = self.values["geometry"]["L"]
        g = SpatialFactor(f["g"], tuple(f["g_center"]), f["g_width"], f["g_amp"], L)
        cells = tuple(CellFactor(a, f["q_axis"]) for a in f["q_amps"])
        return BoundaryFlux(tuple(f["amplitudes"]), TimeRamp(f["ramp"], f["tau"]), (g, g, g), cells)

    @property
    def profiles(self):
        ic = self.values["ic"]
        L = self.values["geometry"]["L"]
        return tuple(CosineProfile(c, b, L) for c, b in zip(ic["a0_c"], ic["a0_b"]))

    def study(self, threads=1):
        from .harness import Study

        g, r, ic = self.values["geometry"], self.values["run"], self.values["ic"]
        return Study(
            d=g["d"], L=g["L"], Theta=g["hole_radius"], delta=g["delta"],
            epsilons=tuple(g["epsilon_list"]), cells_per_eps=g["cells_per_eps"],
            params=self.params, flux=self.flux, ic_mode=ic["mode"], ic_values=tuple(ic["values"]),
            profiles=self.profiles, n_snapshots=r["snapshots"], source_support=r["source_support"],
            coefficient_support=r["coefficient_support"], convention=self.values["flux"]["flux_convention"],
            method=r["method"], N_q=r["N_q"], N_rho=ic["N_rho"], N_phi=ic["N_phi"], threads=threads,
        )

    def gap_tol(self, m):
        text = self.values["cell"]["gap_tol"]
        if text == "none":
            return None
        if text == "auto":
            return max(1e-4, 0.5 / m)
        return _number(text)

    def resolved_text(self):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for sec, keys in SCHEMA.items():
            cp[sec] = {k: self.raw[sec][k] for k in keys}
        buf = io.StringIO()
        buf.write(f"# resolved configuration (source: {self.source})\n")
        cp.write(buf)
        return buf.getvalue().replace("\r\n", "\n")

    def write_resolved(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(self.resolved_text())


def _validate(v, violations):
    def bad(field_name, msg):
        violations.append((field_name, msg))

    g, p, f, ic, r, c = (v[s] for s in ("geometry", "physics", "flux", "ic", "run", "cell"))
    if g["d"] not in (2, 3):
        bad("d", f"d={g['d']} must be 2 or 3")
    if not g["L"] > 0:
        bad("L", "L must be > 0")
    Theta = g["hole_radius"]
    if not 0 <= Theta <= 0.25:
        bad("hole_radius", f"hole_radius={Theta} violates the bound 0 <= hole_radius <= 1/4")
    if g["delta"] < 0 or 2 * g["delta"] >= g["L"]:
        bad("delta", f"delta={g['delta']} must satisfy 0 <= delta < L/2")
    if g["cells_per_eps"] < 1:
        bad("cells_per_eps", "cells_per_eps must be >= 1")
    if g["m"] < 8:
        bad("m", "cell resolution m must be >= 8")
    eps_all = sorted(set([g["epsilon"]] + list(g["epsilon_list"])), reverse=True)
    if not g["epsilon_list"]:
        bad("epsilon_list", "epsilon_list must not be empty")
    for eps in eps_all:
        if not eps > 0:
            bad("epsilon", f"epsilon={eps} must be > 0")
            continue
        ratio = g["L"] / eps
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            bad("epsilon_list", f"L/epsilon = {ratio:.6g} is not an integer (divisibility) for epsilon={eps}")
    if Theta > 0 and Theta * g["cells_per_eps"] < 1 - 1e-9:
        bad("cells_per_eps", f"hole radius {Theta}*eps is below the grid spacing eps/{g['cells_per_eps']}")
    for i in (1, 2, 3):
        if not p[f"d{i}"] > 0:
            bad(f"d{i}", f"diffusion coefficient d{i}={p[f'd{i}']} must be > 0")
    if p["T"] < 0:
        bad("T", "T must be >= 0")
    if not p["dt"] > 0:
        bad("dt", f"dt={p['dt']} must be > 0")
    elif p["T"] > 0:
        n = p["T"] / p["dt"]
        if abs(n - round(n)) > 1e-9 * max(n, 1):
            bad("dt", f"T={p['T']} is not a multiple of dt={p['dt']}")
    if f["ramp"] not in ("linear", "smooth"):
        bad("ramp", f"ramp={f['ramp']!r} must be linear or smooth")
    if not f["tau"] > 0:
        bad("tau", "tau must be > 0")
    if len(f["amplitudes"]) != 3 or any(a < 0 for a in f["amplitudes"]):
        bad("amplitudes", "three amplitudes >= 0 are required")
    if f["g"] not in ("one", "bump", "cosine"):
        bad("g", f"g={f['g']!r} must be one, bump or cosine")
    if f["g"] == "cosine" and abs(f["g_amp"]) > 1:
        bad("g_amp", "g_amp must satisfy |g_amp| <= 1")
    if f["g"] == "bump" and (not f["g_width"] > 0 or len(f["g_center"]) != g["d"]):
        bad("g_width", "bump needs g_width > 0 and a g_center with d entries")
    if len(f["q_amps"]) != 3 or any(abs(a) > 1 for a in f["q_amps"]):
        bad("q_amps", "three q_amps with |q| <= 1 are required")
    if not 0 <= f["q_axis"] < g["d"]:
        bad("q_axis", "q_axis must index a coordinate")
    if f["flux_convention"] not in (PAPER_CONVENTION, DIFFUSIVE_CONVENTION):
        bad("flux_convention", f"flux_convention must be {PAPER_CONVENTION} or {DIFFUSIVE_CONVENTION}")
    if ic["mode"] not in ("constant", "well_prepared"):
        bad("mode", "ic mode must be constant or well_prepared")
    if len(ic["values"]) != 3 or any(x < 0 for x in ic["values"]):
        bad("values", "three initial values >= 0 are required")
    if len(ic["a0_c"]) != 3 or len(ic["a0_b"]) != 3:
        bad("a0_c", "three a0_c and three a0_b entries are required")
    else:
        for i, (cc, bb) in enumerate(zip(ic["a0_c"], ic["a0_b"]), start=1):
            if not cc - abs(bb) > 0:
                bad("a0_c", f"a0 profile {i} is not strictly positive (need a0_c > |a0_b|)")
    if ic["mode"] == "well_prepared" and g["d"] != 2:
        bad("mode", "well_prepared initial data requires d = 2")
    if ic["N_rho"] < 16:
        bad("N_rho", "N_rho must be >= 16")
    if ic["N_phi"] < 32:
        bad("N_phi", "N_phi must be >= 32")
    if r["snapshots"] < 0:
        bad("snapshots", "snapshots must be >= 0")
    for key in ("source_support", "coefficient_support"):
        if r[key] not in ("zone", "global"):
            bad(key, f"{key} must be zone or global")
    if r["method"] not in ("direct", "cg"):
        bad("method", "method must be direct or cg")
    if r["N_q"] < 16:
        bad("N_q", "N_q must be >= 16")
    if r["snapshot_format"] not in ("csv", "binary"):
        bad("snapshot_format", "snapshot_format must be csv or binary")
    if any(m < 8 for m in c["ms"]):
        bad("ms", "refinement resolutions must be >= 8")
    if c["gap_tol"] not in ("auto", "none"):
        try:
            _number(c["gap_tol"])
        except (ValueError, ZeroDivisionError):
            bad("gap_tol", "gap_tol must be auto, none or a number")


def parse_config_text(text, source="<string>"):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    violations = []
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {source}: {exc}", field="file") from exc
    for sec in cp.sections():
        if sec not in SCHEMA:
            violations.append((sec, f"unknown section [{sec}]"))
            continue
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                violations.append((key, f"unknown key {key!r} in [{sec}]"))
    values, raw = {}, {}
    for sec, keys in SCHEMA.items():
        values[sec], raw[sec] = {}, {}
        for key, (kind, default) in keys.items():
            text_val = cp[sec][key] if cp.has_section(sec) and key in cp[sec] else default
            raw[sec][key] = text_val.strip()
            try:
                values[sec][key] = _convert(kind, text_val)
            except (ValueError, ZeroDivisionError) as exc:
                violations.append((key, f"[{sec}] {key} = {text_val!r}: {exc}"))
                values[sec][key] = _convert(kind, default)
    _validate(values, violations)
    if violations:
        lines = "; ".join(msg for _, msg in violations)
        raise ConfigError(f"invalid configuration {source}: {lines}", field=violations[0][0],
                          violations=violations)
    return RunConfig(values=values, raw=raw, source=source)


def parse_config(path=None):
    """Parse and validate a config file (the shipped default when path is None)."""
    path = Path(path) if path is not None else DEFAULT_CONFIG
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist", field="file")
    return parse_config_text(path.read_text(), source=str(path))
