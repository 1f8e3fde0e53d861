"""Well-prepared initial data: scaled macro profile plus per-hole annulus correctors.

Each corrector solves ``-lap w = 0`` on the reference annulus ``1 < rho < 2``
with ``dw/drho = -alpha r grad a0 . e_rho`` on ``rho = 1`` and ``w = 0`` on
``rho = 2``. The sum ``alpha a0 + w((x - x_k) / r)`` then has zero normal
derivative on every hole boundary, where ``r = Theta eps``.

The reference problem is solved in log-polar coordinates ``rho = exp(s)``, in
which the Laplacian becomes ``rho^-2 (d_ss + d_phiphi)``: a Fourier series in
phi and second-order finite differences in s.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConfigError, SolverError
from .geometry import build_unit_cell

LN2 = math.log(2.0)


@dataclass(frozen=True)
class CosineProfile:
    """``a0(x) = c + b prod_{j in axes} cos(pi x_j / L)``; zero normal derivative on the box.

    ``axes=None`` takes the product over every coordinate.
    """

    c: float = 1.0
    b: float = 0.0
    L: float = 1.0
    axes: tuple = None

    def __post_init__(self):
        if not self.c - abs(self.b) > 0:
            raise ConfigError(f"profile c={self.c}, b={self.b} is not strictly positive (need c > |b|)",
                              field="a0")

    def _axes(self, d):
        return tuple(range(d)) if self.axes is None else tuple(self.axes)

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ax = list(self._axes(x.shape[1]))
        return self.c + self.b * np.prod(np.cos(np.pi * x[:, ax] / self.L), axis=1)

    def gradient(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        k = np.pi / self.L
        ax = self._axes(x.shape[1])
        cos = np.cos(k * x)
        out = np.zeros_like(x)
        for j in ax:
            other = np.prod(cos[:, [a for a in ax if a != j]], axis=1)
            out[:, j] = -self.b * k * np.sin(k * x[:, j]) * other
        return out

    @property
    def minimum(self):
        return self.c - abs(self.b)

    def scaled(self, lam):
        return CosineProfile(lam * self.c, lam * self.b, self.L, self.axes)


DEFAULT_PROFILES = (CosineProfile(1.0, 0.5), CosineProfile(1.0, -0.4), CosineProfile(0.5, 0.25))


# --- reference annulus -----------------------------------------------------


def _mode_responses(N_rho, n_modes):
    """Unit-Neumann responses ``u_k(s)`` on ``s_j = j ln2 / N_rho``.

    Solves ``u'' - k^2 u = 0``, ``u'(0) = 1``, ``u(ln 2) = 0`` with a ghost
    node for the Neumann end. Returns ``(n_modes, N_rho + 1)``.
    """
    ds = LN2 / N_rho
    n = N_rho  # unknowns u_0 .. u_{N-1}; u_N = 0
    out = np.zeros((n_modes, N_rho + 1))
    for k in range(n_modes):
        ab = np.zeros((3, n))
        ab[0, 1:] = 1.0
        ab[1, :] = -2.0 - (k * ds) ** 2
        ab[2, :-1] = 1.0
        ab[0, 1] = 2.0  # ghost: u_{-1} = u_1 - 2 ds u'(0)
        rhs = np.zeros(n)
        rhs[0] = 2.0 * ds
        out[k, :n] = solve_banded((1, 1), ab, rhs)
    return out


@dataclass
class AnnulusCorrector:
    """Reference-annulus solution for one hole (or one batch of boundary data).

    ``values[j, n]`` is w at ``rho = exp(s_j)``, ``phi_n = 2 pi n / N_phi``.
    ``boundary_data`` holds the sampled ``dw/drho`` at ``rho = 1``.
    """

    hole: int
    r: float
    s: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    boundary_data: np.ndarray = field(repr=False)
    residual: float = 0.0

    @property
    def rho(self):
        return np.exp(self.s)

    @property
    def w_max(self):
        return float(np.abs(self.values).max())

    def __call__(self, rho, phi):
        return interpolate_polar(self.values[None], self.s, np.asarray(rho), np.asarray(phi))[0]


def boundary_samples(grad_fn, center, r, N_phi, alpha):
    """``-alpha r grad a0(x_k + r e_rho) . e_rho`` at ``N_phi`` angles."""
    phi = 2.0 * np.pi * np.arange(N_phi) / N_phi
    e = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    pts = np.asarray(center, dtype=float)[None, :] + r * e
    g = grad_fn(pts)
    return -alpha * r * np.sum(g * e, axis=1)


def _check_resolution(N_rho, N_phi):
    if N_rho < 16:
        raise ConfigError(f"N_rho={N_rho} must be >= 16", field="N_rho")
    if N_phi < 32:
        raise ConfigError(f"N_phi={N_phi} must be >= 32", field="N_phi")


def solve_annulus_batch(data, N_rho=64):
    """Solve for many boundary-data rows at once; ``data`` is ``(nb, N_phi)``.

    Returns ``(values (nb, N_rho + 1, N_phi), s, residual)``.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    N_phi = data.shape[1]
    _check_resolution(N_rho, N_phi)
    coef = np.fft.rfft(data, axis=1)  # (nb, K)
    resp = _mode_responses(N_rho, coef.shape[1])  # (K, N_rho+1)
    spec = coef[:, None, :] * resp.T[None, :, :]  # (nb, N_rho+1, K)
    values = np.fft.irfft(spec, n=N_phi, axis=2)
    s = np.linspace(0.0, LN2, N_rho + 1)
    return values, s, harmonic_residual(values, s, data)


def harmonic_residual(values, s, data):
    """Relative defect of the discrete system: five-point stencil in ``(s, phi)``
    at every unknown node (ghost node for the Neumann end) plus the Dirichlet end."""
    ds = s[1] - s[0]
    N_phi = values.shape[-1]
    k = np.fft.rfftfreq(N_phi, 1.0 / N_phi)
    wpp = np.fft.irfft(-(k**2) * np.fft.rfft(values, axis=-1), n=N_phi, axis=-1)
    ghost = values[:, 1] - 2 * ds * data
    padded = np.concatenate([ghost[:, None], values], axis=1)
    wss = (padded[:, 2:] - 2 * padded[:, 1:-1] + padded[:, :-2]) / ds**2
    interior = np.abs(wss + wpp[:, :-1]).max() * ds**2
    dirichlet = np.abs(values[:, -1]).max()
    scale = max(np.abs(data).max() * ds, 1e-300)
    return float(max(interior, dirichlet) / scale)


def solve_annulus(boundary_gradient, alpha, r, N_rho=64, N_phi=128, hole=0):
    """Corrector for given ``grad a0`` samples on the inner circle.

    ``boundary_gradient`` is ``(N_phi, 2)`` (grad a0 at ``x_k + r e_rho(phi_n)``)
    or a single constant vector.
    """
    g = np.asarray(boundary_gradient, dtype=float)
    phi = 2.0 * np.pi * np.arange(N_phi) / N_phi
    e = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    if g.ndim == 1:
        g = np.broadcast_to(g, (N_phi, 2))
    if g.shape != (N_phi, 2):
        raise ConfigError(f"boundary gradient must have shape ({N_phi}, 2)", field="N_phi")
    data = -alpha * r * np.sum(g * e, axis=1)
    values, s, res = solve_annulus_batch(data[None], N_rho)
    if not np.isfinite(values).all():
        raise SolverError("annulus solve produced non-finite values")
    return AnnulusCorrector(hole=hole, r=r, s=s, phi=phi, values=values[0], boundary_data=data, residual=res)


def closed_form_annulus(g, alpha, r, rho, phi):
    """Exact corrector for constant gradient g: ``alpha r |g| (-rho/5 + 4/(5 rho)) cos(phi - phi_g)``.

    Coefficients from ``A - B = -1`` (inner Neumann) and ``2A + B/2 = 0`` (outer Dirichlet).
    """
    g = np.asarray(g, dtype=float)
    gn = float(np.hypot(*g))
    ang = math.atan2(g[1], g[0])
    A, B = -0.2, 0.8
    return alpha * r * gn * (A * rho + B / rho) * np.cos(phi - ang)


def interpolate_polar(values, s, rho, phi):
    """Bilinear interpolation in ``(s, phi)`` of ``values (nb, Ns, Nphi)``, periodic in phi.

    Returns ``(nb, npts)``.
    """
    s_pts = np.log(np.asarray(rho, dtype=float))
    N_phi = values.shape[-1]
    ds = s[1] - s[0]
    fs = np.clip(s_pts / ds, 0.0, len(s) - 1 - 1e-12)
    j = np.floor(fs).astype(int)
    ts = fs - j
    fp = np.mod(np.asarray(phi, dtype=float), 2 * np.pi) * N_phi / (2 * np.pi)
    n0 = np.floor(fp).astype(int) % N_phi
    tp = fp - np.floor(fp)
    n1 = (n0 + 1) % N_phi
    v = values
    return ((1 - ts) * (1 - tp) * v[:, j, n0] + ts * (1 - tp) * v[:, j + 1, n0]
            + (1 - ts) * tp * v[:, j, n1] + ts * tp * v[:, j + 1, n1])


# --- assembly --------------------------------------------------------------


@dataclass
class WellPreparedIC:
    values: np.ndarray = field(repr=False)  # (3, *shape), zero in holes
    alpha: float = 1.0
    r: float = 0.0
    profiles: tuple = ()
    w_max: np.ndarray = field(default=None, repr=False)  # (3, n_holes)
    corrector_sum: np.ndarray = field(default=None, repr=False)  # (3, *shape)
    support: np.ndarray = field(default=None, repr=False)  # bool, union of annuli
    fluid: np.ndarray = field(default=None, repr=False)
    residual: float = 0.0

    @property
    def minimum(self):
        return float(self.values[:, self.fluid].min())

    @property
    def i_min(self):
        """``alpha * min a0`` over all species."""
        return self.alpha * min(p.minimum for p in self.profiles)

    @property
    def W(self):
        """``max_k max |w_k| / r`` over species and holes."""
        if self.w_max is None or self.w_max.size == 0 or self.r == 0:
            return 0.0
        return float(self.w_max.max() / self.r)


def matched_alpha(grid):
    """``1 / theta`` of the discrete unit cell used by the grid (m = eps / h)."""
    if grid.Theta == 0:
        return 1.0
    cell = build_unit_cell(grid.d, grid.Theta, grid.block_cells)
    return 1.0 / cell.theta_discrete


def annulus_offsets(grid):
    """Block-local cells with centre in ``1 <= rho <= 2``: flat offsets, rho and phi."""
    m = grid.block_cells
    rel = (np.indices((m,) * grid.d).reshape(grid.d, -1).T + 0.5) * grid.h - 0.5 * grid.epsilon
    rad = np.sqrt(np.sum(rel**2, axis=1)) / grid.hole_radius
    sel = (rad >= 1.0) & (rad <= 2.0)
    phi = np.arctan2(rel[:, 1], rel[:, 0])
    return np.flatnonzero(sel), rad[sel], phi[sel]


def assemble_well_prepared(grid, profiles=DEFAULT_PROFILES, alpha=None, N_rho=64, N_phi=128):
    """``alpha a0`` on fluid cells plus the annulus correctors of every hole."""
    if grid.d != 2:
        raise ConfigError("well-prepared initial data is implemented for d = 2 only", field="ic")
    if len(profiles) != 3:
        raise ConfigError("three a0 profiles are required", field="a0")
    _check_resolution(N_rho, N_phi)
    alpha = matched_alpha(grid) if alpha is None else float(alpha)
    shape = grid.shape
    x = grid.center_points()
    fluid = grid.fluid_mask
    r = grid.hole_radius
    values = np.zeros((3,) + shape)
    csum = np.zeros((3,) + shape)
    n_holes = grid.n_holes
    w_max = np.zeros((3, n_holes))
    support = np.zeros(shape, dtype=bool)
    residual = 0.0
    for i, prof in enumerate(profiles):
        values[i] = np.where(fluid, alpha * prof(x).reshape(shape), 0.0)
    if n_holes:
        off, rho, phi = annulus_offsets(grid)
        m = grid.block_cells
        local = np.unravel_index(off, (m,) * grid.d)
        rows = grid.hole_blocks[:, None, :] * m + np.stack(local, axis=1)[None, :, :]  # (nh, nc, d)
        flat = np.ravel_multi_index(tuple(rows.reshape(-1, grid.d).T), shape).reshape(n_holes, -1)
        count = np.bincount(flat.ravel(), minlength=int(np.prod(shape)))
        if count.max() > 1:
            raise AssertionError("annulus supports overlap")
        support.ravel()[flat.ravel()] = True
        on_fluid = fluid.ravel()[flat]
        for i, prof in enumerate(profiles):
            data = np.array([boundary_samples(prof.gradient, c, r, N_phi, alpha) for c in grid.hole_centers])
            w, s, res = solve_annulus_batch(data, N_rho)
            residual = max(residual, res)
            w_max[i] = np.abs(w).reshape(n_holes, -1).max(axis=1)
            vals = interpolate_polar(w, s, rho, phi)  # (nh, nc)
            vals = np.where(on_fluid, vals, 0.0)
            csum[i].ravel()[flat.ravel()] = vals.ravel()
            values[i] += csum[i]
    return WellPreparedIC(values=values, alpha=alpha, r=r, profiles=tuple(profiles), w_max=w_max,
                          corrector_sum=csum, support=support, fluid=fluid, residual=residual)


# --- compatibility ----------------------------------------------------------


def _ls_gradients(u, fluid, h, cells):
    """Least-squares linear fit over fluid cells of the 3x3 stencil around each cell."""
    n = fluid.shape[0]
    ii, jj = np.unravel_index(cells, fluid.shape)
    offs = [(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1) if (a, b) != (0, 0)]
    G = np.zeros((len(cells), 2))
    for p in range(len(cells)):
        rows, rhs = [], []
        for a, b in offs:
            i2, j2 = ii[p] + a, jj[p] + b
            if 0 <= i2 < n and 0 <= j2 < n and fluid[i2, j2]:
                rows.append((a * h, b * h))
                rhs.append(u[i2, j2] - u[ii[p], jj[p]])
        G[p] = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)[0]
    return G


@dataclass
class CompatibilityReport:
    h: float
    hole_residual: float
    box_residual: float
    C: float

    @property
    def residual(self):
        return max(self.hole_residual, self.box_residual)

    @property
    def scaled(self):
        return self.residual / self.h

    @property
    def passed(self):
        return self.residual <= self.C * self.h

    def to_dict(self):
        return {"h": self.h, "hole_residual": self.hole_residual, "box_residual": self.box_residual,
                "residual": self.residual, "residual_over_h": self.scaled, "C": self.C,
                "passed": bool(self.passed)}


def hole_normal_derivatives(u, grid):
    """``grad u . n`` at the fluid cells touching hole faces.

    The gradient is a least-squares fit over fluid neighbours; n is the true
    unit normal at the cell centre, pointing into the hole.
    """
    faces = grid.faces
    if len(faces) == 0:
        return np.zeros(0)
    cells = np.unique(faces.cell)
    hole = np.zeros(grid.fluid_mask.size, dtype=np.int64)
    hole[faces.cell] = faces.hole
    G = _ls_gradients(u, grid.fluid_mask, grid.h, cells)
    x = (np.stack(np.unravel_index(cells, grid.shape), axis=1) + 0.5) * grid.h
    nrm = grid.hole_centers[hole[cells]] - x
    nrm /= np.linalg.norm(nrm, axis=1)[:, None]
    return np.sum(G * nrm, axis=1)


def box_normal_derivatives(u, h):
    """One-sided differences across the first cell layer of every box face."""
    out = []
    for ax in range(u.ndim):
        a = np.moveaxis(u, ax, 0)
        out.append(np.abs(a[1] - a[0]).ravel() / h)
        out.append(np.abs(a[-1] - a[-2]).ravel() / h)
    return np.concatenate(out)


def verify_compatibility(ic, grid, C=10.0, species=None):
    """Max discrete normal derivative on hole and box boundaries, compared with ``C h``."""
    sp = range(len(ic.values)) if species is None else [species]
    hole_res = 0.0
    box_res = 0.0
    for i in sp:
        dn = hole_normal_derivatives(ic.values[i], grid)
        if dn.size:
            hole_res = max(hole_res, float(np.abs(dn).max()))
        box_res = max(box_res, float(box_normal_derivatives(ic.values[i], grid.h).max()))
    return CompatibilityReport(h=grid.h, hole_residual=hole_res, box_residual=box_res, C=C)


def raw_normal_flux(profiles, grid, alpha):
    """Analytic ``max |alpha grad a0 . n|`` over the hole-face centres (no correctors)."""
    faces = grid.faces
    if len(faces) == 0:
        return 0.0
    nrm = grid.hole_centers[faces.hole] - faces.center
    nrm /= np.linalg.norm(nrm, axis=1)[:, None]
    return max(float(np.abs(alpha * np.sum(p.gradient(faces.center) * nrm, axis=1)).max()) for p in profiles)


def two_scale_limit_check(ics, grids, tests):
    """Volume functional of each IC at t = 0 against its two-scale limit.

    The limit of the extended IC tested with ``phi0(x) phi_Y(x/eps)`` is
    ``int alpha a0 phi0 dx * int_{Y*} phi_Y dy``. ``tests`` are harness
    TestFunctions. Returns rows ``(epsilon, test_id, species, value, target, error)``.
    """
    from .harness import volume_two_scale_functional, macro_target

    rows = []
    for ic, grid in zip(ics, grids):
        x = grid.center_points()
        for phi in tests:
            for i, prof in enumerate(ic.profiles):
                val = volume_two_scale_functional(ic.values[i][None], phi, grid.epsilon, grid.h, [0.0])
                macro = (ic.alpha * prof(x)).reshape(grid.shape)
                tgt = macro_target(macro[None], phi, 1.0 / ic.alpha, grid.h, [0.0], grid=grid)
                rows.append((grid.epsilon, phi.name, i, val, tgt, abs(val - tgt)))
    return rows
