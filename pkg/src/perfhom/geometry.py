"""Reference cell and eps-periodic perforated box.

Holes are balls of radius ``Theta * eps`` centred in the eps-blocks of the box
``[0, L]^d``. A block carries a hole only if the closed ball lies inside the
interior region ``{x : dist(x, boundary) > delta}``; the remaining strip of
width ``delta`` is left unperforated.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ConfigError, DomainError, GeometryResolutionError

_REL_TOL = 1e-9


def ball_volume(radius, d):
    if d == 2:
        return math.pi * radius**2
    return 4.0 / 3.0 * math.pi * radius**3


def sphere_measure(radius, d):
    """Boundary measure of a ball of the given radius (circumference in 2D)."""
    if d == 2:
        return 2.0 * math.pi * radius
    return 4.0 * math.pi * radius**2


def disk_mask(m, radius, d):
    """Boolean grid, True where the cell centre lies outside the closed ball.

    Cells live on ``[-1/2, 1/2)^d`` with spacing ``1/m``. The test is done on the
    odd integers ``2i + 1 - m`` so that the mask is exactly symmetric.
    """
    k = (2.0 * np.arange(m) + 1.0 - m) ** 2
    r2 = np.zeros((m,) * d)
    for ax in range(d):
        shape = [1] * d
        shape[ax] = m
        r2 = r2 + k.reshape(shape)
    return r2 > (2.0 * m * radius) ** 2


@dataclass(frozen=True)
class UnitCellSpec:
    d: int
    Theta: float
    m: int
    fluid_mask: np.ndarray = field(repr=False)
    theta_exact: float
    gamma_exact: float

    @property
    def h(self):
        return 1.0 / self.m

    @property
    def theta_discrete(self):
        return float(self.fluid_mask.sum()) / self.m**self.d

    def centers(self):
        """Cell-centre coordinates, one array per axis (``indexing='ij'``)."""
        c = (np.arange(self.m) + 0.5) / self.m - 0.5
        return np.meshgrid(*([c] * self.d), indexing="ij")


def build_unit_cell(d, Theta, m):
    if d not in (2, 3):
        raise ConfigError(f"dimension must be 2 or 3, got {d}", field="d")
    if not (0.0 <= Theta <= 0.25):
        raise ConfigError(f"hole_radius Theta={Theta} must satisfy 0 <= Theta <= 1/4", field="hole_radius")
    if int(m) != m or m < 8:
        raise ConfigError(f"cell resolution m={m} must be an integer >= 8", field="m")
    m = int(m)
    mask = disk_mask(m, Theta, d) if Theta > 0 else np.ones((m,) * d, dtype=bool)
    return UnitCellSpec(
        d=d,
        Theta=float(Theta),
        m=m,
        fluid_mask=mask,
        theta_exact=1.0 - ball_volume(Theta, d),
        gamma_exact=sphere_measure(Theta, d) if Theta > 0 else 0.0,
    )


def _ratio(a, b, name):
    q = a / b
    n = round(q)
    if n < 1 or abs(q - n) > _REL_TOL * max(1.0, q):
        raise ConfigError(f"{name} must be a positive integer, got {q:.6g}", field=name)
    return int(n)


@dataclass(frozen=True)
class BoundaryFaces:
    """Fluid/hole faces as parallel arrays (one entry per face).

    ``normal`` points out of the fluid cell into the hole. ``measure`` is the
    raw face area rescaled so that each hole's faces sum to its true surface.
    """

    center: np.ndarray
    cell: np.ndarray
    hole: np.ndarray
    axis: np.ndarray
    normal: np.ndarray
    raw_measure: float
    measure: np.ndarray

    def __len__(self):
        return len(self.cell)


@dataclass(frozen=True)
class PerforatedGrid:
    d: int
    L: float
    h: float
    epsilon: float
    delta: float
    Theta: float
    n: int
    block_cells: int
    hole_centers: np.ndarray = field(repr=False)
    hole_blocks: np.ndarray = field(repr=False)
    fluid_mask: np.ndarray = field(repr=False)
    faces: BoundaryFaces = field(repr=False)

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def n_holes(self):
        return len(self.hole_centers)

    @property
    def cell_volume(self):
        return self.h**self.d

    @property
    def fluid_volume(self):
        return float(self.fluid_mask.sum()) * self.cell_volume

    @property
    def hole_radius(self):
        return self.Theta * self.epsilon

    @property
    def gamma_eps(self):
        """Total (corrected) hole-boundary measure."""
        return float(np.sum(self.faces.measure))

    @property
    def eps_gamma_eps(self):
        return self.epsilon * self.gamma_eps

    @property
    def omega_volume(self):
        return self.L**self.d

    @property
    def omega_delta_volume(self):
        return max(self.L - 2.0 * self.delta, 0.0) ** self.d

    def centers(self):
        c = (np.arange(self.n) + 0.5) * self.h
        return np.meshgrid(*([c] * self.d), indexing="ij")

    def center_points(self):
        """Cell centres as an ``(n**d, d)`` array in C order."""
        return np.stack([c.ravel() for c in self.centers()], axis=1)

    def zone_mask(self, delta=None):
        """Cells whose centre lies in ``{dist(x, boundary) > delta}``."""
        delta = self.delta if delta is None else delta
        return security_zone_mask(self.n, self.h, self.L, delta, self.d)

    def summary(self):
        gamma = sphere_measure(self.Theta, self.d) if self.Theta > 0 else 0.0
        return {
            "d": self.d,
            "L": self.L,
            "h": self.h,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "theta_exact": 1.0 - ball_volume(self.Theta, self.d),
            "gamma_exact": gamma,
            "n_holes": self.n_holes,
            "eps_gamma_eps": self.eps_gamma_eps,
            "limit_gamma_omega": gamma * self.omega_volume,
            "limit_gamma_omega_delta": gamma * self.omega_delta_volume,
        }


def security_zone_mask(n, h, L, delta, d):
    c = (np.arange(n) + 0.5) * h
    inside = (c > delta) & (c < L - delta)
    mask = np.ones((n,) * d, dtype=bool)
    for ax in range(d):
        shape = [1] * d
        shape[ax] = n
        mask = mask & inside.reshape(shape)
    return mask


def _boundary_faces(mask, h, hole_index, block_cells):
    d = mask.ndim
    n = mask.shape[0]
    centers, cells, holes, axes, normals = [], [], [], [], []
    idx = np.arange(mask.size).reshape(mask.shape)
    for ax in range(d):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[ax] = slice(0, n - 1)
        hi[ax] = slice(1, n)
        lo, hi = tuple(lo), tuple(hi)
        for fluid_side, solid_side, sign in ((lo, hi, 1.0), (hi, lo, -1.0)):
            sel = mask[fluid_side] & ~mask[solid_side]
            if not sel.any():
                continue
            f_idx = idx[fluid_side][sel]
            s_idx = idx[solid_side][sel]
            f_multi = np.stack(np.unravel_index(f_idx, mask.shape), axis=1)
            s_multi = np.stack(np.unravel_index(s_idx, mask.shape), axis=1)
            ctr = (f_multi + 0.5) * h
            ctr[:, ax] += 0.5 * h * sign
            nrm = np.zeros((len(f_idx), d))
            nrm[:, ax] = sign
            blk = tuple((s_multi // block_cells).T)
            centers.append(ctr)
            cells.append(f_idx)
            holes.append(hole_index[blk])
            axes.append(np.full(len(f_idx), ax))
            normals.append(nrm)
    if not cells:
        return (np.zeros((0, d)), np.zeros(0, int), np.zeros(0, int), np.zeros(0, int), np.zeros((0, d)))
    cells_a = np.concatenate(cells)
    axes_a = np.concatenate(axes)
    normals_a = np.concatenate(normals)
    sign_a = normals_a[np.arange(len(axes_a)), axes_a]
    # deterministic order: by fluid cell, then axis, then side
    order = np.lexsort((sign_a, axes_a, cells_a))
    return (
        np.concatenate(centers)[order],
        cells_a[order],
        np.concatenate(holes)[order],
        axes_a[order],
        normals_a[order],
    )


def build_perforated_grid(L, h, epsilon, delta, cell_or_Theta, d=None):
    """Build the perforated box.

    ``cell_or_Theta`` is either a :class:`UnitCellSpec` (its ``d`` and
    ``Theta`` are used) or a bare hole radius, in which case ``d`` is required.
    """
    if isinstance(cell_or_Theta, UnitCellSpec):
        d, Theta = cell_or_Theta.d, cell_or_Theta.Theta
    else:
        Theta = float(cell_or_Theta)
        if d is None:
            raise ConfigError("dimension required when passing a bare hole radius", field="d")
    if d not in (2, 3):
        raise ConfigError(f"dimension must be 2 or 3, got {d}", field="d")
    if not (0.0 <= Theta <= 0.25):
        raise ConfigError(f"hole_radius Theta={Theta} must satisfy 0 <= Theta <= 1/4", field="hole_radius")
    if L <= 0 or h <= 0 or epsilon <= 0:
        raise ConfigError("L, h and epsilon must be positive", field="L")
    if delta < 0:
        raise ConfigError(f"delta={delta} must be >= 0", field="delta")
    block_cells = _ratio(epsilon, h, "epsilon/h")
    n_blocks = _ratio(L, epsilon, "L/epsilon")
    n = block_cells * n_blocks
    if Theta > 0 and Theta * epsilon < h * (1.0 - _REL_TOL):
        raise GeometryResolutionError(
            f"hole radius Theta*eps={Theta * epsilon:.4g} is below the grid spacing h={h:.4g}",
            field="h",
        )

    centers_1d = (np.arange(n_blocks) + 0.5) * epsilon
    r = Theta * epsilon
    ok_1d = (centers_1d - r > delta) & (centers_1d + r < L - delta)
    has_hole = np.ones((n_blocks,) * d, dtype=bool)
    for ax in range(d):
        shape = [1] * d
        shape[ax] = n_blocks
        has_hole = has_hole & ok_1d.reshape(shape)
    if Theta == 0:
        has_hole[...] = False

    hole_index = np.full(has_hole.shape, -1, dtype=np.int64)
    blocks = np.argwhere(has_hole)
    hole_index[tuple(blocks.T)] = np.arange(len(blocks))
    hole_centers = (blocks + 0.5) * epsilon

    if len(blocks):
        solid_block = ~disk_mask(block_cells, Theta, d)
        solid = np.kron(has_hole.astype(np.int8), solid_block.astype(np.int8)).astype(bool)
        fluid = ~solid
    else:
        fluid = np.ones((n,) * d, dtype=bool)

    ctr, cells, holes, axes, normals = _boundary_faces(fluid, h, hole_index, block_cells)
    raw = h ** (d - 1)
    if len(cells):
        per_hole = np.bincount(holes, minlength=len(blocks)).astype(float)
        factor = sphere_measure(r, d) / (per_hole * raw)
        measure = raw * factor[holes]
    else:
        measure = np.zeros(0)
    faces = BoundaryFaces(ctr, cells, holes, axes, normals, raw, measure)
    return PerforatedGrid(
        d=d,
        L=float(L),
        h=float(h),
        epsilon=float(epsilon),
        delta=float(delta),
        Theta=Theta,
        n=n,
        block_cells=block_cells,
        hole_centers=hole_centers,
        hole_blocks=blocks,
        fluid_mask=fluid,
        faces=faces,
    )


def map_to_cell_coords(x, epsilon, hole_center):
    """Reference-cell coordinate ``(x - x_k) / eps`` of a point in block k."""
    y = (np.asarray(x, dtype=float) - np.asarray(hole_center, dtype=float)) / epsilon
    if np.any(np.abs(y) > 0.5 + 1e-12):
        raise DomainError(f"point {x} lies outside the eps-block of the hole at {hole_center}")
    return y
