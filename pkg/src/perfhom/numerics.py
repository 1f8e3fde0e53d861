"""Finite-volume operators on masked grids, CG, and quadratures.

All operators act on *packed* vectors holding one value per fluid cell, in C
order of the full grid. ``MaskedOperator.pack`` / ``unpack`` convert.
"""
from dataclasses import dataclass, field
import logging
import math

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .errors import ConfigError, SolverError

logger = logging.getLogger(__name__)

NEUMANN = "neumann"
PERIODIC = "periodic"


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    tol: float = 0.0
    history: list = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class MaskedOperator:
    """Symmetric FV discretisation of ``-div(K grad u)`` on the fluid cells."""

    shape: tuple
    mask: np.ndarray = field(repr=False)
    h: float
    bc: str
    matrix: sp.csr_matrix = field(repr=False)
    cells: np.ndarray = field(repr=False)
    index: np.ndarray = field(repr=False)

    @property
    def size(self):
        return len(self.cells)

    def __call__(self, x):
        return self.matrix @ x

    def pack(self, full):
        return np.asarray(full).reshape(-1)[self.cells]

    def unpack(self, packed, fill=0.0):
        out = np.full(int(np.prod(self.shape)), fill, dtype=float)
        out[self.cells] = packed
        return out.reshape(self.shape)

    def components(self):
        """Connected-component label per unknown (fluid cells linked by faces)."""
        graph = self.matrix.copy()
        graph.data[:] = 1.0
        _, labels = connected_components(graph, directed=False)
        return labels


def _coefficient_field(coeff, shape):
    """Return ``(K, constant)`` where K has shape ``shape + (d, d)`` or ``(d, d)``."""
    d = len(shape)
    K = np.asarray(coeff, dtype=float)
    if K.ndim == 0:
        if K < 0:
            raise ConfigError(f"diffusion coefficient {float(K)} must be >= 0", field="coeff")
        return float(K) * np.eye(d), True
    if K.shape == (d, d):
        if not np.allclose(K, K.T, rtol=0, atol=1e-12 * max(1.0, np.abs(K).max())):
            raise ConfigError("tensor coefficient must be symmetric", field="coeff")
        if np.linalg.eigvalsh(0.5 * (K + K.T)).min() <= 0:
            raise ConfigError("tensor coefficient must be positive definite", field="coeff")
        return 0.5 * (K + K.T), True
    if K.shape == tuple(shape):
        if np.any(K < 0):
            raise ConfigError("scalar coefficient field must be >= 0", field="coeff")
        return K[..., None, None] * np.eye(d), False
    if K.shape == tuple(shape) + (d, d):
        return K, False
    raise ConfigError(f"coefficient of shape {K.shape} does not fit grid {shape}", field="coeff")


def _pairs(shape, ax, bc):
    """Flat indices (p, q) of neighbours q = p + e_ax."""
    n = shape[ax]
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    if bc == PERIODIC:
        return idx.ravel(), np.roll(idx, -1, axis=ax).ravel()
    lo = [slice(None)] * len(shape)
    hi = [slice(None)] * len(shape)
    lo[ax] = slice(0, n - 1)
    hi[ax] = slice(1, n)
    return idx[tuple(lo)].ravel(), idx[tuple(hi)].ravel()


def _quads(shape, a, b, bc):
    """Flat indices of the 4 cells around every vertex of the (a, b) plane.

    Returned in order (00, 10, 01, 11) where the first digit steps along a.
    """
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    if bc == PERIODIC:
        c00 = idx
        c10 = np.roll(idx, -1, axis=a)
        c01 = np.roll(idx, -1, axis=b)
        c11 = np.roll(c10, -1, axis=b)
        return [c.ravel() for c in (c00, c10, c01, c11)]
    sl = []
    for da, db in ((0, 0), (1, 0), (0, 1), (1, 1)):
        s = [slice(None)] * len(shape)
        s[a] = slice(da, shape[a] - 1 + da)
        s[b] = slice(db, shape[b] - 1 + db)
        sl.append(idx[tuple(s)].ravel())
    return sl


def assemble_diffusion(mask, h, coeff=1.0, bc=NEUMANN):
    """Assemble the masked diffusion operator.

    Faces into solid cells (and, for ``bc="neumann"``, out of the box) carry no
    flux, so row sums vanish. Tensor cross terms use vertex gradients built from
    the four surrounding cells and are only kept where all four are fluid; the
    operator is assembled from a quadratic energy and is therefore symmetric.
    Per-cell coefficient fields use harmonic face means for the diagonal part.
    """
    if bc not in (NEUMANN, PERIODIC):
        raise ConfigError(f"unknown boundary treatment {bc!r}", field="bc")
    mask = np.asarray(mask, dtype=bool)
    shape = mask.shape
    d = len(shape)
    K, constant = _coefficient_field(coeff, shape)
    flat_mask = mask.ravel()
    cells = np.flatnonzero(flat_mask)
    index = np.full(flat_mask.size, -1, dtype=np.int64)
    index[cells] = np.arange(len(cells))

    rows, cols, vals = [], [], []

    def add_pair(p, q, w):
        pi, qi = index[p], index[q]
        rows.extend((pi, qi, pi, qi))
        cols.extend((pi, qi, qi, pi))
        vals.extend((w, w, -w, -w))

    for ax in range(d):
        p, q = _pairs(shape, ax, bc)
        keep = flat_mask[p] & flat_mask[q]
        p, q = p[keep], q[keep]
        if constant:
            k = np.full(len(p), K[ax, ax])
        else:
            kp = K[..., ax, ax].ravel()[p]
            kq = K[..., ax, ax].ravel()[q]
            s = kp + kq
            k = np.where(s > 0, 2.0 * kp * kq / np.where(s > 0, s, 1.0), 0.0)
        add_pair(p, q, k / h**2)

    for a in range(d):
        for b in range(a + 1, d):
            if constant and K[a, b] == 0.0:
                continue
            if not constant and not np.any(K[..., a, b]):
                continue
            quad = _quads(shape, a, b, bc)
            keep = np.logical_and.reduce([flat_mask[c] for c in quad])
            quad = [c[keep] for c in quad]
            if constant:
                kab = np.full(len(quad[0]), K[a, b])
            else:
                kab = np.mean([K[..., a, b].ravel()[c] for c in quad], axis=0)
            va = np.array([-1.0, 1.0, -1.0, 1.0]) / (2.0 * h)
            vb = np.array([-1.0, -1.0, 1.0, 1.0]) / (2.0 * h)
            local = np.outer(va, vb) + np.outer(vb, va)
            for r in range(4):
                for c in range(4):
                    if local[r, c] == 0.0:
                        continue
                    rows.append(index[quad[r]])
                    cols.append(index[quad[c]])
                    vals.append(kab * local[r, c])

    n = len(cells)
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    else:
        A = sp.csr_matrix((n, n))
    A.sum_duplicates()
    return MaskedOperator(shape=shape, mask=mask, h=float(h), bc=bc, matrix=A, cells=cells, index=index)


def project_mean(x, labels=None):
    """Remove the mean of x on every connected component."""
    if labels is None:
        return x - x.mean()
    sums = np.bincount(labels, weights=x)
    counts = np.bincount(labels)
    return x - (sums / counts)[labels]


def cg_solve(A, b, tol=1e-10, maxit=10000, nullspace=None, x0=None, jacobi=False):
    """Conjugate gradients for a symmetric positive (semi)definite operator.

    ``nullspace="project-mean"`` treats the constants on each fluid component as
    the kernel: b is projected first and the returned x has zero mean on every
    component. The report's residual is ``||b - Ax|| / ||b||`` of the projected
    system.
    """
    matrix = A.matrix if isinstance(A, MaskedOperator) else A
    b = np.asarray(b, dtype=float)
    labels = None
    if nullspace == "project-mean":
        labels = A.components() if isinstance(A, MaskedOperator) else None
        b = project_mean(b, labels)
    elif nullspace not in (None, "none"):
        raise ConfigError(f"unknown nullspace treatment {nullspace!r}", field="nullspace")

    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), SolveReport(0, 0.0, True, tol)

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - matrix @ x
    if nullspace == "project-mean":
        r = project_mean(r, labels)
    if jacobi:
        diag = matrix.diagonal().copy()
        diag[diag == 0] = 1.0
        inv_diag = 1.0 / diag
    z = r * inv_diag if jacobi else r
    p = z.copy()
    rz = float(r @ z)
    history = [float(np.linalg.norm(r)) / bnorm]
    it = 0
    while history[-1] > tol and it < maxit:
        Ap = matrix @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if nullspace == "project-mean":
            r = project_mean(r, labels)
        z = r * inv_diag if jacobi else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
        history.append(float(np.linalg.norm(r)) / bnorm)

    if nullspace == "project-mean":
        x = project_mean(x, labels)
    res = float(np.linalg.norm(b - matrix @ x)) / bnorm
    report = SolveReport(it, res, res <= tol, tol, history)
    if not report.converged:
        logger.warning("CG stopped after %d iterations at relative residual %.3e", it, res)
    return x, report


class ShiftedSolver:
    """Solve ``(diag(w) + s * A) x = w * rhs`` for the implicit diffusion step.

    Factorisations are cached per shift ``s`` (the most recent ``max_cached``
    are kept). The symmetric minimum-degree ordering roughly halves the LU fill
    of the default column ordering on grid Laplacians. After each solve a constant is
    added so that ``sum(w * x) == sum(w * rhs)`` holds to round-off; the exact
    linear solution satisfies this because the columns of A sum to zero.
    """

    def __init__(self, op, weights=None, method="direct", tol=1e-9, max_cached=4):
        if method not in ("direct", "cg"):
            raise ConfigError(f"unknown solver method {method!r}", field="method")
        self.op = op
        self.weights = np.ones(op.size) if weights is None else np.asarray(weights, dtype=float)
        self.method = method
        self.tol = tol
        self.max_cached = max_cached
        self._cache = {}

    def _system(self, shift):
        key = float(shift)
        if key in self._cache:
            self._cache[key] = self._cache.pop(key)  # most recently used last
        else:
            while len(self._cache) >= self.max_cached:
                self._cache.pop(next(iter(self._cache)))
            M = (sp.diags(self.weights) + shift * self.op.matrix).tocsc()
            lu = None
            if self.method == "direct":
                # SPD and diagonally dominant: no pivoting needed, which keeps the ordering intact
                lu = splu(M, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                          options=dict(SymmetricMode=True))
            self._cache[key] = (M, lu)
        return self._cache[key]

    def solve(self, rhs, shift):
        rhs = np.asarray(rhs, dtype=float)
        wb = self.weights * rhs
        M, lu = self._system(shift)
        # solve for the increment x - rhs; its right side is exactly zero for constant rhs
        r = -shift * (self.op.matrix @ rhs)
        if not np.any(r):
            return rhs.copy()
        if lu is not None:
            x = rhs + lu.solve(r)
        else:
            delta, rep = cg_solve(M, r, tol=self.tol * float(np.linalg.norm(wb)) / float(np.linalg.norm(r)),
                                  maxit=20000, jacobi=True)
            if not rep.converged:
                raise SolverError("implicit diffusion solve did not converge", rep)
            x = rhs + delta
        x += (np.sum(wb) - np.sum(self.weights * x)) / np.sum(self.weights)
        return x


def integrate_field(field, mask, h, chunks=1):
    """Midpoint rule over the fluid cells.

    ``field`` is either a full grid (masked here) or already packed. With
    ``chunks > 1`` the sum is formed from contiguous partial sums, mimicking a
    partitioned reduction; the order is fixed either way.
    """
    field = np.asarray(field, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    vals = field[mask] if field.shape == mask.shape else field.ravel()
    d = mask.ndim
    if chunks <= 1:
        return float(np.sum(vals)) * h**d
    parts = [float(np.sum(c)) for c in np.array_split(vals, chunks)]
    return math.fsum(parts) * h**d


def surface_nodes(Theta, N_q=64, d=2):
    """Quadrature points and weights on the sphere ``|y| = Theta``.

    2D: trapezoid rule in the angle. 3D: Gauss-Legendre in ``cos(polar)``
    times a trapezoid rule in azimuth. Weights sum to the exact measure.
    """
    if N_q < 16:
        raise ConfigError(f"N_q={N_q} must be >= 16", field="N_q")
    if Theta == 0:
        return np.zeros((0, d)), np.zeros(0)
    if d == 2:
        phi = 2.0 * np.pi * np.arange(N_q) / N_q
        pts = Theta * np.stack([np.cos(phi), np.sin(phi)], axis=1)
        w = np.full(N_q, 2.0 * np.pi * Theta / N_q)
        return pts, w
    n_mu = max(N_q // 2, 8)
    mu, wmu = np.polynomial.legendre.leggauss(n_mu)
    phi = 2.0 * np.pi * np.arange(N_q) / N_q
    MU, PHI = np.meshgrid(mu, phi, indexing="ij")
    s = np.sqrt(1.0 - MU**2)
    pts = Theta * np.stack([s * np.cos(PHI), s * np.sin(PHI), MU], axis=-1).reshape(-1, 3)
    w = (Theta**2 * wmu[:, None] * (2.0 * np.pi / N_q) * np.ones_like(PHI)).ravel()
    return pts, w


def circle_quadrature(f, Theta, N_q=64, d=2):
    """Integrate ``f(y)`` (vectorised over an ``(n, d)`` array) over ``|y| = Theta``."""
    pts, w = surface_nodes(Theta, N_q, d)
    if len(w) == 0:
        return 0.0
    vals = np.broadcast_to(np.asarray(f(pts), dtype=float), w.shape)
    return float(np.dot(vals, w))


def gradient_energy(op, u):
    """``sum_faces h^d (du/h)^2`` over fluid-fluid faces, for a unit-coefficient op."""
    return float(u @ (op.matrix @ u)) * op.h ** len(op.shape)
