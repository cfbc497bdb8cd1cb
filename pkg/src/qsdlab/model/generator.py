"""Assembly of killed generators on interior nodes.

Exterior nodes are deleted: a rate into a non-interior node stays on the
diagonal (the process is killed) and has no matching off-diagonal entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt

import numpy as np
import scipy.sparse as sps
from scipy.stats import norm

from qsdlab.errors import EmptyInterior, NonMonotoneScheme
from qsdlab.model.domain import DomainSpec, GridSpec
from qsdlab.model.fractional import fractional_quadrature
from qsdlab.model.process import KineticLangevin, OverdampedLangevin, StableSDE


@dataclass(frozen=True)
class GridOperator:
    """Killed generator L_D acting on vectors indexed by interior nodes."""

    matrix: sps.csr_matrix
    grid: GridSpec
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        m = sps.csr_matrix(self.matrix, dtype=float)
        m.sum_duplicates()
        m.sort_indices()
        if m.shape != (self.grid.n, self.grid.n):
            raise ValueError("matrix shape does not match the interior node count")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.matrix @ f

    __matmul__ = apply

    @property
    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    @property
    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).reshape(-1)

    @property
    def killing_rate(self) -> np.ndarray:
        return -self.row_sums

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def row_structure(self):
        """(row, col, value) triplets of the stored entries."""
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data

    def transpose(self) -> "GridOperator":
        return GridOperator(self.matrix.T.tocsr(), self.grid, dict(self.meta))

    def check_invariants(self, rtol: float = 64 * np.finfo(float).eps) -> dict:
        """Off-diagonals >= 0 and row sums <= 0 up to rounding of the diagonal."""
        r, c, v = self.row_structure()
        off = r != c
        neg_off = int(np.sum(v[off] < 0))
        scale = np.abs(self.diagonal) + 1.0
        bad_rows = int(np.sum(self.row_sums > rtol * scale))
        return {
            "negative_offdiagonals": neg_off,
            "positive_row_sums": bad_rows,
            "ok": neg_off == 0 and bad_rows == 0,
        }

    def export_triplets(self, path) -> None:
        r, c, v = self.row_structure()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("row,col,value\n")
            for i, j, x in zip(r, c, v):
                fh.write(f"{i},{j},{x:.17g}\n")


class _Assembler:
    """Collects (row, target multi-index, rate) contributions."""

    def __init__(self, grid: GridSpec):
        self.grid = grid
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.outflow = np.zeros(grid.n)
        self.extra_killing = np.zeros(grid.n)

    def add(self, offset: np.ndarray, rate: np.ndarray):
        rate = np.broadcast_to(np.asarray(rate, dtype=float), (self.grid.n,))
        if np.any(rate < 0) or not np.all(np.isfinite(rate)):
            raise NonMonotoneScheme("negative or non-finite transition rate")
        tgt = self.grid.dense_of(self.grid.multi_index + offset)
        self.outflow += rate
        keep = (tgt >= 0) & (rate > 0)
        rows = np.flatnonzero(keep)
        self.rows.append(rows)
        self.cols.append(tgt[keep])
        self.vals.append(rate[keep])

    def build(self, meta: dict) -> GridOperator:
        n = self.grid.n
        diag = -(self.outflow + self.extra_killing)
        rows = np.concatenate(self.rows + [np.arange(n)])
        cols = np.concatenate(self.cols + [np.arange(n)])
        vals = np.concatenate(self.vals + [diag])
        mat = sps.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        return GridOperator(mat, self.grid, meta)


def _unit(dim: int, axis: int, sign: int = 1) -> np.ndarray:
    e = np.zeros(dim, dtype=np.int64)
    e[axis] = sign
    return e


def _drift_pair(diff_rate: np.ndarray, c: np.ndarray, h: float):
    """Rates to the +/- neighbours for diffusion ``diff_rate`` and drift ``c``.

    Central differences where that keeps both rates nonnegative, first-order
    upwinding elsewhere.
    """
    plus = diff_rate + c / (2.0 * h)
    minus = diff_rate - c / (2.0 * h)
    upwind = (plus < 0) | (minus < 0)
    plus = np.where(upwind, diff_rate + np.maximum(c, 0.0) / h, plus)
    minus = np.where(upwind, diff_rate + np.maximum(-c, 0.0) / h, minus)
    return plus, minus, upwind


def _overdamped(process: OverdampedLangevin, grid: GridSpec) -> GridOperator:
    asm = _Assembler(grid)
    x = grid.nodes
    d = grid.dim
    n_upwind = 0
    if process.scheme == "symmetric":
        U = process.potential
        u0 = U(x)
        for a in range(d):
            h = grid.spacing[a]
            for s in (1, -1):
                e = _unit(d, a, s)
                xn = x + s * h * np.eye(d)[a]
                asm.add(e, np.exp(u0 - U(xn)) / (2.0 * h * h))
    else:
        c = process.drift_field(x)
        if not np.all(np.isfinite(c)):
            raise NonMonotoneScheme("drift is not finite on the grid")
        for a in range(d):
            h = grid.spacing[a]
            plus, minus, up = _drift_pair(np.full(grid.n, 1.0 / (2.0 * h * h)), c[:, a], h)
            n_upwind += int(up.sum())
            asm.add(_unit(d, a, 1), plus)
            asm.add(_unit(d, a, -1), minus)
    return asm.build({"process": process.to_dict(), "upwind_entries": n_upwind})


def velocity_cutoff(gamma: float, mass: float = 1e-8) -> float:
    """v_max with N(0, 1/(2 gamma)) mass outside [-v_max, v_max] equal to ``mass``."""
    return float(norm.isf(mass / 2.0) / sqrt(2.0 * gamma))


def kinetic_domain(position: DomainSpec, gamma: float, mass: float = 1e-8) -> DomainSpec:
    """Phase-space box O x [-v_max, v_max]^d; the velocity faces absorb."""
    if position.mask is not None:
        raise ValueError("kinetic phase grids support box position domains only")
    vmax = velocity_cutoff(gamma, mass)
    return DomainSpec(tuple(position.bounds) + ((-vmax, vmax),) * position.ambient_dim)


def _kinetic(process: KineticLangevin, grid: GridSpec) -> GridOperator:
    d = process.dim
    if grid.dim != 2 * d:
        raise ValueError("kinetic generator needs a phase-space grid of dimension 2d")
    asm = _Assembler(grid)
    z = grid.nodes
    x, v = z[:, :d], z[:, d:]
    gradU = process.potential.gradient(x)
    n_upwind = 0
    for a in range(d):
        hx = grid.spacing[a]
        asm.add(_unit(2 * d, a, 1), np.maximum(v[:, a], 0.0) / hx)
        asm.add(_unit(2 * d, a, -1), np.maximum(-v[:, a], 0.0) / hx)
    for a in range(d):
        hv = grid.spacing[d + a]
        b = -gradU[:, a] - process.gamma * v[:, a]
        plus, minus, up = _drift_pair(np.full(grid.n, 1.0 / (2.0 * hv * hv)), b, hv)
        n_upwind += int(up.sum())
        asm.add(_unit(2 * d, d + a, 1), plus)
        asm.add(_unit(2 * d, d + a, -1), minus)
    vmax = float(grid.domain.hi[d])
    trunc = float(2.0 * norm.sf(vmax * sqrt(2.0 * process.gamma)))
    meta = {"process": process.to_dict(), "upwind_entries": n_upwind, "v_max": vmax,
            "velocity_truncation_mass": trunc}
    return asm.build(meta)


def _stable(process: StableSDE, grid: GridSpec, truncation_radius: float | None) -> GridOperator:
    d = grid.dim
    R = grid.domain.diameter if truncation_radius is None else truncation_radius
    st = fractional_quadrature(process.alpha, process.c_alpha, grid, R)
    asm = _Assembler(grid)
    h = float(grid.spacing[0])
    x = grid.nodes
    c = -process.potential.gradient(x)
    local = st.local_diffusion / (2.0 * h * h)
    # jumps to the nearest neighbours share entries with the drift and the
    # local diffusion, so they enter the monotonicity check together
    nn = {}
    for k, w in zip(st.offsets, st.weights):
        if np.abs(k).sum() == 1:
            nn[tuple(k)] = w
    n_upwind = 0
    for a in range(d):
        ep, em = _unit(d, a, 1), _unit(d, a, -1)
        base = local + nn[tuple(ep)]
        plus, minus, up = _drift_pair(np.full(grid.n, base), c[:, a], h)
        n_upwind += int(up.sum())
        asm.add(ep, plus)
        asm.add(em, minus)
    lattice_extent = np.array(grid.shape)
    for k, w in zip(st.offsets, st.weights):
        if np.abs(k).sum() == 1:
            continue
        if np.any(np.abs(k) >= lattice_extent):
            # lands outside the box from every node
            asm.extra_killing += w
            continue
        asm.add(k, w)
    asm.extra_killing += st.tail_mass
    meta = {"process": process.to_dict(), "upwind_entries": n_upwind,
            "local_diffusion": st.local_diffusion, "tail_mass": st.tail_mass,
            "stencil_size": int(st.weights.size)}
    return asm.build(meta)


def build_generator(process, grid: GridSpec, domain: DomainSpec | None = None,
                    truncation_radius: float | None = None) -> GridOperator:
    """Discretise the killed generator of ``process`` on ``grid``.

    ``domain`` defaults to the grid's own domain; when given it must match.
    """
    if domain is not None and domain != grid.domain:
        raise ValueError("grid was built on a different domain")
    if grid.n == 0:
        raise EmptyInterior("no interior nodes")
    if isinstance(process, OverdampedLangevin):
        if process.dim != grid.dim:
            raise ValueError("process and grid dimensions differ")
        return _overdamped(process, grid)
    if isinstance(process, KineticLangevin):
        return _kinetic(process, grid)
    if isinstance(process, StableSDE):
        if process.dim != grid.dim:
            raise ValueError("process and grid dimensions differ")
        return _stable(process, grid, truncation_radius)
    raise TypeError(f"unsupported process {type(process).__name__}")
