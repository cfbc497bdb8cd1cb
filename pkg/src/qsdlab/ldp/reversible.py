"""Reversible overdamped case: Dirichlet form, Dirichlet eigenvalue and closed-form rate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from qsdlab.errors import NotAbsolutelyContinuous
from qsdlab.model.domain import GridSpec
from qsdlab.model.generator import GridOperator, build_generator
from qsdlab.model.process import OverdampedLangevin

DENSE_EIG_MAX = 4000


@dataclass(frozen=True)
class DirichletFormContext:
    """Gibbs weights π ∝ exp(−2U) on interior nodes and the π-symmetric killed generator."""

    op: GridOperator
    pi: np.ndarray

    @classmethod
    def from_process(cls, process: OverdampedLangevin, grid: GridSpec) -> "DirichletFormContext":
        if process.potential is None:
            raise ValueError("the reversible context needs a potential")
        if process.scheme != "symmetric":
            process = OverdampedLangevin(potential=process.potential, scheme="symmetric")
        op = build_generator(process, grid)
        u = process.potential(grid.nodes)
        w = np.exp(-2.0 * (u - u.min()))
        return cls(op, w / w.sum())

    def balance_defect(self) -> float:
        """max |π_i L_ij − π_j L_ji| / max |π_i L_ij| over stored entries."""
        F = sps.diags(self.pi) @ self.op.matrix
        D = abs(F - F.T)
        return float(D.max()) / float(abs(F).max())

    @property
    def flux(self) -> sps.csr_matrix:
        """Symmetrised edge weights π_i L_ij (off-diagonal only)."""
        F = sps.diags(self.pi) @ self.op.matrix
        F = F - sps.diags(F.diagonal())
        return ((F + F.T) * 0.5).tocsr()

    @property
    def killing(self) -> np.ndarray:
        return self.op.killing_rate

    def form_apply(self, f) -> float:
        """E(f, f) = ½ Σ_ij π_i L_ij (f_i − f_j)² + Σ_i π_i κ_i f_i², with f = 0 off D."""
        f = np.asarray(f, dtype=float)
        W = self.flux.tocoo()
        edge = 0.5 * float(np.sum(W.data * (f[W.row] - f[W.col]) ** 2))
        return edge + float(np.sum(self.pi * self.killing * f * f))

    def symmetric_matrix(self) -> sps.csr_matrix:
        """π^{1/2} L π^{-1/2}, symmetrised; its spectrum is that of L."""
        s = np.sqrt(self.pi)
        S = sps.diags(s) @ self.op.matrix @ sps.diags(1.0 / s)
        return ((S + S.T) * 0.5).tocsr()


def dirichlet_eigenvalue(ctx: DirichletFormContext) -> float:
    """λ_D = min E(f, f) / Σ π f² over f vanishing off D."""
    S = ctx.symmetric_matrix()
    n = S.shape[0]
    if n <= DENSE_EIG_MAX:
        w = sla.eigh(-S.toarray(), eigvals_only=True, subset_by_index=[0, 0])
        return float(w[0])
    w = spla.eigsh(-S, k=1, which="SA", tol=1e-14, return_eigenvectors=False, maxiter=100 * n)
    return float(w[0])


def reversible_rate(beta, ctx: DirichletFormContext, *, strict: bool = False) -> float:
    """E(√h, √h) − λ_D with h = β/π; +∞ when β is not absolutely continuous w.r.t. π on D.

    ``beta`` is indexed by interior nodes or by all lattice nodes of the
    grid; mass on a non-interior node means β charges the complement of D.
    """
    b = np.asarray(getattr(beta, "bin_masses", beta), dtype=float).reshape(-1)
    grid = ctx.op.grid
    if b.size == grid.all_nodes.shape[0] and b.size != grid.n:
        outside = np.ones(b.size, dtype=bool)
        outside[grid.interior_flat] = False
        if np.any(b[outside] > 0):
            if strict:
                raise NotAbsolutelyContinuous("beta charges nodes outside D")
            return math.inf
        b = b[grid.interior_flat]
    if b.size != grid.n:
        raise ValueError("beta does not match the grid")
    if np.any(b < 0):
        raise ValueError("beta must be nonnegative")
    if np.any((ctx.pi <= 0) & (b > 0)):
        if strict:
            raise NotAbsolutelyContinuous("beta charges cells where pi vanishes")
        return math.inf
    b = b / b.sum()
    h = np.where(ctx.pi > 0, b / np.where(ctx.pi > 0, ctx.pi, 1.0), 0.0)
    return ctx.form_apply(np.sqrt(h)) - dirichlet_eigenvalue(ctx)
