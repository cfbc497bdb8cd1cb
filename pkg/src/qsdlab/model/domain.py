"""Domains, simulation boxes and node lattices."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from qsdlab.errors import EmptyInterior
from qsdlab.model.fields import ScalarField


@dataclass(frozen=True)
class DomainSpec:
    """Open set D = (open box) ∩ {mask > 0}.

    ``bounds`` is the simulation box, one ``(lo, hi)`` pair per axis.  The
    optional ``mask`` is an expression in the coordinates; D is where it is
    strictly positive.  Without a mask D is the open box itself.
    """

    bounds: tuple[tuple[float, float], ...]
    mask: str | None = None

    def __post_init__(self):
        b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if not b:
            raise ValueError("domain needs at least one axis")
        for lo, hi in b:
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
                raise ValueError(f"bad axis bounds ({lo}, {hi})")
        object.__setattr__(self, "bounds", b)
        if self.mask is not None:
            _ = self.mask_field

    @property
    def ambient_dim(self) -> int:
        return len(self.bounds)

    @cached_property
    def mask_field(self) -> ScalarField | None:
        return None if self.mask is None else ScalarField(self.mask, self.ambient_dim)

    @property
    def lo(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds])

    @property
    def hi(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds])

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.ambient_dim)
        inside = np.all((pts > self.lo) & (pts < self.hi), axis=1)
        if self.mask_field is not None:
            inside &= self.mask_field(pts) > 0
        return inside

    def to_dict(self) -> dict:
        d = {"bounds": [list(b) for b in self.bounds]}
        if self.mask is not None:
            d["mask"] = self.mask
        return d


@dataclass(frozen=True)
class GridSpec:
    """Node lattice x_k = lo + k h (k = 0..N) over the simulation box.

    Nodes on the box faces, and nodes where the mask is not positive, are
    exterior.  ``interior_index`` maps the flat lattice index to a dense index
    0..n-1 on interior nodes, -1 elsewhere.
    """

    domain: DomainSpec
    counts: tuple[int, ...]
    spacing: np.ndarray = field(init=False)
    interior_index: np.ndarray = field(init=False, repr=False)
    interior_flat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) != self.domain.ambient_dim or min(counts) < 1:
            raise ValueError("one positive interval count per axis required")
        object.__setattr__(self, "counts", counts)
        h = (self.domain.hi - self.domain.lo) / np.array(counts)
        h.setflags(write=False)
        object.__setattr__(self, "spacing", h)
        pts = self.all_nodes
        inside = self.domain.contains(pts)
        idx = np.full(pts.shape[0], -1, dtype=np.int64)
        flat = np.flatnonzero(inside)
        if flat.size == 0:
            raise EmptyInterior("no interior grid node lies inside the domain")
        idx[flat] = np.arange(flat.size)
        idx.setflags(write=False)
        flat.setflags(write=False)
        object.__setattr__(self, "interior_index", idx)
        object.__setattr__(self, "interior_flat", flat)

    @classmethod
    def from_spacing(cls, domain: DomainSpec, h) -> "GridSpec":
        h = np.broadcast_to(np.asarray(h, dtype=float), (domain.ambient_dim,))
        if np.any(h <= 0):
            raise ValueError("spacing must be positive")
        counts = np.rint((domain.hi - domain.lo) / h).astype(int)
        return cls(domain, tuple(np.maximum(counts, 1)))

    @property
    def dim(self) -> int:
        return self.domain.ambient_dim

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c + 1 for c in self.counts)

    @property
    def n(self) -> int:
        return int(self.interior_flat.size)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis_nodes(self, axis: int) -> np.ndarray:
        return self.domain.lo[axis] + self.spacing[axis] * np.arange(self.counts[axis] + 1)

    @cached_property
    def all_nodes(self) -> np.ndarray:
        axes = [self.axis_nodes(a) for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    @cached_property
    def nodes(self) -> np.ndarray:
        """Coordinates of the interior nodes, shape (n, dim)."""
        return self.all_nodes[self.interior_flat]

    @cached_property
    def multi_index(self) -> np.ndarray:
        """Lattice multi-index of every interior node, shape (n, dim)."""
        return np.stack(np.unravel_index(self.interior_flat, self.shape), axis=1)

    def flat_of(self, multi: np.ndarray) -> np.ndarray:
        """Flat lattice index for multi-indices; -1 when outside the lattice."""
        multi = np.asarray(multi)
        ok = np.all((multi >= 0) & (multi < np.array(self.shape)), axis=-1)
        flat = np.ravel_multi_index(tuple(np.where(ok, multi.T, 0)), self.shape)
        return np.where(ok, flat, -1)

    def dense_of(self, multi: np.ndarray) -> np.ndarray:
        """Dense interior index for multi-indices; -1 when exterior."""
        flat = self.flat_of(multi)
        return np.where(flat >= 0, self.interior_index[np.maximum(flat, 0)], -1)

    def boundary_layer(self, width: int = 1) -> np.ndarray:
        """Boolean mask of interior nodes within ``width`` lattice steps of the exterior."""
        out = np.zeros(self.n, dtype=bool)
        m = self.multi_index
        for a in range(self.dim):
            for s in range(1, width + 1):
                for sgn in (-1, 1):
                    shifted = m.copy()
                    shifted[:, a] += sgn * s
                    out |= self.dense_of(shifted) < 0
        return out

    def complement_nonempty(self) -> bool:
        """True when the lattice has at least one exterior node (box faces count)."""
        return self.n < self.all_nodes.shape[0]

    def density(self, masses: np.ndarray) -> np.ndarray:
        return np.asarray(masses, dtype=float) / self.cell_volume
