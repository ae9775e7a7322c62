"""Structured grids, nodal fields and lattice algebra.

Nodes are numbered row-major with x varying fastest, so in 2D the node at
column ``i`` and row ``j`` has index ``j * nx + i``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator


class GridMismatchError(ValueError):
    """Two fields living on different grids were combined."""


@dataclass(frozen=True, eq=False)
class StructuredGrid:
    """Uniform tensor grid on an interval or a rectangle."""

    dim: int
    extents: tuple[tuple[float, float], ...]
    n: tuple[int, ...]
    h: tuple[float, ...] = field(init=False)
    coords: np.ndarray = field(init=False, repr=False)
    boundary_mask: np.ndarray = field(init=False, repr=False)
    interior: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if len(self.extents) != self.dim or len(self.n) != self.dim:
            raise ValueError("extents and n must have one entry per axis")
        for (lo, hi), m in zip(self.extents, self.n):
            if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
                raise ValueError(f"degenerate extent ({lo}, {hi})")
            if m < 3:
                raise ValueError(f"need at least 3 nodes per axis, got {m}")
        h = tuple((hi - lo) / (m - 1) for (lo, hi), m in zip(self.extents, self.n))
        axes = [np.linspace(lo, hi, m) for (lo, hi), m in zip(self.extents, self.n)]
        if self.dim == 1:
            coords = axes[0][:, None]
            mask = np.zeros(self.n[0], dtype=bool)
            mask[[0, -1]] = True
        else:
            xx, yy = np.meshgrid(axes[0], axes[1], indexing="xy")
            coords = np.column_stack([xx.ravel(), yy.ravel()])
            ix, iy = np.meshgrid(np.arange(self.n[0]), np.arange(self.n[1]), indexing="xy")
            mask = ((ix == 0) | (ix == self.n[0] - 1) | (iy == 0) | (iy == self.n[1] - 1)).ravel()
        coords.setflags(write=False)
        mask.setflags(write=False)
        interior = np.flatnonzero(~mask)
        interior.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "boundary_mask", mask)
        object.__setattr__(self, "interior", interior)

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, m) for (lo, hi), m in zip(self.extents, self.n)]

    @property
    def measure(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.extents]))

    def node(self, *index: int) -> int:
        """Flat index of the node with per-axis ``index``."""
        if self.dim == 1:
            return index[0]
        i, j = index
        return j * self.n[0] + i

    def same_as(self, other: "StructuredGrid") -> bool:
        return self is other or (
            self.dim == other.dim and self.extents == other.extents and self.n == other.n
        )

    def to_dict(self) -> dict:
        return {"dim": self.dim, "extents": [list(e) for e in self.extents], "n": list(self.n)}


def build_grid(dim: int, extents, n) -> StructuredGrid:
    """Build a uniform grid.

    ``extents`` is ``(x0, x1)`` in 1D or ``((x0, x1), (y0, y1))`` in 2D; ``n``
    may be a single node count shared by all axes.
    """
    if dim == 1 and len(extents) == 2 and np.isscalar(extents[0]):
        extents = (extents,)
    extents = tuple((float(lo), float(hi)) for lo, hi in extents)
    if np.isscalar(n):
        n = (int(n),) * dim
    return StructuredGrid(dim, extents, tuple(int(m) for m in n))


@dataclass(eq=False)
class Field:
    """Real nodal values on a grid. Values may hold ``±inf`` obstacle markers."""

    grid: StructuredGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float).reshape(-1)
        if self.values.size != self.grid.size:
            raise ValueError(
                f"field has {self.values.size} values, grid has {self.grid.size} nodes"
            )

    @classmethod
    def zeros(cls, grid: StructuredGrid) -> "Field":
        return cls(grid, np.zeros(grid.size))

    @classmethod
    def constant(cls, grid: StructuredGrid, c: float) -> "Field":
        return cls(grid, np.full(grid.size, float(c)))

    @classmethod
    def from_function(cls, grid: StructuredGrid, fn) -> "Field":
        return cls(grid, fn(*grid.coords.T))

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def _other(self, other) -> np.ndarray:
        if isinstance(other, Field):
            if not self.grid.same_as(other.grid):
                raise GridMismatchError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return Field(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)

    def in_homogeneous_space(self) -> bool:
        """True when the field vanishes on every boundary node."""
        return bool(np.all(self.values[self.grid.boundary_mask] == 0.0))

    def interpolate(self, points: np.ndarray) -> np.ndarray:
        """(Bi)linear interpolation of the nodal values at ``points`` (m, dim)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.grid.dim == 1:
            return np.interp(points[:, 0], self.grid.axes[0], self.values)
        nx, ny = self.grid.n
        table = self.values.reshape(ny, nx).T
        interp = RegularGridInterpolator(tuple(self.grid.axes), table, method="linear")
        return interp(points)


def _pair(u: Field, v: Field) -> tuple[np.ndarray, np.ndarray]:
    if not u.grid.same_as(v.grid):
        raise GridMismatchError("lattice operations need fields on the same grid")
    return u.values, v.values


def lattice_ops(u: Field, v: Field) -> tuple[Field, Field, Field, Field]:
    """Return ``(u ∨ v, u ∧ v, u⁺, u⁻)`` computed nodewise."""
    a, b = _pair(u, v)
    return (
        Field(u.grid, np.maximum(a, b)),
        Field(u.grid, np.minimum(a, b)),
        Field(u.grid, np.maximum(a, 0.0)),
        Field(u.grid, np.maximum(-a, 0.0)),
    )


def sup_norm(u) -> float:
    vals = u.values if isinstance(u, Field) else np.asarray(u)
    return float(np.max(np.abs(vals))) if vals.size else 0.0


def lumped_masses(grid: StructuredGrid) -> np.ndarray:
    """Trapezoidal nodal weights; they sum to the domain measure."""
    per_axis = []
    for m, h in zip(grid.n, grid.h):
        w = np.full(m, h)
        w[[0, -1]] = h / 2
        per_axis.append(w)
    if grid.dim == 1:
        return per_axis[0]
    return np.outer(per_axis[1], per_axis[0]).ravel()


def exact_mass_total(grid: StructuredGrid) -> Fraction:
    """Sum of lumped masses in rational arithmetic, for exactness checks."""
    total = Fraction(1)
    for (lo, hi), m in zip(grid.extents, grid.n):
        h = (Fraction(hi) - Fraction(lo)) / (m - 1)
        total *= h * (m - 1)
    return total


@dataclass(frozen=True, eq=False)
class EdgeSet:
    tail: np.ndarray
    head: np.ndarray
    length: np.ndarray
    weight: np.ndarray
    midpoint: np.ndarray

    def __len__(self):
        return self.tail.size


def edge_list(grid: StructuredGrid) -> EdgeSet:
    """Axis-aligned grid edges.

    Weights are ``h`` in 1D and ``hx * hy`` in 2D, so that for a quadratic
    density the edge energy reproduces the 3- and 5-point Laplacians.
    """
    if grid.dim == 1:
        (m,), (h,) = grid.n, grid.h
        tail = np.arange(m - 1)
        head = tail + 1
        length = np.full(m - 1, h)
        weight = np.full(m - 1, h)
    else:
        nx, ny = grid.n
        hx, hy = grid.h
        idx = np.arange(grid.size).reshape(ny, nx)
        tx, hx_ = idx[:, :-1].ravel(), idx[:, 1:].ravel()
        ty, hy_ = idx[:-1, :].ravel(), idx[1:, :].ravel()
        tail = np.concatenate([tx, ty])
        head = np.concatenate([hx_, hy_])
        length = np.concatenate([np.full(tx.size, hx), np.full(ty.size, hy)])
        weight = np.full(tail.size, hx * hy)
    midpoint = 0.5 * (grid.coords[tail] + grid.coords[head])
    return EdgeSet(tail, head, length, weight, midpoint)


@dataclass(frozen=True, eq=False)
class ElementSet:
    """P1 elements: vertices (E, dim+1), areas, barycenters, gradient maps.

    ``grad_maps[e]`` is a (dim, dim+1) matrix sending the vertex values of
    element ``e`` to its constant gradient.
    """

    vertices: np.ndarray
    area: np.ndarray
    barycenter: np.ndarray
    grad_maps: np.ndarray

    def __len__(self):
        return self.area.size


def p1_triangles(grid: StructuredGrid) -> ElementSet:
    """Split every cell along the same diagonal into two right triangles.

    In 1D the elements are the grid intervals.
    """
    if grid.dim == 1:
        (m,), (h,) = grid.n, grid.h
        verts = np.column_stack([np.arange(m - 1), np.arange(1, m)])
        maps = np.tile(np.array([[[-1.0 / h, 1.0 / h]]]), (m - 1, 1, 1))
        area = np.full(m - 1, h)
    else:
        nx, ny = grid.n
        hx, hy = grid.h
        idx = np.arange(grid.size).reshape(ny, nx)
        a = idx[:-1, :-1].ravel()  # (i, j)
        b = idx[:-1, 1:].ravel()  # (i+1, j)
        c = idx[1:, 1:].ravel()  # (i+1, j+1)
        d = idx[1:, :-1].ravel()  # (i, j+1)
        lower = np.column_stack([a, b, c])
        upper = np.column_stack([a, c, d])
        # lower: du/dx = (u_b - u_a)/hx, du/dy = (u_c - u_b)/hy
        m_lower = np.array([[-1 / hx, 1 / hx, 0.0], [0.0, -1 / hy, 1 / hy]])
        # upper: du/dx = (u_c - u_d)/hx, du/dy = (u_d - u_a)/hy
        m_upper = np.array([[0.0, 1 / hx, -1 / hx], [-1 / hy, 0.0, 1 / hy]])
        cells = a.size
        verts = np.empty((2 * cells, 3), dtype=int)
        verts[0::2], verts[1::2] = lower, upper
        maps = np.empty((2 * cells, 2, 3))
        maps[0::2], maps[1::2] = m_lower, m_upper
        area = np.full(2 * cells, 0.5 * hx * hy)
    bary = grid.coords[verts].mean(axis=1)
    return ElementSet(verts, area, bary, maps)


def write_field_csv(u: Field, path) -> None:
    """Write ``x[,y],value`` rows with 17 significant digits."""
    path = Path(path)
    names = ["x", "y"][: u.grid.dim] + ["value"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for xy, val in zip(u.grid.coords, u.values):
            w.writerow([f"{c:.17g}" for c in xy] + [f"{val:.17g}"])


def read_field_csv(path, grid: StructuredGrid) -> Field:
    """Read a field CSV written in node order and check it matches ``grid``."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty field file")
    header, body = rows[0], rows[1:]
    if header[-1].strip() != "value" or len(header) != grid.dim + 1:
        raise ValueError(f"{path}: expected header {'x,y,value' if grid.dim == 2 else 'x,value'}")
    if len(body) != grid.size:
        raise ValueError(f"{path}: {len(body)} rows for a grid of {grid.size} nodes")
    data = np.array([[float(c) for c in row] for row in body])
    if not np.allclose(data[:, :-1], grid.coords, rtol=0, atol=1e-9 * max(1.0, np.max(np.abs(grid.coords)))):
        raise ValueError(f"{path}: node coordinates do not match the grid")
    return Field(grid, data[:, -1])
