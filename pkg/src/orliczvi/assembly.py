"""Discrete energies, residuals and the unconstrained equation solve.

Both schemes share one representation: a list of quadrature elements, each
with a weight, a quadrature point and ``k`` sparse rows that map nodal
values to gradient components.  The ``edge`` scheme has one component per
grid edge, ``(u_j - u_i) / h_e``; the ``p1`` scheme has ``dim`` components
per simplex.  The energy is ``Σ_e w_e G(x_e, |∇u|_e)`` and the operator
``A_h`` is its exact gradient divided by the lumped masses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .descent import projected_descent
from .mesh import Field, StructuredGrid, edge_list, lumped_masses, p1_triangles
from .young import T_SAFEGUARD, StructuralFunction, StructureEvaluationError, YoungFunction

SCHEMES = ("edge", "p1")


class NonFiniteEnergyError(ArithmeticError):
    pass


@dataclass(eq=False)
class DualField:
    """Nodal densities of a functional, on interior nodes only."""

    grid: StructuredGrid
    values: np.ndarray

    def full(self, fill=0.0) -> np.ndarray:
        out = np.full(self.grid.size, fill)
        out[self.grid.interior] = self.values
        return out


class DiscreteOperator:
    """Quasi-linear operator ``-div(a(x, |∇u|) ∇u)`` on a structured grid."""

    def __init__(self, grid: StructuredGrid, yf, scheme: str = "edge"):
        if isinstance(yf, StructuralFunction):
            yf = YoungFunction(yf)
        if scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
        self.grid, self.yf, self.scheme = grid, yf, scheme
        self.masses = lumped_masses(grid)
        self.interior = grid.interior
        self.m_int = self.masses[self.interior]
        size = grid.size
        if scheme == "edge":
            edges = edge_list(grid)
            rows = np.arange(len(edges))
            data = np.concatenate([-1.0 / edges.length, 1.0 / edges.length])
            D = sp.csr_matrix(
                (data, (np.concatenate([rows, rows]), np.concatenate([edges.tail, edges.head]))),
                shape=(len(edges), size),
            )
            self.components = [D]
            self.weights = edges.weight
            self.points = edges.midpoint
        else:
            els = p1_triangles(grid)
            E, nv = els.vertices.shape
            rows = np.repeat(np.arange(E), nv)
            cols = els.vertices.ravel()
            self.components = [
                sp.csr_matrix((els.grad_maps[:, k, :].ravel(), (rows, cols)), shape=(E, size))
                for k in range(grid.dim)
            ]
            self.weights = els.area
            self.points = els.barycenter
        self.params = yf.base.resolve(self.points) if yf.base.is_variable else yf.base.resolve(None)
        self._closed = yf.base.has_closed_form_G and not yf.force_quadrature
        pattern = sum(abs(D).T @ abs(D) for D in self.components)
        self.adjacency = (pattern != 0).astype(np.int8).tocsr()

    def __repr__(self):
        return f"DiscreteOperator(n={self.grid.n}, scheme={self.scheme!r}, a={self.yf.base!r})"

    # -- nodal-array kernels (full node vectors) ------------------------------

    def _gradients(self, u):
        comps = [D @ u for D in self.components]
        if len(comps) == 1:
            t = np.abs(comps[0])
        else:
            t = np.sqrt(sum(c * c for c in comps))
        return comps, t

    def _G(self, t):
        if self._closed:
            return self.yf.G(self.points, t, self.params)
        return self.yf.G(self.points, t)

    def J(self, u) -> float:
        _, t = self._gradients(u)
        try:
            vals = self.weights * self._G(t)
        except StructureEvaluationError:
            vals = np.array([self._G_or_inf(t, e) for e in range(t.size)]) * self.weights
        total = float(np.sum(vals))
        if not np.isfinite(total):
            bad = int(np.flatnonzero(~np.isfinite(vals))[0])
            raise NonFiniteEnergyError(f"non-finite energy on element {bad} at {self.points[bad]}")
        return total

    def _G_or_inf(self, t, e):
        try:
            pts = self.points[e:e + 1]
            params = {k: (v[e:e + 1] if np.ndim(v) else v) for k, v in self.params.items()}
            if self._closed:
                return float(self.yf.G(pts, t[e:e + 1], params)[0])
            return float(self.yf.G(pts, t[e:e + 1])[0])
        except StructureEvaluationError:
            return np.inf

    def grad_J(self, u) -> np.ndarray:
        """Raw gradient of ``J`` with respect to all nodal values."""
        comps, t = self._gradients(u)
        coef = self.weights * self.yf.base.a(None, np.maximum(t, T_SAFEGUARD), self.params)
        out = sum(D.T @ (coef * c) for D, c in zip(self.components, comps))
        if not np.all(np.isfinite(out)):
            bad = int(np.flatnonzero(~np.isfinite(out))[0])
            raise NonFiniteEnergyError(f"non-finite operator value at node {bad}")
        return out

    def J_and_grad(self, u):
        comps, t = self._gradients(u)
        G = self._G(t)
        total = float(np.dot(self.weights, G))
        coef = self.weights * self.yf.base.a(None, np.maximum(t, T_SAFEGUARD), self.params)
        grad = sum(D.T @ (coef * c) for D, c in zip(self.components, comps))
        return total, grad

    def embed(self, x) -> np.ndarray:
        """Interior vector -> full nodal vector with zero boundary values."""
        u = np.zeros(x.shape[:-1] + (self.grid.size,))
        u[..., self.interior] = x
        return u

    def density(self, u) -> np.ndarray:
        """``(A_h u)_i`` at interior nodes for a full nodal vector ``u``."""
        return self.grad_J(u)[self.interior] / self.m_int

    def objective(self, f_int):
        """``x -> (F_h, ∇F_h)`` on interior vectors, for the descent solver."""
        interior, m_int = self.interior, self.m_int
        fm = m_int * f_int

        def fun(x):
            u = np.zeros(self.grid.size)
            u[interior] = x
            J, g = self.J_and_grad(u)
            return J - float(np.dot(fm, x)), g[interior] - fm

        return fun


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, Field) else np.asarray(u, dtype=float)


def _check_homogeneous(op: DiscreteOperator, u):
    vals = _values(u)
    if np.any(vals[op.grid.boundary_mask] != 0):
        raise ValueError("field must vanish on the boundary (homogeneous Dirichlet space)")
    return vals


def energy(op: DiscreteOperator, u, f) -> float:
    """``F_h(u) = J_h(u) - Σ_i m_i f_i u_i``."""
    vals = _check_homogeneous(op, u)
    return op.J(vals) - float(np.sum(op.masses * _values(f) * vals))


def residual(op: DiscreteOperator, u, f) -> DualField:
    """Nodal density of ``∇F_h(u)``, i.e. ``A_h u - f`` at interior nodes."""
    vals = _check_homogeneous(op, u)
    return DualField(op.grid, op.density(vals) - _values(f)[op.interior])


def apply_A(op: DiscreteOperator, u) -> DualField:
    """``A_h u`` as interior densities.  ``u`` need not vanish on the boundary."""
    return DualField(op.grid, op.density(_values(u)))


def apply_A_extended(op: DiscreteOperator, u) -> np.ndarray:
    """``A_h u`` for fields that may carry ``±inf`` obstacle markers.

    At a node whose own value is infinite the density takes that sign of
    infinity; at a finite node with an infinite stencil neighbour it takes
    the opposite sign (the difference quotient blows up).  Other nodes get
    the ordinary finite value, computed with infinite entries zeroed out of
    reach.
    """
    vals = _values(u)
    inf = ~np.isfinite(vals)
    if not np.any(inf):
        return op.density(vals)
    if np.any(np.isnan(vals)):
        raise ValueError("field contains NaN")
    finite_vals = np.where(inf, 0.0, vals)
    out = op.grad_J(finite_vals) / op.masses
    near = ((op.adjacency @ inf.astype(np.int8)) > 0) & ~inf
    sign_nb = op.adjacency @ np.where(inf, np.sign(vals), 0.0)
    out[near] = -np.sign(sign_nb[near]) * np.inf
    out[inf] = vals[inf]
    return out[op.interior]


def solve_equation(op: DiscreteOperator, f, tol=1e-8, max_iter=200_000, u0=None,
                   record_energy=False):
    """Unconstrained minimizer of ``F_h``, i.e. the solution of ``A_h u = f``."""
    f_vals = _values(f)
    if not np.all(np.isfinite(f_vals)):
        raise ValueError("right-hand side must be finite")
    x0 = np.zeros(op.interior.size) if u0 is None else _values(u0)[op.interior]
    x, report = projected_descent(
        op.objective(f_vals[op.interior]), x0, op.m_int, None, tol, max_iter,
        record_energy, op.scheme,
    )
    return Field(op.grid, op.embed(x)), report
