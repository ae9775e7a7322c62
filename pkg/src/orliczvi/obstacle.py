"""Two- and one-obstacle solvers and the order-structure verifiers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .assembly import DiscreteOperator, apply_A_extended
from .descent import projected_descent
from .mesh import Field, sup_norm


class InfeasibleProblemError(ValueError):
    """The constraint set is empty (or not admissible) at some node."""


def _vals(u, grid, fill):
    if u is None:
        return np.full(grid.size, fill)
    return u.values if isinstance(u, Field) else np.asarray(u, dtype=float)


@dataclass(eq=False)
class ObstacleProblem:
    """Force ``f`` with lower obstacle ``psi`` and upper obstacle ``phi``.

    A missing obstacle, or an infinite entry, means no constraint at that
    node on that side.
    """

    f: Field
    psi: Field | None = None
    phi: Field | None = None

    def __post_init__(self):
        grid = self.f.grid
        if self.psi is None:
            self.psi = Field.constant(grid, -np.inf)
        if self.phi is None:
            self.phi = Field.constant(grid, np.inf)
        for name, fld in (("psi", self.psi), ("phi", self.phi)):
            if not fld.grid.same_as(grid):
                raise ValueError(f"{name} lives on a different grid than f")
            if np.any(np.isnan(fld.values)):
                raise ValueError(f"{name} contains NaN")
        if not np.all(np.isfinite(self.f.values)):
            raise ValueError("f must be finite")
        psi, phi = self.psi.values, self.phi.values
        if np.any(psi == np.inf) or np.any(phi == -np.inf):
            raise InfeasibleProblemError("psi = +inf or phi = -inf leaves no admissible value")
        crossing = np.flatnonzero(psi > phi)
        if crossing.size:
            k = int(crossing[0])
            raise InfeasibleProblemError(
                f"psi > phi at node {k} (x={tuple(grid.coords[k].tolist())}): {psi[k]} > {phi[k]}"
            )
        bnd = grid.boundary_mask
        bad = np.flatnonzero(bnd & ((psi > 0) | (phi < 0)))
        if bad.size:
            k = int(bad[0])
            raise InfeasibleProblemError(
                f"boundary node {k} (x={tuple(grid.coords[k].tolist())}) needs psi <= 0 <= phi, "
                f"got psi={psi[k]}, phi={phi[k]}"
            )

    @property
    def grid(self):
        return self.f.grid

    def bounds_interior(self):
        idx = self.grid.interior
        return self.psi.values[idx], self.phi.values[idx]


def project_box(u, prob: ObstacleProblem) -> Field:
    """Nodewise median of ``psi``, ``u`` and ``phi``."""
    psi, phi = prob.psi.values, prob.phi.values
    if np.any(psi > phi):
        k = int(np.flatnonzero(psi > phi)[0])
        raise InfeasibleProblemError(f"psi > phi at node {k}")
    vals = _vals(u, prob.grid, 0.0)
    return Field(prob.grid, np.minimum(np.maximum(vals, psi), phi))


def _box_projector(lo, hi):
    def project(x):
        return np.minimum(np.maximum(x, lo), hi)

    return project


def solve_two_obstacle(op: DiscreteOperator, prob: ObstacleProblem, tol=1e-8, max_iter=200_000,
                       u0=None, record_energy=False):
    """Minimize ``F_h`` over ``{psi <= u <= phi, u = 0 on the boundary}``."""
    if not prob.grid.same_as(op.grid):
        raise ValueError("problem and operator grids differ")
    lo, hi = prob.bounds_interior()
    idx = op.interior
    x0 = np.zeros(idx.size) if u0 is None else _vals(u0, op.grid, 0.0)[idx]
    x, report = projected_descent(
        op.objective(prob.f.values[idx]), x0, op.m_int, _box_projector(lo, hi),
        tol, max_iter, record_energy, op.scheme,
    )
    return Field(op.grid, op.embed(x)), report


def solve_one_obstacle(op: DiscreteOperator, f: Field, obstacle: Field, side="lower", tol=1e-8,
                       max_iter=200_000, u0=None, record_energy=False):
    if side == "lower":
        prob = ObstacleProblem(f, psi=obstacle)
    elif side == "upper":
        prob = ObstacleProblem(f, phi=obstacle)
    else:
        raise ValueError(f"side must be 'lower' or 'upper', got {side!r}")
    return solve_two_obstacle(op, prob, tol, max_iter, u0, record_energy)


@dataclass
class LSReport:
    lower_violation: float
    upper_violation: float
    tol: float
    passed: bool
    worst_lower_node: int = -1
    worst_upper_node: int = -1

    def to_dict(self):
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def verify_lewy_stampacchia(op: DiscreteOperator, u, prob: ObstacleProblem, tol=1e-8) -> LSReport:
    """Check ``min(f, A_h phi) <= A_h u <= max(f, A_h psi)`` at interior nodes."""
    idx = op.interior
    Au = op.density(_vals(u, op.grid, 0.0))
    f = prob.f.values[idx]
    with np.errstate(invalid="ignore"):
        A_phi = apply_A_extended(op, prob.phi)
        A_psi = apply_A_extended(op, prob.psi)
    low = np.maximum(np.minimum(f, A_phi) - Au, 0.0)
    up = np.maximum(Au - np.maximum(f, A_psi), 0.0)
    lv = float(low.max()) if low.size else 0.0
    uv = float(up.max()) if up.size else 0.0
    return LSReport(
        lower_violation=lv,
        upper_violation=uv,
        tol=tol,
        passed=bool(lv <= tol and uv <= tol),
        worst_lower_node=int(idx[np.argmax(low)]) if low.size else -1,
        worst_upper_node=int(idx[np.argmax(up)]) if up.size else -1,
    )


@dataclass
class ComparisonReport:
    max_violation: float
    tol: float
    passed: bool
    details: dict = field(default_factory=dict)
    u: Field | None = field(default=None, repr=False)
    u_hat: Field | None = field(default=None, repr=False)

    def to_dict(self):
        return {"max_violation": self.max_violation, "tol": self.tol, "pass": self.passed,
                **self.details}


def _as_problem(data):
    if isinstance(data, ObstacleProblem):
        return data
    f, psi, phi = data
    return ObstacleProblem(f, psi, phi)


def verify_comparison(op: DiscreteOperator, data, data_hat, tol=1e-6, solver_tol=None,
                      max_iter=200_000) -> ComparisonReport:
    """Solve both problems and check ``u >= u_hat - tol`` nodewise.

    Requires ``f >= f_hat``, ``psi >= psi_hat`` and ``phi >= phi_hat``.
    """
    prob, prob_hat = _as_problem(data), _as_problem(data_hat)
    for name in ("f", "psi", "phi"):
        a, b = getattr(prob, name).values, getattr(prob_hat, name).values
        if np.any(a < b):
            raise ValueError(f"comparison needs {name} >= {name}_hat nodewise")
    solver_tol = tol / 100 if solver_tol is None else solver_tol
    u, rep = solve_two_obstacle(op, prob, solver_tol, max_iter)
    u_hat, rep_hat = solve_two_obstacle(op, prob_hat, solver_tol, max_iter)
    viol = float(np.max(u_hat.values - u.values))
    viol = max(viol, 0.0)
    return ComparisonReport(
        max_violation=viol, tol=tol,
        passed=bool(viol <= tol and rep.converged and rep_hat.converged),
        details={"converged": [rep.converged, rep_hat.converged]}, u=u, u_hat=u_hat,
    )


def _obstacle_gap(a: Field, b: Field) -> float:
    x, y = a.values, b.values
    same = x == y  # also covers matching infinities
    with np.errstate(invalid="ignore"):
        diff = np.where(same, 0.0, np.abs(x - y))
    return float(np.max(diff)) if diff.size else 0.0


def verify_linf_dependence(op: DiscreteOperator, prob: ObstacleProblem, prob_hat: ObstacleProblem,
                           tol=1e-6, solver_tol=None, max_iter=200_000) -> ComparisonReport:
    """Check ``‖u - u_hat‖_∞ <= max(‖phi - phi_hat‖_∞, ‖psi - psi_hat‖_∞) + tol``."""
    if np.any(prob.f.values != prob_hat.f.values):
        raise ValueError("L-infinity dependence compares problems with the same f")
    solver_tol = tol / 100 if solver_tol is None else solver_tol
    u, rep = solve_two_obstacle(op, prob, solver_tol, max_iter)
    u_hat, rep_hat = solve_two_obstacle(op, prob_hat, solver_tol, max_iter)
    bound = max(_obstacle_gap(prob.phi, prob_hat.phi), _obstacle_gap(prob.psi, prob_hat.psi))
    gap = sup_norm(u - u_hat)
    return ComparisonReport(
        max_violation=max(gap - bound, 0.0), tol=tol,
        passed=bool(gap <= bound + tol and rep.converged and rep_hat.converged),
        details={"gap": gap, "bound": bound, "converged": [rep.converged, rep_hat.converged]},
        u=u, u_hat=u_hat,
    )

