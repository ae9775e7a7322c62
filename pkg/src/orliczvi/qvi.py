"""Implicit two-obstacle quasi-variational system and its monotone iterations.

Each unknown ``u_i`` is confined between ``max_{j≠i}(u_j - psi_ij)`` and
``min_{j≠i}(u_j + phi_ij)``.  Starting from the solutions of ``A u = min_i f_i``
and ``A u = max_i f_i``, the map ``σ`` (solve the VI with obstacles frozen at the
previous iterate) produces an increasing and a decreasing sequence whose limits
are the minimal and maximal solutions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .assembly import DiscreteOperator, apply_A, solve_equation
from .mesh import Field, sup_norm
from .obstacle import InfeasibleProblemError, ObstacleProblem, solve_two_obstacle

log = logging.getLogger(__name__)


class IncompatibleConstantsError(ValueError):
    pass


@dataclass(eq=False)
class QviProblem:
    fs: list
    phi_ij: np.ndarray
    psi_ij: np.ndarray

    def __post_init__(self):
        self.fs = list(self.fs)
        N = len(self.fs)
        if N < 2:
            raise ValueError("the quasi-variational system needs N >= 2")
        self.phi_ij = _constants(self.phi_ij, N, "phi_ij")
        self.psi_ij = _constants(self.psi_ij, N, "psi_ij")
        grid = self.fs[0].grid
        if any(not f.grid.same_as(grid) for f in self.fs):
            raise ValueError("all forces must live on one grid")

    @property
    def N(self):
        return len(self.fs)

    @property
    def grid(self):
        return self.fs[0].grid


def _constants(c, N, name):
    c = np.array(c, dtype=float)
    if c.ndim == 0:
        c = np.full((N, N), float(c))
    if c.shape != (N, N):
        raise ValueError(f"{name} must be a scalar or an {N}x{N} matrix")
    off = ~np.eye(N, dtype=bool)
    if not np.all(c[off] > 0) or not np.all(np.isfinite(c[off])):
        raise ValueError(f"{name} must hold positive finite constants off the diagonal")
    np.fill_diagonal(c, np.nan)
    return c


def extremal_seeds(op: DiscreteOperator, fs, tol=1e-8, max_iter=200_000):
    """Solve ``A u = min_i f_i`` and ``A u = max_i f_i``; return ``(u_lo, u_hi, λ_0)``."""
    fs = list(fs.fs if isinstance(fs, QviProblem) else fs)
    F = np.stack([f.values for f in fs])
    mu, nu = Field(op.grid, F.min(axis=0)), Field(op.grid, F.max(axis=0))
    u_lo, rep_lo = solve_equation(op, mu, tol, max_iter)
    if np.array_equal(mu.values, nu.values):
        u_hi, rep_hi = u_lo.copy(), rep_lo
    else:
        u_hi, rep_hi = solve_equation(op, nu, tol, max_iter)
    for rep, name in ((rep_lo, "lower"), (rep_hi, "upper")):
        if not rep.converged:
            raise RuntimeError(f"{name} seed solve did not converge: {rep.message}")
    lam0 = float(u_hi.values.max() - u_lo.values.min())
    return u_lo, u_hi, lam0


def check_compatibility(prob: QviProblem, lam0: float) -> bool:
    """``phi_ij + psi_ik >= λ_0`` for all ``i`` and all ``j, k ≠ i``."""
    N = prob.N
    for i in range(N):
        others = [j for j in range(N) if j != i]
        if prob.phi_ij[i, others].min() + prob.psi_ij[i, others].min() < lam0:
            return False
    return True


def obstacles_from(v, prob: QviProblem):
    """``Ψ_i = max_{j≠i}(v_j - psi_ij)`` and ``Φ_i = min_{j≠i}(v_j + phi_ij)``."""
    V = np.stack([x.values for x in v])
    N = V.shape[0]
    if N < 2:
        raise ValueError("need N >= 2")
    grid = v[0].grid
    Psi, Phi = [], []
    for i in range(N):
        others = [j for j in range(N) if j != i]
        lo = np.max(V[others] - prob.psi_ij[i, others][:, None], axis=0)
        hi = np.min(V[others] + prob.phi_ij[i, others][:, None], axis=0)
        Psi.append(Field(grid, lo))
        Phi.append(Field(grid, hi))
    return Psi, Phi


def sigma_map(op: DiscreteOperator, prob: QviProblem, v, tol=1e-8, max_iter=200_000, warm=None):
    """Solve the N decoupled two-obstacle problems with obstacles built from ``v``."""
    Psi, Phi = obstacles_from(v, prob)
    idx = op.interior
    out = []
    for i in range(prob.N):
        lo, hi = Psi[i].values, Phi[i].values
        bad = idx[lo[idx] > hi[idx]]
        if bad.size:
            k = int(bad[0])
            raise InfeasibleProblemError(
                f"empty constraint set for component {i + 1} at node {k} "
                f"(x={tuple(op.grid.coords[k].tolist())}): {lo[k]} > {hi[k]}"
            )
        sub = ObstacleProblem(prob.fs[i], Psi[i], Phi[i])
        start = None if warm is None else warm[i]
        w, rep = solve_two_obstacle(op, sub, tol, max_iter, u0=start)
        if not rep.converged:
            raise RuntimeError(f"inner solve {i + 1} did not converge: {rep.message}")
        out.append(w)
    return out


@dataclass
class QviReport:
    lambda0: float
    compatible: bool
    iterates: int = 0
    max_solution: list = field(default_factory=list, repr=False)
    min_solution: list = field(default_factory=list, repr=False)
    fixedpoint_residual: float = np.nan
    fixedpoint_residual_min: float = np.nan
    ordering_ok: bool = False
    monotone_ok: bool = False
    converged: bool = False
    descending_deltas: list = field(default_factory=list)
    ascending_deltas: list = field(default_factory=list)
    monotonicity_violation: float = 0.0
    band_violation: float = 0.0

    def to_dict(self):
        return {
            "lambda0": self.lambda0,
            "compatible": self.compatible,
            "iterates": self.iterates,
            "fixedpoint_residual": self.fixedpoint_residual,
            "fixedpoint_residual_min": self.fixedpoint_residual_min,
            "ordering_ok": self.ordering_ok,
            "monotone_ok": self.monotone_ok,
            "converged": self.converged,
            "descending_deltas": self.descending_deltas,
            "ascending_deltas": self.ascending_deltas,
            "monotonicity_violation": self.monotonicity_violation,
            "band_violation": self.band_violation,
            "gap": max((sup_norm(a - b) for a, b in zip(self.max_solution, self.min_solution)),
                       default=0.0),
        }


def _dist(a, b):
    return max(sup_norm(x - y) for x, y in zip(a, b))


def _iterate(op, prob, start, tol, tol_inner, max_outer, max_iter, direction):
    """Run ``u^{m+1} = σ(u^m)``; ``direction`` is -1 for descending, +1 ascending."""
    u = start
    deltas = []
    worst = 0.0
    for _ in range(max_outer):
        w = sigma_map(op, prob, u, tol_inner, max_iter, warm=u)
        # descending: w <= u; ascending: w >= u
        step = [direction * (b.values - a.values) for a, b in zip(u, w)]
        worst = max(worst, max(float(np.max(-s)) for s in step))
        d = _dist(u, w)
        deltas.append(d)
        u = w
        if d <= tol:
            return u, deltas, worst, True
    return u, deltas, worst, False


def solve_qvi(op: DiscreteOperator, prob: QviProblem, tol=1e-6, max_outer=200, max_iter=200_000):
    """Maximal and minimal solutions by monotone σ-iteration from the extremal seeds."""
    tol_inner = tol / 100
    u_lo, u_hi, lam0 = extremal_seeds(op, prob, tol_inner, max_iter)
    report = QviReport(lambda0=lam0, compatible=check_compatibility(prob, lam0))
    if not report.compatible:
        raise IncompatibleConstantsError(
            f"constants violate phi_ij + psi_ik >= lambda0 = {lam0:.6g}"
        )
    N = prob.N
    hi, d_hi, w_hi, ok_hi = _iterate(op, prob, [u_hi.copy() for _ in range(N)], tol, tol_inner,
                                     max_outer, max_iter, -1)
    lo, d_lo, w_lo, ok_lo = _iterate(op, prob, [u_lo.copy() for _ in range(N)], tol, tol_inner,
                                     max_outer, max_iter, +1)
    report.max_solution, report.min_solution = hi, lo
    report.descending_deltas, report.ascending_deltas = d_hi, d_lo
    # the last delta only confirms the limit, so it is not counted
    report.iterates = max(len(d) - 1 if ok else len(d) for d, ok in ((d_hi, ok_hi), (d_lo, ok_lo)))
    report.converged = ok_hi and ok_lo
    report.monotonicity_violation = max(w_hi, w_lo, 0.0)
    report.monotone_ok = report.monotonicity_violation <= tol
    report.ordering_ok = all(np.all(a.values >= b.values - tol) for a, b in zip(hi, lo))
    band = 0.0
    for u in hi + lo:
        band = max(band, float(np.max(u_lo.values - u.values)), float(np.max(u.values - u_hi.values)))
    report.band_violation = max(band, 0.0)
    report.fixedpoint_residual = _dist(sigma_map(op, prob, hi, tol_inner, max_iter, warm=hi), hi)
    report.fixedpoint_residual_min = _dist(sigma_map(op, prob, lo, tol_inner, max_iter, warm=lo), lo)
    log.info("qvi: lambda0=%.6g, %d outer iterations, residuals %.3e / %.3e", lam0,
             report.iterates, report.fixedpoint_residual, report.fixedpoint_residual_min)
    return report


def iterate_from(op, prob, start, tol=1e-6, max_outer=200, max_iter=200_000):
    """σ-iteration from an arbitrary start; returns ``(limit, deltas, converged)``."""
    u, deltas, _, ok = _iterate(op, prob, start, tol, tol / 100, max_outer, max_iter, 0)
    return u, deltas, ok


def ls_chain_violation(op, prob: QviProblem, us) -> float:
    """Largest violation of ``min_i f_i <= A_h u_i <= max_i f_i``."""
    F = np.stack([f.values[op.interior] for f in prob.fs])
    mu, nu = F.min(axis=0), F.max(axis=0)
    worst = 0.0
    for u in us:
        Au = apply_A(op, u).values
        worst = max(worst, float(np.max(mu - Au)), float(np.max(Au - nu)))
    return worst
