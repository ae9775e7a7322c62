"""N-membranes problem: ordered constraint, bounded penalization, LS chain."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import DiscreteOperator
from .descent import projected_descent
from .mesh import Field

MAX_MEMBRANES = 16


@dataclass(eq=False)
class MembraneSystem:
    fs: list

    def __post_init__(self):
        self.fs = list(self.fs)
        if not 1 <= len(self.fs) <= MAX_MEMBRANES:
            raise ValueError(f"need between 1 and {MAX_MEMBRANES} membranes, got {len(self.fs)}")
        grid = self.fs[0].grid
        for k, f in enumerate(self.fs):
            if not f.grid.same_as(grid):
                raise ValueError(f"force {k + 1} lives on a different grid")
            if not np.all(np.isfinite(f.values)):
                raise ValueError(f"force {k + 1} is not finite")

    @property
    def N(self):
        return len(self.fs)

    @property
    def grid(self):
        return self.fs[0].grid

    def stack(self) -> np.ndarray:
        return np.stack([f.values for f in self.fs])


@dataclass(eq=False)
class PenaltyCoefficients:
    xi0: Field
    xis: list


def _pava_decreasing(y):
    # blocks of (sum, count); a block may not have a larger mean than its left neighbour
    sums, counts = [], []
    for v in y:
        sums.append(float(v))
        counts.append(1)
        while len(sums) > 1 and sums[-2] * counts[-1] < sums[-1] * counts[-2]:
            s, c = sums.pop(), counts.pop()
            sums[-1] += s
            counts[-1] += c
    out = np.empty(len(y))
    k = 0
    for s, c in zip(sums, counts):
        out[k:k + c] = s / c
        k += c
    return out


def project_ordered(values) -> np.ndarray:
    """Euclidean projection of each column of ``values`` (N, M) onto ``v_1 >= ... >= v_N``."""
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("project_ordered needs finite values")
    single = values.ndim == 1
    V = values[:, None] if single else values
    out = V.copy()
    bad = np.flatnonzero(np.any(np.diff(V, axis=0) > 0, axis=0))
    for j in bad:
        out[:, j] = _pava_decreasing(V[:, j])
    return out[:, 0] if single else out


def _stack_energy(op: DiscreteOperator, F_int):
    """Sum of the membrane energies on stacked interior vectors (N, n_int)."""
    size, interior = op.grid.size, op.interior
    FM = F_int * op.m_int

    def fun(X):
        U = np.zeros((X.shape[0], size))
        U[:, interior] = X
        E = 0.0
        G = np.empty_like(X)
        for i in range(X.shape[0]):
            J, g = op.J_and_grad(U[i])
            E += J - float(np.dot(FM[i], X[i]))
            G[i] = g[interior] - FM[i]
        return E, G

    return fun


def solve_membranes_vi(op: DiscreteOperator, sys: MembraneSystem, tol=1e-8, max_iter=200_000,
                       u0=None, record_energy=False):
    """Minimize the summed energy under ``u_1 >= ... >= u_N`` nodewise."""
    idx = op.interior
    F_int = sys.stack()[:, idx]
    X0 = np.zeros_like(F_int) if u0 is None else np.stack([u.values[idx] for u in u0])
    X, report = projected_descent(_stack_energy(op, F_int), X0, op.m_int, project_ordered, tol,
                                  max_iter, record_energy, op.scheme)
    return [Field(op.grid, op.embed(x)) for x in X], report


def xi_coefficients(fs) -> PenaltyCoefficients:
    """``ξ_0 = max_i (f_1+…+f_i)/i`` and ``ξ_i = i ξ_0 - (f_1+…+f_i)``, nodewise."""
    fs = list(fs.fs if isinstance(fs, MembraneSystem) else fs)
    grid = fs[0].grid
    F = np.stack([f.values for f in fs])
    S = np.cumsum(F, axis=0)
    i = np.arange(1, F.shape[0] + 1)[:, None]
    xi0 = np.max(S / i, axis=0)
    xis = np.maximum(i * xi0 - S, 0.0)
    return PenaltyCoefficients(Field(grid, xi0), [Field(grid, x) for x in xis])


def theta_eps(s, eps: float):
    """0 for ``s >= 0``, ``s/eps`` on ``(-eps, 0)``, -1 for ``s <= -eps``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    s = np.asarray(s, dtype=float)
    out = np.clip(s / eps, -1.0, 0.0)
    out = np.where(s >= 0, 0.0, out)
    return out if out.ndim else float(out)


def Theta_eps(s, eps: float):
    """Antiderivative of ``theta_eps`` vanishing at 0 (convex)."""
    s = np.asarray(s, dtype=float)
    out = np.where(s >= 0, 0.0, np.where(s > -eps, s * s / (2 * eps), -s - eps / 2))
    return out if out.ndim else float(out)


def _penalized_energy(op, F_int, XI_int, eps):
    base = _stack_energy(op, F_int)
    m = op.m_int

    def fun(X):
        E, G = base(X)
        if X.shape[0] > 1:
            D = X[:-1] - X[1:]
            W = m * XI_int[:-1]
            E += float(np.sum(W * Theta_eps(D, eps)))
            T = W * theta_eps(D, eps)
            G[:-1] += T
            G[1:] -= T
        return E, G

    return fun


def solve_membranes_penalized(op: DiscreteOperator, sys: MembraneSystem, eps: float, tol=1e-8,
                              max_iter=200_000, u0=None, record_energy=False):
    """Solve the bounded-penalty system as one convex minimization.

    The penalty energy ``Σ_i Σ_nodes m ξ_i Θ_eps(u_i - u_{i+1})`` has the
    penalty terms of the system as its exact gradient; the conventions
    ``u_0 = +inf`` and ``u_{N+1} = -inf`` make the outer terms vanish.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    idx = op.interior
    F_int = sys.stack()[:, idx]
    coeffs = xi_coefficients(sys)
    XI_int = np.stack([x.values[idx] for x in coeffs.xis])
    X0 = np.zeros_like(F_int) if u0 is None else np.stack([u.values[idx] for u in u0])
    X, report = projected_descent(_penalized_energy(op, F_int, XI_int, eps), X0, op.m_int, None,
                                  tol, max_iter, record_energy, op.scheme)
    report.extra["eps"] = eps
    return [Field(op.grid, op.embed(x)) for x in X], report


@dataclass
class MembraneLSReport:
    lower_violations: list
    upper_violations: list
    tol: float
    passed: bool

    @property
    def max_violation(self):
        return max(self.lower_violations + self.upper_violations)

    def to_dict(self):
        return {"lower_violations": self.lower_violations, "upper_violations": self.upper_violations,
                "max_violation": self.max_violation, "tol": self.tol, "pass": self.passed}


def verify_ls_membranes(op: DiscreteOperator, us, fs, tol=1e-8) -> MembraneLSReport:
    """Check ``min_{j<=i} f_j <= A_h u_i <= max_{j>=i} f_j`` at interior nodes."""
    fs = list(fs.fs if isinstance(fs, MembraneSystem) else fs)
    idx = op.interior
    F = np.stack([f.values[idx] for f in fs])
    lower = np.minimum.accumulate(F, axis=0)
    upper = np.maximum.accumulate(F[::-1], axis=0)[::-1]
    lows, ups = [], []
    for i, u in enumerate(us):
        Au = op.density(u.values)
        lows.append(float(np.max(np.maximum(lower[i] - Au, 0.0), initial=0.0)))
        ups.append(float(np.max(np.maximum(Au - upper[i], 0.0), initial=0.0)))
    ok = max(lows + ups) <= tol
    return MembraneLSReport(lows, ups, tol, bool(ok))
