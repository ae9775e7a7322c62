"""Spectral projected gradient with Armijo backtracking.

Shared by every solver in the package.  The objective is convex, the
feasible set is closed and convex with a cheap Euclidean projection (in
the lumped-mass metric), and the search direction uses the mass-scaled
gradient, i.e. the residual density.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

ARMIJO_C = 1e-4
BACKTRACK = 0.5
MIN_STEP, MAX_STEP = 1e-12, 1e12


@dataclass
class SolveReport:
    scheme: str
    iterations: int
    final_residual: float
    converged: bool
    energy_trace: list | None = None
    message: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self, with_trace=True) -> dict:
        d = asdict(self)
        if not with_trace or self.energy_trace is None:
            d.pop("energy_trace")
        if not self.extra:
            d.pop("extra")
        return d

    def to_json(self, with_trace=True) -> str:
        return json.dumps(self.to_dict(with_trace), indent=2, allow_nan=True)


def projected_descent(fun, x0, masses, project=None, tol=1e-8, max_iter=200_000,
                      record_energy=False, scheme=""):
    """Minimize ``fun`` over the set defined by ``project``.

    ``fun(x)`` returns ``(energy, raw_gradient)``; ``masses`` broadcasts
    against ``x`` and turns raw gradients into densities.  Stops when
    ``‖x - P(x - r)‖_∞ <= tol`` with ``r`` the density.

    A backtracking step is accepted when the energy satisfies the Armijo
    condition, or when the directional derivative at the trial point
    satisfies ``φ'(λ) <= c φ'(0)``.  For a convex objective the latter
    implies the former, and it stays decisive once energy differences sink
    below round-off.
    """
    if project is None:
        project = _identity
    x = project(np.array(x0, dtype=float))
    F, g = fun(x)
    r = g / masses
    trace = [F] if record_energy else None
    step = 1.0
    it = 0
    crit = _criterion(x, r, project)
    message = ""
    while crit > tol:
        if it >= max_iter:
            message = f"max_iter={max_iter} reached"
            break
        d = project(x - step * r) - x
        slope = float(np.sum(g * d))
        if not slope < 0:
            # BB step gave no descent; fall back to a short steepest step
            step = MIN_STEP * 1e4
            d = project(x - step * r) - x
            slope = float(np.sum(g * d))
            if not slope < 0:
                message = "no descent direction (stalled at round-off)"
                break
        lam = 1.0
        while True:
            xn = x + lam * d
            Fn, gn = fun(xn)
            if Fn <= F + ARMIJO_C * lam * slope or float(np.sum(gn * d)) <= ARMIJO_C * slope:
                break
            lam *= BACKTRACK
            if lam < 1e-30:
                message = "line search failed"
                break
        if message:
            break
        s = xn - x
        yk = gn - g
        sy = float(np.sum(s * yk))
        ss = float(np.sum(masses * s * s))
        step = min(MAX_STEP, max(MIN_STEP, ss / sy)) if sy > 0 else MAX_STEP
        x, F, g = xn, Fn, gn
        r = g / masses
        it += 1
        if record_energy:
            trace.append(F)
        crit = _criterion(x, r, project)
    converged = crit <= tol
    if converged:
        message = "converged"
    report = SolveReport(scheme=scheme, iterations=it, final_residual=float(crit),
                         converged=bool(converged), energy_trace=trace, message=message)
    return x, report


def _identity(x):
    return x


def _criterion(x, r, project):
    c = float(np.max(np.abs(x - project(x - r)))) if x.size else 0.0
    return c if math.isfinite(c) else math.inf
