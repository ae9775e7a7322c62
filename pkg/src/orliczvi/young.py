"""Structural coefficients a(x, t), their Young functions and Orlicz norms.

The Young function of a coefficient is ``G(x, t) = ∫_0^t a(x, s) s ds`` and
``g(x, t) = a(x, |t|) t`` is its derivative.  Coefficient parameters may be
constants or nodal :class:`~orliczvi.mesh.Field` objects; fields are
interpolated (bi)linearly at the evaluation points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import hyp2f1

from .mesh import Field

T_SAFEGUARD = 1e-12


class StructureEvaluationError(ValueError):
    """A coefficient produced a non-finite value or got out-of-domain parameters."""


class QuadratureError(RuntimeError):
    def __init__(self, message, achieved):
        super().__init__(f"{message} (achieved tolerance {achieved:.3e})")
        self.achieved = achieved


class LuxemburgBracketError(RuntimeError):
    pass


def _as_param(value, name):
    if isinstance(value, Field):
        if not np.all(np.isfinite(value.values)):
            raise StructureEvaluationError(f"parameter {name!r} has non-finite nodal values")
        return value
    value = float(value)
    if not math.isfinite(value):
        raise StructureEvaluationError(f"parameter {name!r} is not finite")
    return value


def _param_range(value) -> tuple[float, float]:
    if isinstance(value, Field):
        return float(value.values.min()), float(value.values.max())
    return value, value


class StructuralFunction:
    """Base class for coefficients ``a(x, t)``.

    Subclasses implement ``_a(params, t)`` and optionally ``_G(params, t)``
    where ``params`` maps parameter names to scalars or arrays aligned with
    ``t``.  Use :meth:`resolve` once per set of points and reuse the result in
    hot loops.
    """

    id = "abstract"
    param_names: tuple[str, ...] = ()

    def __init__(self, declared_bounds=None, **params):
        self.params = {k: _as_param(v, k) for k, v in params.items()}
        if declared_bounds is not None:
            lo, hi = (float(b) for b in declared_bounds)
            if not (0 < lo <= hi):
                raise ValueError(
                    f"declared bounds must satisfy 0 < lower <= upper, got ({lo}, {hi})"
                )
            declared_bounds = (lo, hi)
        self.declared_bounds = declared_bounds

    @property
    def has_closed_form_G(self) -> bool:
        return type(self)._G is not StructuralFunction._G

    @property
    def is_variable(self) -> bool:
        return any(isinstance(v, Field) for v in self.params.values())

    def sample_points(self):
        """Nodes of the first nodal parameter, or ``None`` for constant coefficients."""
        for v in self.params.values():
            if isinstance(v, Field):
                return v.grid.coords
        return None

    def resolve(self, x=None) -> dict:
        out = {}
        for k, v in self.params.items():
            if isinstance(v, Field):
                if x is None:
                    raise ValueError(f"parameter {k!r} varies in space; positions are required")
                out[k] = v.interpolate(np.atleast_2d(x))
            else:
                out[k] = v
        return out

    def _a(self, P, t):
        raise NotImplementedError

    def _G(self, P, t):
        raise NotImplementedError

    def a(self, x, t, params=None):
        P = self.resolve(x) if params is None else params
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            val = self._a(P, t)
        bad = np.isnan(val) | (np.isinf(val) & (t > 0))
        if np.any(bad):
            raise StructureEvaluationError(self._blame(P, t, bad))
        return val

    def G(self, x, t, params=None):
        P = self.resolve(x) if params is None else params
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            val = np.where(t > 0, self._G(P, np.where(t > 0, t, 1.0)), 0.0)
        if not np.all(np.isfinite(val)):
            raise StructureEvaluationError(self._blame(P, t, ~np.isfinite(val)))
        return val

    def g(self, x, t, params=None, safeguard=0.0):
        """``a(x, |t|) t`` with ``g(0) = 0``; ``|t|`` is floored at ``safeguard``."""
        t = np.asarray(t, dtype=float)
        s = np.abs(t)
        if safeguard > 0:
            s = np.maximum(s, safeguard)
            return self.a(x, s, params) * t
        with np.errstate(invalid="ignore"):
            out = self.a(x, s, params) * t
        return np.where(t == 0, 0.0, out)

    def _blame(self, P, t, bad):
        return f"{self.id}: non-finite coefficient at t={np.asarray(t)[bad].ravel()[:3]}"

    def to_dict(self) -> dict:
        d = {"id": self.id}
        d["params"] = {
            k: ("<field>" if isinstance(v, Field) else v) for k, v in self.params.items()
        }
        if self.declared_bounds is not None:
            d["declared_bounds"] = list(self.declared_bounds)
        return d

    def __repr__(self):
        args = ", ".join(f"{k}={'<field>' if isinstance(v, Field) else v}" for k, v in self.params.items())
        return f"{type(self).__name__}({args})"


class PowerLaw(StructuralFunction):
    """``a = t^(p-2)``; ``p`` constant or a nodal field (variable exponent)."""

    param_names = ("p",)

    def __init__(self, p, declared_bounds=None):
        super().__init__(declared_bounds=declared_bounds, p=p)
        lo, hi = _param_range(self.params["p"])
        if lo <= 1:
            raise StructureEvaluationError(f"exponent p must exceed 1, got min p = {lo}")
        if self.declared_bounds is None:
            self.declared_bounds = (lo - 1, hi - 1)

    @property
    def id(self):
        return "variable_power" if self.is_variable else "power"

    def _a(self, P, t):
        return t ** (P["p"] - 2.0)

    def _G(self, P, t):
        p = P["p"]
        return t**p / p


class LogGrowth(StructuralFunction):
    """``a = α t^(p-2) log(β t + γ)`` with ``α, β > 0``, ``γ ≥ 1``, ``p > 1``."""

    id = "log"
    param_names = ("alpha", "p", "beta", "gamma")

    def __init__(self, alpha=1.0, p=2.0, beta=1.0, gamma=2.0, declared_bounds=None):
        super().__init__(declared_bounds=declared_bounds, alpha=alpha, p=p, beta=beta, gamma=gamma)
        checks = {"alpha": 0.0, "beta": 0.0, "p": 1.0}
        for name, floor in checks.items():
            lo, _ = _param_range(self.params[name])
            if lo <= floor:
                raise StructureEvaluationError(f"parameter {name!r} must exceed {floor}, got {lo}")
        glo, _ = _param_range(self.params["gamma"])
        if glo < 1:
            raise StructureEvaluationError(
                f"parameter 'gamma' must be >= 1 so that log(beta t + gamma) > 0, got {glo}"
            )
        if self.declared_bounds is None:
            plo, phi = _param_range(self.params["p"])
            # beta t / ((beta t + gamma) log(beta t + gamma)) lies in [0, 1) when gamma >= 1
            self.declared_bounds = (plo - 1, phi)

    def _a(self, P, t):
        arg = P["beta"] * t + P["gamma"]
        if np.any(np.asarray(arg) <= 0):
            raise StructureEvaluationError("log: beta*t + gamma <= 0 (check 'beta' and 'gamma')")
        return P["alpha"] * t ** (P["p"] - 2.0) * (np.log(P["gamma"]) + np.log1p(P["beta"] * t / P["gamma"]))

    def _G(self, P, t):
        al, p, be, ga = P["alpha"], P["p"], P["beta"], P["gamma"]
        z = be * t / ga
        log_term = np.log(ga) + np.log1p(z)
        # ∫_0^t s^p/(βs+γ) ds = t^(p+1)/(γ(p+1)) 2F1(1, p+1; p+2; -βt/γ)
        tail = t ** (p + 1) / (ga * (p + 1)) * hyp2f1(1.0, p + 1.0, p + 2.0, -z)
        return al * (t**p / p * log_term - be / p * tail)

    def _blame(self, P, t, bad):
        for name in ("gamma", "beta", "p", "alpha"):
            v = np.broadcast_to(np.asarray(P[name], dtype=float), np.shape(t))
            if not np.all(np.isfinite(v[bad])):
                return f"log: parameter {name!r} is non-finite"
        return f"log: non-finite coefficient (check 'beta' and 'gamma') at t={np.asarray(t)[bad].ravel()[:3]}"


class Combination(StructuralFunction):
    """Positive linear combination ``Σ c_k a_k`` of structural functions."""

    id = "combination"

    def __init__(self, terms, declared_bounds=None):
        terms = [(float(c), sf) for c, sf in terms]
        if not terms:
            raise ValueError("combination needs at least one term")
        for c, _ in terms:
            if not c > 0:
                raise StructureEvaluationError(f"combination coefficients must be positive, got {c}")
        self.terms = terms
        super().__init__(declared_bounds=declared_bounds)
        if self.declared_bounds is None:
            bounds = [sf.declared_bounds for _, sf in terms]
            if all(b is not None for b in bounds):
                self.declared_bounds = (min(b[0] for b in bounds), max(b[1] for b in bounds))

    @property
    def is_variable(self):
        return any(sf.is_variable for _, sf in self.terms)

    @property
    def has_closed_form_G(self):
        return all(sf.has_closed_form_G for _, sf in self.terms)

    def sample_points(self):
        for _, sf in self.terms:
            pts = sf.sample_points()
            if pts is not None:
                return pts
        return None

    def resolve(self, x=None):
        return {"terms": [sf.resolve(x) for _, sf in self.terms]}

    def _a(self, P, t):
        return sum(c * sf._a(p, t) for (c, sf), p in zip(self.terms, P["terms"]))

    def _G(self, P, t):
        return sum(c * sf._G(p, t) for (c, sf), p in zip(self.terms, P["terms"]))

    def to_dict(self):
        d = {"id": self.id, "terms": [{"coef": c, **sf.to_dict()} for c, sf in self.terms]}
        if self.declared_bounds is not None:
            d["declared_bounds"] = list(self.declared_bounds)
        return d

    def __repr__(self):
        return "Combination(" + ", ".join(f"{c}*{sf!r}" for c, sf in self.terms) + ")"


CATALOG = {
    "power": PowerLaw,
    "variable_power": PowerLaw,
    "log": LogGrowth,
}


def make_structural(id: str, **params) -> StructuralFunction:
    """Build a catalog coefficient by id; ``combination`` takes ``terms``."""
    if id == "combination":
        return Combination(**params)
    try:
        cls = CATALOG[id]
    except KeyError:
        raise ValueError(f"unknown structural function {id!r}; known: {sorted(CATALOG) + ['combination']}")
    return cls(**params)


def adaptive_simpson(fn, a, b, rtol=1e-10, max_depth=50):
    """Adaptive Simpson quadrature with Richardson correction.

    Raises :class:`QuadratureError` if some panel needs more than
    ``max_depth`` bisections.
    """
    fa, fm, fb = fn(a), fn(0.5 * (a + b)), fn(b)
    whole = (b - a) / 6 * (fa + 4 * fm + fb)
    scale = abs(whole)
    if scale == 0.0:
        # refine once so a coarse zero does not hide mass
        xs = np.linspace(a, b, 33)
        scale = abs(np.trapezoid([fn(x) for x in xs], xs))
        if scale == 0.0:
            return 0.0
    tol = rtol * scale
    total = 0.0
    worst = 0.0
    failed = False
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        lo, hi, flo, fmid, fhi, s, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        fl, fr = fn(0.5 * (lo + mid)), fn(0.5 * (mid + hi))
        left = (mid - lo) / 6 * (flo + 4 * fl + fmid)
        right = (hi - mid) / 6 * (fmid + 4 * fr + fhi)
        err = left + right - s
        if abs(err) <= 15 * eps or depth >= max_depth:
            if depth >= max_depth and abs(err) > 15 * eps:
                failed = True
                worst = max(worst, abs(err) / 15)
            total += left + right + err / 15
        else:
            stack.append((lo, mid, flo, fl, fmid, left, eps / 2, depth + 1))
            stack.append((mid, hi, fmid, fr, fhi, right, eps / 2, depth + 1))
    if failed:
        raise QuadratureError("adaptive Simpson did not converge", worst / max(abs(total), 1e-300))
    return total


@dataclass(frozen=True)
class YoungFunction:
    """``G(x, t) = ∫_0^t a(x, s) s ds`` for a structural function ``base``."""

    base: StructuralFunction
    quadrature_tol: float = 1e-10
    force_quadrature: bool = False

    @property
    def declared_bounds(self):
        return self.base.declared_bounds

    def G(self, x, t, params=None):
        if self.base.has_closed_form_G and not self.force_quadrature:
            return self.base.G(x, t, params)
        return self._G_quadrature(x, t)

    def g(self, x, t, params=None, safeguard=0.0):
        return self.base.g(x, t, params, safeguard)

    def _G_quadrature(self, x, t):
        t = np.asarray(t, dtype=float)
        flat_t = np.atleast_1d(t).ravel()
        if x is None:
            pts = [None] * flat_t.size
        else:
            pts = np.atleast_2d(x)
            if pts.shape[0] == 1:
                pts = np.repeat(pts, flat_t.size, axis=0)
        out = np.empty(flat_t.size)
        for k, (tk, xk) in enumerate(zip(flat_t, pts)):
            out[k] = eval_G(self, xk, tk, _use_closed=False)
        return out.reshape(t.shape)


def _scalar_point(x):
    if x is None:
        return None
    return np.atleast_2d(np.asarray(x, dtype=float))


def eval_a(sf: StructuralFunction, x, t: float) -> float:
    """``a(x, t)``; at ``t = 0`` the limit ``t → 0⁺`` (``inf`` when singular)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return float(_limit_at_zero(sf, _scalar_point(x)))
    return float(sf.a(_scalar_point(x), np.array([t]))[0])


def _limit_at_zero(sf, x):
    # local power-law exponent of a between two tiny arguments decides the limit
    t = np.array([1e-200, 1e-100])
    with np.errstate(all="ignore"):
        a1, a2 = np.ravel(sf._a(sf.resolve(x), t))[:2]
    if np.isinf(a1):
        return math.inf
    if a1 == 0.0:
        return 0.0
    slope = math.log(a1 / a2) / math.log(t[0] / t[1])
    if slope < -1e-6:
        return math.inf
    if slope > 1e-6:
        return 0.0
    return float(a1)


def is_singular_at_zero(sf: StructuralFunction, x=None) -> bool:
    return math.isinf(_limit_at_zero(sf, _scalar_point(x)))


def eval_G(yf: YoungFunction, x, t: float, _use_closed=True) -> float:
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return 0.0
    x = _scalar_point(x)
    if _use_closed and yf.base.has_closed_form_G and not yf.force_quadrature:
        return float(yf.base.G(x, np.array([t]))[0])
    P = yf.base.resolve(x)

    def integrand(s):
        if s <= 0.0:
            return 0.0
        return float(np.ravel(yf.base.a(None, np.array([s]), P))[0]) * s

    return adaptive_simpson(integrand, 0.0, float(t), rtol=yf.quadrature_tol)


@dataclass
class StructureReport:
    lower_est: float
    upper_est: float
    passed: bool
    declared_bounds: tuple | None = None
    ratio_G_min: float = math.nan
    ratio_G_max: float = math.nan
    failures: list = field(default_factory=list)

    def to_dict(self):
        return {
            "lower_est": self.lower_est,
            "upper_est": self.upper_est,
            "pass": self.passed,
            "declared_bounds": list(self.declared_bounds) if self.declared_bounds else None,
            "ratio_G_min": self.ratio_G_min,
            "ratio_G_max": self.ratio_G_max,
            "failures": self.failures,
        }

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        lines = [
            f"a_lower_est = {self.lower_est:.10g}",
            f"a_upper_est = {self.upper_est:.10g}",
            f"t g / G in [{self.ratio_G_min:.10g}, {self.ratio_G_max:.10g}]",
        ]
        if self.declared_bounds:
            lines.append(f"declared = ({self.declared_bounds[0]:.10g}, {self.declared_bounds[1]:.10g})")
        lines += [f"failure: {f}" for f in self.failures[:10]]
        lines.append(status)
        return "\n".join(lines)


def check_structure(sf: StructuralFunction, t_grid=None, x_sample=None, bound_tol=1e-4,
                    rel_step=1e-6) -> StructureReport:
    """Sample ``t a_t / a + 1`` and ``t g / G`` and compare with the declared bounds."""
    if t_grid is None:
        t_grid = np.logspace(-4, 4, 161)
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid <= 0):
        raise ValueError("t_grid must lie in (0, inf)")
    if x_sample is None:
        pts = sf.sample_points()
        x_sample = [None] if pts is None else list(pts)
    failures = []
    lo_est, hi_est = math.inf, -math.inf
    rg_lo, rg_hi = math.inf, -math.inf
    yf = YoungFunction(sf)
    for x in x_sample:
        xp = _scalar_point(x)
        label = "const" if x is None else tuple(np.ravel(x))
        P = sf.resolve(xp)
        t_plus, t_minus = t_grid * (1 + rel_step), t_grid * (1 - rel_step)
        try:
            a = sf.a(None, t_grid, P)
            a_t = (sf.a(None, t_plus, P) - sf.a(None, t_minus, P)) / (t_plus - t_minus)
            G = yf.G(xp, t_grid, P if yf.base.has_closed_form_G else None)
        except StructureEvaluationError as exc:
            failures.append(f"x={label}: {exc}")
            continue
        with np.errstate(all="ignore"):
            ratio = t_grid * a_t / a + 1.0
            ratio_G = t_grid * (a * t_grid) / G
        bad = ~np.isfinite(ratio) | ~np.isfinite(ratio_G) | (a <= 0)
        for k in np.flatnonzero(bad)[:5]:
            failures.append(f"x={label}, t={t_grid[k]:.3e}: non-finite or nonpositive sample")
        good = ~bad
        if not np.any(good):
            continue
        lo_x, hi_x = float(ratio[good].min()), float(ratio[good].max())
        lo_est, hi_est = min(lo_est, lo_x), max(hi_est, hi_x)
        rg_lo, rg_hi = min(rg_lo, float(ratio_G[good].min())), max(rg_hi, float(ratio_G[good].max()))
        if np.any(ratio_G[good] < 1 + lo_x - bound_tol) or np.any(ratio_G[good] > 1 + hi_x + bound_tol):
            failures.append(f"x={label}: t g/G leaves [1 + lower, 1 + upper]")
        ta = t_grid * a
        if np.any(np.diff(ta[good]) <= 0):
            failures.append(f"x={label}: t a(x, t) is not strictly increasing")
        small = sf.a(None, np.array([1e-10, 1e-8]), P) * np.array([1e-10, 1e-8])
        if not (np.all(np.isfinite(small)) and small[0] < small[1]):
            failures.append(f"x={label}: t a(x, t) does not decrease towards 0 as t -> 0+")
    if lo_est <= 0:
        failures.append(f"estimated lower bound {lo_est} is not positive")
    decl = sf.declared_bounds
    if decl is not None and math.isfinite(lo_est):
        if lo_est < decl[0] - bound_tol or hi_est > decl[1] + bound_tol:
            failures.append(
                f"estimated bounds ({lo_est:.6g}, {hi_est:.6g}) exceed declared ({decl[0]}, {decl[1]})"
            )
    return StructureReport(
        lower_est=lo_est,
        upper_est=hi_est,
        passed=not failures,
        declared_bounds=decl,
        ratio_G_min=rg_lo,
        ratio_G_max=rg_hi,
        failures=failures,
    )


def _abs_values(values):
    if isinstance(values, Field):
        return np.abs(values.values), values.grid
    return np.abs(np.asarray(values, dtype=float)), None


def _defaults(values, weights, points):
    vals, grid = _abs_values(values)
    if weights is None:
        if grid is None:
            raise ValueError("weights are required for raw arrays")
        from .mesh import lumped_masses

        weights = lumped_masses(grid)
    if points is None and grid is not None:
        points = grid.coords
    return vals, np.asarray(weights, dtype=float), points


def modular(yf: YoungFunction, values, weights=None, points=None) -> float:
    """``Σ_i w_i G(x_i, |u_i|)``."""
    vals, w, pts = _defaults(values, weights, points)
    if not np.all(np.isfinite(vals)):
        raise ValueError("modular needs a finite field")
    P = yf.base.resolve(pts) if yf.base.is_variable else yf.base.resolve(None)
    G = yf.G(pts, vals, P if yf.base.has_closed_form_G else None)
    return float(np.dot(w, G))


def luxemburg_norm(yf: YoungFunction, values, weights=None, points=None, atol=1e-10,
                   modular_tol=1e-8, max_doublings=200) -> float:
    """Smallest ``μ`` with ``modular(u / μ) <= 1``, by bracketed bisection.

    The returned ``μ`` satisfies ``modular(u / μ) ∈ [1 - modular_tol, 1]``.
    """
    vals, w, pts = _defaults(values, weights, points)
    if not np.all(np.isfinite(vals)):
        raise ValueError("Luxemburg norm needs a finite field")
    if not np.any(vals):
        return 0.0
    P = yf.base.resolve(pts) if yf.base.is_variable else yf.base.resolve(None)
    closed = yf.base.has_closed_form_G

    def rho(mu):
        return float(np.dot(w, yf.G(pts, vals / mu, P if closed else None)))

    hi = float(np.max(vals))
    for _ in range(max_doublings):
        if rho(hi) <= 1.0:
            break
        hi *= 2.0
    else:
        raise LuxemburgBracketError("no upper bracket for the Luxemburg norm after 200 doublings")
    lo = hi / 2.0
    for _ in range(max_doublings):
        if rho(lo) > 1.0:
            break
        hi, lo = lo, lo / 2.0
    else:
        raise LuxemburgBracketError("no lower bracket for the Luxemburg norm after 200 halvings")
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if rho(mid) > 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= atol * max(1.0, hi) and rho(hi) >= 1.0 - modular_tol:
            break
    return hi
