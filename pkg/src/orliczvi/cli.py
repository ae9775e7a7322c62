"""Batch front-end: ``orliczvi {check-operator,solve,membranes,qvi,verify}``.

Exit codes: 0 converged and verified, 1 configuration error, 2 verification
failure, 3 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import DiscreteOperator
from .membranes import (MembraneSystem, solve_membranes_penalized, solve_membranes_vi,
                        verify_ls_membranes)
from .mesh import Field, build_grid, read_field_csv, sup_norm, write_field_csv
from .obstacle import (InfeasibleProblemError, ObstacleProblem, solve_two_obstacle,
                       verify_comparison, verify_lewy_stampacchia, verify_linf_dependence)
from .qvi import IncompatibleConstantsError, QviProblem, ls_chain_violation, solve_qvi
from .young import StructureEvaluationError, check_structure, make_structural

log = logging.getLogger("orliczvi")

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_NONCONVERGED = 0, 1, 2, 3
PROBLEM_KINDS = ("obstacle", "membranes", "qvi")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    path: Path
    operator: dict
    grid: dict
    problem_kind: str
    problem: dict
    tol: float = 1e-8
    max_iter: int = 200_000
    max_outer: int = 200
    out_dir: Path | None = None
    emit_energy_trace: bool = False
    verify: list = field(default_factory=list)
    golden: dict | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def base_dir(self) -> Path:
        return self.path.parent


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    for key in ("operator", "grid"):
        if key not in raw:
            raise ConfigError(f"missing '{key}' block")
    problem = raw.get("problem", {})
    kinds = [k for k in PROBLEM_KINDS if k in problem]
    if len(kinds) > 1 or set(problem) - set(PROBLEM_KINDS):
        raise ConfigError(f"'problem' must hold exactly one of {PROBLEM_KINDS}")
    solver = raw.get("solver", {})
    outputs = raw.get("outputs", {})
    out_dir = outputs.get("dir")
    return RunConfig(
        path=path,
        operator=raw["operator"],
        grid=raw["grid"],
        problem_kind=kinds[0] if kinds else "",
        problem=problem.get(kinds[0], {}) if kinds else {},
        tol=float(solver.get("tol", 1e-8)),
        max_iter=int(solver.get("max_iter", 200_000)),
        max_outer=int(solver.get("max_outer", 200)),
        out_dir=(path.parent / out_dir) if out_dir else None,
        emit_energy_trace=bool(outputs.get("emit_energy_trace", False)),
        verify=list(raw.get("verify", [])),
        golden=raw.get("golden"),
        raw=raw,
    )


def make_grid(spec: dict):
    try:
        return build_grid(int(spec["dim"]), spec["extents"], spec["n"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid block: {exc}") from exc


def parse_field(spec, grid, base_dir: Path) -> Field:
    """Constant, ``const:c``, ``zero``, ``±inf``, ``parabola[:a]``, ``sine[:a]`` or a CSV path."""
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return Field.constant(grid, float(spec))
    if not isinstance(spec, str):
        raise ConfigError(f"cannot interpret field spec {spec!r}")
    name, _, arg = spec.partition(":")
    lows = np.array([lo for lo, _ in grid.extents])
    spans = np.array([hi - lo for lo, hi in grid.extents])
    xi = (grid.coords - lows) / spans
    if name in ("inf", "+inf", "-inf"):
        return Field.constant(grid, -math.inf if name == "-inf" else math.inf)
    if name == "zero":
        return Field.zeros(grid)
    if name == "const":
        return Field.constant(grid, float(arg))
    if name == "parabola":
        amp = float(arg) if arg else 1.0
        return Field(grid, amp * np.prod(4 * xi * (1 - xi), axis=1))
    if name == "sine":
        amp = float(arg) if arg else 1.0
        vals = amp * np.prod(np.sin(np.pi * xi), axis=1)
        vals[grid.boundary_mask] = 0.0
        return Field(grid, vals)
    path = base_dir / spec
    if not path.exists():
        raise ConfigError(f"field file {spec!r} not found (looked in {base_dir})")
    try:
        return read_field_csv(path, grid)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def make_structural_from(spec: dict, grid, base_dir):
    spec = dict(spec)
    sid = spec.get("id")
    if sid is None:
        raise ConfigError("operator needs an 'id'")
    bounds = spec.get("declared_bounds")
    try:
        if sid == "combination":
            terms = [
                (t.get("coef", 1.0), make_structural_from({k: v for k, v in t.items() if k != "coef"},
                                                          grid, base_dir))
                for t in spec.get("terms", [])
            ]
            return make_structural("combination", terms=terms, declared_bounds=bounds)
        params = {}
        for k, v in spec.get("params", {}).items():
            params[k] = parse_field(v, grid, base_dir) if isinstance(v, str) else v
        return make_structural(sid, declared_bounds=bounds, **params)
    except (StructureEvaluationError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad operator: {exc}") from exc


def make_operator(cfg: RunConfig, scheme=None):
    grid = make_grid(cfg.grid)
    sf = make_structural_from(cfg.operator, grid, cfg.base_dir)
    scheme = scheme or cfg.operator.get("scheme", "edge")
    try:
        return DiscreteOperator(grid, sf, scheme)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _write_json(path: Path, payload):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)}")


def _out_dir(cfg: RunConfig, override=None) -> Path:
    out = Path(override) if override else (cfg.out_dir or cfg.base_dir / "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _verify_tol(cfg, op):
    custom = cfg.raw.get("verify_tol")
    if custom is not None:
        return float(custom)
    return 1e3 * cfg.tol if op.scheme == "edge" else 1e-2


# -- obstacle ---------------------------------------------------------------


def build_obstacle(cfg: RunConfig, op) -> ObstacleProblem:
    p = cfg.problem
    if "f" not in p:
        raise ConfigError("obstacle problem needs 'f'")
    grid, base = op.grid, cfg.base_dir
    f = parse_field(p["f"], grid, base)
    psi = parse_field(p["psi"], grid, base) if p.get("psi") is not None else None
    phi = parse_field(p["phi"], grid, base) if p.get("phi") is not None else None
    try:
        return ObstacleProblem(f, psi, phi)
    except (InfeasibleProblemError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def verify_obstacle(cfg, op, prob, u, names):
    tol = cfg.tol
    results = {}
    for name in names:
        if name == "lewy_stampacchia":
            results[name] = verify_lewy_stampacchia(op, u, prob, _verify_tol(cfg, op)).to_dict()
        elif name == "feasibility":
            v = u.values
            viol = max(float(np.max(prob.psi.values - v)), float(np.max(v - prob.phi.values)), 0.0)
            bnd = float(np.max(np.abs(v[op.grid.boundary_mask])))
            results[name] = {"max_violation": viol, "boundary_max": bnd,
                             "pass": bool(viol <= 1e-14 and bnd == 0.0)}
        elif name == "uniqueness":
            start = np.where(np.isfinite(prob.phi.values), prob.phi.values, 0.0)
            u2, rep2 = solve_two_obstacle(op, prob, tol, cfg.max_iter, u0=Field(op.grid, start))
            gap = sup_norm(u - u2)
            results[name] = {"gap": gap, "pass": bool(gap <= 10 * tol and rep2.converged)}
        elif name == "comparison":
            lower = ObstacleProblem(prob.f - 1.0, prob.psi, prob.phi)
            rep = verify_comparison(op, prob, lower, tol=max(1e-6, 10 * tol), solver_tol=tol,
                                    max_iter=cfg.max_iter)
            results[name] = rep.to_dict()
        elif name == "linf_dependence":
            shifted = ObstacleProblem(prob.f, _shift_obstacle(prob.psi, -0.1),
                                      _shift_obstacle(prob.phi, 0.1))
            rep = verify_linf_dependence(op, prob, shifted, tol=max(1e-6, 10 * tol), solver_tol=tol,
                                         max_iter=cfg.max_iter)
            results[name] = rep.to_dict()
        elif name == "golden":
            results[name] = _golden(cfg, {"solution": u})
        else:
            raise ConfigError(f"unknown verifier {name!r} for obstacle problems")
    return results


def _shift_obstacle(obs: Field, c):
    # inf + c stays inf; psi - c and phi + c remain admissible on the boundary
    return Field(obs.grid, obs.values + c)


def _golden(cfg, fields: dict):
    spec = cfg.golden or {}
    tol = float(spec.get("tol", 1e-8))
    out = {"tol": tol, "pass": True}
    for key, fld in fields.items():
        name = spec.get(key)
        if name is None:
            continue
        ref = read_field_csv(cfg.base_dir / name, fld.grid)
        err = sup_norm(fld - ref)
        out[key] = err
        out["pass"] = out["pass"] and err <= tol
    if len(out) == 2:
        out["pass"] = False
        out["error"] = "no golden file configured"
    return out


def run_obstacle(cfg, op, out_dir):
    prob = build_obstacle(cfg, op)
    u, rep = solve_two_obstacle(op, prob, cfg.tol, cfg.max_iter, record_energy=cfg.emit_energy_trace)
    write_field_csv(u, out_dir / "solution.csv")
    _write_json(out_dir / "report.json", rep.to_dict(cfg.emit_energy_trace))
    if not rep.converged:
        return EXIT_NONCONVERGED, {}
    names = cfg.verify or ["lewy_stampacchia", "feasibility"]
    results = verify_obstacle(cfg, op, prob, u, names)
    _write_json(out_dir / "verification.json", results)
    return _status(results), results


def _status(results):
    return EXIT_OK if all(r.get("pass", False) for r in results.values()) else EXIT_VERIFY


# -- membranes --------------------------------------------------------------


def run_membranes(cfg, op, out_dir, eps=None):
    p = cfg.problem
    if "fs" not in p:
        raise ConfigError("membranes problem needs 'fs'")
    fs = [parse_field(s, op.grid, cfg.base_dir) for s in p["fs"]]
    try:
        system = MembraneSystem(fs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    eps = eps if eps is not None else p.get("epsilon")
    if eps is not None:
        us, rep = solve_membranes_penalized(op, system, float(eps), cfg.tol, cfg.max_iter,
                                            record_energy=cfg.emit_energy_trace)
    else:
        us, rep = solve_membranes_vi(op, system, cfg.tol, cfg.max_iter,
                                     record_energy=cfg.emit_energy_trace)
    for i, u in enumerate(us, start=1):
        write_field_csv(u, out_dir / f"membrane_{i}.csv")
    _write_json(out_dir / "report.json", rep.to_dict(cfg.emit_energy_trace))
    if not rep.converged:
        return EXIT_NONCONVERGED, {}
    names = cfg.verify or (["ordering", "lewy_stampacchia"] if eps is None else ["penalty_bound"])
    results = {}
    for name in names:
        if name == "ordering":
            viol = max((float(np.max(us[i].values - us[i - 1].values)) for i in range(1, len(us))),
                       default=0.0)
            results[name] = {"max_violation": max(viol, 0.0), "pass": bool(viol <= 1e-14)}
        elif name == "lewy_stampacchia":
            results[name] = verify_ls_membranes(op, us, fs, _verify_tol(cfg, op)).to_dict()
        elif name == "penalty_bound":
            if eps is None:
                raise ConfigError("penalty_bound needs a penalized run")
            viol = max((float(np.max(us[i].values - us[i - 1].values)) for i in range(1, len(us))),
                       default=-math.inf)
            results[name] = {"max_excess_over_eps": viol - eps,
                             "pass": bool(viol <= eps + 10 * cfg.tol)}
        elif name == "penalized_agreement":
            ref_eps = 2.0**-12
            if eps is None:
                other, r2 = solve_membranes_penalized(op, system, ref_eps, cfg.tol, cfg.max_iter, u0=us)
            else:
                other, r2 = solve_membranes_vi(op, system, cfg.tol, cfg.max_iter)
            gap = max(sup_norm(a - b) for a, b in zip(us, other))
            results[name] = {"gap": gap, "pass": bool(gap <= 1e-2 and r2.converged)}
        elif name == "golden":
            results[name] = _golden(cfg, {f"membrane_{i}": u for i, u in enumerate(us, 1)})
        else:
            raise ConfigError(f"unknown verifier {name!r} for membranes")
    _write_json(out_dir / "verification.json", results)
    return _status(results), results


# -- qvi --------------------------------------------------------------------


def run_qvi(cfg, op, out_dir):
    p = cfg.problem
    for key in ("fs", "phi_ij", "psi_ij"):
        if key not in p:
            raise ConfigError(f"qvi problem needs '{key}'")
    fs = [parse_field(s, op.grid, cfg.base_dir) for s in p["fs"]]
    try:
        prob = QviProblem(fs, p["phi_ij"], p["psi_ij"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    tol = float(cfg.raw.get("solver", {}).get("tol", 1e-6))
    try:
        rep = solve_qvi(op, prob, tol, cfg.max_outer, cfg.max_iter)
    except IncompatibleConstantsError as exc:
        raise ConfigError(str(exc)) from exc
    for i, (hi, lo) in enumerate(zip(rep.max_solution, rep.min_solution), start=1):
        write_field_csv(hi, out_dir / f"max_{i}.csv")
        write_field_csv(lo, out_dir / f"min_{i}.csv")
    payload = rep.to_dict()
    payload["scheme"] = op.scheme
    _write_json(out_dir / "report.json", payload)
    if not rep.converged:
        return EXIT_NONCONVERGED, {}
    names = cfg.verify or ["monotone", "ordering", "fixed_point"]
    results = {}
    for name in names:
        if name == "monotone":
            results[name] = {"max_violation": rep.monotonicity_violation, "pass": rep.monotone_ok}
        elif name == "ordering":
            results[name] = {"pass": rep.ordering_ok}
        elif name == "fixed_point":
            worst = max(rep.fixedpoint_residual, rep.fixedpoint_residual_min)
            results[name] = {"residual": worst, "pass": bool(worst <= 10 * tol)}
        elif name == "band":
            results[name] = {"max_violation": rep.band_violation,
                             "pass": bool(rep.band_violation <= tol)}
        elif name == "ls_chain":
            worst = ls_chain_violation(op, prob, rep.max_solution + rep.min_solution)
            results[name] = {"max_violation": worst, "pass": bool(worst <= _verify_tol(cfg, op))}
        elif name == "golden":
            results[name] = _golden(cfg, {f"max_{i}": u for i, u in enumerate(rep.max_solution, 1)})
        else:
            raise ConfigError(f"unknown verifier {name!r} for qvi")
    _write_json(out_dir / "verification.json", results)
    return _status(results), results


# -- commands ---------------------------------------------------------------


def _apply_overrides(cfg: RunConfig, args):
    if getattr(args, "tol", None) is not None:
        cfg.tol = args.tol
        cfg.raw.setdefault("solver", {})["tol"] = args.tol
    return cfg


def _dispatch(cfg: RunConfig, args, expected: str | None, out=None):
    kind = cfg.problem_kind
    if expected and kind != expected:
        raise ConfigError(f"config holds a {kind or 'missing'} problem, command expects {expected}")
    op = make_operator(cfg, getattr(args, "scheme", None))
    out_dir = _out_dir(cfg, out or getattr(args, "out", None))
    if kind == "obstacle":
        return run_obstacle(cfg, op, out_dir)
    if kind == "membranes":
        return run_membranes(cfg, op, out_dir, getattr(args, "penalized", None))
    if kind == "qvi":
        return run_qvi(cfg, op, out_dir)
    raise ConfigError("config has no problem block")


def cmd_check_operator(args) -> int:
    cfg = load_config(args.config)
    grid = make_grid(cfg.grid)
    sf = make_structural_from(cfg.operator, grid, cfg.base_dir)
    try:
        report = check_structure(sf)
    except StructureEvaluationError as exc:
        raise ConfigError(str(exc)) from exc
    print(report)
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_run(expected):
    def run(args) -> int:
        cfg = _apply_overrides(load_config(args.config), args)
        code, results = _dispatch(cfg, args, expected)
        for name, res in results.items():
            print(f"{name}: {'PASS' if res.get('pass') else 'FAIL'}")
        if code == EXIT_NONCONVERGED:
            print(f"{cfg.path}: solver did not converge", file=sys.stderr)
        return code

    return run


def cmd_verify(args) -> int:
    root = Path(args.fixtures)
    configs = sorted(root.glob("*.json")) if root.is_dir() else [root]
    if not configs:
        raise ConfigError(f"no *.json fixtures in {root}")
    base = Path(args.out) if args.out else (root if root.is_dir() else root.parent) / "verify_out"
    summary = {}
    worst = EXIT_OK
    for path in configs:
        cfg = _apply_overrides(load_config(path), args)
        if not cfg.verify:
            cfg.verify = _full_suite(cfg.problem_kind, cfg)
        try:
            code, results = _dispatch(cfg, args, None, out=base / path.stem)
        except ConfigError as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            code, results = EXIT_CONFIG, {"error": {"pass": False, "message": str(exc)}}
        summary[path.name] = {"exit": code, "results": results}
        for name, res in results.items():
            print(f"{path.name} {name}: {'PASS' if res.get('pass') else 'FAIL'}")
        worst = max(worst, code, key=lambda c: (c != 0, c))
    base.mkdir(parents=True, exist_ok=True)
    _write_json(base / "verify_summary.json", summary)
    return worst


def _full_suite(kind, cfg):
    if kind == "obstacle":
        names = ["feasibility", "lewy_stampacchia", "uniqueness", "comparison", "linf_dependence"]
    elif kind == "membranes":
        names = ["ordering", "lewy_stampacchia", "penalized_agreement"]
    else:
        names = ["monotone", "ordering", "fixed_point", "band", "ls_chain"]
    if cfg.golden:
        names.append("golden")
    return names


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scheme", choices=("edge", "p1"), default=None,
                        help="discretization scheme (overrides the config)")
    common.add_argument("--tol", type=float, default=None, help="solver tolerance")
    common.add_argument("--out", default=None, help="output directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="orliczvi", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("check-operator", parents=[common], help="sample the structural condition")
    p.add_argument("config")
    p.set_defaults(func=cmd_check_operator)
    p = sub.add_parser("solve", parents=[common], help="two-obstacle problem")
    p.add_argument("config")
    p.set_defaults(func=cmd_run("obstacle"))
    p = sub.add_parser("membranes", parents=[common], help="N-membranes problem")
    p.add_argument("config")
    p.add_argument("--penalized", type=float, metavar="EPS", default=None,
                   help="solve the bounded-penalty system with this epsilon")
    p.set_defaults(func=cmd_run("membranes"))
    p = sub.add_parser("qvi", parents=[common], help="implicit-obstacle quasi-variational system")
    p.add_argument("config")
    p.set_defaults(func=cmd_run("qvi"))
    p = sub.add_parser("verify", parents=[common], help="run the invariant suite on fixtures")
    p.add_argument("fixtures", help="directory of *.json configs (or a single config)")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    where = getattr(args, "config", None) or getattr(args, "fixtures", "")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"{where}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleProblemError, StructureEvaluationError) as exc:
        print(f"{where}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
