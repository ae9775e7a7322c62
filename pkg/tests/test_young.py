import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import modular_mp, simpson_fixed
from orliczvi import Field, build_grid
from orliczvi.young import (Combination, LogGrowth, LuxemburgBracketError, PowerLaw,
                            QuadratureError, StructureEvaluationError, YoungFunction,
                            adaptive_simpson, check_structure, eval_a, eval_G,
                            is_singular_at_zero, luxemburg_norm, make_structural, modular)


def builtins():
    g = build_grid(1, (0.0, 1.0), 9)
    p_field = Field(g, 1.5 + 1.5 * g.coords[:, 0])
    return {
        "power-1.5": PowerLaw(1.5),
        "power-2": PowerLaw(2.0),
        "power-4": PowerLaw(4.0),
        "variable-power": PowerLaw(p_field),
        "log": LogGrowth(alpha=1.0, p=2.0, beta=1.0, gamma=2.0),
        "log-p3": LogGrowth(alpha=0.5, p=3.0, beta=2.0, gamma=1.0),
        "combination": Combination([(1.0, PowerLaw(2.0)), (0.5, PowerLaw(3.0))]),
    }


# -- eval_a / eval_G ----------------------------------------------------------


def test_eval_a_examples():
    assert eval_a(PowerLaw(2), None, 7.0) == 1.0
    assert eval_a(PowerLaw(3), None, 2.0) == pytest.approx(2.0, rel=1e-15)
    log = LogGrowth(alpha=1, p=2, beta=1, gamma=1)
    assert eval_a(log, None, math.e - 1) == pytest.approx(1.0, rel=1e-15)


def test_eval_a_limits_at_zero():
    assert eval_a(PowerLaw(2), None, 0.0) == 1.0
    assert eval_a(PowerLaw(3), None, 0.0) == 0.0
    assert math.isinf(eval_a(PowerLaw(1.5), None, 0.0))
    assert is_singular_at_zero(PowerLaw(1.5))
    assert not is_singular_at_zero(PowerLaw(2.5))


def test_log_parameters_are_named_in_errors():
    with pytest.raises(StructureEvaluationError, match="gamma"):
        LogGrowth(gamma=0.5)
    with pytest.raises(StructureEvaluationError, match="beta"):
        LogGrowth(beta=-1.0)
    with pytest.raises(StructureEvaluationError, match="alpha"):
        LogGrowth(alpha=0.0)


def test_power_rejects_p_at_most_one():
    with pytest.raises((ValueError, StructureEvaluationError)):
        PowerLaw(1.0)


def test_eval_G_examples():
    yf = YoungFunction(PowerLaw(2))
    assert eval_G(yf, None, 3.0) == pytest.approx(4.5, rel=1e-15)
    for sf in builtins().values():
        assert eval_G(YoungFunction(sf), None if not sf.is_variable else [0.5], 0.0) == 0.0


def test_log_G_matches_fixed_simpson():
    # a = t log(t + 2): integrand s^2 log(s + 2)
    sf = LogGrowth(alpha=1.0, p=3.0, beta=1.0, gamma=2.0)
    ref = simpson_fixed(lambda s: s**2 * np.log(s + 2.0), 0.0, 1.0)
    closed = eval_G(YoungFunction(sf), None, 1.0)
    quad = eval_G(YoungFunction(sf, force_quadrature=True), None, 1.0)
    assert abs(closed - ref) <= 1e-9 * abs(ref)
    assert abs(quad - ref) <= 1e-9 * abs(ref)


@pytest.mark.parametrize("t", [1e-3, 0.1, 1.0, 10.0, 1e3])
def test_log_G_closed_form_against_mpmath(t):
    sf = LogGrowth(alpha=1.3, p=2.5, beta=0.7, gamma=1.5)
    with mpmath.workdps(30):
        ref = mpmath.quad(lambda s: 1.3 * s**1.5 * mpmath.log(0.7 * s + 1.5), [0, t])
    got = eval_G(YoungFunction(sf), None, t)
    assert got == pytest.approx(float(ref), rel=1e-12)


def test_quadrature_error_reports_achieved_tolerance():
    with pytest.raises(QuadratureError) as info:
        adaptive_simpson(lambda s: s**-0.999 if s > 0 else 0.0, 0.0, 1.0, rtol=1e-14, max_depth=8)
    assert info.value.achieved > 0


def test_adaptive_simpson_on_smooth_integrand():
    assert adaptive_simpson(np.sin, 0.0, math.pi) == pytest.approx(2.0, rel=1e-10)


# -- check_structure ------------------------------------------------------------


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_structure_of_power_law(p):
    rep = check_structure(PowerLaw(p))
    assert rep.passed
    assert rep.lower_est == pytest.approx(p - 1, abs=1e-6)
    assert rep.upper_est == pytest.approx(p - 1, abs=1e-6)


def test_structure_of_log_example_matches_dense_oracle():
    rep = check_structure(LogGrowth(alpha=1, p=2, beta=1, gamma=2))
    assert rep.passed
    t = np.logspace(-4, 4, 161)
    ratio = 1 + t / ((t + 2) * np.log(t + 2))
    assert 1 <= rep.lower_est and rep.upper_est <= 2
    assert rep.lower_est == pytest.approx(ratio.min(), abs=1e-6)
    assert rep.upper_est == pytest.approx(ratio.max(), abs=1e-6)


@pytest.mark.parametrize("name", list(builtins()))
def test_every_builtin_passes_and_honors_declared_bounds(name):
    sf = builtins()[name]
    rep = check_structure(sf)
    assert rep.passed, rep.failures
    if sf.declared_bounds:
        lo, hi = sf.declared_bounds
        assert lo - 1e-4 <= rep.lower_est and rep.upper_est <= hi + 1e-4
    assert rep.ratio_G_min >= 1 + rep.lower_est - 1e-4
    assert rep.ratio_G_max <= 1 + rep.upper_est + 1e-4


def test_violated_declared_bounds_fail():
    rep = check_structure(PowerLaw(3.0, declared_bounds=(0.5, 1.5)))
    assert not rep.passed
    assert any("declared" in f for f in rep.failures)


def test_inverted_declared_bounds_are_rejected():
    with pytest.raises(ValueError):
        PowerLaw(3.0, declared_bounds=(0.5, 0.4))


def test_variable_power_bounds_span_p_range():
    g = build_grid(1, (0.0, 1.0), 9)
    rep = check_structure(PowerLaw(Field(g, 1.5 + 1.5 * g.coords[:, 0])))
    assert rep.lower_est == pytest.approx(0.5, abs=1e-6)
    assert rep.upper_est == pytest.approx(2.0, abs=1e-6)


def test_catalog_lookup():
    assert make_structural("power", p=2).id == "power"
    assert make_structural("log", p=2, gamma=2).id == "log"
    with pytest.raises(ValueError, match="unknown"):
        make_structural("nope")
    with pytest.raises(ValueError):
        Combination([(-1.0, PowerLaw(2))])


# -- properties of G ------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(list(builtins())), st.floats(1e-3, 50), st.floats(1e-3, 50),
       st.floats(0.01, 0.99), st.floats(0, 1))
def test_G_is_convex(name, t1, t2, theta, x):
    sf = builtins()[name]
    yf = YoungFunction(sf)
    pt = [x] if sf.is_variable else None
    lhs = eval_G(yf, pt, theta * t1 + (1 - theta) * t2)
    rhs = theta * eval_G(yf, pt, t1) + (1 - theta) * eval_G(yf, pt, t2)
    assert lhs <= rhs + 1e-12 * max(1.0, rhs)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(list(builtins())), st.floats(1e-2, 20), st.floats(0, 1))
def test_g_is_derivative_of_G(name, t, x):
    sf = builtins()[name]
    yf = YoungFunction(sf)
    pt = [x] if sf.is_variable else None
    h = 1e-6 * t
    fd = (eval_G(yf, pt, t + h) - eval_G(yf, pt, t - h)) / (2 * h)
    g = float(np.ravel(yf.g(np.atleast_2d(pt) if pt else None, np.array([t])))[0])
    assert abs(fd - g) <= 1e-5 * abs(g)


@pytest.mark.parametrize("name", list(builtins()))
def test_G_positive_and_increasing(name):
    sf = builtins()[name]
    yf = YoungFunction(sf)
    pt = np.array([[0.3]]) if sf.is_variable else None
    t = np.logspace(-3, 3, 50)
    G = yf.G(pt, t)
    assert np.all(G > 0) and np.all(np.diff(G) > 0)


# -- modular and Luxemburg norm ------------------------------------------------------


def test_modular_examples():
    g = build_grid(1, (0.0, 1.0), 11)
    yf = YoungFunction(PowerLaw(2))
    assert modular(yf, Field.zeros(g)) == 0.0
    assert modular(yf, Field.constant(g, 2.0)) == pytest.approx(2.0, rel=1e-15)


def test_modular_matches_extended_precision_sum():
    rng = np.random.default_rng(3)
    g = build_grid(1, (0.0, 1.0), 41)
    u = Field(g, rng.normal(size=g.size))
    yf = YoungFunction(PowerLaw(3.0))
    from orliczvi.mesh import lumped_masses

    ref = modular_mp(u.values, lumped_masses(g), lambda t: t**3 / 3)
    assert modular(yf, u) == pytest.approx(float(ref), rel=1e-14)


def test_luxemburg_examples():
    g = build_grid(2, ((0.0, 1.0), (0.0, 1.0)), 5)
    yf = YoungFunction(PowerLaw(2))
    assert luxemburg_norm(yf, Field.zeros(g)) == 0.0
    for c in (0.1, 1.0, 7.0):
        assert luxemburg_norm(yf, Field.constant(g, c)) == pytest.approx(c / math.sqrt(2), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["power-1.5", "power-4", "log", "combination"]),
       st.floats(-3, 3))
def test_luxemburg_normalizes_modular(seed, name, log_scale):
    rng = np.random.default_rng(seed)
    g = build_grid(1, (0.0, 1.0), 17)
    u = Field(g, 10**log_scale * rng.normal(size=g.size))
    yf = YoungFunction(builtins()[name])
    mu = luxemburg_norm(yf, u)
    rho = modular(yf, Field(g, u.values / mu))
    assert 1 - 1e-8 <= rho <= 1.0
    lo, hi = builtins()[name].declared_bounds
    full = modular(yf, u)
    if mu > 1:
        assert mu ** (1 + lo) * (1 - 1e-8) <= full <= mu ** (1 + hi) * (1 + 1e-8)
    else:
        assert mu ** (1 + hi) * (1 - 1e-8) <= full <= mu ** (1 + lo) * (1 + 1e-8)


def test_luxemburg_rejects_nonfinite():
    g = build_grid(1, (0.0, 1.0), 5)
    with pytest.raises(ValueError):
        luxemburg_norm(YoungFunction(PowerLaw(2)), Field.constant(g, np.inf))


def test_luxemburg_bracket_error_for_degenerate_weights():
    yf = YoungFunction(PowerLaw(2))
    with pytest.raises(LuxemburgBracketError):
        luxemburg_norm(yf, np.array([1.0]), weights=np.array([1e-300]), max_doublings=5)
