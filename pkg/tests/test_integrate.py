import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from schurerk.integrate import (
    InstabilityError,
    IntegrationError,
    IVProblem,
    StepControl,
    StepSizeUnderflow,
    build_weights,
    erk_step,
    integrate_adaptive,
    integrate_fixed,
    rk4_step,
    schur_transform,
)
from schurerk.phi import phi_matrix, phi_scalar
from schurerk.problems import heat_quartic, system1, system2, triangular3
from schurerk.tableaux import METHODS, tableau

EXPONENTIAL = ["EXPEULER", "ERK4CM", "ERK4K", "ERK4HO5", "ERK43ZB"]


def zero_f(t, y):
    return np.zeros_like(y)


def err_at_end(problem, result):
    return float(np.linalg.norm(result.y_final - problem.exact(problem.t_end)))


def one_step(name, problem, h, t=0.0, y=None):
    tab = tableau(name)
    w = build_weights(tab, problem.linear, h)
    y = problem.y0 if y is None else y
    return erk_step(tab, w, problem, t, y, h)


# -- erk_step ---------------------------------------------------------------------

@pytest.mark.parametrize("h", [1e-3, 0.05, 0.7, 3.0])
def test_exponential_euler_exact_without_forcing(h):
    p = IVProblem(linear=20.0, nonlinearity=zero_f, y0=np.array([1.0]))
    y1, _, _ = one_step("EXPEULER", p, h)
    assert abs(y1[0] - math.exp(-20 * h)) <= 1e-15 * max(1.0, math.exp(-20 * h)) + 1e-300


def test_cox_matthews_with_zero_linear_part_is_rk4():
    F = lambda t, y: np.array([y[1], -np.sin(y[0]) + math.cos(t)])
    p = IVProblem(linear=0.0, nonlinearity=F, y0=np.array([0.3, -0.2]))
    y_cm, _, _ = one_step("ERK4CM", p, 0.1, t=0.4)
    y_rk, _, _ = one_step("RK4", p, 0.1, t=0.4)
    np.testing.assert_allclose(y_cm, y_rk, rtol=0, atol=1e-14)


@pytest.mark.parametrize("name", EXPONENTIAL)
@pytest.mark.parametrize("kind", ["scalar", "diagonal", "matrix"])
def test_constant_forcing_is_integrated_exactly(name, kind):
    rng = np.random.default_rng(1)
    n = 4
    c = rng.standard_normal(n)
    if kind == "scalar":
        lin = 3.0
    elif kind == "diagonal":
        lin = np.array([0.5, 4.0, 30.0, 1e-3])
    else:
        lin = rng.standard_normal((n, n)) + 3 * np.eye(n)
    p = IVProblem(linear=lin, nonlinearity=lambda t, y: c, y0=rng.standard_normal(n))
    h = 0.3
    y1, y_emb, _ = one_step(name, p, h)
    L = p.linear_matrix() if kind != "scalar" else lin * np.eye(n)
    vals = phi_matrix(1, -h * L)
    want = vals[0] @ p.y0 + h * vals[1] @ c
    np.testing.assert_allclose(y1, want, rtol=0, atol=1e-12 * (1 + np.abs(want).max()))
    if y_emb is not None:
        np.testing.assert_allclose(y_emb, want, rtol=0, atol=1e-12 * (1 + np.abs(want).max()))


def test_diag_and_matrix_weights_agree_for_diagonal_problem():
    d = np.array([1.0, 10.0, 100.0])
    F = lambda t, y: np.sin(y) + t
    pd = IVProblem(linear=d, nonlinearity=F, y0=np.array([1.0, -1.0, 0.5]))
    pm = IVProblem(linear=np.diag(d), nonlinearity=F, y0=pd.y0)
    for name in EXPONENTIAL:
        a, _, _ = one_step(name, pd, 0.05)
        b, _, _ = one_step(name, pm, 0.05)
        np.testing.assert_allclose(a.real, b, rtol=0, atol=1e-13)


def test_stage_count_of_evaluations():
    p = system1()
    for name in METHODS:
        tab = tableau(name)
        _, _, ev = one_step(name, p, 0.1)
        assert ev == tab.stage_count + (1 if tab.uses_embedded_stage else 0)


# -- rk4_step ---------------------------------------------------------------------

def test_rk4_zero_field_leaves_state():
    p = IVProblem(linear=0.0, nonlinearity=zero_f, y0=np.array([1.0, 2.0]))
    np.testing.assert_array_equal(rk4_step(p, 0.0, p.y0, 0.5), p.y0)


@pytest.mark.parametrize("m", [2, 3, 4, 5])
@pytest.mark.parametrize("h", [0.01, 1.0, 10.0])
def test_rk4_exact_on_nilpotent_systems(m, h):
    rng = np.random.default_rng(m)
    S = np.triu(rng.standard_normal((m, m)), 1)
    y0 = rng.standard_normal(m)
    p = IVProblem(linear=-S, nonlinearity=zero_f, y0=y0)
    # exp(hS) terminates after m terms
    want = sum(np.linalg.matrix_power(h * S, j) @ y0 / math.factorial(j) for j in range(m))
    got = rk4_step(p, 0.0, y0, h)
    assert np.abs(got - want).max() <= 1e-12 * (1 + np.abs(want).max())


def test_rk4_leaves_stability_interval():
    p = IVProblem(linear=75.0, nonlinearity=zero_f, y0=np.array([1.0]))
    assert abs(rk4_step(p, 0.0, p.y0, 0.1)[0]) > 1
    # just inside the boundary (2.785 / 75) the step contracts
    assert abs(rk4_step(p, 0.0, p.y0, 2.7 / 75)[0]) < 1


def test_rk4_reports_nonfinite_state():
    p = IVProblem(linear=0.0, nonlinearity=lambda t, y: y * 1e300, y0=np.array([1e10]))
    with pytest.raises(InstabilityError), np.errstate(over="ignore", invalid="ignore"):
        rk4_step(p, 0.0, p.y0, 1.0)


# -- schur_transform --------------------------------------------------------------

def test_schur_transform_of_diagonal_matrix():
    d = np.array([3.0, 1.0, 2.0])
    F = lambda t, y: np.cos(y)
    p = IVProblem(linear=np.diag(d), nonlinearity=F, y0=np.array([0.1, 0.2, 0.3]))
    sp = schur_transform(p)
    np.testing.assert_allclose(np.abs(sp.u), np.abs(np.round(np.abs(sp.u))), atol=1e-14)
    np.testing.assert_allclose(np.sort(sp.d.real), np.sort(d))
    y = np.array([0.4, -0.5, 0.6])
    np.testing.assert_allclose(sp.to_original(sp.nonlinearity(0.0, sp.to_schur(y))),
                               F(0.0, y), atol=1e-14)


def test_schur_transform_roundtrip_and_spectrum():
    p = triangular3()
    sp = schur_transform(p)
    np.testing.assert_allclose(np.sort(-sp.d.real), [-75, -15, -1], rtol=1e-13)
    assert sp.schur_time >= 0
    rng = np.random.default_rng(4)
    y = rng.standard_normal(3)
    np.testing.assert_allclose(sp.to_original(sp.to_schur(y)), y, atol=1e-13)
    Y = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    np.testing.assert_allclose(sp.to_schur(sp.factorization.u @ Y), Y, atol=1e-13)


def test_schur_transform_needs_matrix():
    with pytest.raises(ValueError):
        schur_transform(IVProblem(linear=1.0, nonlinearity=zero_f, y0=np.ones(2)))


def test_transformed_nonlinearity_includes_off_diagonal_part():
    p = system2()
    sp = schur_transform(p)
    Y = sp.to_schur(np.array([0.3, -0.7]))
    # G(t, Y) - D Y must equal U^H f(t, U Y)
    lhs = sp.nonlinearity(1.0, Y) - sp.d * Y
    rhs = sp.to_schur(p.rhs(1.0, sp.to_original(Y)))
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_imaginary_residue_is_checked():
    sp = schur_transform(system1())
    with pytest.raises(IntegrationError):
        sp.to_original(np.array([1j, 0.0]), check=True)


# -- integrate_fixed --------------------------------------------------------------

def test_triangular3_matrix_formulation_is_exact():
    p = triangular3()
    r = integrate_fixed(p, "ERK4HO5", 0.5, formulation="matrix")
    assert err_at_end(p, r) <= 1e-10


def test_triangular3_rk4_unstable_at_coarse_step():
    p = triangular3()
    r = integrate_fixed(p, "RK4", 0.1)
    assert err_at_end(p, r) > 1


def test_triangular3_vector_formulation_converges_at_fourth_order():
    p = triangular3()
    e1 = err_at_end(p, integrate_fixed(p, "ERK4HO5", 0.02, formulation="vector"))
    e2 = err_at_end(p, integrate_fixed(p, "ERK4HO5", 0.01, formulation="vector"))
    assert 12 <= e1 / e2 <= 20


@pytest.mark.parametrize("h", [0.5, 0.1, 0.01])
def test_exactness_hierarchy_matrix_formulation(h):
    p = triangular3()
    assert err_at_end(p, integrate_fixed(p, "ERK4CM", h, formulation="matrix")) <= 1e-12


def mildly_nonnormal():
    lin = np.array([[2.0, 3.0, 0.5], [0.0, 6.0, 4.0], [0.0, 0.0, 11.0]])
    F = lambda t, y: np.cos(y) + np.sin(t)
    return IVProblem(linear=lin, nonlinearity=F, y0=np.array([1.0, 0.0, -1.0]))


# System 2 is left out: its Schur coupling (~1e3) makes the explicit S Y
# unstable at this h, which is the point of the matrix formulation
@pytest.mark.parametrize("name", ["ERK4CM", "ERK4K", "ERK4HO5", "ERK43ZB"])
@pytest.mark.parametrize("make", [system1, mildly_nonnormal, lambda: heat_quartic(15)])
def test_formulation_equivalence(name, make):
    p = make().with_span(t_end=1.0)
    h = 1 / 128
    a = integrate_fixed(p, name, h, formulation="matrix", keep="final").y_final
    b = integrate_fixed(p, name, h, formulation="vector", keep="final").y_final
    assert np.abs(a - b).max() <= 1e-8


def test_vector_output_is_real_for_real_problem():
    r = integrate_fixed(system2().with_span(t_end=0.5), "ERK4HO5", 0.05, formulation="vector")
    assert r.y.dtype == np.float64


def observed_orders(p, name, hs, formulation="matrix", embedded=False):
    errs = [err_at_end(p, integrate_fixed(p, name, h, formulation=formulation,
                                          keep="final", embedded=embedded)) for h in hs]
    return [math.log2(a / b) for a, b in zip(errs, errs[1:])
            if 1e-10 <= b and a <= 1e-3], errs


@pytest.mark.parametrize("name", ["ERK4HO5", "ERK43ZB"])
@pytest.mark.parametrize("make", [system1, heat_quartic])
def test_observed_order_is_four(name, make):
    p = make().with_span(t_end=1.0)
    orders, _ = observed_orders(p, name, [2.0**-j for j in range(1, 9)])
    assert orders
    assert all(abs(q - 4) <= 0.4 for q in orders), orders


def test_embedded_row_observed_order_is_three():
    p = system1().with_span(t_end=1.0)
    orders, _ = observed_orders(p, "ERK43ZB", [2.0**-j for j in range(2, 9)], embedded=True)
    assert orders
    assert all(abs(q - 3) <= 0.4 for q in orders), orders


def test_fixed_result_shape_and_times():
    p = system1().with_span(t_end=1.0)
    r = integrate_fixed(p, "ERK4K", 0.125)
    assert len(r.t) == 9 and r.t[-1] == 1.0
    assert np.all(np.diff(r.t) > 0)
    assert r.stats.steps_accepted == 8
    assert r.stats.weight_refresh_count == 1
    assert r.stats.f_evaluations == 8 * 4
    rf = integrate_fixed(p, "ERK4K", 0.125, keep="final")
    assert len(rf.t) == 2
    np.testing.assert_array_equal(rf.y_final, r.y_final)


def test_fixed_step_argument_errors():
    p = system1().with_span(t_end=1.0)
    with pytest.raises(ValueError):
        integrate_fixed(p, "ERK4K", 0.3)
    with pytest.raises(ValueError):
        integrate_fixed(p, "ERK4K", -0.1)
    with pytest.raises(ValueError):
        integrate_fixed(p, "ERK4K", 1e-3, max_steps=10)
    with pytest.raises(ValueError):
        integrate_fixed(p, "ERK4K", 0.5, formulation="sparse")
    with pytest.raises(ValueError):
        integrate_fixed(p, "ERK4K", 0.5, embedded=True)
    with pytest.raises(KeyError):
        integrate_fixed(p, "DOPRI5", 0.5)


def test_fixed_step_instability_keeps_partial_result():
    p = triangular3(t_end=500.0)
    with pytest.raises(InstabilityError) as info:
        integrate_fixed(p, "RK4", 0.5)
    partial = info.value.result
    assert partial is not None and len(partial.t) >= 1
    assert np.all(np.isfinite(partial.y))


# -- integrate_adaptive -----------------------------------------------------------

def test_adaptive_system2_tight_tolerance():
    p = system2()
    r = integrate_adaptive(p, "ERK43ZB", StepControl(rtol=1e-8, atol=1e-8))
    assert r.t[-1] == p.t_end
    assert err_at_end(p, r) <= 1e-5


@pytest.mark.parametrize("formulation", ["matrix", "vector"])
def test_accepted_steps_satisfy_tolerance(formulation):
    p = system2().with_span(t_end=3.0)
    r = integrate_adaptive(p, control=StepControl(rtol=1e-6, atol=1e-6),
                           formulation=formulation, record_steps=True)
    accepted = [s for s in r.steps if s.accepted]
    assert len(accepted) == r.stats.steps_accepted
    assert all(s.err_norm <= 1 for s in accepted)
    assert all(s.err_norm > 1 for s in r.steps if not s.accepted)
    assert np.all(np.diff(r.t) > 0)


def test_constant_forcing_grows_step_by_fac_max():
    n = 3
    lin = np.array([[2.0, 1.0, 0.0], [0.0, 5.0, 1.0], [0.0, 0.0, 9.0]])
    p = IVProblem(linear=lin, nonlinearity=lambda t, y: np.ones(n), y0=np.zeros(n), t_end=100.0)
    ctrl = StepControl(h_init=1e-3, h_max=10.0)
    # matrix formulation: in Schur coordinates S Y joins the explicit part, so
    # G is no longer constant for non-normal L
    r = integrate_adaptive(p, control=ctrl, formulation="matrix", record_steps=True)
    assert r.stats.steps_rejected == 0
    assert all(s.err_norm <= 1e-6 for s in r.steps)
    hs = [s.h for s in r.steps]
    lo = ctrl.fac_max * 2.0 ** (-1 / ctrl.ladder)
    k = 0
    while hs[k + 1] < ctrl.h_max * 2.0 ** (-1 / ctrl.ladder):
        assert lo - 1e-12 <= hs[k + 1] / hs[k] <= ctrl.fac_max + 1e-12
        k += 1
    assert k >= 3
    assert max(hs) <= ctrl.h_max


def test_rejected_steps_do_not_grow():
    p = system2().with_span(t_end=2.0)
    r = integrate_adaptive(p, control=StepControl(rtol=1e-9, atol=1e-9, h_init=0.5),
                           record_steps=True)
    assert r.stats.steps_rejected >= 1
    for a, b in zip(r.steps, r.steps[1:]):
        if not a.accepted:
            assert b.h <= a.h


def test_weight_refresh_counts_distinct_steps_in_vector_runs():
    p = heat_quartic(15)
    r = integrate_adaptive(p, control=StepControl(rtol=1e-7, atol=1e-7), formulation="vector",
                           record_steps=True)
    assert r.stats.weight_refresh_count == len(r.h_values)
    assert r.stats.weight_refresh_count == sum(s.weight_refresh for s in r.steps)
    # the step ladder makes sizes recur
    assert len(r.h_values) < len(r.steps)


def test_step_ladder_quantization():
    ctrl = StepControl()
    for h in [1e-5, 0.013, 0.5, 1.0, 7.3]:
        q = ctrl.quantize(h)
        assert q <= h * (1 + 1e-12)
        assert q > h * 2.0 ** (-1 / ctrl.ladder) * (1 - 1e-12)
        j = math.log2(q) * ctrl.ladder
        assert abs(j - round(j)) <= 1e-9
    assert StepControl(ladder=None).quantize(0.013) == 0.013


@settings(max_examples=50, deadline=None)
@given(h=st.floats(1e-8, 1e3), ladder=st.integers(1, 32))
def test_quantize_is_idempotent(h, ladder):
    ctrl = StepControl(ladder=ladder)
    q = ctrl.quantize(h)
    assert ctrl.quantize(q) == q


def test_step_control_validation():
    with pytest.raises(ValueError):
        StepControl(fac_min=1.5)
    with pytest.raises(ValueError):
        StepControl(fac_max=0.9)
    with pytest.raises(ValueError):
        StepControl(rtol=0)
    with pytest.raises(ValueError):
        StepControl(ladder=0)


def test_adaptive_needs_embedded_row():
    with pytest.raises(ValueError):
        integrate_adaptive(system1(), "ERK4HO5")


def test_adaptive_h_min_underflow():
    p = triangular3()
    ctrl = StepControl(rtol=1e-12, atol=1e-12, h_min=0.05, h_init=0.1)
    with pytest.raises(StepSizeUnderflow) as info:
        integrate_adaptive(p, control=ctrl, formulation="vector")
    assert info.value.result is not None


def test_adaptive_step_budget():
    with pytest.raises(IntegrationError):
        integrate_adaptive(system2(), control=StepControl(rtol=1e-10, atol=1e-10), max_steps=20)


def test_adaptive_diagonal_problem_matches_exact():
    d = np.array([1.0, 50.0, 400.0])
    p = IVProblem(linear=d, nonlinearity=zero_f, y0=np.ones(3),
                  exact=lambda t: np.exp(-d * t))
    r = integrate_adaptive(p, control=StepControl(rtol=1e-9, atol=1e-9))
    assert err_at_end(p, r) <= 1e-12
    # F = 0 is exact for every step size, so the controller grows the step freely
    assert r.stats.steps_rejected == 0


def test_ivproblem_validation():
    with pytest.raises(ValueError):
        IVProblem(linear=np.ones(3), nonlinearity=zero_f, y0=np.ones(2))
    with pytest.raises(ValueError):
        IVProblem(linear=np.eye(3), nonlinearity=zero_f, y0=np.ones(2))
    with pytest.raises(ValueError):
        IVProblem(linear=np.ones((2, 2, 2)), nonlinearity=zero_f, y0=np.ones(2))
