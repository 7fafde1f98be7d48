import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fraclap.bench import (
    COEXIST_TOL,
    SUITES,
    ConvergenceReport,
    coexistence_rhs,
    exact_ex1,
    exact_ex2,
    exact_ex522_pair,
    exact_poisson_pair,
    plot_data,
    poisson_problem,
    rates,
    reports_to_csv,
    run_coexistence,
    run_operator_bench,
    run_solver_bench,
    run_suite,
    symmetry_error,
)
from fraclap.grid import GridSpec, sample
from fraclap.operator import apply_dense, build_operator
from fraclap.specfun import DomainError, gamma


# ---------------------------------------------------------------------------
# exact solutions
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.7, 2.0])
def test_ex1_prefactor_at_origin(alpha):
    pref = 2**alpha * gamma((1 + alpha) / 2) * gamma(7 + alpha / 2) / (720 * math.sqrt(math.pi))
    assert exact_ex1(alpha, 0.0) == pytest.approx(pref, rel=1e-14)


@pytest.mark.parametrize("x", [0.0, 0.5, 1.3])
def test_ex1_against_fourier_quadrature(x):
    assert exact_ex1(0.5, x) == pytest.approx(oracles.frac_lap_inverse_multiquadric(0.5, x), rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([0.3, 1.0, 1.7]), st.floats(0.0, 5.0))
def test_ex1_even(alpha, x):
    assert exact_ex1(alpha, x) == exact_ex1(alpha, -x)


def test_ex1_alpha_two_is_classical():
    # -u'' of (1 + x^2)^-7 is 14 (1 + x^2)^-9 (1 - 15 x^2)
    x = np.linspace(-2, 2, 41)
    ref = 14 * (1 + x * x) ** -9 * (1 - 15 * x * x)
    err = np.abs(exact_ex1(2.0, x) - ref)
    inside = np.abs(x) <= 1
    assert np.all(err[inside] <= 1e-13 * np.abs(ref[inside]))
    # beyond |x| = 1 the 2F1 transformation is accurate in absolute terms
    assert np.max(err) <= 1e-14 * 14


def test_ex2_identity_at_alpha_zero():
    x = np.linspace(-0.9, 0.9, 7)
    assert np.array_equal(exact_ex2(0.0, 4.0, 1.0, x), (1 - x * x) ** 4)


@pytest.mark.parametrize("alpha,s,a", [(0.5, 4, 1), (1.0, 2, 1.5), (1.7, 3, 2)])
def test_ex2_prefactor_at_origin(alpha, s, a):
    pref = (2**alpha * gamma((alpha + 1) / 2) * gamma(s + 1) * a ** (2 * s - alpha)
            / (math.sqrt(math.pi) * gamma(s + 1 - alpha / 2)))
    assert exact_ex2(alpha, s, a, 0.0) == pytest.approx(pref, rel=1e-14)


@pytest.mark.parametrize("s,a", [(4.0, 1.0), (2.5, 1.0), (3.0, 2.0)])
def test_ex2_alpha_two_is_second_derivative(s, a):
    x = np.linspace(-0.95 * a, 0.95 * a, 39)
    q = a * a - x * x
    ref = 2 * s * q ** (s - 1) - 4 * s * (s - 1) * x * x * q ** (s - 2)
    assert np.max(np.abs(exact_ex2(2.0, s, a, x) - ref)) <= 1e-9


def test_ex2_against_fine_grid_operator():
    h = 1 / 1024
    spec = GridSpec.box(h, [(-1.0, 1.0)])
    u = sample(lambda x: (1 - x * x) ** 4, spec)
    v = apply_dense(build_operator(1.0, spec), u)
    k = int(round((0.25 - spec.origin[0]) / h))
    assert spec.axis(0)[k] == pytest.approx(0.25, abs=1e-15)
    assert v.data[k] == pytest.approx(exact_ex2(1.0, 4.0, 1.0, 0.25), abs=1e-6)


@pytest.mark.parametrize("x", [1.0, -1.2])
def test_ex2_outside_support(x):
    with pytest.raises(DomainError):
        exact_ex2(1.0, 4.0, 1.0, x)


@pytest.mark.parametrize("alpha,s", [(1.0, 4.0), (0.5, 0.25), (1.5, 3.0)])
def test_poisson_pair_trivial_values(alpha, s):
    assert exact_poisson_pair(alpha, s, 0.0) == (0.0, 0.0)
    for x in (1.0, -1.0):
        assert exact_poisson_pair(alpha, s, x)[0] == 0.0


def test_poisson_pair_odd():
    x = np.linspace(0.05, 0.95, 10)
    u, f = exact_poisson_pair(1.3, 2.0, x)
    um, fm = exact_poisson_pair(1.3, 2.0, -x)
    assert np.array_equal(u, -um) and np.array_equal(f, -fm)


def test_poisson_pair_alpha_two_classical():
    # alpha = 2, s = 2: u = x (1 - x^2)^2 / 12 and -u'' = x (1 - 5 x^2 / 3)
    x = np.linspace(-0.95, 0.95, 39)
    u, f = exact_poisson_pair(2.0, 2.0, x)
    assert np.allclose(u, x * (1 - x * x) ** 2 / 12, rtol=1e-13, atol=1e-16)
    assert np.allclose(f, x * (1 - 5 * x * x / 3), rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("alpha,s", [(1.0, 4.0), (1.0, 2.0), (0.5, 3.0)])
def test_poisson_source_at_boundary_is_limit(alpha, s):
    # s > alpha: f is continuous up to |x| = 1 (Gauss summation value); the
    # evaluation point is clipped to 1 - 1e-12, which moves f by O(1e-12 log 1e-12)
    g = math.gamma
    a, b, c = (3 + alpha) / 2, alpha / 2 - s, 1.5
    limit = g(c) * g(c - a - b) / (g(c - a) * g(c - b))
    assert exact_poisson_pair(alpha, s, 1.0)[1] == pytest.approx(limit, rel=1e-9)
    assert exact_poisson_pair(alpha, s, -1.0)[1] == pytest.approx(-limit, rel=1e-9)


def test_poisson_pair_rejects_outside():
    with pytest.raises(DomainError):
        exact_poisson_pair(1.0, 4.0, 1.01)


@pytest.mark.parametrize("alpha,a", [(0.5, 6.0), (1.7, 2.0), (2.0, 1.0)])
def test_ex522_at_origin(alpha, a):
    u, f = exact_ex522_pair(alpha, a, 0.0, 0.0)
    assert u == 1.0
    assert f == pytest.approx((2 * a) ** alpha * gamma(1 + alpha / 2) + 1, rel=1e-14)


@pytest.mark.parametrize("a", [1.0, 2.5, 6.0])
def test_ex522_alpha_two_classical(a):
    x, y = np.meshgrid(np.linspace(-1, 1, 9), np.linspace(-0.7, 1.3, 9))
    r2 = x * x + y * y
    e = np.exp(-a * a * r2)
    _, f = exact_ex522_pair(2.0, a, x, y)
    ref = (4 * a * a - 4 * a**4 * r2) * e + e
    assert np.max(np.abs(f - ref)) <= 1e-11 * (4 * a * a + 1)


def test_ex522_radial():
    t = np.linspace(0, 2 * math.pi, 13)
    _, f = exact_ex522_pair(1.3, 2.0, 0.4 * np.cos(t), 0.4 * np.sin(t))
    assert np.ptp(f) <= 1e-13 * abs(f[0])


def test_coexistence_rhs_values():
    assert coexistence_rhs(0.0, 0.0) == 1.0
    assert coexistence_rhs(1 / 3, 0.0) == pytest.approx(0.0, abs=1e-30)
    assert coexistence_rhs(0.0, -1 / 3) == pytest.approx(0.0, abs=1e-30)
    assert coexistence_rhs(1.0, 0.0) == 0.0
    assert coexistence_rhs(0.8, 0.8) == 0.0
    r = 0.5
    assert coexistence_rhs(r, 0.0) == pytest.approx(math.exp(-r * r) * math.cos(1.5 * math.pi * r) ** 4,
                                                   rel=1e-15)


# ---------------------------------------------------------------------------
# rates and reports
# ---------------------------------------------------------------------------

def test_rates_basic():
    assert rates([4.0, 1.0], [0.5, 0.25]) == [2.0]
    assert rates([3.0, 3.0, 3.0], [1.0, 0.5, 0.25]) == [0.0, 0.0]


@pytest.mark.parametrize("hs", [[0.5, 0.3], [0.5, 0.5], [0.25, 0.5]])
def test_rates_rejects_non_halving(hs):
    with pytest.raises(ValueError):
        rates([1.0, 0.5], hs)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 6.0), st.floats(1e-8, 1.0))
def test_rates_recover_power_law(p, c):
    hs = [2.0**-k for k in range(3, 8)]
    errs = [c * h**p for h in hs]
    assert np.allclose(rates(errs, hs), p, atol=1e-10)


def test_report_rows_csv_and_plot_data():
    rep = ConvergenceReport("ex2", 1.0, "linf", [0.5, 0.25, 0.125], [8.0, 1.0, 0.125], {"s": 4.0})
    assert rep.rates == [None, 3.0, 3.0]
    assert rep.error_at(0.25) == 1.0 and rep.rate_at(0.125) == 3.0
    lines = reports_to_csv([rep]).splitlines()
    assert lines[0] == "example,alpha,norm,h,error,rate"
    assert lines[1] == "ex2,1,linf,0.5,8,"
    assert lines[2] == "ex2,1,linf,0.25,1,3"
    data = plot_data(rep).splitlines()
    assert data[1] == "h,error" and data[-1] == "0.125,0.125"
    d = rep.to_dict()
    assert d["rows"][0] == {"h": 0.5, "error": 8.0, "rate": None}
    json.dumps(d)


def test_ex2_alpha_17_matches_reference():
    rep = [r for r in run_operator_bench("ex2", [1.7], [2.0**-k for k in range(3, 9)]) if r.norm == "linf"][0]
    assert all(2.30 <= r <= 2.33 for r in rep.rates[1:])
    assert rep.error_at(1 / 64) == pytest.approx(6.8950e-5, rel=5e-4)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.7, 2.0])
def test_ex2_rates_near_s_minus_alpha(alpha):
    rep = [r for r in run_operator_bench("ex2", [alpha], [2.0**-k for k in range(3, 9)]) if r.norm == "linf"][0]
    for h, _, rate in rep.rows():
        if h <= 1 / 32 and rate is not None:
            assert abs(rate - (4.0 - alpha)) <= 0.15


@pytest.mark.parametrize("s,alphas", [(4.0, [0.5, 1.0, 1.7, 2.0]), (2.0, [0.5, 1.0, 1.7])])
def test_ex3_rates_near_s_minus_alpha(s, alphas):
    reps = run_operator_bench("ex3", alphas, [1 / 8, 1 / 16, 1 / 32, 1 / 64], s=s, ref_h=2.0**-8)
    for rep in reps:
        if rep.norm != "linf":
            continue
        for h, _, rate in rep.rows():
            if h <= 1 / 32:
                assert abs(rate - (s - rep.alpha)) <= 0.15, (rep.alpha, h, rate)


def test_ex3_reference_must_be_fine_enough():
    with pytest.raises(ValueError):
        run_operator_bench("ex3", [1.0], [1 / 8, 1 / 16], ref_h=1 / 32)


def test_ex1_plateaus_at_round_off():
    reps = run_operator_bench("ex1", [0.5, 2.0], [2.0**-k for k in range(1, 7)])
    for rep in reps:
        e = rep.errors
        # decreasing until the floor, then flat at round-off level
        floor = next(i for i, v in enumerate(e) if v < 1e-12)
        assert all(e[i + 1] < e[i] for i in range(floor))
        # round-off in the stencil sum scales with the centre weight ~ (pi/h)^alpha
        for h, v in zip(rep.hs[floor:], e[floor:]):
            assert v <= 100 * np.finfo(float).eps * (math.pi / h) ** rep.alpha


def test_l2_trend_for_ex2_is_soft():
    # observed l2 order about s - alpha + 1/2 (reported, not gated)
    rep = [r for r in run_operator_bench("ex2", [1.0], [1 / 32, 1 / 64, 1 / 128]) if r.norm == "l2"][0]
    assert all(abs(r - 3.5) <= 0.3 for r in rep.rates[1:])


def test_unknown_example_and_problem():
    with pytest.raises(ValueError):
        run_operator_bench("ex9", [1.0], [0.5])
    with pytest.raises(ValueError):
        run_solver_bench("heat", [1.0], [0.5])


# ---------------------------------------------------------------------------
# solver benchmarks
# ---------------------------------------------------------------------------

def test_poisson_s4_rates():
    reps = run_solver_bench("poisson", [1.0], [1 / 16, 1 / 32, 1 / 64, 1 / 128], s=4.0)
    linf = next(r for r in reps if r.norm == "linf")
    assert linf.example == "poisson_s4"
    assert all(abs(r - 4.0) <= 0.3 for r in linf.rates[2:])
    assert linf.metadata["iterations"] and linf.metadata["s"] == 4.0


def test_poisson_problem_structure():
    p = poisson_problem(1.0, 4.0, 1 / 64)
    assert p.terms == ((1.0, 1.0),) and p.reaction == 0
    assert p.domain.size == 127


def test_gauss2d_spectral_floor():
    reps = run_solver_bench("gauss2d", [0.5], [1 / 8, 1 / 16, 1 / 32], a=6.0, ball="inscribed")
    l2 = next(r for r in reps if r.norm == "l2")
    assert l2.error_at(1 / 32) <= 1e-12
    # the Gaussian is below tau_ext at the box edge, so no exterior band is needed
    assert l2.metadata["truncation"]["L"] >= 1.5


# ---------------------------------------------------------------------------
# coexistence
# ---------------------------------------------------------------------------

def test_symmetry_error_detects_asymmetry():
    spec = GridSpec.box(0.25, [(-1, 1), (-1, 1)])
    u = sample(lambda x, y: np.exp(-(x * x + y * y)), spec)
    assert symmetry_error(u) <= 1e-15
    v = sample(lambda x, y: np.exp(-(x * x + y * y)) * (1 + 0.01 * x), spec)
    assert symmetry_error(v) > 1e-3


def test_coexistence_masses_increase_coarse():
    res = run_coexistence([0.0, 0.5, 1.0], 0.5, 2.0, 1 / 16)
    masses = [r.mass for r in res]
    assert masses == sorted(masses)
    assert all(r.relative_residual <= COEXIST_TOL for r in res)


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def test_suite_names():
    assert set(SUITES) == {"table1", "table3", "table4", "table5", "table6", "fig2", "fig6", "coexist"}
    with pytest.raises(ValueError):
        run_suite("table2")


def test_suite_output_is_deterministic():
    a = run_suite("table1", hs=[0.5, 0.25])
    b = run_suite("table1", hs=[0.5, 0.25])
    assert a.to_csv() == b.to_csv()
    ja, jb = json.loads(a.to_json()), json.loads(b.to_json())
    ja.pop("timing"), jb.pop("timing")
    assert ja == jb
    assert ja["config"]["hs"] == [0.5, 0.25]
