import math

import numpy as np
import pytest

from fraclap.bench import exact_ex522_pair, exact_poisson_pair, gauss2d_problem, poisson_problem
from fraclap.grid import GridSpec, norm_l2, sample
from fraclap.solver import (
    ConvergenceError,
    EllipticProblem,
    assemble_rhs,
    default_max_iter,
    pcg,
    relative_l2_difference,
    solve,
    solve_dense,
    system_matrix,
)
from fraclap.weights import weight


def _poisson(alpha, n, rhs=lambda x: np.exp(x) * np.cos(3 * x)):
    h = 2.0 / (n + 1)
    return EllipticProblem(((1.0, alpha),), GridSpec.box(h, [(-1, 1)]), rhs)


def test_zero_rhs_gives_zero_in_zero_iterations():
    rep = solve(_poisson(1.3, 31, lambda x: 0 * x))
    assert rep.iterations == 0 and np.all(rep.solution.data == 0)


def test_assemble_rhs_homogeneous_is_sampled_source():
    p = _poisson(0.8, 15)
    b, info = assemble_rhs(p)
    assert np.array_equal(b.data, sample(p.rhs, p.domain).data)
    assert info["exterior"] is False


def test_assemble_rhs_zero_data():
    spec = GridSpec.box(0.25, [(-1, 1), (-1, 1)])
    p = EllipticProblem(((1.0, 1.0),), spec, lambda x, y: 0 * x * y, exterior=lambda x, y: 0 * x * y)
    b, _ = assemble_rhs(p)
    assert np.all(b.data == 0)


def test_exterior_lift_matches_direct_sum():
    # b_k = f_k - sum_{j outside} w(|k - j|) g(x_j), summed explicitly on a wide band
    alpha, h = 1.4, 0.125
    spec = GridSpec.box(h, [(-1, 1)])
    g = lambda x: np.exp(-x * x)
    p = EllipticProblem(((1.0, alpha),), spec, lambda x: 1 + 0 * x, exterior=g)
    b, info = assemble_rhs(p)
    xi = spec.axis(0)
    xo = np.concatenate([np.arange(-8.0, -1 + h / 2, h), np.arange(1.0, 8.0 + h / 2, h)])
    lags = np.rint((xi[:, None] - xo[None, :]) / h).astype(int) ** 2
    w = np.vectorize(lambda m: weight(alpha, h, 1, int(m)))(lags)
    direct = 1 - w @ g(xo)
    assert np.allclose(b.data, direct, rtol=0, atol=1e-14 * weight(alpha, h, 1, 0))
    assert info["band"] > 5.0 and info["L"] >= info["band"]


def test_gaussian_exterior_band_is_narrow():
    p = gauss2d_problem(0.5, 6.0, 1 / 32)
    _, info = assemble_rhs(p)
    assert info["band"] <= 1.0
    assert info["tau_ext"] == 1e-16


# at alpha = 2 even the Cholesky solution has relative residual ~7e-13 (round-off floor)
@pytest.mark.parametrize("alpha,tol", [(0.5, 1e-13), (1.0, 1e-13), (1.7, 1e-13), (2.0, 1e-12)])
def test_cg_agrees_with_cholesky(alpha, tol):
    p = _poisson(alpha, 128)
    dense = solve_dense(p)
    rep = solve(p, tol=tol)
    assert relative_l2_difference(rep.solution, dense) <= 1e-10
    assert rep.relative_residual <= tol


def test_dense_matrix_symmetric():
    A = system_matrix(_poisson(1.7, 64))
    assert np.max(np.abs(A - A.T)) <= 1e-12 * np.abs(A).max()


def test_mixture_matrix_positive_definite():
    spec = GridSpec.box(2 / 65, [(-1, 1)])
    p = EllipticProblem(((0.5, 0.5), (0.5, 2.0)), spec, lambda x: 1 + 0 * x)
    np.linalg.cholesky(system_matrix(p))


def test_mixture_of_equal_orders_is_single_operator():
    spec = GridSpec.box(1 / 32, [(-1, 1)])
    f = lambda x: np.sin(2 * x) + 1
    single = solve(EllipticProblem(((1.0, 1.2),), spec, f), tol=1e-13).solution
    mixed = solve(EllipticProblem(((0.3, 1.2), (0.7, 1.2)), spec, f), tol=1e-13).solution
    assert relative_l2_difference(mixed, single) <= 1e-11


def test_halving_tolerance_is_stable():
    p = _poisson(0.9, 200)
    old_tol = 1e-8
    u1 = solve(p, tol=old_tol).solution
    u2 = solve(p, tol=old_tol / 2).solution
    assert relative_l2_difference(u1, u2) <= 10 * old_tol


def test_reaction_term_and_dense_agree_2d():
    spec = GridSpec.box(1 / 8, [(-1, 1), (-1, 1)])
    p = EllipticProblem(((1.0, 1.3),), spec, lambda x, y: np.cos(x) * (1 + y * y), reaction=2.0)
    rep = solve(p, tol=1e-13)
    assert relative_l2_difference(rep.solution, solve_dense(p)) <= 1e-10


def test_poisson_solution_accuracy():
    alpha, s, h = 1.0, 4.0, 1 / 64
    rep = solve(poisson_problem(alpha, s, h), tol=1e-13)
    exact = sample(lambda x: exact_poisson_pair(alpha, s, x)[0], rep.solution.spec)
    err = rep.solution - exact
    assert np.max(np.abs(err.data)) < 1e-8


def test_gaussian_elliptic_spectral_accuracy():
    alpha, a, h = 0.5, 6.0, 1 / 32
    rep = solve(gauss2d_problem(alpha, a, h), tol=1e-14)
    exact = sample(lambda x, y: exact_ex522_pair(alpha, a, x, y)[0], rep.solution.spec)
    assert norm_l2(rep.solution - exact) <= 1e-12


def test_nonconvergence_is_reported():
    with pytest.raises(ConvergenceError) as info:
        solve(_poisson(1.9, 256), tol=1e-14, max_iter=3)
    exc = info.value
    assert len(exc.history) == 4 and exc.report.iterations == 3
    assert exc.history[-1] > 1e-14


def test_report_dictionary():
    rep = solve(_poisson(1.0, 31))
    d = rep.to_dict()
    for key in ("alphas", "coefficients", "reaction", "h", "extents", "tol", "iterations",
                "relative_residual", "matvec_count", "truncation"):
        assert key in d
    assert set(d["timing"]) == {"wall_time_ms"}
    assert "L" in d["truncation"] and "tau_ext" in d["truncation"]
    assert d["matvec_count"] >= d["iterations"]


@pytest.mark.parametrize("kwargs", [
    dict(terms=()),
    dict(terms=((1.0, 2.5),)),
    dict(terms=((-1.0, 1.0),)),
    dict(terms=((0.0, 1.0),)),
    dict(terms=((1.0, 1.0),), reaction=-1.0),
])
def test_problem_validation(kwargs):
    with pytest.raises(ValueError):
        EllipticProblem(domain=GridSpec(0.5, (3,), (0.0,)), rhs=lambda x: x, **kwargs)


def test_solve_dense_size_limit():
    p = EllipticProblem(((1.0, 1.0),), GridSpec(0.01, (70, 70), (0.0, 0.0)), lambda x, y: x + y)
    with pytest.raises(ValueError):
        solve_dense(p)


def test_pcg_on_small_spd_system():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((20, 20))
    A = M @ M.T + 20 * np.eye(20)
    b = rng.standard_normal(20)
    x, hist, mv = pcg(lambda v: A @ v, b, float(np.mean(np.diag(A))), 1e-12, 100)
    assert np.allclose(A @ x, b, atol=1e-10) and hist[-1] <= 1e-12 and mv == len(hist) - 1


def test_default_iteration_cap_grows_with_conditioning():
    spec = GridSpec.box(1 / 64, [(-1, 1), (-1, 1)])
    p = EllipticProblem(((1.0, 2.0),), spec, lambda x, y: x)
    assert default_max_iter(spec, p, 1e-12) > default_max_iter(spec) >= math.ceil(10 * math.sqrt(spec.size))


def test_two_dimensional_pure_operator_is_nearly_singular():
    # documents the ball-truncated stencil: corner frequencies carry no symbol
    spec = GridSpec.box(1 / 16, [(-1, 1), (-1, 1)])
    A = system_matrix(EllipticProblem(((1.0, 1.0),), spec, lambda x, y: x))
    ev = np.linalg.eigvalsh(A)
    assert ev[0] < 1e-6 * ev[-1]
