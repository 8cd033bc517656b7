import numpy as np
import pytest

from pdsaddle import (
    ConvergenceError,
    Iterate,
    SaddleProblem,
    SmoothnessParams,
    check_gradients,
    conj_grad,
    grad_L,
    grad_primal,
    primal_value,
)
from pdsaddle.instances import quadratic_saddle, random_quadratic
from pdsaddle.solvers import reference_solution


def test_grad_l_zero_f(unit_problem):
    gx, gy = grad_L(unit_problem, np.array([1.0]), np.array([0.0]))
    assert gx == pytest.approx(0.0)
    assert gy == pytest.approx(1.0)


def test_grad_l_hand_example(scalar_problem):
    gx, gy = grad_L(scalar_problem, np.array([2.0]), np.array([3.0]))
    assert gx == pytest.approx(5.0)
    assert gy == pytest.approx(-1.0)


def test_grad_l_vanishes_at_saddle():
    problem = random_quadratic(12)
    x_star, y_star, _ = reference_solution(problem, "direct")
    gx, gy = grad_L(problem, x_star, y_star)
    assert np.linalg.norm(gx) <= 1e-8
    assert np.linalg.norm(gy) <= 1e-8


def test_grad_l_dimension_mismatch(scalar_problem):
    with pytest.raises(ValueError, match="shape"):
        grad_L(scalar_problem, np.zeros(2), np.zeros(1))


def test_conj_grad_identity(unit_problem):
    z = np.array([0.37])
    assert conj_grad(unit_problem, z) == pytest.approx(z)


def test_conj_grad_iterative_matches_closed_form():
    # g(y) = (||y||^2/2 + b^T y)/n has grad g*(z) = n z - b
    n = 5
    b = np.array([0.3, -1.2, 0.5, 0.0, 2.0])
    problem = SaddleProblem(
        grad_f=lambda x: np.zeros(3),
        grad_g=lambda y: (y + b) / n,
        coupling=np.vstack([np.eye(3), np.zeros((2, 3))]),
        rho=0.0, alpha=1.0 / n, beta=1.0 / n,
    )
    z = np.array([0.5, -0.25, 1.0, 0.75, -2.0])
    got = conj_grad(problem, z)
    assert got == pytest.approx(n * z - b, abs=1e-8)


def test_conj_grad_round_trip():
    problem = random_quadratic(3)
    rng = np.random.default_rng(0)
    # closed form and iterative fallback both invert grad g
    no_closed_form = SaddleProblem(
        grad_f=problem.grad_f, grad_g=problem.grad_g, coupling=problem.coupling,
        rho=problem.params.rho, alpha=problem.params.alpha, beta=problem.params.beta,
    )
    for _ in range(50):
        z = rng.standard_normal(problem.d2) * rng.uniform(0.1, 5)
        for prob in (problem, no_closed_form):
            y = conj_grad(prob, z)
            back = prob.grad_g(y)
            assert np.linalg.norm(back - z) <= 1e-8 * (1 + np.linalg.norm(z))


def test_conj_grad_inner_failure():
    problem = SaddleProblem(
        grad_f=lambda x: np.zeros(1),
        grad_g=lambda y: 0.5 * y,
        coupling=np.array([[1.0]]),
        rho=0.0, alpha=0.5, beta=0.5,
    )
    with pytest.raises(ConvergenceError) as err:
        conj_grad(problem, np.array([100.0]), max_inner_iters=1)
    assert err.value.residual is not None and err.value.residual > 0


def test_grad_primal_scalar(unit_problem):
    # P(x) = g*(x) = x^2/2, so grad P(2) = 2
    assert grad_primal(unit_problem, np.array([2.0])) == pytest.approx(2.0)


def test_grad_primal_vanishes_at_minimizer():
    problem = random_quadratic(7)
    x_star, _, _ = reference_solution(problem, "direct")
    assert np.linalg.norm(grad_primal(problem, x_star)) <= 1e-8


def test_primal_regularity_bounds():
    # smoothness rho + sigma_max^2/alpha and strong convexity sigma_min^2/beta
    problem = random_quadratic(21)
    p = problem.params
    lip = p.rho + p.sigma_max**2 / p.alpha
    curv = p.sigma_min**2 / p.beta
    rng = np.random.default_rng(4)
    for _ in range(25):
        x = rng.standard_normal(problem.d1)
        xp = rng.standard_normal(problem.d1)
        gx = grad_primal(problem, x)
        gxp = grad_primal(problem, xp)
        gap = np.linalg.norm(x - xp)
        assert np.linalg.norm(gx - gxp) <= lip * gap + 1e-9
        excess = primal_value(problem, xp) - primal_value(problem, x) - gx @ (xp - x)
        assert excess >= 0.5 * curv * gap**2 - 1e-9


def test_check_gradients_quadratic_passes():
    problem = random_quadratic(5)
    report = check_gradients(problem, tol=1e-6, num_points=10, seed=1)
    assert report.passed, (report.max_rel_error_f, report.max_rel_error_g)


def test_check_gradients_smoothed_reg_passes():
    a = 10.0
    problem = SaddleProblem(
        grad_f=lambda x: np.tanh(0.5 * a * x),
        grad_g=lambda y: y,
        coupling=np.eye(4),
        rho=a / 2, alpha=1.0, beta=1.0,
        f_value=lambda x: float(np.sum(np.abs(a * x) + 2 * np.log1p(np.exp(-np.abs(a * x)))) / a),
        g_value=lambda y: float(0.5 * y @ y),
    )
    report = check_gradients(problem, tol=1e-5, num_points=10, seed=2)
    assert report.passed


def test_check_gradients_detects_corruption():
    base = random_quadratic(5)

    def bad_grad_f(x):
        g = base.grad_f(x).copy()
        g[0] += 0.1
        return g

    corrupted = SaddleProblem(
        grad_f=bad_grad_f, grad_g=base.grad_g, coupling=base.coupling,
        rho=base.params.rho, alpha=base.params.alpha, beta=base.params.beta,
        f_value=base.f_value, g_value=base.g_value,
    )
    assert not check_gradients(corrupted, tol=1e-6, num_points=5, seed=3).passed


def test_params_invariants():
    with pytest.raises(ValueError):
        SmoothnessParams(rho=-1, alpha=1, beta=1, sigma_max=1, sigma_min=1)
    with pytest.raises(ValueError):
        SmoothnessParams(rho=0, alpha=0, beta=1, sigma_max=1, sigma_min=1)
    with pytest.raises(ValueError):
        SmoothnessParams(rho=0, alpha=2, beta=1, sigma_max=1, sigma_min=1)
    with pytest.raises(ValueError):
        SmoothnessParams(rho=0, alpha=1, beta=1, sigma_max=1, sigma_min=2)


def test_rank_deficient_coupling_rejected():
    with pytest.raises(ValueError, match="full column rank"):
        SaddleProblem(
            grad_f=lambda x: np.zeros(2),
            grad_g=lambda y: y,
            coupling=np.array([[1.0, 0.0]]),  # wide: rank 1 < d1 = 2
            rho=0.0, alpha=1.0, beta=1.0,
        )
    with pytest.raises(ValueError, match="full column rank"):
        quadratic_saddle(
            np.zeros((2, 2)), np.zeros(2),
            np.array([[1.0, 1.0], [1.0, 1.0]]),  # singular square coupling
            np.eye(2), np.zeros(2),
        )


def test_degenerate_dimensions_rejected():
    with pytest.raises(ValueError, match="degenerate"):
        SaddleProblem(
            grad_f=lambda x: x, grad_g=lambda y: y,
            coupling=np.zeros((0, 1)), rho=0, alpha=1, beta=1,
        )


def test_iterate_validation():
    it = Iterate(np.zeros(2), np.zeros(3), iter=4, grad_evals=7)
    assert it.iter == 4 and it.grad_evals == 7
    with pytest.raises(ValueError):
        Iterate(np.zeros(1), np.zeros(1), iter=-1)
