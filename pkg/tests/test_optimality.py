import json

import numpy as np
import pytest

from fracocp import oracles
from fracocp.frac_assembly import SpdOperator, assemble_stiffness
from fracocp.harness import example1_data
from fracocp.mesh import uniform_refine
from fracocp.optimality import (LoadQuadrature, OcpParams, ProblemData, SolverError, clamp,
                                control_of_p, fixed_point_solve, solve_spd, subgradient_of_p)

P = OcpParams(alpha=1.0, gamma=1.0, beta=1.0, a_lo=-0.5, b_hi=0.5)


@pytest.fixture(scope="module")
def disk_r1(disk16):
    return uniform_refine(disk16)


@pytest.fixture(scope="module", params=[0.5, 1.5])
def example1(request, disk_r1):
    alpha = request.param
    params = OcpParams(alpha, 1.0, 1.0, -0.5, 0.5)
    data, exact = example1_data(alpha, params)
    A = assemble_stiffness(disk_r1, alpha)
    sol = fixed_point_solve(disk_r1, A, params, data, tol=1e-10)
    return disk_r1, A, params, data, sol


def test_params_validation():
    for bad in (dict(alpha=0.0), dict(alpha=2.0), dict(alpha=1, gamma=0), dict(alpha=1, beta=-1),
                dict(alpha=1, a_lo=0.1), dict(alpha=1, b_hi=0.0)):
        with pytest.raises(ValueError):
            OcpParams(**bad)


def test_clamp_examples():
    assert clamp(-1, -0.5, 0.5) == -0.5
    assert clamp(0.2, -0.5, 0.5) == 0.2
    assert clamp(9, -0.5, 0.5) == 0.5
    with pytest.raises(ValueError):
        clamp(0.0, 1.0, -1.0)


def test_subgradient_examples():
    assert subgradient_of_p(2.0, 1.0) == -1.0
    assert subgradient_of_p(0.5, 1.0) == -0.5
    assert subgradient_of_p(0.0, 1.0) == 0.0


def test_control_examples():
    assert control_of_p(0.5, P) == 0.0
    assert control_of_p(2.0, P) == -0.5
    assert control_of_p(-2.0, P) == 0.5
    # zero set: |p| <= beta
    p = np.linspace(-1, 1, 101)
    assert np.all(control_of_p(p, P) == 0.0)


def test_clamp_monotone_and_lipschitz(rng):
    v = np.sort(rng.normal(scale=3, size=1000))
    c = clamp(v, -0.7, 1.1)
    assert np.all(np.diff(c) >= 0)
    w = rng.normal(scale=3, size=1000)
    assert np.all(np.abs(clamp(w, -0.7, 1.1) - clamp(v, -0.7, 1.1)) <= np.abs(w - v) + 1e-15)


@pytest.mark.parametrize("gamma", [1.0, 0.1, 0.01])
def test_control_lipschitz(rng, gamma):
    params = OcpParams(1.0, gamma, 0.8, -2.0, 3.0)
    p1 = rng.normal(scale=4, size=5000)
    p2 = p1 + rng.normal(scale=0.5, size=5000)
    du = np.abs(control_of_p(p1, params) - control_of_p(p2, params))
    assert np.all(du <= 2.0 / gamma * np.abs(p1 - p2) + 1e-12)


def test_control_feasible(rng):
    p = rng.normal(scale=5, size=2000)
    u = control_of_p(p, P)
    lam = subgradient_of_p(p, P.beta)
    assert np.all((u >= P.a_lo) & (u <= P.b_hi))
    assert np.all((lam >= -1) & (lam <= 1))
    assert np.all(u[np.abs(p) < P.beta] == 0.0)


def test_solve_spd_examples(rng):
    S = 4.0 * np.eye(7)
    b = rng.standard_normal(7)
    assert np.all(solve_spd(S, np.zeros(7)) == 0.0)
    assert np.allclose(solve_spd(S, b), b / 4.0, rtol=1e-15)
    assert np.allclose(solve_spd(SpdOperator(S), b), b / 4.0, rtol=1e-15)


def test_solve_spd_matches_gauss(rng):
    B = rng.standard_normal((50, 50))
    S = B @ B.T + 50 * np.eye(50)
    b = rng.standard_normal(50)
    ref = oracles.gauss_solve(S, b)
    for x in (solve_spd(S, b), solve_spd(SpdOperator(S), b), solve_spd(S, b, cg_fallback=True)):
        assert np.max(np.abs(x - ref)) <= 1e-10 * np.max(np.abs(ref))
        assert np.linalg.norm(S @ x - b) <= 1e-12 * np.linalg.norm(b) * np.linalg.cond(S)


def test_solve_spd_rejects_indefinite():
    S = np.diag([1.0, -1.0, 2.0])
    with pytest.raises(np.linalg.LinAlgError):
        solve_spd(SpdOperator(S), np.ones(3))


def test_load_quadrature_integrates_polynomials(square_r1):
    q = LoadQuadrature(square_r1, 4)
    X = q.points
    assert np.sum(q.weights) == pytest.approx(4.0, rel=1e-14)
    assert np.sum(q.weights * X[:, 0] ** 2 * X[:, 1] ** 2) == pytest.approx(4.0 / 9.0, rel=1e-13)
    c = np.arange(square_r1.n_dofs, dtype=float)
    # P is the transpose of the point evaluation, weighted
    g = np.cos(X[:, 0])
    assert q.load(g) @ c == pytest.approx(np.sum(q.weights * g * q.evaluate(c)), rel=1e-13)
    with pytest.raises(ValueError):
        q.load(np.full(q.n_points, np.nan))


def test_zero_data(disk16):
    A = assemble_stiffness(disk16, 1.0)
    zero = ProblemData(lambda X: np.zeros(len(X)), lambda X: np.zeros(len(X)))
    sol = fixed_point_solve(disk16, A, P, zero)
    assert sol.iterations <= 2
    assert np.all(sol.y.coeffs == 0) and np.all(sol.p.coeffs == 0)
    assert np.all(sol.u_q == 0)


def test_bad_arguments(disk16):
    A = assemble_stiffness(disk16, 1.0)
    data, _ = example1_data(1.0, P)
    with pytest.raises(ValueError):
        fixed_point_solve(disk16, A, P, data, tol=0.0)
    with pytest.raises(ValueError):
        fixed_point_solve(disk16, A, P, data, relax=1.5)
    with pytest.raises(SolverError) as exc:
        fixed_point_solve(disk16, A, P, data, tol=1e-14, max_iter=2)
    assert exc.value.iterations == 2 and exc.value.residual > 0


def test_example1_self_consistent(example1):
    mesh, A, params, data, sol = example1
    gap = np.max(np.abs(sol.u_state - control_of_p(sol.p_q, params)))
    assert gap <= 1e-8
    assert gap <= sol.final_residual / sol.relax + 1e-15


def test_example1_galerkin_residuals(example1):
    mesh, A, params, data, sol = example1
    q = sol.quad
    f_q, yd_q = data.eval(q.points)
    rhs_y = q.load(f_q + sol.u_state)
    rhs_p = q.load(q.evaluate(sol.y.coeffs) - yd_q)
    assert np.linalg.norm(A @ sol.y.coeffs - rhs_y) <= 1e-10 * np.linalg.norm(rhs_y)
    assert np.linalg.norm(A @ sol.p.coeffs - rhs_p) <= 1e-10 * np.linalg.norm(rhs_p)


def test_example1_initial_guess_independent(example1):
    mesh, A, params, data, sol = example1
    tol = 1e-9
    a = fixed_point_solve(mesh, A, params, data, tol=tol)
    b = fixed_point_solve(mesh, A, params, data, tol=tol,
                          u0=np.full(a.quad.n_points, params.b_hi))
    assert np.max(np.abs(a.u_q - b.u_q)) <= 10 * tol


def test_example1_complementarity(example1):
    mesh, A, params, data, sol = example1
    p = sol.p_q
    inactive = np.abs(p) < params.beta - 1e-12
    assert inactive.any()
    assert np.all(sol.u_q[inactive] == 0.0)


def test_example1_variational_inequality(example1, rng):
    mesh, A, params, data, sol = example1
    q = sol.quad
    u, lam, p = sol.u_q, sol.lam_q, sol.p_q
    g = p + params.gamma * u + params.beta * lam
    for _ in range(100):
        v = rng.uniform(params.a_lo, params.b_hi, q.n_points)
        assert np.sum(q.weights * g * (v - u)) >= -1e-8


def test_solution_json(example1, tmp_path):
    mesh, A, params, data, sol = example1
    path = tmp_path / "sol.json"
    sol.write_json(path)
    d = json.loads(path.read_text())
    assert len(d["y"]) == len(d["p"]) == mesh.n_dofs
    assert len(d["u"]) == len(d["lambda"]) == len(d["quadrature_points"]) == sol.quad.n_points
    assert np.allclose(d["u"], sol.u_q)
    assert d["iterations"] == sol.iterations


def test_relaxation_keeps_fixed_point(example1):
    mesh, A, params, data, sol = example1
    damped = fixed_point_solve(mesh, A, params, data, tol=1e-10, relax=0.5)
    assert np.max(np.abs(damped.u_q - sol.u_q)) <= 1e-8
    assert damped.iterations >= sol.iterations


def test_small_gamma_converges(disk16):
    A = assemble_stiffness(disk16, 1.0)
    params = OcpParams(1.0, 1e-3, 1.0, -0.5, 0.5)
    data, _ = example1_data(1.0, params)
    sol = fixed_point_solve(disk16, A, params, data, tol=1e-8, max_iter=2000)
    assert sol.final_residual <= 1e-8
    assert np.all((sol.u_q >= -0.5) & (sol.u_q <= 0.5))
