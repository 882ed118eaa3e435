import numpy as np
import pytest

from fracocp.estimator import (EstimatorField, WeightSpec, compute_indicators, eta_p_element,
                               eta_y_element, total_estimator)
from fracocp.frac_assembly import assemble_stiffness
from fracocp.frac_eval import P1Field
from fracocp.harness import example3_data
from fracocp.mesh import skeleton_distance
from fracocp.optimality import LoadQuadrature, OcpParams, ProblemData, fixed_point_solve


def zeros(X):
    return np.zeros(len(X))


@pytest.fixture(scope="module", params=[0.5, 1.5])
def square_solution(request, square_r1):
    alpha = request.param
    params = OcpParams(alpha, 0.1, 1.0, -0.3, 0.3)
    data = example3_data()
    A = assemble_stiffness(square_r1, alpha)
    sol = fixed_point_solve(square_r1, A, params, data, quad=LoadQuadrature(square_r1, 4))
    return square_r1, params, data, sol


def test_weight_spec_regimes():
    w = WeightSpec.from_alpha(0.7)
    assert (w.sigma, w.regime) == (0.0, "low")
    w = WeightSpec.from_alpha(1.0)
    assert (w.sigma, w.regime) == (0.0, "low")
    w = WeightSpec.from_alpha(1.5)
    assert w.regime == "high" and w.sigma == pytest.approx(0.25)
    for a in (0.0, 2.0):
        with pytest.raises(ValueError):
            WeightSpec.from_alpha(a)
    with pytest.raises(ValueError):
        WeightSpec(1.5, 0.5, "high")
    with pytest.raises(ValueError):
        WeightSpec(1.5, 0.2, "middle")


def test_weight_example():
    w = WeightSpec.from_alpha(1.5)
    # pointwise weight h^{a/2 - s} omega^s = 0.1^0.5 * 0.01^0.25 = 0.1
    assert w.weight_sq(0.1, 0.01) == pytest.approx(0.01, rel=1e-14)
    assert np.sqrt(w.weight_sq(0.1, 0.01)) == pytest.approx(0.1, rel=1e-14)


def test_weight_continuity_at_one(rng):
    low = WeightSpec.from_alpha(1.0)
    high = WeightSpec(1.0, 0.0, "high")
    h = rng.uniform(0.01, 1, 100)
    om = rng.uniform(0.0, 1, 100) * h
    assert np.allclose(low.weight_sq(h, om), high.weight_sq(h, om), rtol=1e-12, atol=0)


def test_total_estimator_examples():
    assert total_estimator(np.zeros(5), np.zeros(5)).E_ocp == 0.0
    est = total_estimator([3.0], [4.0])
    assert est.per_element[0] == 7.0
    assert est.total_sq == 7.0
    assert est.E_y == pytest.approx(np.sqrt(3)) and est.E_p == 2.0
    with pytest.raises(ValueError):
        total_estimator([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        total_estimator([-1.0], [1.0])
    with pytest.raises(ValueError):
        total_estimator([np.inf], [1.0])


def test_total_and_additivity(rng):
    ey, ep = rng.random(200), rng.random(200)
    est = EstimatorField(ey, ep)
    assert est.total_sq == pytest.approx(np.sum(est.per_element), rel=1e-15)
    part = rng.permutation(200)
    pieces = np.array_split(part, 7)
    total = sum(EstimatorField(ey[s], ep[s]).total_sq for s in pieces)
    assert total == pytest.approx(est.total_sq, rel=1e-14)
    assert est.E_u == 0.0 and est.E_lambda == 0.0


def test_zero_fields_give_zero(square_r1):
    m = square_r1
    quad = LoadQuadrature(m, 4)
    z = P1Field(m, np.zeros(m.n_dofs))
    params = OcpParams(1.5)
    u = np.zeros(len(quad.lam))
    for K in (0, 7):
        assert eta_y_element(m, K, z, u, zeros, params, quad) == 0.0
        assert eta_p_element(m, K, z, z, zeros, params, quad) == 0.0


@pytest.mark.parametrize("alpha", [0.5, 1.5])
def test_adjoint_indicator_reduces_to_weighted_norm(square_r1, rng, alpha):
    m = square_r1
    quad = LoadQuadrature(m, 4)
    y = P1Field(m, rng.standard_normal(m.n_dofs))
    z = P1Field(m, np.zeros(m.n_dofs))
    params = OcpParams(alpha)
    ws = WeightSpec.from_alpha(alpha)
    K = 5
    sel = quad.elements == K
    X, w = quad.points[sel], quad.weights[sel]
    om = np.array([skeleton_distance(m, K, x) for x in X])
    ref = np.sum(w * ws.weight_sq(m.h[K], om) * y(np.full(len(X), K), X) ** 2)
    assert eta_p_element(m, K, z, y, zeros, params, quad) == pytest.approx(ref, rel=1e-13)


def test_indicator_scales_quadratically(square_r1, rng):
    m = square_r1
    quad = LoadQuadrature(m, 4)
    params = OcpParams(1.2)
    y = P1Field(m, rng.standard_normal(m.n_dofs))
    p = P1Field(m, rng.standard_normal(m.n_dofs))
    u = rng.uniform(-0.3, 0.3, len(quad.lam))

    def f(X):
        return np.cos(X[:, 0])

    def f2(X):
        return 2 * f(X)

    K = 11
    a = eta_y_element(m, K, y, u, f, params, quad)
    b = eta_y_element(m, K, 2 * y, 2 * u, f2, params, quad)
    assert b == pytest.approx(4 * a, rel=1e-12)
    a = eta_p_element(m, K, p, y, f, params, quad)
    b = eta_p_element(m, K, 2 * p, 2 * y, f2, params, quad)
    assert b == pytest.approx(4 * a, rel=1e-12)


def test_batched_matches_elementwise(square_solution):
    m, params, data, sol = square_solution
    est = compute_indicators(m, sol, data, params)
    quad = sol.quad
    u_q = sol.u_q
    for K in range(0, m.n_elements, 5):
        sel = quad.elements == K
        ey = eta_y_element(m, K, sol.y, u_q[sel], data.f, params, quad)
        ep = eta_p_element(m, K, sol.p, sol.y, data.y_d, params, quad)
        assert est.eta_y_sq[K] == pytest.approx(ey, rel=1e-4)
        assert est.eta_p_sq[K] == pytest.approx(ep, rel=1e-4)


def test_indicators_finite_positive(square_solution):
    m, params, data, sol = square_solution
    est = compute_indicators(m, sol, data, params)
    assert est.eta_y_sq.shape == (m.n_elements,)
    assert np.all(est.eta_y_sq > 0) and np.all(est.eta_p_sq > 0)
    assert est.E_ocp == pytest.approx(np.hypot(est.E_y, est.E_p), rel=1e-14)


def test_non_finite_residual_rejected(square_r1):
    m = square_r1
    quad = LoadQuadrature(m, 4)
    z = P1Field(m, np.zeros(m.n_dofs))
    bad = ProblemData(lambda X: np.full(len(X), np.nan), zeros)
    with pytest.raises(ValueError):
        eta_y_element(m, 0, z, np.zeros(len(quad.lam)), bad.f, OcpParams(1.0), quad)
