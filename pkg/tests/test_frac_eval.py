import numpy as np
import pytest

from fracocp import oracles
from fracocp.frac_assembly import QuadratureConfig, assemble_stiffness
from fracocp.frac_eval import P1Field, PointEvaluator, frac_laplacian_at_points, frac_laplacian_pointwise
from fracocp.mesh import barycentric
from fracocp.optimality import LoadQuadrature


def hat(mesh, k):
    c = np.zeros(mesh.n_dofs)
    c[k] = 1.0
    return P1Field(mesh, c)


def support(mesh, k):
    v = mesh.interior_vertices[k]
    return np.flatnonzero(np.any(mesh.t == v, axis=1))


def interior_points(mesh, elems, rng):
    lam = rng.dirichlet([3, 3, 3], len(elems))
    return np.einsum("qi,qij->qj", lam, mesh.p[mesh.t[elems]])


def test_field_validates_length(square_r1):
    with pytest.raises(ValueError):
        P1Field(square_r1, np.zeros(square_r1.n_dofs + 1))


def test_field_values(square_r1, rng):
    m = square_r1
    c = rng.standard_normal(m.n_dofs)
    f = P1Field(m, c)
    K = 3
    lam = np.array([0.2, 0.3, 0.5])
    x = lam @ m.p[m.t[K]]
    assert f([K], x[None])[0] == pytest.approx(lam @ f.vertex_values[m.t[K]], abs=1e-14)
    g = 2.0 * f + f
    assert np.allclose(g.coeffs, 3 * c)


@pytest.mark.parametrize("alpha", [0.5, 1.5])
def test_zero_field(square_r1, alpha):
    f = P1Field(square_r1, np.zeros(square_r1.n_dofs))
    x = square_r1.centroids[4]
    assert frac_laplacian_pointwise(f, 4, x, alpha) == 0.0
    assert np.all(frac_laplacian_at_points(f, [4], x[None], alpha) == 0.0)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_negative_outside_support(square_r1, alpha):
    m = square_r1
    k = 0
    f = hat(m, k)
    far = np.setdiff1d(np.arange(m.n_elements), support(m, k))
    K = far[np.argmax(np.linalg.norm(m.centroids[far] - m.p[m.interior_vertices[k]], axis=1))]
    assert frac_laplacian_pointwise(f, K, m.centroids[K], alpha) < 0
    assert frac_laplacian_at_points(f, [K], m.centroids[K][None], alpha)[0] < 0


def test_point_outside_element(square_r1):
    f = hat(square_r1, 0)
    with pytest.raises(ValueError):
        frac_laplacian_pointwise(f, 0, square_r1.centroids[1], 1.0)
    # a vertex of K has zero distance to the skeleton
    with pytest.raises(ValueError):
        frac_laplacian_pointwise(f, 0, square_r1.p[square_r1.t[0, 0]], 1.0)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_hat_at_barycenter_matches_oracle(square_r1, alpha):
    m = square_r1
    k = 4
    f = hat(m, k)
    for K in support(m, k)[:3]:
        x = m.centroids[K]
        ref = oracles.hat_fraclap_oracle(m, m.interior_vertices[k], x, alpha)
        assert frac_laplacian_pointwise(f, K, x, alpha) == pytest.approx(ref, rel=1e-4)


@pytest.mark.parametrize("alpha", [0.5, 1.5])
def test_delta_halving(square_r1, rng, alpha):
    m = square_r1
    f = P1Field(m, rng.standard_normal(m.n_dofs))
    for K in rng.choice(m.n_elements, 5, replace=False):
        x = interior_points(m, [K], rng)[0]
        a = frac_laplacian_pointwise(f, K, x, alpha, delta_factor=0.5)
        b = frac_laplacian_pointwise(f, K, x, alpha, delta_factor=0.25)
        assert abs(a - b) <= 1e-5 * abs(a)


@pytest.mark.parametrize("alpha", [0.5, 1.5])
def test_linearity(square_r1, rng, alpha):
    m = square_r1
    u = P1Field(m, rng.standard_normal(m.n_dofs))
    w = P1Field(m, rng.standard_normal(m.n_dofs))
    a, b = 0.7, -2.3
    K = 9
    x = m.centroids[K]
    lhs = frac_laplacian_pointwise(a * u + b * w, K, x, alpha)
    rhs = a * frac_laplacian_pointwise(u, K, x, alpha) + b * frac_laplacian_pointwise(w, K, x, alpha)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)
    el = np.arange(m.n_elements)
    X = interior_points(m, el, rng)
    ev = PointEvaluator(m, alpha)
    F = ev(np.column_stack([u.coeffs, w.coeffs, a * u.coeffs + b * w.coeffs]), el, X)
    scale = np.max(np.abs(F))
    assert np.max(np.abs(F[:, 2] - a * F[:, 0] - b * F[:, 1])) <= 1e-12 * scale


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_batched_matches_pointwise(square_r1, rng, alpha):
    m = square_r1
    f = P1Field(m, rng.standard_normal(m.n_dofs))
    el = rng.choice(m.n_elements, 12, replace=False)
    X = interior_points(m, el, rng)
    ref = np.array([frac_laplacian_pointwise(f, K, x, alpha) for K, x in zip(el, X)])
    scale = np.max(np.abs(ref))
    # the batched path uses a low-order Gauss rule on far edges
    got = frac_laplacian_at_points(f, el, X, alpha)
    assert np.max(np.abs(got - ref)) <= 5e-6 * scale
    got = frac_laplacian_at_points(f, el, X, alpha, QuadratureConfig(eval_far_points=5))
    assert np.max(np.abs(got - ref)) <= 1e-8 * scale


def test_disk_pointwise_matches_oracle(disk16):
    m = disk16
    k = 0
    f = hat(m, k)
    K = support(m, k)[0]
    x = m.centroids[K]
    assert barycentric(m, K, x).min() > 0
    ref = oracles.hat_fraclap_oracle(m, m.interior_vertices[k], x, 1.2)
    assert frac_laplacian_pointwise(f, K, x, 1.2) == pytest.approx(ref, rel=1e-4)


def _weak_form_gap(mesh, alpha, u, w):
    A = assemble_stiffness(mesh, alpha).entries
    q = LoadQuadrature(mesh, 7)
    lap = PointEvaluator(mesh, alpha)(u, q.elements, q.points)[:, 0]
    lhs = np.sum(q.weights * q.evaluate(w) * lap)
    return abs(lhs / (u @ A @ w) - 1)


def _smooth_fields(mesh):
    P = mesh.p[mesh.interior_vertices]
    return np.cos(P[:, 0]) * (1 - P[:, 1] ** 2), np.ones(mesh.n_dofs)


def test_weak_form_consistency_random(square_r3, rng):
    u = rng.standard_normal(square_r3.n_dofs)
    w = rng.standard_normal(square_r3.n_dofs)
    assert _weak_form_gap(square_r3, 0.5, u, w) <= 0.02


@pytest.mark.parametrize("alpha", [0.5, 1.0])
def test_weak_form_consistency_smooth(square_r3, alpha):
    assert _weak_form_gap(square_r3, alpha, *_smooth_fields(square_r3)) <= 0.02


@pytest.mark.xfail(strict=True, reason="for alpha > 1 the pointwise fractional Laplacian of a P1 "
                                       "function is not square integrable near the skeleton, so a "
                                       "fixed Gauss rule does not reach 2% on this mesh")
def test_weak_form_consistency_high_alpha(square_r3):
    assert _weak_form_gap(square_r3, 1.5, *_smooth_fields(square_r3)) <= 0.02
