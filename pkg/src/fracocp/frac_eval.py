"""Pointwise evaluation of the fractional Laplacian of P1 functions."""
import numpy as np

from . import _kernels as kr
from .frac_assembly import EdgeData, FracKernelParams, QuadratureConfig, _near_pairs
from .mesh import barycentric, skeleton_distance
from .quadrature import gauss_legendre01


class P1Field:
    """Continuous piecewise linear function given by its interior values."""

    def __init__(self, mesh, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (mesh.n_dofs,):
            raise ValueError("expected %d coefficients, got %s" % (mesh.n_dofs, coeffs.shape))
        self.mesh = mesh
        self.coeffs = coeffs

    @property
    def vertex_values(self):
        v = np.zeros(self.mesh.n_vertices)
        v[self.mesh.interior_vertices] = self.coeffs
        return v

    def at_barycentric(self, lam):
        """Values at the points ``lam`` (q, 3) of every element, shape (ne, q)."""
        return self.vertex_values[self.mesh.t] @ lam.T

    def __call__(self, elems, pts):
        elems = np.asarray(elems)
        pts = np.asarray(pts, dtype=float)
        G = self.mesh.grad_lambda[elems]
        v = self.vertex_values[self.mesh.t[elems]]
        x0 = self.mesh.p[self.mesh.t[elems, 0]]
        g = np.einsum("ki,kij->kj", v, G)
        return v[:, 0] + np.einsum("kj,kj->k", g, pts - x0)

    def __add__(self, other):
        return P1Field(self.mesh, self.coeffs + other.coeffs)

    def __mul__(self, s):
        return P1Field(self.mesh, s * self.coeffs)

    __rmul__ = __mul__


def _params(params):
    return FracKernelParams(float(params)) if isinstance(params, (int, float)) else params


def frac_laplacian_pointwise(field, K, x, params, quad=None, delta_factor=0.5):
    """(-Delta)^{alpha/2} v at a point x strictly inside element K.

    Uses C [v(x) 2 pi delta^{-alpha}/alpha - int_{Omega \\ B_delta(x)} v(y)|x-y|^{-2-alpha} dy]
    with delta = delta_factor * dist(x, dK); the principal value over the ball
    vanishes because v is affine there.
    """
    params = _params(params)
    quad = quad or QuadratureConfig()
    mesh = field.mesh
    x = np.asarray(x, dtype=float)
    if barycentric(mesh, K, x).min() < 0:
        raise ValueError("point is outside element %d" % K)
    delta = delta_factor * skeleton_distance(mesh, K, x)
    if delta <= 1e-14:
        raise ValueError("point too close to the element boundary")
    gx, gw = gauss_legendre01(int(quad.seg_points))
    val = kr.split_pointwise(x[0], x[1], int(K), field.vertex_values, mesh.p, mesh.t,
                             mesh.grad_lambda, params.alpha, delta, gx, gw)
    return params.c_norm * val


class PointEvaluator:
    """Batched evaluation of (-Delta)^{alpha/2} for P1 fields at interior points.

    Uses (-Delta)^{alpha/2} v(x) = (C/alpha^2) sum_e J_e(v) int_e |x - y|^{-alpha} ds,
    where J_e is the jump of the normal derivative across edge e (the Riesz
    potential of -Delta v). Far edges use Gauss points, near edges an exact
    sinh-substituted rule.
    """

    def __init__(self, mesh, params, quad=None, edata=None):
        self.mesh = mesh
        self.params = _params(params)
        self.quad = quad or QuadratureConfig()
        self.ed = edata or EdgeData(mesh)

    def __call__(self, coeffs, elems, pts, block=512):
        mesh, ed, quad = self.mesh, self.ed, self.quad
        alpha = self.params.alpha
        C = np.atleast_2d(np.asarray(coeffs, dtype=float))
        if C.shape[0] == mesh.n_dofs and C.shape[1] != mesh.n_dofs:
            C = C.T
        q = np.asarray(ed.J @ C.T)  # (nE, nf) edge charges
        ng = int(quad.eval_far_points)
        X, w = ed.points(ng)
        src = np.repeat(q, ng, axis=0) * w[:, None]
        pts = np.ascontiguousarray(pts, dtype=float)
        elems = np.asarray(elems, dtype=np.int64)
        out = np.empty((len(pts), q.shape[1]))
        kern = kr.quarter_power(-0.5 * alpha)
        if kern is not None:
            kr.far_targets_q(pts, X[:, 0].copy(), X[:, 1].copy(), np.ascontiguousarray(src.T),
                             kern, out)
        else:
            buf = np.empty(block * len(X))
            for s in range(0, len(pts), block):
                e = min(s + block, len(pts))
                R = buf[: (e - s) * len(X)].reshape(e - s, len(X))
                kr.block_r2_targets(pts[s:e], X, R)
                np.power(R, -0.5 * alpha, out=R)
                out[s:e] = R @ src
        # near corrections, element-wise proximity
        cen = mesh.centroids
        diam = mesh.diameters
        f = quad.eval_near_factor
        pe = _near_pairs(cen, f * diam, ed.mid, f * ed.length)
        order = np.argsort(elems, kind="stable")
        se = elems[order]
        start = np.searchsorted(se, pe[:, 0], side="left")
        stop = np.searchsorted(se, pe[:, 0], side="right")
        cnt = stop - start
        tgt = order[np.repeat(start, cnt) + (np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt))]
        edg = np.repeat(pe[:, 1], cnt)
        gx, gw = gauss_legendre01(int(quad.seg_points))
        gf, wf = gauss_legendre01(ng)
        corr = np.empty(len(tgt))
        kr.target_near(pts[:, 0].copy(), pts[:, 1].copy(), tgt, edg, ed.E, mesh.p, alpha,
                       gx, gw, gf, wf, corr)
        for j in range(q.shape[1]):
            out[:, j] += np.bincount(tgt, weights=corr * q[edg, j], minlength=len(pts))
        out *= self.params.c_norm / alpha ** 2
        return out


def frac_laplacian_at_points(field, elems, pts, params, quad=None):
    """Batched counterpart of :func:`frac_laplacian_pointwise` for one field."""
    ev = PointEvaluator(field.mesh, params, quad)
    return ev(field.coeffs, elems, pts)[:, 0]
