"""Weighted residual a posteriori indicators for state and adjoint."""
from dataclasses import dataclass

import numpy as np

from .frac_eval import PointEvaluator, frac_laplacian_pointwise
from .mesh import skeleton_distance, skeleton_distance_batch


@dataclass(frozen=True)
class WeightSpec:
    alpha: float
    sigma: float
    regime: str  # "low" for alpha <= 1, "high" otherwise

    @classmethod
    def from_alpha(cls, alpha):
        if not 0.0 < alpha < 2.0:
            raise ValueError("alpha must lie in (0, 2)")
        if alpha <= 1.0:
            return cls(alpha, 0.0, "low")
        return cls(alpha, 0.5 * alpha - 0.5, "high")

    def __post_init__(self):
        if self.regime not in ("low", "high"):
            raise ValueError("regime must be 'low' or 'high'")
        if not 0.0 <= self.sigma < 0.5 or 0.5 * self.alpha - self.sigma <= 0:
            raise ValueError("sigma out of range")

    def weight_sq(self, h, omega):
        """h~^alpha: the square of the pointwise weight h~^{alpha/2}."""
        h = np.asarray(h, dtype=float)
        if self.regime == "low":
            return h ** self.alpha * np.ones_like(np.asarray(omega, dtype=float))
        return h ** (self.alpha - 2.0 * self.sigma) * np.asarray(omega, dtype=float) ** (2.0 * self.sigma)


@dataclass
class EstimatorField:
    eta_y_sq: np.ndarray
    eta_p_sq: np.ndarray
    c_st: float = 1.0
    c_ad: float = 1.0

    def __post_init__(self):
        self.eta_y_sq = np.asarray(self.eta_y_sq, dtype=float)
        self.eta_p_sq = np.asarray(self.eta_p_sq, dtype=float)
        if self.eta_y_sq.shape != self.eta_p_sq.shape:
            raise ValueError("indicator arrays differ in length")
        if not (np.all(np.isfinite(self.eta_y_sq)) and np.all(np.isfinite(self.eta_p_sq))):
            raise ValueError("non-finite indicator")
        if np.any(self.eta_y_sq < 0) or np.any(self.eta_p_sq < 0):
            raise ValueError("negative indicator")

    @property
    def per_element(self):
        return self.c_st * self.eta_y_sq + self.c_ad * self.eta_p_sq

    @property
    def total_sq(self):
        return float(np.sum(self.per_element))

    @property
    def E_y(self):
        return float(np.sqrt(np.sum(self.eta_y_sq)))

    @property
    def E_p(self):
        return float(np.sqrt(np.sum(self.eta_p_sq)))

    @property
    def E_ocp(self):
        return float(np.sqrt(self.total_sq))

    # the control and subgradient indicators vanish identically
    E_u = 0.0
    E_lambda = 0.0


def total_estimator(eta_y_sq, eta_p_sq):
    return EstimatorField(eta_y_sq, eta_p_sq)


def _element_points(quad, K):
    sel = slice(K * len(quad.lam), (K + 1) * len(quad.lam))
    return quad.points[sel], quad.weights[sel]


def _element_indicator(mesh, K, residual_fn, quad, alpha):
    ws = WeightSpec.from_alpha(alpha)
    X, w = _element_points(quad, K)
    om = np.array([skeleton_distance(mesh, K, x) for x in X])
    res = np.array([residual_fn(x) for x in X])
    if not np.all(np.isfinite(res)):
        raise ValueError("non-finite residual in element %d" % K)
    return float(np.sum(w * ws.weight_sq(mesh.h[K], om) * res ** 2))


def eta_y_element(mesh, K, y, u_at_quad, f, params, quad):
    """Squared state indicator on one element (pointwise evaluation path).

    ``u_at_quad`` holds the control at the element's quadrature points and
    ``quad`` is the :class:`LoadQuadrature` of the mesh.
    """
    X, _ = _element_points(quad, K)
    u = dict(zip(map(tuple, X), np.asarray(u_at_quad, dtype=float)))

    def res(x):
        return float(f(x[None])[0]) + u[tuple(x)] - frac_laplacian_pointwise(y, K, x, params.alpha)

    return _element_indicator(mesh, K, res, quad, params.alpha)


def eta_p_element(mesh, K, p, y, y_d, params, quad):
    """Squared adjoint indicator on one element (pointwise evaluation path)."""
    def res(x):
        return (float(y([K], x[None])[0]) - float(y_d(x[None])[0])
                - frac_laplacian_pointwise(p, K, x, params.alpha))

    return _element_indicator(mesh, K, res, quad, params.alpha)


def compute_indicators(mesh, sol, data, params, qcfg=None, evaluator=None):
    """All element indicators for a discrete solution (batched path)."""
    quad = sol.quad
    ev = evaluator or PointEvaluator(mesh, params.alpha, qcfg)
    X, el = quad.points, quad.elements
    lap = ev(np.vstack([sol.y.coeffs, sol.p.coeffs]), el, X)
    f_q, yd_q = data.eval(X)
    r_y = f_q + sol.u_q - lap[:, 0]
    r_p = quad.evaluate(sol.y.coeffs) - yd_q - lap[:, 1]
    ws = WeightSpec.from_alpha(params.alpha)
    om = skeleton_distance_batch(mesh, el, X) if ws.regime == "high" else np.ones(len(X))
    wgt = quad.weights * ws.weight_sq(mesh.h[el], om)
    ne = mesh.n_elements
    ey = np.bincount(el, weights=wgt * r_y ** 2, minlength=ne)
    ep = np.bincount(el, weights=wgt * r_p ** 2, minlength=ne)
    return EstimatorField(ey, ep)
