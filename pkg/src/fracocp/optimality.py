"""Optimality system of the sparse control problem and its fixed-point solver.

The control is variationally discretized: it lives at the load quadrature
points and is recovered from the discrete adjoint through the projection
formulas

    lambda = clamp(-p / beta, -1, 1),
    u      = clamp(-(p + beta * lambda) / gamma, a, b).
"""
from dataclasses import dataclass, field
import json
import time

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .frac_eval import P1Field
from .quadrature import map_rule, triangle_rule


class SolverError(RuntimeError):
    """Raised when the fixed-point iteration fails to converge."""

    def __init__(self, msg, iterations=None, residual=None):
        super().__init__(msg)
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class OcpParams:
    alpha: float
    gamma: float = 1.0
    beta: float = 1.0
    a_lo: float = -0.5
    b_hi: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ValueError("alpha must lie in (0, 2)")
        if self.gamma <= 0 or self.beta <= 0:
            raise ValueError("gamma and beta must be positive")
        if not self.a_lo < 0.0 < self.b_hi:
            raise ValueError("control bounds must satisfy a < 0 < b")


@dataclass
class ProblemData:
    """Pointwise source ``f`` and desired state ``y_d``; both map (n, 2) -> (n,)."""
    f: object
    y_d: object

    def eval(self, X):
        f = np.broadcast_to(np.asarray(self.f(X), dtype=float), (len(X),))
        yd = np.broadcast_to(np.asarray(self.y_d(X), dtype=float), (len(X),))
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(yd))):
            raise ValueError("problem data is not finite at a quadrature point")
        return f, yd


def clamp(v, lo, hi):
    if lo > hi:
        raise ValueError("clamp needs lo <= hi")
    out = np.minimum(hi, np.maximum(lo, v))
    return float(out) if np.ndim(out) == 0 else out


def subgradient_of_p(p, beta):
    return clamp(-np.asarray(p, dtype=float) / beta, -1.0, 1.0)


def control_of_p(p, params):
    lam = subgradient_of_p(p, params.beta)
    return clamp(-(np.asarray(p, dtype=float) + params.beta * lam) / params.gamma,
                 params.a_lo, params.b_hi)


def solve_spd(A, b, cg_fallback=False, rtol=1e-12):
    """Solve A x = b for an SPD operator (Cholesky, or CG when requested)."""
    b = np.asarray(b, dtype=float)
    M = A.entries if hasattr(A, "entries") else np.asarray(A)
    if not np.any(b):
        return np.zeros_like(b)
    if cg_fallback:
        d = np.diag(M)
        x, info = spla.cg(M, b, rtol=rtol, atol=0.0, maxiter=10 * len(b),
                          M=sp.diags(1.0 / d))
        if info != 0:
            raise SolverError("CG did not converge (info=%d)" % info)
        return x
    if hasattr(A, "solve"):
        return A.solve(b)
    import scipy.linalg as sla
    return sla.cho_solve(sla.cho_factor(M), b)


class LoadQuadrature:
    """Interior quadrature points of every element and the P1 load maps.

    ``V`` (nq, ndof) evaluates a coefficient vector at the points and
    ``P = V.T diag(weights)`` turns point samples into a load vector.
    """

    def __init__(self, mesh, order=4):
        self.mesh = mesh
        self.order = int(order)
        lam, w = triangle_rule(self.order)
        self.lam = lam
        nq = len(w)
        self.points = map_rule(mesh.p[mesh.t], lam).reshape(-1, 2)
        self.elements = np.repeat(np.arange(mesh.n_elements), nq)
        self.weights = (mesh.areas[:, None] * w[None, :]).ravel()
        dof = mesh.dof_of_vertex[mesh.t]  # (ne, 3)
        rows = np.repeat(np.arange(len(self.points)), 3)
        cols = np.repeat(dof, nq, axis=0).ravel()
        vals = np.tile(lam, (mesh.n_elements, 1)).ravel()
        keep = cols >= 0
        self.V = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])),
                               shape=(len(self.points), mesh.n_dofs))
        self.P = (self.V.T @ sp.diags(self.weights)).tocsr()

    @property
    def n_points(self):
        return len(self.points)

    def load(self, g_values):
        g_values = np.asarray(g_values, dtype=float)
        if not np.all(np.isfinite(g_values)):
            raise ValueError("non-finite integrand at a quadrature point")
        return self.P @ g_values

    def evaluate(self, coeffs):
        return self.V @ coeffs


@dataclass
class OcpSolution:
    y: P1Field
    p: P1Field
    iterations: int
    final_residual: float
    params: OcpParams
    quad: LoadQuadrature
    u_state: np.ndarray  # control used in the last state solve
    relax: float = 1.0
    history: list = field(default_factory=list)
    solve_time: float = 0.0

    @property
    def p_q(self):
        return self.quad.evaluate(self.p.coeffs)

    @property
    def lam_q(self):
        return subgradient_of_p(self.p_q, self.params.beta)

    @property
    def u_q(self):
        """The implied control: the projection of the discrete adjoint."""
        return control_of_p(self.p_q, self.params)

    def zero_fraction(self):
        return float(np.mean(self.u_q == 0.0))

    def to_json(self):
        return {
            "y": self.y.coeffs.tolist(),
            "p": self.p.coeffs.tolist(),
            "quadrature_points": self.quad.points.tolist(),
            "quadrature_elements": self.quad.elements.tolist(),
            "u": self.u_q.tolist(),
            "lambda": self.lam_q.tolist(),
            "iterations": self.iterations,
            "final_residual": self.final_residual,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)


def fixed_point_solve(mesh, A, params, data, tol=1e-8, max_iter=500, relax=1.0, quad=None,
                      u0=None, window=20, relax_floor=2.0 ** -6):
    """Projection-gradient iteration for the discrete optimality system.

    Each sweep solves the state and adjoint equations with the current
    control and replaces the control by the projection of the adjoint,
    damped by ``relax``. The iteration stops when the inf-norm of the
    undamped update is below ``tol``. If the update grows tenfold, or does
    not shrink at all, over ``window`` sweeps, ``relax`` is halved (down to
    ``relax_floor``).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0.0 < relax <= 1.0:
        raise ValueError("relax must lie in (0, 1]")
    t0 = time.perf_counter()
    quad = quad or LoadQuadrature(mesh)
    f_q, yd_q = data.eval(quad.points)
    b_f = quad.load(f_q)
    u = np.zeros(quad.n_points) if u0 is None else np.array(u0, dtype=float)
    hist = []
    mark = 0
    for it in range(1, max_iter + 1):
        y = A.solve(b_f + quad.P @ u)
        yq = quad.evaluate(y)
        p = A.solve(quad.load(yq - yd_q))
        u_new = control_of_p(quad.evaluate(p), params)
        res = float(np.max(np.abs(u_new - u))) if len(u) else 0.0
        hist.append(res)
        if res <= tol:
            return OcpSolution(P1Field(mesh, y), P1Field(mesh, p), it, res, params, quad,
                               u.copy(), relax, hist, time.perf_counter() - t0)
        k = len(hist) - 1
        if k - mark >= window:
            old = hist[k - window]
            if res > 10.0 * old or res >= old:
                relax *= 0.5
                mark = k
                if relax < relax_floor:
                    raise SolverError("fixed-point iteration diverges (relax below floor)", it, res)
        u = u + relax * (u_new - u)
    raise SolverError("fixed-point iteration hit max_iter=%d (residual %.3e)" % (max_iter, res),
                      max_iter, res)
