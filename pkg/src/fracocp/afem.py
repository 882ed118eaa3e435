"""SOLVE - ESTIMATE - MARK - REFINE loop with Doerfler marking."""
from dataclasses import dataclass, field
import time

import numpy as np

from .estimator import compute_indicators
from .frac_assembly import EdgeData, QuadratureConfig, assemble_stiffness
from .frac_eval import PointEvaluator
from .mesh import bisect_marked, make_initial_mesh, uniform_refine
from .optimality import LoadQuadrature, SolverError, fixed_point_solve


@dataclass(frozen=True)
class AfemConfig:
    theta: float = 0.7
    max_dofs: int = 8000
    max_iters: int = 50
    marking: str = "dorfler"  # or "uniform"
    solver_tol: float = 1e-8
    solver_max_iter: int = 500
    quad: QuadratureConfig = field(default_factory=QuadratureConfig)
    load_order: int = 4

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("theta must lie in (0, 1]")
        if self.marking not in ("dorfler", "uniform"):
            raise ValueError("marking must be 'dorfler' or 'uniform'")
        if self.max_dofs < 1 or self.max_iters < 0:
            raise ValueError("max_dofs must be positive and max_iters nonnegative")
        if self.solver_tol <= 0:
            raise ValueError("solver_tol must be positive")

    @property
    def refine_all(self):
        return self.marking == "uniform" or self.theta == 1.0


@dataclass
class ConvergenceRecord:
    iteration: int
    n_dofs: int
    E_y: float
    E_p: float
    E_ocp: float
    err_y: float = float("nan")
    err_p: float = float("nan")
    effectivity: float = float("nan")
    solver_iters: int = 0
    wall_ms: float = 0.0

    def row(self):
        return [self.iteration, self.n_dofs, self.E_y, self.E_p, self.E_ocp, self.err_y,
                self.err_p, self.effectivity, self.solver_iters, self.wall_ms]


@dataclass
class AfemResult:
    records: list
    mesh: object
    solution: object
    operator: object
    estimator: object
    meshes: list = field(default_factory=list)
    marks: list = field(default_factory=list)
    indicators: list = field(default_factory=list)


def dorfler_mark(eta_sq, theta):
    """Minimal set of elements carrying a theta fraction of sum(eta_sq).

    Greedy in descending order with ties broken by the lower id. Returns
    the marked ids sorted ascending.
    """
    eta = np.asarray(eta_sq, dtype=float)
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    if np.any(eta < 0) or not np.all(np.isfinite(eta)):
        raise ValueError("indicators must be finite and nonnegative")
    total = eta.sum()
    if total <= 0.0:
        raise ValueError("all indicators vanish; nothing to mark")
    order = np.lexsort((np.arange(len(eta)), -eta))
    csum = np.cumsum(eta[order])
    target = theta * total
    if theta == 1.0:
        k = int(np.count_nonzero(eta))
    else:
        # guard against cumsum round-off at the threshold
        k = int(np.searchsorted(csum, target * (1.0 - 1e-14), side="left")) + 1
        k = min(k, len(eta))
    return np.sort(order[:k])


def afem_loop(domain, params, data, cfg=None, error_fn=None, callback=None, mesh=None,
              keep_meshes=False):
    """Run the adaptive loop and return an :class:`AfemResult`.

    ``error_fn(mesh, A, sol, quad)`` may return ``(err_y, err_p)`` for
    examples with known solutions; ``callback(k, mesh, sol, est)`` is called
    once per iteration. The loop stops after ``cfg.max_iters`` refinements or
    when the next mesh would exceed ``cfg.max_dofs``.
    """
    cfg = cfg or AfemConfig()
    mesh = mesh if mesh is not None else make_initial_mesh(domain)
    records, meshes, marks, inds = [], [], [], []
    k = 0
    while True:
        t0 = time.perf_counter()
        try:
            A = assemble_stiffness(mesh, params.alpha, cfg.quad, max_dofs=max(cfg.max_dofs, mesh.n_dofs))
            quad = LoadQuadrature(mesh, cfg.load_order)
            sol = fixed_point_solve(mesh, A, params, data, tol=cfg.solver_tol,
                                    max_iter=cfg.solver_max_iter, quad=quad)
        except SolverError as exc:
            raise SolverError("iteration %d (%d dofs): %s" % (k, mesh.n_dofs, exc),
                              exc.iterations, exc.residual) from exc
        ev = PointEvaluator(mesh, params.alpha, cfg.quad, EdgeData(mesh))
        est = compute_indicators(mesh, sol, data, params, evaluator=ev)
        rec = ConvergenceRecord(k, mesh.n_dofs, est.E_y, est.E_p, est.E_ocp,
                                solver_iters=sol.iterations)
        if error_fn is not None:
            ey, ep = error_fn(mesh, A, sol, quad)
            rec.err_y, rec.err_p = ey, ep
            e = np.hypot(ey, ep)
            rec.effectivity = float(est.E_ocp / e) if e > 0 else float("inf")
        if keep_meshes:
            meshes.append(mesh)
        inds.append(est.per_element)
        stop = k >= cfg.max_iters
        if not stop:
            if cfg.refine_all:
                marked = np.arange(mesh.n_elements)
                new = uniform_refine(mesh)
            else:
                marked = dorfler_mark(est.per_element, cfg.theta)
                new = bisect_marked(mesh, marked)
            marks.append(marked)
            stop = new.n_dofs > cfg.max_dofs
        rec.wall_ms = 1e3 * (time.perf_counter() - t0)
        records.append(rec)
        if callback is not None:
            callback(k, mesh, sol, est)
        if stop:
            return AfemResult(records, mesh, sol, A, est, meshes, marks, inds)
        mesh = new
        k += 1
