"""Adaptive finite elements for sparse optimal control of the integral fractional Laplacian."""
from .afem import AfemConfig, AfemResult, ConvergenceRecord, afem_loop, dorfler_mark
from .estimator import EstimatorField, WeightSpec, compute_indicators, total_estimator
from .frac_assembly import (FracKernelParams, QuadratureConfig, SpdOperator, assemble_load,
                            assemble_stiffness, complement_weight, normalization_constant,
                            pair_integral)
from .frac_eval import P1Field, PointEvaluator, frac_laplacian_pointwise
from .mesh import Square, TriMesh, UnitDisk, bisect_marked, make_initial_mesh, uniform_refine
from .optimality import (OcpParams, OcpSolution, ProblemData, SolverError, clamp, control_of_p,
                         fixed_point_solve, solve_spd, subgradient_of_p)

__version__ = "0.1.0"
