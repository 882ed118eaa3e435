"""Experiment definitions, exact solutions, rate fits and file outputs."""
from dataclasses import asdict, dataclass, field, fields, replace
import csv
import json
import os
import sys

import numpy as np
from scipy.special import gamma as gamma_fn

from .afem import AfemConfig, afem_loop
from .frac_assembly import QuadratureConfig, assemble_stiffness
from .mesh import Square, UnitDisk, make_initial_mesh
from .optimality import LoadQuadrature, OcpParams, ProblemData, control_of_p, fixed_point_solve, subgradient_of_p

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CSV_COLUMNS = ["iter", "n_dofs", "E_y", "E_p", "E_ocp", "err_y", "err_p", "effectivity",
               "solver_iters", "wall_ms"]


class ConfigError(ValueError):
    pass


# -- Example 1: Getoor-type solution on the unit disk -------------------------
def exact_getoor(alpha, x):
    """2^{-a} (1 - |x|^2)^{a/2} / Gamma(1 + a/2)^2 for one point or an (n, 2) array."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    if np.any(r2 > 1.0 + 1e-12):
        raise ValueError("point outside the unit disk")
    # points on the circle up to round-off get the boundary value 0
    r2 = np.where(r2 > 1.0 - 1e-14, 1.0, r2)
    val = 2.0 ** -alpha * (1.0 - r2) ** (0.5 * alpha) / gamma_fn(1.0 + 0.5 * alpha) ** 2
    return float(val) if val.ndim == 0 else val


def getoor_energy(alpha):
    """a(y, y) = int_B y dx for the Getoor function y."""
    return 2.0 ** -alpha / gamma_fn(1.0 + 0.5 * alpha) ** 2 * 2.0 * np.pi / (alpha + 2.0)


@dataclass
class ExactSolution:
    y: object
    p: object
    lam: object
    u: object


def example1_data(alpha, params, c_adjoint=3.0):
    """Source and desired state for which y is Getoor's function and p = c y."""
    def y(X):
        return exact_getoor(alpha, X)

    def p(X):
        return c_adjoint * y(X)

    def lam(X):
        return subgradient_of_p(p(X), params.beta)

    def u(X):
        return control_of_p(p(X), params)

    def f(X):
        return 1.0 - u(X)

    def y_d(X):
        return y(X) - c_adjoint

    return ProblemData(f, y_d), ExactSolution(y, p, lam, u)


def _hat_integrals(mesh):
    """int phi_i dx for every interior hat."""
    s = np.bincount(mesh.t.ravel(), weights=np.repeat(mesh.areas / 3.0, 3),
                    minlength=mesh.n_vertices)
    return s[mesh.interior_vertices]


def energy_error_state(mesh, A, y_h, alpha):
    """Energy-norm error of the state for Example 1 via a(y, v) = (1, v)."""
    c = y_h.coeffs if hasattr(y_h, "coeffs") else np.asarray(y_h, dtype=float)
    val = getoor_energy(alpha) - 2.0 * _hat_integrals(mesh) @ c + c @ (A @ c)
    return float(np.sqrt(max(val, 0.0)))


def energy_error_adjoint(mesh, A, p_h, alpha, c_adjoint=3.0):
    """Energy-norm error of the adjoint for Example 1 via a(p, w) = (c, w)."""
    c = p_h.coeffs if hasattr(p_h, "coeffs") else np.asarray(p_h, dtype=float)
    I_p = c_adjoint ** 2 * getoor_energy(alpha)
    val = I_p - 2.0 * c_adjoint * _hat_integrals(mesh) @ c + c @ (A @ c)
    return float(np.sqrt(max(val, 0.0)))


# -- Examples 2 and 3 on the square ------------------------------------------
def example2_data():
    return ProblemData(lambda X: np.full(len(X), -6.0), lambda X: np.ones(len(X)))


def _osc(X):
    X = np.asarray(X, dtype=float)
    return np.sin(4.0 * X[:, 1]) * np.cos(4.0 * X[:, 0]) * np.exp(X[:, 0])


def example3_data():
    return ProblemData(lambda X: 6.0 * _osc(X), lambda X: -4.0 * _osc(X))


# -- rate fits ----------------------------------------------------------------
@dataclass
class RateFit:
    slope: float
    intercept: float
    window: tuple
    r_squared: float


def slope_fit(records, field_name, window=6):
    """Least-squares slope of log(field) against log(n_dofs) over the last records."""
    if window < 2:
        raise ValueError("window must be at least 2")
    if len(records) < window:
        raise ValueError("need %d records, have %d" % (window, len(records)))
    sel = records[-window:]
    N = np.array([_get(r, "n_dofs") for r in sel], dtype=float)
    v = np.array([_get(r, field_name) for r in sel], dtype=float)
    if np.any(~np.isfinite(v)) or np.any(v <= 0) or np.any(N <= 0):
        raise ValueError("field %r has nonpositive values in the window" % field_name)
    x, y = np.log(N), np.log(v)
    slope, icpt = np.polyfit(x, y, 1)
    res = y - (slope * x + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(res ** 2) / ss if ss > 0 else 1.0
    return RateFit(float(slope), float(icpt), (len(records) - window, len(records) - 1), float(r2))


def _get(r, name):
    return r[name] if isinstance(r, dict) else getattr(r, name)


# -- configuration ------------------------------------------------------------
_EXAMPLE_DEFAULTS = {
    1: dict(domain="disk", a_lo=-0.5, b_hi=0.5, gamma=1.0, beta=1.0, max_dofs=8000),
    2: dict(domain="square", a_lo=-0.3, b_hi=0.3, gamma=1.0, beta=1.0, max_dofs=10000),
    3: dict(domain="square", a_lo=-0.3, b_hi=0.3, gamma=0.1, beta=1.0, max_dofs=10000),
}


@dataclass
class ExperimentConfig:
    example: int = 1
    domain: str = ""
    n_boundary: int = 16
    n_per_side: int = 2
    alpha: float = 0.5
    theta: float = 0.7
    gamma: float = None
    beta: float = None
    a_lo: float = None
    b_hi: float = None
    c_adjoint: float = 3.0
    marking: str = "dorfler"
    max_dofs: int = None
    max_iters: int = 50
    solver_tol: float = 1e-8
    output_dir: str = "out"
    seed: int = 0
    save_meshes: bool = False
    quad: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.example not in _EXAMPLE_DEFAULTS:
            raise ConfigError("example must be 1, 2 or 3")
        for k, v in _EXAMPLE_DEFAULTS[self.example].items():
            if getattr(self, k) in (None, ""):
                setattr(self, k, v)
        if self.domain not in ("disk", "square"):
            raise ConfigError("domain must be 'disk' or 'square'")
        if self.example == 1 and self.domain != "disk":
            raise ConfigError("example 1 needs the disk domain")
        if self.example in (2, 3) and self.domain != "square":
            raise ConfigError("examples 2 and 3 need the square domain")
        try:
            self.params()
            self.afem_config()
            self.domain_spec()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def params(self):
        return OcpParams(float(self.alpha), float(self.gamma), float(self.beta),
                         float(self.a_lo), float(self.b_hi))

    def quad_config(self):
        return QuadratureConfig(**self.quad)

    def afem_config(self):
        return AfemConfig(theta=float(self.theta), max_dofs=int(self.max_dofs),
                          max_iters=int(self.max_iters), marking=self.marking,
                          solver_tol=float(self.solver_tol), quad=self.quad_config())

    def domain_spec(self):
        if self.domain == "disk":
            return UnitDisk(int(self.n_boundary))
        return Square(int(self.n_per_side))

    def problem(self):
        """(ProblemData, ExactSolution or None)."""
        if self.example == 1:
            return example1_data(self.alpha, self.params(), self.c_adjoint)
        if self.example == 2:
            return example2_data(), None
        return example3_data(), None

    def to_dict(self):
        return asdict(self)


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        if isinstance(v, dict) and k != "quad":
            out.update(_flatten(v, prefix + k + "."))
        else:
            out[prefix + k] = v
    return out


def parse_value(text):
    """TOML scalar or list; bare words fall back to strings."""
    try:
        return tomllib.loads("v = " + text)["v"]
    except tomllib.TOMLDecodeError:
        return text


def config_from_dict(d, overrides=None):
    d = dict(_flatten(d))
    for k, v in (overrides or {}).items():
        d[k] = v
    quad = dict(d.pop("quad", {}) or {})
    for k in list(d):
        if k.startswith("quad."):
            quad[k[5:]] = d.pop(k)
    names = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError("unknown config keys: %s" % ", ".join(unknown))
    qnames = {f.name for f in fields(QuadratureConfig)}
    if set(quad) - qnames:
        raise ConfigError("unknown quadrature keys: %s" % ", ".join(sorted(set(quad) - qnames)))
    try:
        return ExperimentConfig(quad=quad, **d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, overrides=None):
    try:
        with open(path, "rb") as fh:
            d = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc)) from exc
    return config_from_dict(d, overrides)


# -- running ------------------------------------------------------------------
def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_history(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(v) for v in r.row()])


def read_history(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k in ("iter", "n_dofs", "solver_iters") else float(v))
             for k, v in row.items()} for row in rows]


def _fits(records, names, window):
    out = {}
    for name in names:
        try:
            out[name] = asdict(slope_fit(records, name, min(window, len(records))))
        except ValueError:
            out[name] = None
    return out


def run_experiment(cfg, log=None):
    """Run one experiment and write its files into ``cfg.output_dir``.

    Returns (AfemResult, summary dict).
    """
    os.makedirs(cfg.output_dir, exist_ok=True)
    params = cfg.params()
    data, exact = cfg.problem()
    error_fn = None
    if exact is not None:
        def error_fn(mesh, A, sol, quad):
            return (energy_error_state(mesh, A, sol.y, params.alpha),
                    energy_error_adjoint(mesh, A, sol.p, params.alpha, cfg.c_adjoint))

    snap_dir = os.path.join(cfg.output_dir, "meshes")
    if cfg.save_meshes:
        os.makedirs(snap_dir, exist_ok=True)

    def callback(k, mesh, sol, est):
        if log is not None:
            log("iter %d: %d dofs, E_ocp %.4e, %d solver iterations"
                % (k, mesh.n_dofs, est.E_ocp, sol.iterations))
        if cfg.save_meshes:
            mesh.write_json(os.path.join(snap_dir, "mesh_%03d.json" % k))

    res = afem_loop(cfg.domain_spec(), params, data, cfg.afem_config(), error_fn, callback)
    write_history(res.records, os.path.join(cfg.output_dir, "history.csv"))
    res.mesh.write_json(os.path.join(cfg.output_dir, "mesh.json"))
    res.solution.write_json(os.path.join(cfg.output_dir, "solution.json"))
    names = ["E_ocp", "E_y", "E_p"] + (["err_y", "err_p"] if exact is not None else [])
    summary = {
        "config": cfg.to_dict(),
        "iterations": len(res.records),
        "final_n_dofs": res.records[-1].n_dofs,
        "final_E_ocp": res.records[-1].E_ocp,
        "zero_fraction": res.solution.zero_fraction(),
        "slopes_last6": _fits(res.records, names, 6),
    }
    with open(os.path.join(cfg.output_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, allow_nan=True)
    return res, summary


def sparsity_sweep(mesh, params, data, gammas, A=None, quad=None, tol=1e-8, max_iter=2000):
    """Zero-set fraction of the discrete control for several gamma on one mesh."""
    A = A if A is not None else assemble_stiffness(mesh, params.alpha)
    quad = quad or LoadQuadrature(mesh)
    out = []
    for g in gammas:
        sol = fixed_point_solve(mesh, A, replace(params, gamma=float(g)), data, tol=tol,
                                max_iter=max_iter, quad=quad)
        out.append(sol.zero_fraction())
    return out
