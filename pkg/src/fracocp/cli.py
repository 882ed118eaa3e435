"""Command line interface: ``fracocp run|sweep|mesh-export|selftest``."""
import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from .harness import ConfigError, config_from_dict, load_config, parse_value, run_experiment
from .optimality import SolverError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_SELFTEST = 0, 2, 3, 4


def _overrides(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError("--set expects key=value, got %r" % item)
        k, v = item.split("=", 1)
        out[k.strip()] = parse_value(v.strip())
    return out


def _config(args, extra=None):
    ov = _overrides(args.set)
    if args.output_dir:
        ov["output_dir"] = args.output_dir
    ov.update(extra or {})
    if args.config:
        return load_config(args.config, ov)
    return config_from_dict({}, ov)


def _log(quiet):
    if quiet:
        return None
    return lambda msg: print(msg, file=sys.stderr, flush=True)


def cmd_run(args):
    cfg = _config(args)
    _, summary = run_experiment(cfg, _log(args.quiet))
    slopes = summary["slopes_last6"]
    print("final dofs %d, E_ocp %.4e" % (summary["final_n_dofs"], summary["final_E_ocp"]))
    for name, fit in slopes.items():
        if fit is not None:
            print("slope %-6s %.3f" % (name, fit["slope"]))
    print("outputs in %s" % cfg.output_dir)
    return EXIT_OK


def cmd_sweep(args):
    values = [parse_value(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values is empty")
    base = _config(args)
    rows = []
    for v in values:
        sub = os.path.join(base.output_dir, "%s_%s" % (args.param, v))
        cfg = _config(args, {args.param: v, "output_dir": sub})
        _, summary = run_experiment(cfg, _log(args.quiet))
        fit = summary["slopes_last6"].get("E_ocp")
        rows.append([args.param, v, summary["final_n_dofs"], summary["final_E_ocp"],
                     summary["zero_fraction"], fit["slope"] if fit else float("nan")])
        print("%s=%s: %d dofs, E_ocp %.4e, zero fraction %.4f"
              % (args.param, v, rows[-1][2], rows[-1][3], rows[-1][4]))
    os.makedirs(base.output_dir, exist_ok=True)
    with open(os.path.join(base.output_dir, "sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "value", "n_dofs", "E_ocp", "zero_fraction", "slope_E_ocp"])
        w.writerows(rows)
    return EXIT_OK


def cmd_mesh_export(args):
    from .mesh import make_initial_mesh, uniform_refine

    cfg = _config(args)
    mesh = make_initial_mesh(cfg.domain_spec())
    for _ in range(args.refine):
        mesh = uniform_refine(mesh)
    mesh.write_json(args.out)
    print("%d vertices, %d elements, %d dofs -> %s"
          % (mesh.n_vertices, mesh.n_elements, mesh.n_dofs, args.out))
    return EXIT_OK


def selftest_checks(quick=True):
    """Oracle comparisons; returns a list of (name, passed, detail)."""
    from . import oracles
    from .frac_assembly import assemble_stiffness, complement_weight
    from .frac_eval import P1Field, frac_laplacian_pointwise
    from .mesh import Square, UnitDisk, make_initial_mesh, uniform_refine
    from .optimality import solve_spd

    out = []
    alphas = (0.5, 1.5) if quick else (0.5, 1.0, 1.5)
    sq = make_initial_mesh(Square(2))
    for a in alphas:
        A = assemble_stiffness(sq, a).entries[0, 0]
        o = oracles.stiffness_entry_oracle(sq, 0, 0, a)
        err = abs(A / o - 1)
        out.append(("stiffness square alpha=%g" % a, err <= 1e-4, "rel err %.2e" % err))
        rho = complement_weight(UnitDisk(16), np.zeros(2), a)
        err = abs(rho * a / (2 * np.pi) - 1)
        out.append(("rho(0) disk alpha=%g" % a, err <= 1e-6, "rel err %.2e" % err))
    err = abs(complement_weight(Square(2), np.zeros(2), 1.0) / oracles.square_rho_oracle([0, 0], 1.0) - 1)
    out.append(("rho(0) square alpha=1", err <= 1e-5, "rel err %.2e" % err))
    m = uniform_refine(sq)
    c = np.zeros(m.n_dofs)
    c[2] = 1.0
    f = P1Field(m, c)
    rng = np.random.default_rng(0)
    for a in alphas:
        worst = 0.0
        for K in range(0, m.n_elements, 8):
            x = rng.dirichlet([2, 2, 2]) @ m.p[m.t[K]]
            o = oracles.hat_fraclap_oracle(m, m.interior_vertices[2], x, a)
            worst = max(worst, abs(frac_laplacian_pointwise(f, K, x, a) / o - 1))
        out.append(("pointwise hat alpha=%g" % a, worst <= 1e-4, "max rel err %.2e" % worst))
    B = rng.standard_normal((50, 50))
    S = B @ B.T + 50 * np.eye(50)
    b = rng.standard_normal(50)
    err = np.max(np.abs(solve_spd(S, b) - oracles.gauss_solve(S, b)))
    out.append(("spd solve 50x50", err <= 1e-10, "max diff %.2e" % err))
    return out


def cmd_selftest(args):
    t0 = time.perf_counter()
    checks = selftest_checks(quick=not args.full)
    ok = True
    for name, passed, detail in checks:
        print("%s  %-28s %s" % ("PASS" if passed else "FAIL", name, detail))
        ok &= bool(passed)
    print("selftest %s in %.1f s" % ("passed" if ok else "FAILED", time.perf_counter() - t0))
    return EXIT_OK if ok else EXIT_SELFTEST


def build_parser():
    ap = argparse.ArgumentParser(prog="fracocp", description=__doc__)
    ap.add_argument("--deterministic", action="store_true",
                    help="force serial kernels and reductions")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", nargs="?", help="TOML-style key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("-o", "--output-dir", help="output directory")
        p.add_argument("-q", "--quiet", action="store_true")

    p = sub.add_parser("run", help="run one experiment")
    common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("sweep", help="run one experiment per value of a parameter")
    common(p)
    p.add_argument("--param", choices=["gamma", "theta"], required=True)
    p.add_argument("--values", required=True, help="comma separated list")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("mesh-export", help="write the (uniformly refined) initial mesh as JSON")
    common(p)
    p.add_argument("--refine", type=int, default=0, help="uniform refinement sweeps")
    p.add_argument("--out", default="mesh.json")
    p.set_defaults(func=cmd_mesh_export)
    p = sub.add_parser("selftest", help="compare against the independent oracles")
    p.add_argument("--full", action="store_true", help="all three alpha values")
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.deterministic:
        # kernels are serial already; this pins any threaded BLAS as well
        for var in ("NUMBA_NUM_THREADS", "OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = "1"
    try:
        return args.func(args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print("solver failure: %s" % exc, file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
