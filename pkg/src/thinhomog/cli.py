"""Command-line entry point.

Exit codes: 0 success, 1 validation failure (a study or check did not
pass), 2 solver failure, 3 bad config or usage.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys

import numpy as np

from . import __version__
from .cell import sample_coefficients, solve_cell
from .experiments import (
    ConfigError,
    ExperimentConfig,
    config_hash,
    inequality_suite,
    run_study,
    validate_config,
)
from .expr import parse_expression
from .homog1d import solve_homogenized
from .mesh import write_mesh
from .plap import SolverError
from .profiles import Profile, ProfileError, validate_hypothesis
from .thin2d import EpsilonProblem, solve_epsilon_problem

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def load_config(path) -> ExperimentConfig:
    """Parse and validate a study config file (strict JSON schema)."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    try:
        return validate_config(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def _load_profile(path) -> Profile:
    try:
        with open(path, encoding="utf-8") as fh:
            return Profile.from_dict(json.load(fh))
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except (json.JSONDecodeError, ProfileError, KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _num_or_expr(text, name):
    """A number or an expression in x, as a vectorised callable."""
    try:
        e = parse_expression(text)
    except Exception as exc:
        raise ConfigError(f"--{name}: {exc}") from None
    if "y" in e.variables():
        raise ConfigError(f"--{name}: must not depend on y")
    return lambda x: e.evaluate(x, 0.0)


def _out_dir(args) -> str:
    return os.environ.get("THINHOMOG_OUT") or args.out or "thinhomog-out"


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _write_manifest(out, command, inputs, outputs, chash, start):
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "manifest.json")
    doc = {"tool": "thinhomog", "version": __version__, "subcommand": command,
           "config_hash": chash, "inputs": list(inputs),
           "outputs": [o for o in outputs if os.path.exists(o)],
           "start": start, "end": _now()}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _hash_args(d) -> str:
    import hashlib
    return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()[:16]


# ------------------------------------------------------------- subcommands
def cmd_cell(args):
    prof = _load_profile(args.profile)
    sol = solve_cell(prof, args.x, args.p, (args.resolution, args.resolution))
    print(f"q={sol.q_flux:.12f} r={sol.r:.12f}")
    return EXIT_OK, [args.profile], [], _hash_args({"profile": prof.to_dict(), "p": args.p, "x": args.x})


def cmd_coeffs(args):
    prof = _load_profile(args.profile)
    xs = (np.arange(args.n) + 0.5) / args.n
    co = sample_coefficients(prof, xs, args.p, (args.resolution, args.resolution))
    out = _out_dir(args)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "coeffs.csv")
    co.to_csv(path)
    print(path)
    return EXIT_OK, [args.profile], [path], _hash_args({"profile": prof.to_dict(), "p": args.p, "n": args.n})


def cmd_solve1d(args):
    q = _num_or_expr(args.q, "q")
    r = _num_or_expr(args.r, "r")
    f = _num_or_expr(args.fhat, "fhat")
    u, rep = solve_homogenized((q, r), f, args.p, args.n)
    out = _out_dir(args)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "u1d.csv")
    u.to_csv(path)
    print(path)
    return EXIT_OK, [], [path], _hash_args(vars(args))


def cmd_solve2d(args):
    if args.eps is None:
        raise ConfigError("--eps is required for solve2d")
    prof = _load_profile(args.profile)
    e = parse_expression(args.f)
    prob = EpsilonProblem(prof, args.eps, lambda x, y: e.evaluate(x, y), args.p,
                          args.points_per_period, args.layers)
    u, rep = solve_epsilon_problem(prob)
    out = _out_dir(args)
    os.makedirs(out, exist_ok=True)
    mpath = os.path.join(out, "mesh.txt")
    fpath = os.path.join(out, "u2d.csv")
    rpath = os.path.join(out, "report.json")
    write_mesh(u.mesh, mpath)
    vals = u.node_values
    with open(fpath, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,y,u\n")
        for (x, y), v in zip(u.mesh.nodes, vals):
            fh.write(f"{x:.17g},{y:.17g},{v:.17g}\n")
    with open(rpath, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(rep.to_dict(), fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    print(f"ndof={u.mesh.ndof} W1p_triple={rep.extra['W1p_triple']:.12g} bound_ok={rep.extra['bound_ok']}")
    code = EXIT_OK if rep.extra["bound_ok"] else EXIT_VALIDATION
    return code, [args.profile], [mpath, fpath, rpath], _hash_args({"profile": prof.to_dict(), "p": args.p,
                                                                   "eps": args.eps, "f": args.f})


def _study(name):
    def run(args):
        if not args.config:
            raise ConfigError(f"--config is required for {name}")
        cfg = load_config(args.config)
        if cfg.study != {"converge": "convergence"}.get(name, name):
            raise ConfigError(f"{args.config}: study {cfg.study!r} does not match subcommand {name!r}")
        if args.p is not None:
            cfg.p = [args.p]
        if args.eps is not None:
            cfg.eps = [args.eps]
        if args.seed is not None:
            cfg.seed = args.seed
        out = os.environ.get("THINHOMOG_OUT") or args.out or cfg.out
        rep = run_study(cfg, jobs=args.jobs)
        paths = rep.write(out)
        for k, v in rep.criteria.items():
            print(f"{'PASS' if v else 'FAIL'} {k}")
        args.out = out
        return (EXIT_OK if rep.passed else EXIT_VALIDATION), [args.config], paths, config_hash(cfg)
    return run


def cmd_validate(args):
    prof = _load_profile(args.profile)
    rep = validate_hypothesis(prof)
    print(json.dumps(rep.to_dict(), sort_keys=True))
    return (EXIT_OK if rep.passed else EXIT_VALIDATION), [args.profile], [], prof.hash


def cmd_selftest(args):
    ok = True
    seed = 0 if args.seed is None else args.seed
    for p in (1.2, 1.5, 2.0, 3.0, 4.0):
        r = inequality_suite(p, seed=seed)
        print(f"{'PASS' if r['passed'] else 'FAIL'} inequalities p={p:g} violations={r['violations']}")
        ok &= r["passed"]
    for c in (0.5, 1.0, 2.0):
        sol = solve_cell(Profile.constant(c), 0.5, 3.0, (16, 16))
        good = abs(sol.q_flux - c) <= 1e-10 * c and float(np.max(np.abs(sol.psi.values))) <= 1e-10
        print(f"{'PASS' if good else 'FAIL'} flat cell G={c:g}")
        ok &= good
    u, _ = solve_homogenized((1.0, 1.0), 1.0, 2.5, 64)
    good = float(np.max(np.abs(u.values - 1.0))) <= 1e-10
    print(f"{'PASS' if good else 'FAIL'} constant 1D solution")
    ok &= good
    u2, rep = solve_epsilon_problem(EpsilonProblem(Profile.constant(1.0), 0.25, 1.0, 3.0))
    good = float(np.max(np.abs(u2.values - 1.0))) <= 1e-9 and rep.extra["bound_ok"]
    print(f"{'PASS' if good else 'FAIL'} constant thin-domain solution")
    ok &= good
    return (EXIT_OK if ok else EXIT_VALIDATION), [], [], _hash_args({"seed": seed})


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config")
    common.add_argument("--profile")
    common.add_argument("--p", type=float)
    common.add_argument("--eps", type=float)
    common.add_argument("--out")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    common.add_argument("--seed", type=int)

    ap = _Parser(prog="thinhomog", description="Thin-domain p-Laplacian homogenisation toolkit")
    ap.add_argument("--version", action="version", version=f"thinhomog {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("cell", parents=[common], help="solve one cell problem and print q, r")
    s.add_argument("--x", type=float, default=0.5)
    s.add_argument("--resolution", type=int, default=64)
    s.set_defaults(func=cmd_cell, needs=("profile", "p"))

    s = sub.add_parser("coeffs", parents=[common], help="sample q(x), r(x) to CSV")
    s.add_argument("--n", type=int, default=16)
    s.add_argument("--resolution", type=int, default=32)
    s.set_defaults(func=cmd_coeffs, needs=("profile", "p"))

    s = sub.add_parser("solve1d", parents=[common], help="solve the homogenised 1D problem")
    s.add_argument("--q", default="1")
    s.add_argument("--r", default="1")
    s.add_argument("--fhat", default="1")
    s.add_argument("--n", type=int, default=256)
    s.set_defaults(func=cmd_solve1d, needs=("p",))

    s = sub.add_parser("solve2d", parents=[common], help="solve the thin-domain problem")
    s.add_argument("--f", default="1")
    s.add_argument("--points-per-period", type=int, default=16)
    s.add_argument("--layers", type=int, default=8)
    s.set_defaults(func=cmd_solve2d, needs=("profile", "p"))

    for name, helptext in (("converge", "homogenisation convergence study"),
                           ("piecewise", "piecewise-periodic consistency study"),
                           ("domaindep", "domain dependence study"),
                           ("appendix", "coefficient continuity study")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.set_defaults(func=_study(name), needs=("config",))

    s = sub.add_parser("validate", parents=[common], help="check a profile's bounds, periodicity and regularity")
    s.set_defaults(func=cmd_validate, needs=("profile",))

    s = sub.add_parser("selftest", parents=[common], help="run the invariant suites")
    s.set_defaults(func=cmd_selftest, needs=())
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    start = _now()
    try:
        args = ap.parse_args(argv)
        for key in args.needs:
            if getattr(args, key) is None:
                raise UsageError(f"thinhomog {args.command}: --{key} is required")
        if args.p is not None and not args.p > 1:
            raise ConfigError("p must exceed 1")
        code, inputs, outputs, chash = args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:          # --help / --version
        return int(exc.code or 0)
    except (ConfigError, ProfileError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _write_manifest(_out_dir(args), args.command, inputs, outputs, chash, start)
    return code


if __name__ == "__main__":
    sys.exit(main())
