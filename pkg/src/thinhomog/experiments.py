"""Config-driven studies: homogenisation convergence, piecewise consistency,
domain dependence and coefficient continuity, plus the inequality suites.

Every study returns a StudyReport whose CSV table is a pure function of the
configuration (runtimes live only in the JSON summary).
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .cell import CellCache, cell_mesh, piecewise_coefficients, sample_coefficients, solve_cell
from .expr import parse_expression
from .homog1d import Field1D, fhat_from, solve_homogenized, w1p_norm
from .plap import a_p, conjugate_exponent, monotonicity_gap
from .profiles import Profile, build_piecewise_approx, c1_distance
from .thin2d import (
    EpsilonProblem,
    column_average,
    column_quadrature,
    domain_dependence,
    solve_epsilon_problem,
    unfold_periodic,
    weak_compare,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "StudyReport",
    "STUDIES",
    "config_hash",
    "validate_config",
    "run_study",
    "run_convergence",
    "run_piecewise_consistency",
    "run_domain_dependence",
    "run_appendix_continuity",
    "fit_exponent",
    "inequality_suite",
    "environment_stamp",
]

STUDIES = ("convergence", "piecewise", "domaindep", "appendix")
MAX_DOFS = 200_000
MIN_EPS = 1.0 / 64

TEST_NAMES = ("1", "x", "x2", "sin", "cos")


class ConfigError(ValueError):
    pass


_RES_DEFAULTS = {
    "cell": 64,                # cell mesh n1 = n2 for coefficient solves
    "points_per_period": 16,
    "layers": 8,
    "strip_layers": 2,
    "n1d": 1024,
    "x_samples": 64,
}


@dataclass
class ExperimentConfig:
    study: str
    profile: dict
    p: list
    eps: list = field(default_factory=list)
    delta: list = field(default_factory=list)
    t: list = field(default_factory=list)
    bump: str = "0.3*sin(2*pi*y)"
    hat_mode: str = "scale"
    f: str = "cos(pi*x)"
    resolution: dict = field(default_factory=dict)
    out: str = "out"
    seed: int = 0

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        # unused optional lists are omitted so the dict reparses strictly
        for key in ("eps", "delta", "t"):
            if not d[key]:
                del d[key]
        return d

    @property
    def res(self) -> dict:
        r = dict(_RES_DEFAULTS)
        r.update(self.resolution)
        return r

    @property
    def hash(self) -> str:
        return config_hash(self)


def config_hash(cfg: ExperimentConfig) -> str:
    d = cfg.to_dict()
    d.pop("out", None)       # where results go does not change them
    blob = json.dumps(d, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _num_list(value, key, positive=True):
    vals = value if isinstance(value, list) else [value]
    if not vals:
        raise ConfigError(f"{key}: list must be nonempty")
    out = []
    for i, v in enumerate(vals):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{key}[{i}]: expected a number, got {v!r}")
        if positive and not v > 0:
            raise ConfigError(f"{key}[{i}]: must be positive")
        out.append(float(v))
    return out


def validate_config(raw: dict) -> ExperimentConfig:
    """Strict schema check; errors name the offending key path."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
    for key in ("study", "profile", "p"):
        if key not in raw:
            raise ConfigError(f"missing required key: {key}")
    study = raw["study"]
    if study not in STUDIES:
        raise ConfigError(f"study: expected one of {', '.join(STUDIES)}, got {study!r}")
    if not isinstance(raw["profile"], dict):
        raise ConfigError("profile: expected an object")
    try:
        Profile.from_dict(raw["profile"])
    except Exception as exc:        # parse and range errors from the profile layer
        raise ConfigError(f"profile: {exc}") from None
    ps = _num_list(raw["p"], "p", positive=False)
    for i, p in enumerate(ps):
        if not p > 1:
            raise ConfigError(f"p[{i}]: p must exceed 1")
    kw = {"study": study, "profile": dict(raw["profile"]), "p": ps}
    for key in ("eps", "delta", "t"):
        if key in raw:
            kw[key] = _num_list(raw[key], key, positive=(key != "t"))
    for i, e in enumerate(kw.get("eps", [])):
        if not MIN_EPS <= e <= 1:
            raise ConfigError(f"eps[{i}]: must lie in [1/64, 1]")
    for i, t in enumerate(kw.get("t", [])):
        if t < 0:
            raise ConfigError(f"t[{i}]: must be nonnegative")
    need = {"convergence": "eps", "domaindep": "eps", "piecewise": "delta", "appendix": "t"}
    if need[study] not in kw:
        raise ConfigError(f"{need[study]}: required for study {study!r}")
    if study == "domaindep" and "delta" not in kw:
        raise ConfigError("delta: required for study 'domaindep'")
    for key in ("bump", "f"):
        if key in raw:
            if not isinstance(raw[key], str):
                raise ConfigError(f"{key}: expected an expression string")
            try:
                parse_expression(raw[key])
            except Exception as exc:
                raise ConfigError(f"{key}: {exc}") from None
            kw[key] = raw[key]
    if "hat_mode" in raw:
        if raw["hat_mode"] not in ("scale", "shift"):
            raise ConfigError("hat_mode: expected 'scale' or 'shift'")
        kw["hat_mode"] = raw["hat_mode"]
    if "resolution" in raw:
        res = raw["resolution"]
        if not isinstance(res, dict):
            raise ConfigError("resolution: expected an object")
        bad = sorted(set(res) - set(_RES_DEFAULTS))
        if bad:
            raise ConfigError(f"resolution.{bad[0]}: unknown key")
        mins = {"cell": 8, "points_per_period": 8, "layers": 6, "strip_layers": 1,
                "n1d": 4, "x_samples": 2}
        for k, v in res.items():
            if isinstance(v, bool) or not isinstance(v, int) or v < mins[k]:
                raise ConfigError(f"resolution.{k}: expected an integer >= {mins[k]}")
        kw["resolution"] = dict(res)
    if "out" in raw:
        if not isinstance(raw["out"], str):
            raise ConfigError("out: expected a path string")
        kw["out"] = raw["out"]
    if "seed" in raw:
        if isinstance(raw["seed"], bool) or not isinstance(raw["seed"], int):
            raise ConfigError("seed: expected an integer")
        kw["seed"] = raw["seed"]
    cfg = ExperimentConfig(**kw)
    _check_caps(cfg)
    return cfg


def _check_caps(cfg: ExperimentConfig):
    r = cfg.res
    if (r["cell"] + 1) ** 2 > MAX_DOFS:
        raise ConfigError("resolution.cell: cell mesh exceeds the dof cap")
    L = float(cfg.profile.get("L", 1.0))
    for e in cfg.eps:
        nx = math.ceil(r["points_per_period"] / (e * L))
        dofs = (nx + 1) * (r["layers"] + r["strip_layers"] + 1)
        if dofs > MAX_DOFS:
            raise ConfigError(f"eps={e}: about {dofs} dofs exceeds the cap of {MAX_DOFS}")


# ------------------------------------------------------------------ reports
def environment_stamp() -> dict:
    import scipy
    return {"thinhomog": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "platform": platform.platform()}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


@dataclass
class StudyReport:
    study: str
    config_hash: str
    rows: list
    criteria: dict
    runtimes: list = field(default_factory=list)
    environment: dict = field(default_factory=environment_stamp)
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.criteria.values())

    def csv_text(self) -> str:
        if not self.rows:
            return "config_hash\n"
        cols = list(self.rows[0])
        lines = [",".join(cols)] + [",".join(_fmt(r[c]) for c in cols) for r in self.rows]
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {"study": self.study, "config_hash": self.config_hash,
                "rows": self.rows, "pass": self.passed}

    def write(self, out_dir) -> list:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, f"{self.study}.csv")
        json_path = os.path.join(out_dir, f"{self.study}.json")
        with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.csv_text())
        doc = self.summary()
        doc.update({"criteria": self.criteria, "runtimes": self.runtimes,
                    "environment": self.environment, "extra": self.extra})
        with open(json_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return [csv_path, json_path]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _strictly_decreasing(vals) -> bool:
    return all(b < a for a, b in zip(vals, vals[1:]))


def fit_exponent(params, values, last: int = 3) -> float:
    """Least-squares slope of log(values) against log(params) over the
    ``last`` smallest parameters."""
    pr = np.asarray(params, dtype=float)
    vr = np.asarray(values, dtype=float)
    order = np.argsort(pr)[:last]
    if len(order) < 2 or np.any(vr[order] <= 0):
        return float("nan")
    slope, _ = np.polyfit(np.log(pr[order]), np.log(vr[order]), 1)
    return float(slope)


def _pmap(fn, items, jobs):
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _expr_fn(src):
    e = parse_expression(src)
    return lambda x, y=0.0: e.evaluate(x, y)


def _profile_text(profile: Profile) -> str:
    if len(profile.pieces) != 1:
        raise ConfigError("this study needs a single-expression profile")
    return profile.pieces[0].to_text()


# -------------------------------------------------------------- convergence
def _convergence_point(args):
    profile_d, p, eps, f_src, res, coeff_data, n1d = args
    profile = Profile.from_dict(profile_d)
    t0 = time.perf_counter()
    f = _expr_fn(f_src)
    prob = EpsilonProblem(profile, eps, f, p, res["points_per_period"], res["layers"])
    u, rep = solve_epsilon_problem(prob)
    xs, ws = column_quadrature(u.mesh)
    avg = column_average(u, profile, eps, xs, ws)
    x1, v1 = coeff_data
    u1 = Field1D(x1, v1, p)
    defects = weak_compare(avg, u1)
    row = {"p": p, "eps": eps, "nx": prob.nx, "ndof": u.mesh.ndof}
    row.update({f"defect_{n}": d for n, d in zip(TEST_NAMES, defects)})
    strong = float("nan")
    if profile.x_independent:
        cm = cell_mesh(profile, 0.5, (res["points_per_period"], res["layers"]))
        strong = unfold_periodic(u, cm, eps).strong_defect(u1, p)
    row.update({
        "strong_defect": strong,
        "W1p_triple": rep.extra["W1p_triple"],
        "f_triple": rep.extra["f_triple"],
        "bound_ok": rep.extra["bound_ok"],
        "newton_iterations": rep.total_iterations,
    })
    return row, time.perf_counter() - t0


def _homogenized_for(profile, p, f_src, res, cache):
    """Coefficients at the per-period resolution of the eps-meshes and the
    1D limit solution."""
    cres = (res["points_per_period"], res["layers"])
    f = _expr_fn(f_src)
    if profile.x_independent:
        sol = cache.get((profile.hash, 0.5, p, cres), lambda: solve_cell(profile, 0.5, p, cres))
        coeffs = (sol.q_flux, sol.r)
        fhat = fhat_from(lambda x: f(x), sol.r, res["n1d"])
    else:
        m = res["x_samples"]
        xs = (np.arange(m) + 0.5) / m
        coeffs = sample_coefficients(profile, xs, p, cres, cache=cache)
        fhat = fhat_from(lambda x: f(x), coeffs, res["n1d"])
    u1, rep = solve_homogenized(coeffs, fhat, p, res["n1d"])
    return coeffs, u1


def run_convergence(cfg: ExperimentConfig, jobs: int = 1) -> StudyReport:
    profile = Profile.from_dict(cfg.profile)
    if "y" in parse_expression(cfg.f).variables():
        raise ConfigError("f: the convergence study needs a load f(x)")
    res = cfg.res
    cache = CellCache()
    h = cfg.hash
    rows, times = [], []
    extra = {}
    for p in cfg.p:
        coeffs, u1 = _homogenized_for(profile, p, cfg.f, res, cache)
        extra[f"p={p:g}"] = {"q": coeffs[0] if isinstance(coeffs, tuple) else None,
                             "r": coeffs[1] if isinstance(coeffs, tuple) else None}
        items = [(cfg.profile, p, e, cfg.f, res, (u1.x, u1.values), res["n1d"])
                 for e in sorted(cfg.eps, reverse=True)]
        for row, dt in _pmap(_convergence_point, items, jobs):
            row = {"config_hash": h, **row}
            rows.append(row)
            times.append(dt)
    crit = {}
    for p in cfg.p:
        sub = [r for r in rows if r["p"] == p]
        for name in ("1", "cos"):
            d = [r[f"defect_{name}"] for r in sub]
            trivial = max(d) <= 1e-8
            crit[f"p={p:g}:phi={name}:decreasing"] = trivial or _strictly_decreasing(d)
            crit[f"p={p:g}:phi={name}:final<=first/3"] = trivial or d[-1] <= d[0] / 3
    crit["bound"] = all(r["bound_ok"] for r in rows)
    return StudyReport("convergence", h, rows, crit, times, extra=extra)


# --------------------------------------------------------------- piecewise
def run_piecewise_consistency(cfg: ExperimentConfig, jobs: int = 1) -> StudyReport:
    profile = Profile.from_dict(cfg.profile)
    res = cfg.res
    cres = (res["cell"], res["cell"])
    cache = CellCache()
    m = res["x_samples"]
    xs = (np.arange(m) + 0.5) / m
    f = _expr_fn(cfg.f)
    h = cfg.hash
    rows, times = [], []
    for p in cfg.p:
        t0 = time.perf_counter()
        ref = sample_coefficients(profile, xs, p, cres, cache=cache)
        u_ref, _ = solve_homogenized(ref, fhat_from(lambda x: f(x), ref, res["n1d"]), p, res["n1d"])
        base = time.perf_counter() - t0
        for d in sorted(cfg.delta, reverse=True):
            t0 = time.perf_counter()
            pw = build_piecewise_approx(profile, d)
            iq, ir = piecewise_coefficients(pw, p, cres, cache=cache)
            idx = pw.interval_index(xs)
            dq = float(np.max(np.abs(iq[idx] - ref.q)))
            dr = float(np.max(np.abs(ir[idx] - ref.r)))
            co = sample_coefficients(pw, xs, p, cres, cache=cache)
            u_d, _ = solve_homogenized(co, fhat_from(lambda x: f(x), co, res["n1d"]), p, res["n1d"])
            du = w1p_norm(Field1D(u_d.x, u_d.values - u_ref.values), p)
            rows.append({"config_hash": h, "p": p, "delta": d, "intervals": pw.n_intervals,
                         "sup_dq": dq, "sup_dr": dr, "w1p_du": du})
            times.append(base + time.perf_counter() - t0)
            base = 0.0
    crit = {}
    for p in cfg.p:
        sub = [r for r in rows if r["p"] == p]
        for key in ("sup_dq", "sup_dr", "w1p_du"):
            crit[f"p={p:g}:{key}:decreasing"] = _strictly_decreasing([r[key] for r in sub])
    return StudyReport("piecewise", h, rows, crit, times, extra={"cell_solves": cache.solves})


# ----------------------------------------------------------- domain dependence
def _hat_profile(profile: Profile, delta: float, mode: str) -> Profile:
    text = _profile_text(profile)
    if mode == "scale":
        k = 1.0 - delta
        return Profile.from_expr(f"({text})*{k!r}", L=profile.L, G0=profile.G0 * k, G1=profile.G1)
    G0 = profile.G0 - delta
    if not G0 > 0:
        raise ConfigError(f"delta={delta}: shifted profile is not positive")
    return Profile.from_expr(f"({text})-{delta!r}", L=profile.L, G0=G0, G1=profile.G1)


def _domaindep_point(args):
    profile_d, p, eps, delta, mode, f_src, res = args
    t0 = time.perf_counter()
    G = Profile.from_dict(profile_d)
    Gh = _hat_profile(G, delta, mode)
    # |G - Ghat| <= delta * G1 for the scaled pair, delta for the shifted one
    bound = delta * (G.G1 if mode == "scale" else 1.0)
    out = domain_dependence(G, Gh, eps, _expr_fn(f_src), p,
                            points_per_period=res["points_per_period"], layers=res["layers"],
                            strip_layers=res["strip_layers"], delta=bound)
    row = {"p": p, "delta": delta, "eps": eps, "sup_distance": out["sup_distance"],
           "intersection": out["intersection"], "strip": out["strip"],
           "strip_hat": out["strip_hat"], "D": out["D"],
           "bound_ok": bool(out["u_report"].extra["bound_ok"] and out["uhat_report"].extra["bound_ok"]),
           "f_triple": max(out["u_f_triple"], out["uhat_f_triple"])}
    return row, time.perf_counter() - t0


def run_domain_dependence(cfg: ExperimentConfig, jobs: int = 1) -> StudyReport:
    res = cfg.res
    h = cfg.hash
    items = [(cfg.profile, p, e, d, cfg.hat_mode, cfg.f, res)
             for p in cfg.p for d in sorted(cfg.delta, reverse=True) for e in sorted(cfg.eps, reverse=True)]
    results = _pmap(_domaindep_point, items, jobs)
    rows = [{"config_hash": h, **r} for r, _ in results]
    times = [t for _, t in results]
    crit = {}
    for p in cfg.p:
        worst = []
        uniform = True
        for d in sorted(cfg.delta, reverse=True):
            D = [r["D"] for r in rows if r["p"] == p and r["delta"] == d]
            lo, hi = min(D), max(D)
            if hi > 1e-8:
                uniform &= lo > 0 and hi / lo <= 2.0
            worst.append(hi)
        crit[f"p={p:g}:uniform_in_eps"] = bool(uniform)
        trivial = max(worst) <= 1e-8
        crit[f"p={p:g}:decreasing_in_delta"] = trivial or _strictly_decreasing(worst)
        crit[f"p={p:g}:last<=first/3"] = trivial or worst[-1] <= worst[0] / 3
    crit["bound"] = all(r["bound_ok"] for r in rows)
    return StudyReport("domaindep", h, rows, crit, times)


# ---------------------------------------------------------------- appendix
def run_appendix_continuity(cfg: ExperimentConfig, jobs: int = 1) -> StudyReport:
    base = Profile.from_dict(cfg.profile)
    if not base.x_independent:
        raise ConfigError("profile: the continuity study needs an x-independent profile")
    res = cfg.res
    cres = (res["cell"], res["cell"])
    text = _profile_text(base)
    bump = parse_expression(cfg.bump)
    if "x" in bump.variables():
        raise ConfigError("bump: must depend on y only")
    ys = np.linspace(0.0, base.L, 257)
    bmax = float(np.max(np.abs(bump.evaluate(0.0, ys))))
    h = cfg.hash
    rows, times = [], []
    extra = {}
    for p in cfg.p:
        t0 = time.perf_counter()
        q0 = solve_cell(base, 0.5, p, cres).q_flux
        ts = sorted(cfg.t, reverse=True)
        dq = []
        for t in ts:
            G0 = base.G0 - t * bmax
            if not G0 > 0:
                raise ConfigError(f"t={t}: perturbed profile is not positive")
            pert = Profile.from_expr(f"({text})+{t!r}*({cfg.bump})", L=base.L, G0=G0,
                                     G1=base.G1 + t * bmax)
            qt = solve_cell(pert, 0.5, p, cres).q_flux if t > 0 else q0
            d = c1_distance(pert, base)
            dq.append(abs(qt - q0))
            rows.append({"config_hash": h, "p": p, "t": t, "c1_distance": d, "q": qt,
                         "dq": abs(qt - q0)})
            times.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
        ds = [r["c1_distance"] for r in rows if r["p"] == p]
        extra[f"p={p:g}"] = {"exponent": fit_exponent(ds, dq), "alpha": _alpha(p)}
    crit = {}
    for p in cfg.p:
        sub = [r for r in rows if r["p"] == p]
        crit[f"p={p:g}:dq_decreasing"] = _strictly_decreasing([r["dq"] for r in sub])
        e = extra[f"p={p:g}"]["exponent"]
        crit[f"p={p:g}:exponent>=alpha-0.15"] = bool(e >= _alpha(p) - 0.15)
    return StudyReport("appendix", h, rows, crit, times, extra=extra)


def _alpha(p: float) -> float:
    return 0.5 if p <= 2 else 1.0 / p


def run_study(cfg: ExperimentConfig, jobs: int = 1) -> StudyReport:
    return {"convergence": run_convergence, "piecewise": run_piecewise_consistency,
            "domaindep": run_domain_dependence, "appendix": run_appendix_continuity}[cfg.study](cfg, jobs)


# -------------------------------------------------------- inequality suites
def _norm(v):
    return np.linalg.norm(v, axis=-1)


def inequality_suite(p: float, n: int = 10_000, seed: int = 0, dim: int = 2, tol: float = 1e-12) -> dict:
    """Random-pair checks of the monotonicity, Hoelder and convexity inequalities of a_p.

    Returns violation counts (tolerance ``tol`` relative to the size of the
    terms) and the empirical constants, i.e. observed minimum (or maximum)
    ratios.
    """
    rng = np.random.default_rng(seed)
    # mix of scales so that both small and large arguments are covered
    scale = 10.0 ** rng.uniform(-3, 3, size=(n, 1))
    x = rng.standard_normal((n, dim)) * scale
    y = np.where(rng.random((n, 1)) < 0.25, x + 1e-2 * scale * rng.standard_normal((n, dim)),
                 rng.standard_normal((n, dim)) * scale)
    nx, ny, nd = _norm(x), _norm(y), _norm(x - y)
    keep = nd > 0
    x, y, nx, ny, nd = x[keep], y[keep], nx[keep], ny[keep], nd[keep]
    ax, ay = a_p(x, p), a_p(y, p)
    gap = monotonicity_gap(x, y, p)
    gscale = _norm(ax - ay) * nd + np.abs(np.sum(ax * (x - y), axis=-1)) + np.abs(np.sum(ay * (x - y), axis=-1))
    out = {"p": p, "pairs": int(keep.sum())}
    out["monotone_violations"] = int(np.sum(gap < -tol * gscale))
    if p >= 2:
        ratio = gap / nd ** p
        out["c_monotone"] = float(ratio.min())
        out["c_monotone_reference"] = 2.0 ** (2 - p)
    else:
        ratio = gap / (nd ** 2 * (nx + ny) ** (p - 2))
        out["c_monotone"] = float(ratio.min())
        ratio1 = gap / (nd ** 2 * (1 + nx + ny) ** (p - 2))
        out["c_monotone_shifted"] = float(ratio1.min())
    # Hoelder / Lipschitz bounds of the inverse map a_{p'}
    q = conjugate_exponent(p)
    bq = _norm(a_p(x, q) - a_p(y, q))
    if q < 2:
        rq = bq / nd ** (q - 1)
        out["c_inverse"] = float(rq.max())
        out["c_inverse_reference"] = 2.0 ** (2 - q)
    else:
        rq = bq / (nd * (nx + ny) ** (q - 2))
        out["c_inverse"] = float(rq.max())
        out["c_inverse_reference"] = q - 1.0
    out["inverse_violations"] = int(np.sum(rq > out["c_inverse_reference"] * (1 + tol)))
    # a_p and a_{p'} are inverse maps
    back = a_p(a_p(x, p), q)
    out["inverse_roundtrip"] = float(np.max(_norm(back - x) / np.maximum(nx, 1e-300)))
    # convexity: |y|^p >= |x|^p + p a_p(x).(y - x)
    lin = nx ** p + p * np.sum(ax * (y - x), axis=-1)
    conv = ny ** p - lin
    cscale = ny ** p + nx ** p + p * np.abs(np.sum(ax * (y - x), axis=-1))
    out["convexity_violations"] = int(np.sum(conv < -tol * cscale))
    if p >= 2:
        out["c_convexity"] = float((conv / nd ** p).min())
    else:
        out["c_convexity"] = float((conv / (nd ** 2 * (1 + nx + ny) ** (p - 2))).min())
    out["violations"] = out["monotone_violations"] + out["inverse_violations"] + out["convexity_violations"]
    out["passed"] = bool(out["violations"] == 0 and out["c_monotone"] > 0 and out["c_convexity"] > 0
                         and out["inverse_roundtrip"] < 1e-10)
    return out
