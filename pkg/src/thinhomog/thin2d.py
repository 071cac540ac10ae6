"""The full problem on the thin domain R^eps = {0 < x < 1, 0 < y < eps G(x, x/eps)}.

Also hosts the discrete unfolding operators (sample based: values at mapped
quadrature points), the column average, the vertical stretch P_{1+eta} and
the domain-dependence measurement between two profiles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .cell import effective_r
from .homog1d import Field1D
from .mesh import (
    Mesh,
    MeshError,
    NodalField,
    SNAP_TOL,
    build_graph_mesh,
    build_layered_mesh,
    build_strip_mesh,
    evaluate,
    interpolate,
    locate_points,
)
from .plap import (
    EnergySpec,
    SolveConfig,
    _QMID,
    _p1_gradient,
    conjugate_exponent,
    load_norm,
    minimize,
    norms,
)

__all__ = [
    "EpsilonProblem",
    "ResolutionError",
    "UnfoldSample",
    "Unfolding",
    "solve_epsilon_problem",
    "thin_mesh",
    "column_average",
    "column_quadrature",
    "weak_compare",
    "DEFAULT_TESTS",
    "unfold_periodic",
    "unfold_locally_periodic",
    "unfolding_identities",
    "locally_periodic_identity",
    "stretch_mesh",
    "apply_P",
    "eta_norm",
    "domain_dependence",
    "sup_distance",
]

BOUND_SLACK = 1e-6


class ResolutionError(ValueError):
    pass


def _as_load(f):
    """Accept f(x, y), f(x) or a constant; return a vectorised f(x, y)."""
    if f is None:
        return None
    if callable(f):
        try:
            code = f.__code__
            nargs = code.co_argcount - (1 if hasattr(f, "__self__") else 0)
        except AttributeError:
            nargs = 2
        if nargs == 1:
            return lambda x, y: np.broadcast_to(np.asarray(f(x), dtype=float), np.shape(x))
        return lambda x, y: np.broadcast_to(np.asarray(f(x, y), dtype=float),
                                            np.broadcast(np.asarray(x), np.asarray(y)).shape)
    c = float(f)
    return lambda x, y: np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, c)


@dataclass
class EpsilonProblem:
    """Data of the eps-problem and its mesh resolution policy.

    ``points_per_period`` columns per eps*L oscillation period (or per 1/16
    of the unit interval for non-oscillating profiles) and ``layers``
    element rows over the height.
    """

    profile: object
    eps: float
    f: object
    p: float
    points_per_period: int = 16
    layers: int = 8

    def __post_init__(self):
        if not 0 < self.eps <= 1:
            raise ResolutionError("eps must lie in (0, 1]")
        if not self.p > 1:
            raise ResolutionError("p must exceed 1")
        if self.points_per_period < 8:
            raise ResolutionError("need at least 8 points per oscillation period")
        if self.layers < 6:
            raise ResolutionError("need at least 6 vertical layers")
        self.load = _as_load(self.f)

    @property
    def oscillates(self) -> bool:
        pieces = self.profile.pieces
        return any("y" in pc.variables() for pc in pieces)

    @property
    def nx(self) -> int:
        L = self.profile.L
        periods = 1.0 / (self.eps * L) if self.oscillates else 16.0
        return max(int(math.ceil(self.points_per_period * periods - 1e-9)), 2)

    def height(self, x):
        x = np.asarray(x, dtype=float)
        return self.eps * self.profile(x, x / self.eps)


def thin_mesh(prob: EpsilonProblem) -> Mesh:
    return build_graph_mesh(prob.height, (0.0, 1.0), prob.nx, prob.layers)


def solve_epsilon_problem(prob: EpsilonProblem, config: SolveConfig = None, mesh: Mesh = None):
    """Minimise (1/p) int |grad u|^p + |u|^p - int f u on R^eps.

    The report's ``extra`` carries the rescaled norms and the a-priori bound
    check |||u|||_{W^{1,p}}^{p-1} <= |||f|||_{L^{p'}}.
    """
    mesh = thin_mesh(prob) if mesh is None else mesh
    spec = EnergySpec(mesh, prob.p, mass_term=True, load=prob.load)
    # the terrain numbering is column by column, so the Hessian is banded
    # (bandwidth ~ layers) and a sparse direct solve beats Jacobi-CG here
    u, rep = minimize(spec, config or SolveConfig(linear_solver="direct"))
    nr = norms(u, prob.p, eps=prob.eps)
    lhs = nr["W1p_triple"] ** (prob.p - 1)
    rhs = load_norm(spec, conjugate_exponent(prob.p), eps=prob.eps)
    rep.extra.update({
        "W1p_triple": nr["W1p_triple"],
        "f_triple": rhs,
        "bound_lhs": lhs,
        "bound_ok": bool(lhs <= rhs + BOUND_SLACK),
        "ndof": mesh.ndof,
    })
    return u, rep


# ---------------------------------------------------------------- averages
def column_quadrature(mesh_or_nx, order: int = 2):
    """Gauss points and weights on every mesh column of [0, 1]."""
    if isinstance(mesh_or_nx, Mesh):
        edges = np.asarray(mesh_or_nx.columns)
    else:
        edges = np.linspace(0.0, 1.0, int(mesh_or_nx) + 1)
    t, w = np.polynomial.legendre.leggauss(order)
    h = np.diff(edges)
    xs = (edges[:-1, None] + 0.5 * h[:, None] * (t[None, :] + 1.0)).ravel()
    ws = (0.5 * h[:, None] * w[None, :]).ravel()
    return xs, ws


def column_average(u: NodalField, profile, eps: float, x_grid, weights=None, npts: int = 64) -> Field1D:
    """(L / (|Y*(x)| eps)) int_0^{top(x)} u(x, y) dy at each x of ``x_grid``.

    ``top`` is the upper boundary of the mesh carrying ``u`` (the
    piecewise-linear interpolant of eps G(x, x/eps)); the vertical integral
    is the composite trapezoid rule on ``npts`` points.
    """
    xs = np.asarray(x_grid, dtype=float).ravel()
    mesh = u.mesh
    top = mesh.top_at(xs)
    s = np.linspace(0.0, 1.0, npts)
    X = np.repeat(xs, npts)
    Y = (top[:, None] * s[None, :]).ravel()
    vals = evaluate(u, np.stack([X, Y], axis=1)).reshape(len(xs), npts)
    integ = trapezoid(vals, dx=1.0 / (npts - 1), axis=1) * top
    r = np.array([effective_r(profile, x) for x in xs])
    avg = integ / (eps * r)
    return Field1D(xs, avg, u.p, weights)


DEFAULT_TESTS = (
    ("1", lambda x: np.ones_like(np.asarray(x, dtype=float))),
    ("x", lambda x: np.asarray(x, dtype=float)),
    ("x^2", lambda x: np.asarray(x, dtype=float) ** 2),
    ("sin(pi x)", lambda x: np.sin(np.pi * np.asarray(x, dtype=float))),
    ("cos(pi x)", lambda x: np.cos(np.pi * np.asarray(x, dtype=float))),
)


def weak_compare(a: Field1D, b: Field1D, test_functions=None) -> list:
    """|int (a - b) phi dx| for each test function (default: 1, x, x^2,
    sin(pi x), cos(pi x)).  Integrals use ``a``'s quadrature; ``b`` is
    evaluated by linear interpolation."""
    tests = [t[1] if isinstance(t, tuple) else t for t in (test_functions or DEFAULT_TESTS)]
    if a.weights is not None:
        diff = a.values - b(a.x)
        return [abs(float(np.sum(a.weights * diff * phi(a.x)))) for phi in tests]
    if b.weights is not None:
        return weak_compare(b, a, test_functions)
    grid = np.union1d(a.x, b.x)
    d = Field1D(grid, a(grid) - b(grid))
    return [abs(d.integrate(phi)) for phi in tests]


# --------------------------------------------------------------- unfolding
@dataclass
class UnfoldSample:
    k: int                         # cell index; -1 marks the leftover interval
    x_range: tuple                 # the slow-variable interval this sample covers
    points: np.ndarray             # reference coordinates (y1, y2)
    weights: np.ndarray            # reference quadrature weights
    values: np.ndarray             # unfolded values at the points
    leftover: bool = False


@dataclass
class Unfolding:
    samples: list
    eps: float
    L: float

    def integral(self) -> float:
        """(1/L) int T(phi) over (interval) x Y*."""
        tot = 0.0
        for s in self.samples:
            if not s.leftover:
                tot += (s.x_range[1] - s.x_range[0]) * float(s.weights @ s.values)
        return tot / self.L

    def lp_norm(self, p: float) -> float:
        tot = 0.0
        for s in self.samples:
            if not s.leftover:
                tot += (s.x_range[1] - s.x_range[0]) * float(s.weights @ np.abs(s.values) ** p)
        return tot ** (1.0 / p)

    def strong_defect(self, u1d, p: float, order: int = 4) -> float:
        """|| T(u_eps) - u ||_{L^p((a,b) x Y*)} against a function u(x)."""
        t, w = np.polynomial.legendre.leggauss(order)
        tot = 0.0
        for s in self.samples:
            a, b = s.x_range
            xg = a + 0.5 * (b - a) * (t + 1.0)
            wg = 0.5 * (b - a) * w
            ux = np.asarray(u1d(xg), dtype=float)
            diff = np.abs(s.values[None, :] - ux[:, None]) ** p
            tot += float(wg @ (diff @ s.weights))
        return tot ** (1.0 / p)


def _cell_quadrature(cell_mesh: Mesh):
    P = cell_mesh.nodes[cell_mesh.triangles]
    pts = np.einsum("qk,tkd->tqd", _QMID, P).reshape(-1, 2)
    w = np.repeat(cell_mesh.areas / 3.0, 3)
    return pts, w


def _eval_zero_extended(u: NodalField, pts):
    tri, bary = locate_points(u.mesh, pts, snap=SNAP_TOL)
    out = np.zeros(len(pts))
    ok = tri >= 0
    out[ok] = np.einsum("ij,ij->i", bary[ok], u.values[u.mesh.tri_dofs[tri[ok]]])
    return out


def unfold_periodic(u: NodalField, cell_mesh: Mesh, eps: float, interval=(0.0, 1.0)) -> Unfolding:
    """Purely periodic unfolding of ``u`` on the complete eps*L cells of ``interval``.

    Cells are [k eps L, (k+1) eps L]; the unfolded value on cell k at the
    reference point (y1, y2) is u(eps k L + eps y1, eps y2).  The remainder
    of the interval is the leftover set where the operator vanishes.
    """
    a, b = map(float, interval)
    L = float(cell_mesh.columns[-1] - cell_mesh.columns[0]) if cell_mesh.columns is not None \
        else float(np.ptp(cell_mesh.nodes[:, 0]))
    pts, w = _cell_quadrature(cell_mesh)
    cell = eps * L
    k0 = int(math.ceil(a / cell - 1e-9))
    k1 = int(math.floor(b / cell + 1e-9))          # cells k0 .. k1-1 are complete
    samples = []
    for k in range(k0, k1):
        phys = np.stack([eps * k * L + eps * pts[:, 0], eps * pts[:, 1]], axis=1)
        vals = evaluate(u, phys)
        samples.append(UnfoldSample(k, (k * cell, (k + 1) * cell), pts, w, vals))
    if k0 * cell - a > 1e-12:
        samples.insert(0, UnfoldSample(-1, (a, k0 * cell), pts, w, np.zeros(len(w)), True))
    if b - k1 * cell > 1e-12:
        samples.append(UnfoldSample(-1, (max(k1 * cell, a), b), pts, w, np.zeros(len(w)), True))
    return Unfolding(samples, eps, L)


def _physical_integral(u: NodalField, p=None, x_range=None):
    mesh = u.mesh
    uq = u.values[mesh.tri_dofs] @ _QMID.T
    w = (mesh.areas / 3.0)[:, None]
    if x_range is not None:
        cx = mesh.nodes[mesh.triangles][:, :, 0].mean(axis=1)
        keep = (cx > x_range[0]) & (cx < x_range[1])
        uq, w = uq[keep], w[keep]
    if p is None:
        return float(np.sum(w * uq))
    return float(np.sum(w * np.abs(uq) ** p)) ** (1.0 / p)


def unfolding_identities(u: NodalField, cell_mesh: Mesh, eps: float, p: float,
                         interval=(0.0, 1.0)) -> dict:
    """Integral and L^p identities of the periodic unfolding at matched quadrature.

    integral:  (1/L) int T(u) = (1/eps) int_{R_0} u
    norm:      ||T(u)||_{L^p} = (L/eps)^{1/p} ||u||_{L^p(R_0)}
    where R_0 is the part of the thin domain above the complete cells.
    """
    unf = unfold_periodic(u, cell_mesh, eps, interval)
    full = [s for s in unf.samples if not s.leftover]
    r0 = (full[0].x_range[0], full[-1].x_range[1]) if full else (0.0, 0.0)
    lhs_i = unf.integral()
    rhs_i = _physical_integral(u, None, r0) / eps
    lhs_n = unf.lp_norm(p)
    rhs_n = (unf.L / eps) ** (1.0 / p) * _physical_integral(u, p, r0)
    return {
        "integral_lhs": lhs_i, "integral_rhs": rhs_i,
        "integral_defect": abs(lhs_i - rhs_i) / max(1.0, abs(rhs_i)),
        "norm_lhs": lhs_n, "norm_rhs": rhs_n,
        "norm_defect": abs(lhs_n - rhs_n) / max(1.0, abs(rhs_n)),
        "cells": len(full),
    }


def unfold_locally_periodic(u: NodalField, profile, eps: float, grid=(64, 16, 16)):
    """T^{lp} u sampled on a midpoint grid of (0,1) x (0,L) x (0,G1).

    Values outside R^eps (the zero extension) are 0.  Returns
    ``(x, y1, y2, values)`` with ``values`` of shape (nx, n1, n2).
    """
    nx, n1, n2 = grid
    L = profile.L
    x = (np.arange(nx) + 0.5) / nx
    y1 = (np.arange(n1) + 0.5) * L / n1
    y2 = (np.arange(n2) + 0.5) * profile.G1 / n2
    k = np.floor(x / (eps * L) + 1e-12)
    X = eps * k[:, None, None] * L + eps * y1[None, :, None] + 0.0 * y2[None, None, :]
    Y = eps * y2[None, None, :] + 0.0 * X
    vals = _eval_zero_extended(u, np.stack([X.ravel(), Y.ravel()], axis=1))
    return x, y1, y2, vals.reshape(nx, n1, n2)


def locally_periodic_identity(u: NodalField, prob: EpsilonProblem) -> dict:
    """(1/L) int T^{lp} u = (1/eps) int_{R^eps} u at matched quadrature.

    For each cell k the reference region under the boundary is meshed like
    the eps-problem mesh restricted to that cell, so its mapped quadrature
    points coincide with the physical ones; the zero extension contributes
    nothing.  Exact only when 1/(eps L) is an integer (no leftover cell).
    """
    L = prob.profile.L
    eps = prob.eps
    periods = 1.0 / (eps * L)
    ncell = int(math.floor(periods + 1e-9))
    n1 = prob.points_per_period
    lhs = 0.0
    for k in range(ncell):
        def height(y1, k=k):
            xs = eps * k * L + eps * np.asarray(y1)
            return prob.profile(xs, k * L + np.asarray(y1))
        ref = build_graph_mesh(height, (0.0, L), n1, prob.layers)
        pts, w = _cell_quadrature(ref)
        phys = np.stack([eps * k * L + eps * pts[:, 0], eps * pts[:, 1]], axis=1)
        lhs += eps * L * float(w @ _eval_zero_extended(u, phys))
    lhs /= L
    left = 1.0 - ncell * eps * L
    rhs = _physical_integral(u) / eps
    return {"lhs": lhs, "rhs": rhs, "defect": abs(lhs - rhs) / max(1.0, abs(rhs)),
            "leftover": left}


# ----------------------------------------------------------------- stretch
def stretch_mesh(mesh: Mesh, factor: float) -> Mesh:
    """The vertical stretch {(x, factor*y)} of ``mesh`` (same topology)."""
    nodes = np.array(mesh.nodes)
    nodes[:, 1] *= factor
    return Mesh(nodes, np.array(mesh.triangles), dict(mesh.boundary),
                None if mesh.periodic is None else np.array(mesh.periodic),
                columns=mesh.columns,
                bottom=None if mesh.bottom is None else np.asarray(mesh.bottom) * factor,
                top=None if mesh.top is None else np.asarray(mesh.top) * factor)


def apply_P(u: NodalField, eta: float, target: Mesh) -> NodalField:
    """(P_{1+eta} u)(x, y) = u(x, y / (1 + eta)) at the nodes of ``target``."""
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    src = u.mesh
    if src.columns is not None and target.columns is not None:
        if len(src.columns) != len(target.columns) or np.max(np.abs(src.columns - target.columns)) > 1e-12:
            raise MeshError("x-grids of source and target meshes differ")
    pts = np.array(target.nodes)
    pts[:, 1] /= 1.0 + eta
    vals = evaluate(u, pts)
    out = np.zeros(target.ndof)
    out[target.dof] = vals
    return NodalField(target, out, p=u.p, role=u.role)


def eta_norm(w: NodalField, p: float, eta: float) -> float:
    """||w||^p in the weighted norm (1/(1+eta)) [ ||w||^p + ||K grad w||^p ],
    K = diag(1, 1+eta).  Returns the p-th power."""
    mesh = w.mesh
    uq = w.values[mesh.tri_dofs] @ _QMID.T
    kg = _p1_gradient(mesh, w.values) * np.array([1.0, 1.0 + eta])
    val = np.sum((mesh.areas / 3.0)[:, None] * np.abs(uq) ** p) + \
        np.sum(mesh.areas * np.sum(kg * kg, axis=1) ** (p / 2))
    return float(val / (1.0 + eta))


# --------------------------------------------------------- domain dependence
def sup_distance(G, Ghat, eps: float, samples: int = 4096) -> float:
    """Sampled sup_x |G_eps(x) - Ghat_eps(x)| with G_eps(x) = G(x, x/eps)."""
    x = np.linspace(0.0, 1.0, samples + 1)
    return float(np.max(np.abs(G(x, x / eps) - Ghat(x, x / eps))))


def _layered(lower, upper, nx, ny, ns):
    return build_layered_mesh([0.0, lower, upper], [ny, ns], (0.0, 1.0), nx)


def domain_dependence(G, Ghat, eps: float, f, p: float, config: SolveConfig = None,
                      points_per_period: int = 16, layers: int = 8, strip_layers: int = 2,
                      delta: float = None, f_tol: float = 1e-9) -> dict:
    """Discrepancy D between the solutions on R^eps (profile G) and on the
    perturbed domain (profile Ghat).

    Both problems are meshed as a common lower band below eps*min(G, Ghat)
    plus a strip up to their own boundary, so the intersection and the two
    set differences are unions of whole elements and transfers are exact.
    """
    if not p > 1:
        raise ValueError("p must exceed 1")
    dist = sup_distance(G, Ghat, eps)
    if delta is not None and dist > delta * (1 + 1e-12):
        raise ValueError(f"profiles differ by {dist:.6g} > delta={delta:.6g}")
    prob = EpsilonProblem(G, eps, f, p, points_per_period, layers)
    probh = EpsilonProblem(Ghat, eps, f, p, points_per_period, layers)
    nx = max(prob.nx, probh.nx)

    def low(x):
        return np.minimum(prob.height(x), probh.height(x))

    mesh = _layered(low, prob.height, nx, layers, strip_layers)
    meshh = _layered(low, probh.height, nx, layers, strip_layers)
    q = conjugate_exponent(p)
    out = {"eps": eps, "p": p, "sup_distance": dist, "nx": nx}
    sols = []
    for name, pr, m in (("u", prob, mesh), ("uhat", probh, meshh)):
        u, rep = solve_epsilon_problem(pr, config, mesh=m)
        fn = rep.extra["f_triple"]
        if fn > 1.0 + f_tol:
            raise ValueError(f"|||f|||_{{L^p'}} = {fn:.6g} exceeds 1 on the {name} domain")
        sols.append(u)
        out[name + "_report"] = rep
        out[name + "_f_triple"] = fn
    u, uh = sols
    inter = build_graph_mesh(low, (0.0, 1.0), nx, layers)
    d = NodalField(inter, _transfer(u, inter) - _transfer(uh, inter), p=p)
    t_inter = norms(d, p, eps)["W1p_triple"] ** p
    strip = build_strip_mesh(low, prob.height, (0.0, 1.0), nx, strip_layers)
    striph = build_strip_mesh(low, probh.height, (0.0, 1.0), nx, strip_layers)
    t_strip = _strip_term(u, strip, p, eps)
    t_striph = _strip_term(uh, striph, p, eps)
    out.update({
        "intersection": t_inter,
        "strip": t_strip,
        "strip_hat": t_striph,
        "D": t_inter + t_strip + t_striph,
        "q_exponent": q,
    })
    return out


def _transfer(u: NodalField, target: Mesh) -> np.ndarray:
    return interpolate(u, target).values


def _strip_term(u, strip, p, eps):
    if strip.n_triangles == 0:
        return 0.0
    fld = NodalField(strip, _transfer(u, strip), p=p)
    return norms(fld, p, eps)["W1p_triple"] ** p
