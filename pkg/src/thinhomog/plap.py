"""P1 p-Laplacian energies, their derivatives, and a damped Newton minimiser.

The energy on a mesh is

    E(u) = 1/p int |e + grad u|^p  +  1/p int |u|^p  -  int f u

with each term switchable.  The gradient term is integrated exactly (the
gradient is constant per triangle); the mass and load terms use the
three-point edge-midpoint rule, which is exact for quadratics.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, NodalField

__all__ = [
    "a_p",
    "monotonicity_gap",
    "EnergySpec",
    "SolveConfig",
    "SolveReport",
    "SolverError",
    "assemble_energy",
    "assemble_gradient",
    "assemble_hessian",
    "minimize",
    "newton_minimize",
    "conjugate_gradient",
    "norms",
    "load_norm",
    "conjugate_exponent",
]

CONSTRAINTS = ("none", "zero-mean", "periodic+zero-mean")

# edge-midpoint quadrature: row q holds the basis values at midpoint q
_QMID = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


def conjugate_exponent(p: float) -> float:
    return p / (p - 1.0)


def a_p(v, p: float):
    """|v|^{p-2} v with a_p(0) = 0.  The last axis holds vector components;
    0-d input is treated as a scalar."""
    v = np.asarray(v, dtype=float)
    n = np.abs(v) if v.ndim == 0 else np.linalg.norm(v, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(n > 0, n ** (p - 2.0), 0.0)
    out = w * v
    return float(out) if out.ndim == 0 else out


def monotonicity_gap(x, y, p: float):
    """<a_p(x) - a_p(y), x - y> along the last axis."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = (np.asarray(a_p(x, p)) - np.asarray(a_p(y, p))) * (x - y)
    return d if d.ndim == 0 else d.sum(axis=-1)


class SolverError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class SolveConfig:
    grad_tol: float = 1e-10
    max_iter: int = 200
    gammas: tuple = tuple(10.0 ** -k for k in range(1, 9))
    armijo_slope: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-12
    cg_tol: float = 1e-12
    cg_maxiter: int = None          # default 10 * dofs
    linear_solver: str = "cg"       # "cg" (Jacobi-preconditioned) or "direct"

    def __post_init__(self):
        self.gammas = tuple(float(g) for g in self.gammas)
        if not self.gammas:
            raise ValueError("regularisation schedule must not be empty")
        if any(g <= 0 for g in self.gammas) or any(b >= a for a, b in zip(self.gammas, self.gammas[1:])):
            raise ValueError("regularisation schedule must be positive and strictly decreasing")
        for name in ("grad_tol", "armijo_slope", "min_step", "cg_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if self.linear_solver not in ("cg", "direct"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


@dataclass
class SolveReport:
    converged: bool = False
    iterations: list = field(default_factory=list)     # Newton steps per gamma stage
    final_grad_norm: float = float("nan")              # relative to the initial gradient
    final_energy: float = float("nan")
    energies: list = field(default_factory=list)       # after every accepted step (entry 0: start)
    steps: list = field(default_factory=list)          # accepted line-search step lengths
    cg_iterations: list = field(default_factory=list)
    cg_failures: int = 0
    wall_time: float = 0.0
    message: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def total_iterations(self) -> int:
        return int(sum(self.iterations))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class EnergySpec:
    """Discrete energy on ``mesh``; see the module docstring."""

    mesh: Mesh
    p: float
    gradient_term: bool = True
    mass_term: bool = False
    load: object = None              # NodalField, callable f(x, y) or None
    offset: tuple = (0.0, 0.0)
    constraint: str = "none"

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if self.constraint not in CONSTRAINTS:
            raise ValueError(f"unknown constraint mode {self.constraint!r}")
        if self.constraint == "periodic+zero-mean" and self.mesh.periodic is None:
            raise ValueError("periodic constraint on a non-periodic mesh")
        if not self.mass_term and self.constraint == "none":
            raise ValueError("without a mass term the constraint must remove constants")
        self.offset = np.asarray(self.offset, dtype=float).reshape(2)
        m = self.mesh
        self._A = m.areas
        self._B = m.grads
        self._td = m.tri_dofs
        if isinstance(self.load, NodalField):
            if self.load.mesh is not m:
                raise ValueError("load field lives on a different mesh")
            self._fq = self.load.values[self._td] @ _QMID.T
        elif callable(self.load):
            q = self.quad_points()
            self._fq = np.broadcast_to(
                np.asarray(self.load(q[..., 0], q[..., 1]), dtype=float), q.shape[:2]).copy()
        elif self.load is None:
            self._fq = None
        else:
            raise TypeError("load must be a NodalField, a callable or None")
        if self._fq is not None:
            local = (self._A / 3.0)[:, None] * (self._fq @ _QMID)
            self._b = np.bincount(self._td.ravel(), weights=local.ravel(), minlength=m.ndof)
        else:
            self._b = np.zeros(m.ndof)
        self._pattern = None

    # helpers -------------------------------------------------------------
    @property
    def ndof(self) -> int:
        return self.mesh.ndof

    @property
    def removes_constants(self) -> bool:
        return self.constraint != "none"

    @property
    def load_vector(self) -> np.ndarray:
        return self._b

    def quad_points(self) -> np.ndarray:
        """Edge midpoints, shape (T, 3, 2)."""
        P = self.mesh.nodes[self.mesh.triangles]
        return np.einsum("qk,tkd->tqd", _QMID, P)

    def _vals(self, u):
        if isinstance(u, NodalField):
            if u.mesh is not self.mesh:
                raise ValueError("field lives on a different mesh")
            u = u.values
        u = np.asarray(u, dtype=float)
        if u.shape != (self.ndof,):
            raise ValueError("field size does not match the mesh")
        return u

    def grad_field(self, u) -> np.ndarray:
        """Per-triangle e + grad u, shape (T, 2)."""
        return _p1_gradient(self.mesh, self._vals(u)) + self.offset

    def quad_values(self, u) -> np.ndarray:
        return self._vals(u)[self._td] @ _QMID.T

    def mean(self, u) -> float:
        w = self.mesh.dof_weights
        return float(w @ self._vals(u) / w.sum())

    def _scatter(self, local):
        return np.bincount(self._td.ravel(), weights=local.ravel(), minlength=self.ndof)

    # energy and derivatives ---------------------------------------------
    def energy(self, u) -> float:
        u = self._vals(u)
        p = self.p
        E = 0.0
        if self.gradient_term:
            g = self.grad_field(u)
            E += np.sum(self._A * np.sum(g * g, axis=1) ** (p / 2)) / p
        if self.mass_term:
            uq = self.quad_values(u)
            E += np.sum((self._A / 3.0)[:, None] * np.abs(uq) ** p) / p
        return float(E - self._b @ u)

    def energy_scale(self, u) -> float:
        u = self._vals(u)
        p = self.p
        s = abs(float(self._b @ u))
        if self.gradient_term:
            g = self.grad_field(u)
            s += np.sum(self._A * np.sum(g * g, axis=1) ** (p / 2)) / p
        if self.mass_term:
            s += np.sum((self._A / 3.0)[:, None] * np.abs(self.quad_values(u)) ** p) / p
        return float(s)

    def _local_grad(self, u, absolute=False):
        p = self.p
        loc = np.zeros((len(self._A), 3))
        if self.gradient_term and absolute:
            # bound on |grad u| without cancellation: sum_k |u_k| |grad phi_k|
            bn = np.linalg.norm(self._B, axis=2)
            uabs = np.abs(self._vals(u)[self._td])
            gabs = np.einsum("tk,tk->t", uabs, bn) + np.linalg.norm(self.offset)
            loc += self._A[:, None] * gabs[:, None] ** (p - 1) * bn
        elif self.gradient_term:
            flux = a_p(self.grad_field(u), p)
            loc += self._A[:, None] * np.einsum("tkd,td->tk", self._B, flux)
        if self.mass_term:
            aq = a_p(self.quad_values(u)[..., None], p)[..., 0]
            t = aq @ _QMID if not absolute else np.abs(aq) @ _QMID
            loc += (self._A / 3.0)[:, None] * t
        return loc

    def gradient(self, u) -> np.ndarray:
        u = self._vals(u)
        return self._scatter(self._local_grad(u)) - self._b

    def gradient_scale(self, u) -> float:
        """Norm of the assembled absolute contributions (roundoff yardstick)."""
        u = self._vals(u)
        return float(np.linalg.norm(self._scatter(self._local_grad(u, absolute=True)) + np.abs(self._b)))

    def _csr_pattern(self):
        if self._pattern is None:
            n = self.ndof
            rows = np.repeat(self._td, 3, axis=1).ravel()
            cols = np.tile(self._td, (1, 3)).ravel()
            keys = rows * n + cols
            uniq, inv = np.unique(keys, return_inverse=True)
            indptr = np.searchsorted(uniq // n, np.arange(n + 1))
            self._pattern = (uniq % n, indptr, inv.ravel(), len(uniq))
        return self._pattern

    def hessian(self, u, gamma: float = 0.0, majorize=False) -> sp.csr_matrix:
        """Regularised Hessian with weight (gamma^2 + |g|^2)^((p-2)/2).

        ``majorize`` drops the rank-one (p-2) terms (weighted-Laplacian
        linearisation); for p < 2 its quadratic model bounds the energy from
        above, which the minimiser uses as a fallback step.  A pair of masks
        (per triangle, per quadrature point) majorises selectively.
        """
        u = self._vals(u)
        p = self.p
        keep_g, keep_m = _newton_weights(majorize)
        loc = np.zeros((len(self._A), 3, 3))
        if self.gradient_term:
            g = self.grad_field(u)
            if p == 2.0:
                C = np.broadcast_to(np.eye(2), (len(g), 2, 2))
            else:
                s = np.maximum(gamma * gamma + np.sum(g * g, axis=1), 1e-300)
                w = s ** ((p - 2.0) / 2.0)
                C = w[:, None, None] * np.eye(2)[None]
                C = C + (p - 2.0) * (keep_g * w / s)[:, None, None] * np.einsum("ti,tj->tij", g, g)
            loc += self._A[:, None, None] * np.einsum("tkd,tde,tle->tkl", self._B, C, self._B)
        if self.mass_term:
            uq = self.quad_values(u)
            if p == 2.0:
                c = np.ones_like(uq)
            else:
                s = np.maximum(gamma * gamma + uq * uq, 1e-300)
                c = s ** ((p - 2.0) / 2.0)
                c = c * (1.0 + (p - 2.0) * keep_m * uq * uq / s)
            loc += (self._A / 3.0)[:, None, None] * np.einsum("tq,qk,ql->tkl", c, _QMID, _QMID)
        indices, indptr, slot, nnz = self._csr_pattern()
        data = np.bincount(slot, weights=loc.ravel(), minlength=nnz)
        return sp.csr_matrix((data, indices, indptr), shape=(self.ndof, self.ndof))

    def crossing_masks(self, u, d):
        """Triangles whose gradient, and quadrature points whose value, the
        step ``d`` carries through zero."""
        u = self._vals(u)
        un = u + self._vals(d)
        gm = np.zeros(len(self._A), dtype=bool)
        qm = np.zeros((len(self._A), 3), dtype=bool)
        if self.gradient_term:
            gm = np.sum(self.grad_field(u) * self.grad_field(un), axis=1) < 0
        if self.mass_term:
            qm = self.quad_values(u) * self.quad_values(un) < 0
        return gm, qm

    def project(self, u):
        """Gauge fix: subtract the quadrature mean when constants are removed."""
        if self.removes_constants:
            return u - self.mean(u)
        return u

    def wrap(self, u, role="solution") -> NodalField:
        return NodalField(self.mesh, u, p=self.p, role=role)


def assemble_energy(spec: EnergySpec, u) -> float:
    return spec.energy(u)


def assemble_gradient(spec: EnergySpec, u) -> np.ndarray:
    return spec.gradient(u)


def assemble_hessian(spec: EnergySpec, u, gamma: float = 0.0):
    return spec.hessian(u, gamma)


def _deflate(v):
    return v - v.mean()


def conjugate_gradient(A, b, tol=1e-12, maxiter=None, deflate=False):
    """Jacobi-preconditioned CG; with ``deflate`` the iteration runs on the
    complement of the constant vector.  Returns ``(x, iterations, converged)``."""
    n = len(b)
    maxiter = 10 * n if maxiter is None else maxiter
    proj = _deflate if deflate else (lambda v: v)
    d = A.diagonal()
    dinv = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), 1.0)
    x = np.zeros(n)
    r = proj(np.asarray(b, dtype=float).copy())
    bnorm = np.linalg.norm(r)
    if bnorm == 0.0:
        return x, 0, True
    z = proj(dinv * r)
    pdir = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = A @ pdir
        pAp = pdir @ Ap
        if pAp <= 0:
            return proj(x), it, False
        alpha = rz / pAp
        x += alpha * pdir
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * bnorm:
            return proj(x), it, True
        z = proj(dinv * r)
        rz_new = r @ z
        pdir = z + (rz_new / rz) * pdir
        rz = rz_new
    return proj(x), maxiter, False


def _direct_solve(A, b, deflate):
    import scipy.sparse.linalg as spla
    if not deflate:
        return spla.spsolve(A.tocsc(), b), 1, True
    # pin the first dof, then restore the zero-sum gauge
    n = len(b)
    keep = np.arange(1, n)
    x = np.zeros(n)
    x[1:] = spla.spsolve(A[keep][:, keep].tocsc(), b[1:])
    return _deflate(x), 1, True


def newton_minimize(problem, u0, config: SolveConfig = None):
    """Damped Newton with gamma-continuation on any object exposing
    ``energy``, ``gradient``, ``hessian``, ``project``, ``energy_scale``,
    ``gradient_scale`` and ``removes_constants``.  Returns ``(u, report)``."""
    cfg = config or SolveConfig()
    t0 = time.perf_counter()
    rep = SolveReport()
    u = problem.project(np.array(u0, dtype=float))
    g = problem.gradient(u)
    gnorm = float(np.linalg.norm(g))
    g0 = gnorm
    floor = 10 * np.finfo(float).eps * problem.gradient_scale(u)
    E = problem.energy(u)
    rep.energies.append(E)
    defl = problem.removes_constants
    singular = getattr(problem, "p", 2.0) < 2.0

    def rel(gn):
        return gn / g0 if g0 > 0 else 0.0

    total = 0
    stalled = False
    for k, gamma in enumerate(cfg.gammas):
        last = k == len(cfg.gammas) - 1
        target = cfg.grad_tol if last else max(cfg.grad_tol, gamma)
        its = 0
        while gnorm > max(target * g0, floor):
            floor = 10 * np.finfo(float).eps * problem.gradient_scale(u)
            if gnorm <= floor:
                break
            if last and singular and stalled and gnorm <= _rounding_floor(problem, u, g):
                rep.extra["rounding_limited"] = True
                break
            if total >= cfg.max_iter:
                rep.iterations.append(its)
                rep.message = f"no convergence in {cfg.max_iter} Newton iterations"
                _finish(rep, u, gnorm, g0, E, t0, converged=False)
                raise SolverError(rep.message, rep)
            d, slope, ok = _direction(problem, u, g, gamma, cfg, defl, rep)
            if singular and hasattr(problem, "crossing_masks"):
                # where the Newton step crosses the singular point of |t|^{p-2} t
                # it overshoots by about 1/(p-1); majorise those terms only
                masks = problem.crossing_masks(u, d)
                if any(m.any() for m in masks):
                    d, slope, ok = _direction(problem, u, g, gamma, cfg, defl, rep, majorize=masks)
            if singular and problem.energy(problem.project(u + d)) > E + cfg.armijo_slope * slope:
                # p < 2: the Newton model overshoots where the gradient is
                # small; fall back to the majorising linearisation
                d, slope, ok = _direction(problem, u, g, gamma, cfg, defl, rep, majorize=True)
            scale = problem.energy_scale(u)
            alpha = 1.0
            while True:
                un = problem.project(u + alpha * d)
                En = problem.energy(un)
                if En <= E + cfg.armijo_slope * alpha * slope:
                    gn = problem.gradient(un)
                    break
                if En <= E + 1e-13 * scale:
                    # energy change below roundoff: accept if the residual drops
                    gn = problem.gradient(un)
                    if np.linalg.norm(gn) < gnorm:
                        break
                alpha *= cfg.backtrack
                if alpha < cfg.min_step:
                    rep.iterations.append(its)
                    rep.message = (f"line search failed (gamma={gamma:g}, relative gradient "
                                   f"{rel(gnorm):.3e}, cg converged={ok})")
                    _finish(rep, u, gnorm, g0, E, t0, converged=False)
                    raise SolverError(rep.message, rep)
            # the energy is a sum over the mesh: its own rounding grows like sqrt(ndof)
            stalled = abs(En - E) <= 4 * np.finfo(float).eps * scale * np.sqrt(len(u))
            u, E, g = un, En, gn
            gnorm = float(np.linalg.norm(g))
            rep.energies.append(E)
            rep.steps.append(alpha)
            its += 1
            total += 1
            if alpha < 1.0 and singular and not last:
                # for p < 2 a large gamma underestimates the curvature where the
                # gradient is small; damped steps mean it is time to reduce gamma
                break
        rep.iterations.append(its)
    rep.message = "converged"
    _finish(rep, u, gnorm, g0, E, t0, converged=True)
    return u, rep


def _rounding_floor(problem, u, g):
    """Residual change under a perturbation of u at the rounding level.

    For p < 2 the map t -> |t|^{p-2} t amplifies last-bit noise near zero, so
    this can exceed the relative tolerance; it is the attainable accuracy.
    """
    eta = 8 * np.finfo(float).eps * max(float(np.abs(u).max()), np.finfo(float).tiny)
    xi = np.where(np.arange(len(u)) % 2 == 0, eta, -eta)
    return 4.0 * float(np.linalg.norm(problem.gradient(u + xi) - g))


def _newton_weights(majorize):
    """Factors (0 or 1) on the rank-one Newton terms, per element and per
    quadrature point; ``majorize`` is a flag or a pair of masks."""
    if isinstance(majorize, tuple):
        gm, qm = majorize
        return 1.0 - np.asarray(gm, dtype=float), 1.0 - np.asarray(qm, dtype=float)
    k = 0.0 if majorize else 1.0
    return k, k


def _direction(problem, u, g, gamma, cfg, defl, rep, majorize=False):
    H = problem.hessian(u, gamma, majorize=majorize)
    if cfg.linear_solver == "direct":
        d, cit, ok = _direct_solve(H, -g, defl)
    else:
        d, cit, ok = conjugate_gradient(H, -g, tol=cfg.cg_tol, maxiter=cfg.cg_maxiter, deflate=defl)
    rep.cg_iterations.append(int(cit))
    if not ok:
        rep.cg_failures += 1
    slope = float(g @ d)
    if not slope < 0:
        d = -g
        slope = -float(g @ g)
    return d, slope, ok


def _finish(rep, u, gnorm, g0, E, t0, converged):
    rep.converged = converged
    rep.final_grad_norm = gnorm / g0 if g0 > 0 else 0.0
    rep.final_energy = float(E)
    rep.wall_time = time.perf_counter() - t0
    rep.extra["abs_grad_norm"] = gnorm


def minimize(spec: EnergySpec, config: SolveConfig = None, initial=None):
    """Minimise ``spec``'s energy; returns ``(NodalField, SolveReport)``."""
    if initial is None:
        u0 = np.zeros(spec.ndof)
        if not spec.removes_constants:
            # best constant: a_p(c) |Omega| = int f
            u0[:] = a_p(spec.load_vector.sum() / spec.mesh.area, conjugate_exponent(spec.p))
    elif isinstance(initial, NodalField):
        u0 = spec._vals(initial)
    else:
        u0 = np.asarray(initial, dtype=float)
    u, rep = newton_minimize(spec, u0, config)
    return spec.wrap(u), rep


def _p1_gradient(mesh, u):
    # differences against vertex 0, so constants have an exactly zero gradient
    loc = u[mesh.tri_dofs]
    return np.einsum("tkd,tk->td", mesh.grads[:, 1:], loc[:, 1:] - loc[:, :1])


def _lp(mesh, vals_q, p):
    return float(np.sum((mesh.areas / 3.0)[:, None] * np.abs(vals_q) ** p)) ** (1.0 / p)


def norms(fld: NodalField, p: float, eps: float = None) -> dict:
    """L^p, gradient L^p and W^{1,p} norms of a P1 field, plus the
    eps-rescaled (triple) versions when ``eps`` is given."""
    mesh = fld.mesh
    if mesh.n_triangles == 0:
        out = {"Lp": 0.0, "grad_Lp": 0.0, "W1p": 0.0}
    else:
        uq = fld.values[mesh.tri_dofs] @ _QMID.T
        g = _p1_gradient(mesh, fld.values)
        lp_p = float(np.sum((mesh.areas / 3.0)[:, None] * np.abs(uq) ** p))
        gp_p = float(np.sum(mesh.areas * np.sum(g * g, axis=1) ** (p / 2)))
        out = {"Lp": lp_p ** (1 / p), "grad_Lp": gp_p ** (1 / p), "W1p": (lp_p + gp_p) ** (1 / p)}
    if eps is not None:
        if not eps > 0:
            raise ValueError("eps must be positive for rescaled norms")
        s = eps ** (-1.0 / p)
        out.update({k + "_triple": v * s for k, v in list(out.items())})
    return out


def load_norm(spec: EnergySpec, q: float, eps: float = None) -> float:
    """L^q norm of the load at the quadrature points used to assemble it."""
    if spec._fq is None:
        return 0.0
    v = _lp(spec.mesh, spec._fq, q)
    return v * eps ** (-1.0 / q) if eps is not None else v
