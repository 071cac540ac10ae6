"""Periodic cell problem and the effective coefficients q(x), r(x).

The cell at slow position x is Y*(x) = {0 < y1 < L, 0 < y2 < G(x, y1)}.  The
unknown is the periodic, zero-mean corrector psi; the cell solution is
v = y1 + psi, carried as the affine offset e1 in the energy
(1/p) int |e1 + grad psi|^p.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, NodalField, build_graph_mesh
from .plap import EnergySpec, SolveConfig, SolveReport, SolverError, a_p, minimize
from .profiles import PiecewiseProfile

__all__ = [
    "CellSolution",
    "EffectiveCoefficients",
    "CellCache",
    "DEFAULT_CACHE",
    "cell_mesh",
    "solve_cell",
    "effective_q",
    "effective_q_energy",
    "effective_r",
    "sample_coefficients",
    "piecewise_coefficients",
]

DEFAULT_RESOLUTION = (64, 64)


@dataclass(eq=False)
class CellSolution:
    mesh: Mesh
    psi: NodalField
    v: np.ndarray              # y1 + psi at the mesh nodes
    p: float
    L: float
    x: float
    q_flux: float
    q_energy: float
    r: float
    report: SolveReport

    @property
    def q(self) -> float:
        return self.q_flux


def cell_mesh(profile, x: float, resolution=DEFAULT_RESOLUTION, side=None) -> Mesh:
    n1, n2 = resolution
    return build_graph_mesh(lambda y1: profile(x, y1, side=side),
                            (0.0, profile.L), int(n1), int(n2), periodic=True)


def _cell_gradients(mesh, psi_vals):
    spec = EnergySpec(mesh, 2.0, offset=(1.0, 0.0), constraint="periodic+zero-mean")
    return spec.grad_field(psi_vals)


def effective_q(sol: CellSolution) -> float:
    """Flux form (1/L) int a_p(grad v) . e1."""
    g = _cell_gradients(sol.mesh, sol.psi.values)
    return float(np.sum(sol.mesh.areas * a_p(g, sol.p)[:, 0]) / sol.L)


def effective_q_energy(sol: CellSolution) -> float:
    """Energy form (1/L) int |grad v|^p."""
    g = _cell_gradients(sol.mesh, sol.psi.values)
    return float(np.sum(sol.mesh.areas * np.sum(g * g, axis=1) ** (sol.p / 2)) / sol.L)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


def effective_r(profile, x: float, L: float = None, panels: int = 64, side=None) -> float:
    """Mean of G(x, .) over one period (composite 4-point Gauss-Legendre)."""
    L = profile.L if L is None else float(L)
    edges = np.linspace(0.0, L, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    y = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    vals = profile(np.full_like(y, float(x)), y, side=side)
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return float(w @ vals / L)


def solve_cell(profile, x: float, p: float, resolution=DEFAULT_RESOLUTION,
               config: SolveConfig = None, side=None) -> CellSolution:
    """Solve the cell problem of ``profile`` at slow position ``x``."""
    mesh = cell_mesh(profile, x, resolution, side=side)
    spec = EnergySpec(mesh, p, offset=(1.0, 0.0), constraint="periodic+zero-mean")
    try:
        psi, rep = minimize(spec, config)
    except SolverError as exc:
        raise SolverError(f"cell solve failed at x={x!r}: {exc}", exc.report) from exc
    psi = NodalField(mesh, psi.values - spec.mean(psi.values), p=p, role="corrector")
    v = mesh.nodes[:, 0] + psi.node_values
    sol = CellSolution(mesh, psi, v, p, float(profile.L), float(x), 0.0, 0.0,
                       effective_r(profile, x, side=side), rep)
    sol.q_flux = effective_q(sol)
    sol.q_energy = effective_q_energy(sol)
    return sol


class CellCache:
    """Memo of cell solves keyed by (profile hash, x, p, resolution)."""

    def __init__(self):
        self._store = {}
        self.solves = 0

    def get(self, key, compute):
        if key not in self._store:
            self._store[key] = compute()
            self.solves += 1
        return self._store[key]

    def clear(self):
        self._store.clear()
        self.solves = 0

    def __len__(self):
        return len(self._store)


DEFAULT_CACHE = CellCache()


@dataclass
class EffectiveCoefficients:
    """Samples of q and r; optionally exact piecewise-constant data on intervals."""

    x: np.ndarray
    q: np.ndarray
    r: np.ndarray
    provenance: dict = field(default_factory=dict)
    breakpoints: np.ndarray = None      # interval edges when q, r are piecewise constant
    interval_q: np.ndarray = None
    interval_r: np.ndarray = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        if not (self.x.shape == self.q.shape == self.r.shape) or self.x.ndim != 1 or len(self.x) == 0:
            raise ValueError("x, q and r must be equal-length nonempty 1D arrays")
        if np.any(np.diff(self.x) <= 0):
            raise ValueError("sample abscissae must be strictly increasing")

    @classmethod
    def constant(cls, q: float, r: float, **prov):
        return cls(np.array([0.5]), np.array([float(q)]), np.array([float(r)]), dict(prov))

    @property
    def piecewise(self) -> bool:
        return self.breakpoints is not None

    def evaluate(self, xs):
        """(q, r) at ``xs``: piecewise-linear in the samples with constant
        extension, or exact per interval for piecewise data."""
        xs = np.asarray(xs, dtype=float)
        if self.piecewise:
            i = np.clip(np.searchsorted(self.breakpoints, xs, side="right") - 1, 0, len(self.interval_q) - 1)
            return self.interval_q[i], self.interval_r[i]
        return np.interp(xs, self.x, self.q), np.interp(xs, self.x, self.r)

    def to_csv(self, path) -> None:
        lines = ["x,q,r"] + [f"{a:.17g},{b:.17g},{c:.17g}" for a, b, c in zip(self.x, self.q, self.r)]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], data[:, 2])


def _check_grid(profile, xs):
    xs = np.asarray(xs, dtype=float).ravel()
    if np.any((xs <= 0) | (xs >= 1)):
        raise ValueError("x samples must lie in (0, 1)")
    inner = np.asarray(profile.breakpoints[1:-1], dtype=float)
    if len(inner) and np.any(np.abs(xs[:, None] - inner[None, :]) <= 1e-12):
        raise ValueError("x samples must avoid the profile breakpoints")
    return xs


def piecewise_coefficients(pw: PiecewiseProfile, p: float, resolution=DEFAULT_RESOLUTION,
                           config: SolveConfig = None, cache: CellCache = None):
    """(q_i, r_i) per interval of a piecewise-periodic profile: one solve each."""
    cache = DEFAULT_CACHE if cache is None else cache
    res = tuple(int(n) for n in resolution)
    qs, rs = [], []
    for i in range(pw.n_intervals):
        prof = pw.interval_profile(i)
        sol = cache.get((prof.hash, 0.5, float(p), res),
                        lambda: solve_cell(prof, 0.5, p, res, config))
        qs.append(sol.q_flux)
        rs.append(sol.r)
    return np.array(qs), np.array(rs)


def sample_coefficients(profile, x_grid, p: float, resolution=DEFAULT_RESOLUTION,
                        config: SolveConfig = None, cache: CellCache = None) -> EffectiveCoefficients:
    """q and r on ``x_grid``; piecewise-periodic profiles cost one solve per interval."""
    cache = DEFAULT_CACHE if cache is None else cache
    res = tuple(int(n) for n in resolution)
    xs = _check_grid(profile, x_grid)
    prov = {"profile_hash": profile.hash, "p": float(p), "resolution": list(res)}
    if isinstance(profile, PiecewiseProfile):
        iq, ir = piecewise_coefficients(profile, p, res, config, cache)
        idx = profile.interval_index(xs)
        return EffectiveCoefficients(xs, iq[idx], ir[idx], prov,
                                     np.asarray(profile.breakpoints, dtype=float), iq, ir)
    q = np.empty(len(xs))
    r = np.empty(len(xs))
    for k, x in enumerate(xs):
        key = (profile.hash, round(float(x), 12), float(p), res)
        sol = cache.get(key, lambda: solve_cell(profile, x, p, res, config))
        q[k] = sol.q_flux
        r[k] = sol.r
    return EffectiveCoefficients(xs, q, r, prov)
