"""The homogenised one-dimensional Neumann problem

    -(q |u'|^{p-2} u')' + r |u|^{p-2} u = fhat  on (0, 1),   u'(0) = u'(1) = 0,

solved as the minimiser of (1/p) int q|u'|^p + (1/p) int r|u|^p - int fhat u
with P1 elements on a uniform grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cell import EffectiveCoefficients, effective_r
from .plap import SolveConfig, _newton_weights, a_p, conjugate_exponent, newton_minimize

__all__ = ["Field1D", "Homogenized1D", "solve_homogenized", "fhat_from", "w1p_norm"]

# two-point Gauss rule on the reference element [0, 1]
_GP = 0.5 + np.array([-0.5, 0.5]) / np.sqrt(3.0)


@dataclass(eq=False)
class Field1D:
    """Samples of a function of x on [0, 1].

    Without ``weights`` the samples are nodal values of a P1 function and
    integrals use that interpretation; with ``weights`` they are values at
    quadrature points and integrals are the weighted sums.
    """

    x: np.ndarray
    values: np.ndarray
    p: float = None
    weights: np.ndarray = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).ravel()
        self.values = np.asarray(self.values, dtype=float).ravel()
        if len(self.x) < 2 or self.x.shape != self.values.shape:
            raise ValueError("a 1D field needs at least two samples and one value per sample")
        if np.any(np.diff(self.x) <= 0):
            raise ValueError("sample points must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float).ravel()
            if self.weights.shape != self.x.shape:
                raise ValueError("one quadrature weight per sample")

    @classmethod
    def uniform(cls, n: int, fn, p=None):
        x = np.linspace(0.0, 1.0, n + 1)
        return cls(x, np.broadcast_to(np.asarray(fn(x), dtype=float), x.shape), p)

    def __call__(self, xs):
        """Piecewise-linear evaluation (constant beyond the end samples)."""
        return np.interp(xs, self.x, self.values)

    def integrate(self, phi=None) -> float:
        """int self * phi over (0, 1)."""
        if self.weights is not None:
            ph = 1.0 if phi is None else phi(self.x)
            return float(np.sum(self.weights * self.values * ph))
        h = np.diff(self.x)
        xq = self.x[:-1, None] + h[:, None] * _GP[None, :]
        vq = self(xq)
        ph = 1.0 if phi is None else phi(xq)
        return float(np.sum(0.5 * h[:, None] * vq * ph))

    def to_csv(self, path, name: str = "u") -> None:
        lines = [f"x,{name}"] + [f"{a:.17g},{b:.17g}" for a, b in zip(self.x, self.values)]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path, p=None):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], p)


def w1p_norm(field: Field1D, p: float) -> float:
    """W^{1,p}(0,1) norm of the P1 interpolant of ``field``'s nodal values."""
    x, u = field.x, field.values
    h = np.diff(x)
    du = np.diff(u) / h
    uq = u[:-1, None] + np.diff(u)[:, None] * _GP[None, :]
    val = np.sum(h * np.abs(du) ** p) + np.sum(0.5 * h[:, None] * np.abs(uq) ** p)
    return float(val ** (1.0 / p))


class Homogenized1D:
    """Discrete 1D energy; exposes the interface used by ``newton_minimize``."""

    removes_constants = False

    def __init__(self, q_el, r_el, load_q, n: int, p: float):
        self.n = n
        self.p = p
        self.h = 1.0 / n
        self.q_el = q_el
        self.r_el = r_el
        # mass/load quadrature: 2 Gauss points per element, basis values phi0, phi1
        self._phi = np.stack([1.0 - _GP, _GP], axis=1)       # (2 points, 2 basis)
        self._w = 0.5 * self.h
        self._fq = load_q                                       # (n, 2)
        loc = self._w * (load_q @ self._phi)
        self.b = np.zeros(n + 1)
        np.add.at(self.b, np.arange(n), loc[:, 0])
        np.add.at(self.b, np.arange(1, n + 1), loc[:, 1])
        self.ndof = n + 1

    def _uq(self, u):
        return u[:-1, None] * self._phi[None, :, 0] + u[1:, None] * self._phi[None, :, 1]

    def energy(self, u):
        p = self.p
        du = np.diff(u) / self.h
        uq = self._uq(u)
        return float(np.sum(self.h * self.q_el * np.abs(du) ** p) / p
                     + np.sum(self._w * self.r_el[:, None] * np.abs(uq) ** p) / p - self.b @ u)

    def energy_scale(self, u):
        p = self.p
        du = np.diff(u) / self.h
        return float(np.sum(self.h * self.q_el * np.abs(du) ** p) / p
                     + np.sum(self._w * self.r_el[:, None] * np.abs(self._uq(u)) ** p) / p + abs(self.b @ u))

    def _scatter(self, loc):
        out = np.zeros(self.n + 1)
        np.add.at(out, np.arange(self.n), loc[:, 0])
        np.add.at(out, np.arange(1, self.n + 1), loc[:, 1])
        return out

    def _local(self, u, absolute=False):
        du = np.diff(u) / self.h
        flux = self.q_el * a_p(du[:, None], self.p)[:, 0]
        mq = self._w * self.r_el[:, None] * a_p(self._uq(u)[..., None], self.p)[..., 0]
        if absolute:
            # cancellation-free bound: |u_i| + |u_{i+1}| in place of |u_{i+1} - u_i|
            dabs = (np.abs(u[:-1]) + np.abs(u[1:])) / self.h
            flux = self.q_el * dabs ** (self.p - 1)
            mq = np.abs(mq)
            return np.stack([flux, flux], axis=1) + mq @ self._phi
        return np.stack([-flux, flux], axis=1) + mq @ self._phi

    def gradient(self, u):
        return self._scatter(self._local(u)) - self.b

    def gradient_scale(self, u):
        return float(np.linalg.norm(self._scatter(self._local(u, True)) + np.abs(self.b)))

    def hessian(self, u, gamma=0.0, majorize=False):
        p = self.p
        du = np.diff(u) / self.h
        uq = self._uq(u)
        keep_g, keep_m = _newton_weights(majorize)
        if p == 2.0:
            k = np.ones_like(du)
            c = np.ones_like(uq)
        else:
            s = np.maximum(gamma * gamma + du * du, 1e-300)
            k = s ** ((p - 2.0) / 2.0)
            s2 = np.maximum(gamma * gamma + uq * uq, 1e-300)
            c = s2 ** ((p - 2.0) / 2.0)
            k = k * (1.0 + (p - 2.0) * keep_g * du * du / s)
            c = c * (1.0 + (p - 2.0) * keep_m * uq * uq / s2)
        k = self.q_el * k / self.h
        m = self._w * self.r_el[:, None] * c                          # (n, 2)
        m00 = m @ (self._phi[:, 0] ** 2)
        m01 = m @ (self._phi[:, 0] * self._phi[:, 1])
        m11 = m @ (self._phi[:, 1] ** 2)
        diag = np.zeros(self.n + 1)
        diag[:-1] += k + m00
        diag[1:] += k + m11
        off = -k + m01
        return sp.diags([off, diag, off], [-1, 0, 1], format="csr")

    def crossing_masks(self, u, d):
        un = u + d
        return np.diff(u) * np.diff(un) < 0, self._uq(u) * self._uq(un) < 0

    def project(self, u):
        return u


def _element_coefficients(coeffs, mids):
    if isinstance(coeffs, EffectiveCoefficients):
        q, r = coeffs.evaluate(mids)
    else:
        q, r = coeffs
        q = np.broadcast_to(np.asarray(q(mids) if callable(q) else q, dtype=float), mids.shape)
        r = np.broadcast_to(np.asarray(r(mids) if callable(r) else r, dtype=float), mids.shape)
    q = np.array(q, dtype=float)
    r = np.array(r, dtype=float)
    if np.any(q <= 0) or np.any(r <= 0):
        raise ValueError("interpolated coefficients q and r must be positive")
    return q, r


def solve_homogenized(coeffs, fhat, p: float, n: int = 256, config: SolveConfig = None):
    """Solve the homogenised problem on a uniform grid with ``n`` elements.

    ``coeffs`` is an EffectiveCoefficients or a pair (q, r) of constants or
    callables; ``fhat`` is a Field1D, a callable of x or a constant.
    Returns ``(Field1D, SolveReport)``.
    """
    if n < 4:
        raise ValueError("need at least 4 elements")
    if not p > 1:
        raise ValueError("p must exceed 1")
    x = np.linspace(0.0, 1.0, n + 1)
    h = 1.0 / n
    mids = x[:-1] + 0.5 * h
    q_el, r_el = _element_coefficients(coeffs, mids)
    xq = x[:-1, None] + h * _GP[None, :]
    if isinstance(fhat, Field1D):
        fq = fhat(xq)
    elif callable(fhat):
        fq = np.broadcast_to(np.asarray(fhat(xq), dtype=float), xq.shape)
    else:
        fq = np.full(xq.shape, float(fhat))
    prob = Homogenized1D(q_el, r_el, np.array(fq, dtype=float), n, p)
    # best constant start: a_p(c) int r = int fhat
    c0 = a_p(prob.b.sum() / np.sum(h * r_el), conjugate_exponent(p))
    # the system is tridiagonal: a direct solve is cheaper than CG
    cfg = config or SolveConfig(linear_solver="direct")
    u, rep = newton_minimize(prob, np.full(n + 1, c0), cfg)
    return Field1D(x, u, p), rep


def fhat_from(f, r, n: int = 256) -> Field1D:
    """Limit load r(x) f(x) for a y-independent source f, on n+1 uniform nodes.

    ``r`` is an EffectiveCoefficients, a profile, or a constant.
    """
    x = np.linspace(0.0, 1.0, n + 1)
    if isinstance(r, EffectiveCoefficients):
        rv = r.evaluate(x)[1]
    elif hasattr(r, "pieces"):
        rv = np.array([effective_r(r, xi) for xi in x])
    else:
        rv = np.full_like(x, float(r))
    fv = np.broadcast_to(np.asarray(f(x) if callable(f) else f, dtype=float), x.shape)
    return Field1D(x, rv * fv)
