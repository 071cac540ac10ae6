"""Structured P1 triangulations of graph ("terrain") domains.

Every mesh built here is a stack of bands between height functions sampled
on an equispaced x-grid.  Column ``i`` carries nodes at heights interpolated
linearly between the band interfaces; each quad is split along the diagonal
through its lower-left node.  Bands whose thickness drops below
:data:`GEOM_TOL` in a column collapse to a single node there, so strips
between touching graphs contain no zero-area triangles.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "GEOM_TOL",
    "SNAP_TOL",
    "Mesh",
    "NodalField",
    "MeshError",
    "OutsideDomainError",
    "build_layered_mesh",
    "build_graph_mesh",
    "build_strip_mesh",
    "locate_point",
    "locate_points",
    "evaluate",
    "interpolate",
    "audit_conformity",
    "write_mesh",
    "read_mesh",
]

GEOM_TOL = 1e-12
SNAP_TOL = 1e-9
BARY_TOL = 1e-12


class MeshError(ValueError):
    pass


class OutsideDomainError(ValueError):
    def __init__(self, points):
        self.points = np.atleast_2d(points)
        head = ", ".join(f"({p[0]:.6g}, {p[1]:.6g})" for p in self.points[:5])
        more = "" if len(self.points) <= 5 else f" and {len(self.points) - 5} more"
        super().__init__(f"{len(self.points)} point(s) outside the source mesh: {head}{more}")


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation with optional periodic left/right pairing.

    ``columns``, ``bottom`` and ``top`` describe the terrain structure (the
    x-grid and the lower/upper boundary heights per column) when the mesh
    came from one of the builders; they are ``None`` for imported meshes.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary: dict = field(default_factory=dict)
    periodic: np.ndarray = None
    columns: np.ndarray = None
    bottom: np.ndarray = None
    top: np.ndarray = None

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 2)
        tris = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "nodes", _readonly(nodes))
        object.__setattr__(self, "triangles", _readonly(tris))
        if self.periodic is not None:
            object.__setattr__(self, "periodic",
                               _readonly(np.asarray(self.periodic, dtype=np.int64).reshape(-1, 2)))
        for name in ("columns", "bottom", "top"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _readonly(np.asarray(v, dtype=float)))
        if len(tris) and (tris.min() < 0 or tris.max() >= len(nodes)):
            raise MeshError("triangle references a missing node")
        if len(tris) and np.any(self.areas <= 0):
            raise MeshError("triangles must have strictly positive signed area")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def dof(self) -> np.ndarray:
        """Map node -> independent degree of freedom (periodic pairs share one)."""
        parent = np.arange(self.n_nodes)
        if self.periodic is not None and len(self.periodic):
            for left, right in self.periodic:
                parent[right] = parent[left]
            # chains (corner nodes) resolve in a couple of passes
            for _ in range(3):
                parent = parent[parent]
        _, inv = np.unique(parent, return_inverse=True)
        return _readonly(inv.astype(np.int64))

    @property
    def ndof(self) -> int:
        return int(self.dof.max()) + 1 if self.n_nodes else 0

    @cached_property
    def tri_dofs(self) -> np.ndarray:
        return _readonly(self.dof[self.triangles])

    @cached_property
    def areas(self) -> np.ndarray:
        P = self.nodes[self.triangles]
        d1 = P[:, 1] - P[:, 0]
        d2 = P[:, 2] - P[:, 0]
        return _readonly(0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]))

    @cached_property
    def grads(self) -> np.ndarray:
        """Gradients of the three barycentric basis functions, shape (T, 3, 2)."""
        P = self.nodes[self.triangles]
        x, y = P[..., 0], P[..., 1]
        two_a = 2.0 * self.areas
        g = np.empty((self.n_triangles, 3, 2))
        g[:, 0, 0] = y[:, 1] - y[:, 2]
        g[:, 0, 1] = x[:, 2] - x[:, 1]
        g[:, 1, 0] = y[:, 2] - y[:, 0]
        g[:, 1, 1] = x[:, 0] - x[:, 2]
        g[:, 2, 0] = y[:, 0] - y[:, 1]
        g[:, 2, 1] = x[:, 1] - x[:, 0]
        g /= two_a[:, None, None]
        return _readonly(g)

    @cached_property
    def dof_weights(self) -> np.ndarray:
        """Integral of each P1 basis function; ``dof_weights @ u`` is the integral of u."""
        w = np.bincount(self.tri_dofs.ravel(), weights=np.repeat(self.areas / 3.0, 3),
                        minlength=self.ndof)
        return _readonly(w)

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    @cached_property
    def _locator(self):
        return _Locator(self)

    def top_at(self, x):
        if self.columns is None:
            raise MeshError("mesh carries no terrain metadata")
        return np.interp(x, self.columns, self.top)

    def bottom_at(self, x):
        if self.columns is None:
            raise MeshError("mesh carries no terrain metadata")
        return np.interp(x, self.columns, self.bottom)


@dataclass(frozen=True, eq=False)
class NodalField:
    """P1 function: one value per independent dof of ``mesh``."""

    mesh: Mesh
    values: np.ndarray
    p: float = None
    role: str = "solution"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if len(v) != self.mesh.ndof:
            raise MeshError(f"field has {len(v)} values, mesh has {self.mesh.ndof} dofs")
        if not np.all(np.isfinite(v)):
            raise MeshError("field values must be finite")
        object.__setattr__(self, "values", _readonly(v))

    @classmethod
    def from_function(cls, mesh, fn, **kw):
        vals = np.empty(mesh.ndof)
        vals[mesh.dof] = np.broadcast_to(fn(mesh.nodes[:, 0], mesh.nodes[:, 1]), (mesh.n_nodes,))
        return cls(mesh, vals, **kw)

    @property
    def node_values(self) -> np.ndarray:
        return self.values[self.mesh.dof]


def _sample_heights(h, xs):
    if callable(h):
        v = h(xs)
    else:
        v = h
    return np.broadcast_to(np.asarray(v, dtype=float), xs.shape).copy()


def build_layered_mesh(heights, layers, interval, nx: int, periodic: bool = False,
                       tol: float = GEOM_TOL) -> Mesh:
    """Terrain mesh stacked from bands ``heights[k] <= y <= heights[k+1]``
    with ``layers[k]`` element rows each.

    Heights are callables of x (vectorised) or constants.
    """
    if len(heights) != len(layers) + 1:
        raise MeshError("need one more height function than band")
    if nx < 1 or any(n < 1 for n in layers):
        raise MeshError("nx and layer counts must be positive")
    a, b = map(float, interval)
    xs = np.linspace(a, b, nx + 1)
    H = np.array([_sample_heights(h, xs) for h in heights])
    gaps = np.diff(H, axis=0)
    if np.any(gaps < -tol):
        k, i = np.argwhere(gaps < -tol)[0]
        raise MeshError(f"band {k} has upper < lower at x={xs[i]:.6g}")
    collapsed = gaps <= tol

    rows = []       # (band, fraction) for every node row
    row_band = []
    for k, n in enumerate(layers):
        start = 0 if k == 0 else 1
        for j in range(start, n + 1):
            rows.append((k, j / n))
            row_band.append(k)
    R = len(rows)
    Y = np.empty((nx + 1, R))
    for r, (k, s) in enumerate(rows):
        Y[:, r] = H[k] + s * (H[k + 1] - H[k])
        if s == 1.0:
            Y[:, r] = H[k + 1]

    # alias rows inside collapsed bands to the row below them
    rep = np.tile(np.arange(R), (nx + 1, 1))
    for r in range(1, R):
        k = row_band[r]
        col = collapsed[k]
        rep[col, r] = rep[col, r - 1]
    full_index = (np.arange(nx + 1)[:, None] * R + rep)   # (nx+1, R) -> raw node id

    ii, rr = np.meshgrid(np.arange(nx), np.arange(R - 1), indexing="ij")
    ii, rr = ii.ravel(), rr.ravel()
    na = full_index[ii, rr]
    nb = full_index[ii + 1, rr]
    nc = full_index[ii + 1, rr + 1]
    nd = full_index[ii, rr + 1]
    tris = np.empty((2 * len(ii), 3), dtype=np.int64)
    tris[0::2] = np.stack([na, nb, nc], axis=1)
    tris[1::2] = np.stack([na, nc, nd], axis=1)
    keep = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
    tris = tris[keep]

    raw_xy = np.stack([np.repeat(xs, R), Y.ravel()], axis=1)
    used = np.unique(tris) if len(tris) else np.zeros(0, dtype=np.int64)
    renum = -np.ones((nx + 1) * R, dtype=np.int64)
    renum[used] = np.arange(len(used))
    nodes = raw_xy[used]
    tris = renum[tris]
    if len(tris):
        P = nodes[tris]
        d1, d2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
        ar = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        tris = tris[ar > 0]

    col_of = used // R
    row_of = used % R
    boundary = _tag_boundary(tris, col_of, row_of, nx, R)

    pairs = None
    if periodic:
        if np.any(np.abs(H[:, 0] - H[:, -1]) > tol):
            raise MeshError("periodic mesh requested but heights differ at the two ends")
        left = renum[full_index[0]]
        right = renum[full_index[nx]]
        ok = (left >= 0) & (right >= 0)
        pairs = np.unique(np.stack([left[ok], right[ok]], axis=1), axis=0)
        if len(pairs) and np.any(np.abs(nodes[pairs[:, 0], 1] - nodes[pairs[:, 1], 1]) > tol):
            raise MeshError("periodic pairing with mismatched heights")

    return Mesh(nodes, tris, boundary, pairs, columns=xs, bottom=H[0], top=H[-1])


def _tag_boundary(tris, col_of, row_of, nx, R):
    if not len(tris):
        return {k: np.zeros((0, 2), dtype=np.int64) for k in ("bottom", "top", "left", "right")}
    edges = np.sort(np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    bnd = uniq[counts == 1]
    c0, c1 = col_of[bnd[:, 0]], col_of[bnd[:, 1]]
    r0, r1 = row_of[bnd[:, 0]], row_of[bnd[:, 1]]
    left = (c0 == 0) & (c1 == 0)
    right = (c0 == nx) & (c1 == nx)
    bottom = ~left & ~right & (r0 == 0) & (r1 == 0)
    top = ~left & ~right & ~bottom
    return {"bottom": bnd[bottom], "top": bnd[top], "left": bnd[left], "right": bnd[right]}


def build_graph_mesh(h, interval, nx: int, ny: int, periodic: bool = False) -> Mesh:
    """Mesh of {a < x < b, 0 < y < h(x)}."""
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be positive")
    a, b = map(float, interval)
    xs = np.linspace(a, b, nx + 1)
    hv = _sample_heights(h, xs)
    if np.any(hv <= 0):
        i = int(np.argmax(hv <= 0))
        raise MeshError(f"nonpositive height {hv[i]:.6g} at x={xs[i]:.6g}")
    if periodic and abs(hv[0] - hv[-1]) > GEOM_TOL:
        raise MeshError(f"periodic mesh requested but h(a)={hv[0]!r} != h(b)={hv[-1]!r}")
    return build_layered_mesh([0.0, hv], [ny], (a, b), nx, periodic=periodic)


def build_strip_mesh(lower, upper, interval, nx: int, ny: int) -> Mesh:
    """Mesh of the region between two graphs; degenerate columns collapse."""
    return build_layered_mesh([lower, upper], [ny], interval, nx)


class _Locator:
    """Uniform bucket grid over triangle bounding boxes (padded by the snap tolerance)."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        T = mesh.n_triangles
        if T == 0:
            self.empty = True
            return
        self.empty = False
        P = mesh.nodes[mesh.triangles]
        pad = SNAP_TOL
        lo = P.min(axis=1) - pad
        hi = P.max(axis=1) + pad
        self.origin = lo.min(axis=0)
        extent = hi.max(axis=0) - self.origin
        size = np.median(hi - lo, axis=0)
        nb = np.maximum(1, np.ceil(extent / np.maximum(size, 1e-300))).astype(np.int64)
        cap = 4 * T + 16
        while nb[0] * nb[1] > cap:
            nb = np.maximum(1, nb // 2)
        self.nb = nb
        self.cell = extent / nb
        i0 = self._bin(lo)
        i1 = self._bin(hi)
        span = i1 - i0 + 1
        ids, tri = [], []
        for dx in range(int(span[:, 0].max())):
            for dy in range(int(span[:, 1].max())):
                m = (dx < span[:, 0]) & (dy < span[:, 1])
                t = np.nonzero(m)[0]
                ids.append((i0[t, 0] + dx) * nb[1] + (i0[t, 1] + dy))
                tri.append(t)
        ids = np.concatenate(ids)
        tri = np.concatenate(tri)
        order = np.lexsort((tri, ids))
        self.entries = tri[order]
        self.start = np.searchsorted(ids[order], np.arange(nb[0] * nb[1] + 1))
        self.p0 = P[:, 0]
        d1 = P[:, 1] - P[:, 0]
        d2 = P[:, 2] - P[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        self.inv = np.empty((T, 2, 2))
        self.inv[:, 0, 0] = d2[:, 1] / det
        self.inv[:, 0, 1] = -d2[:, 0] / det
        self.inv[:, 1, 0] = -d1[:, 1] / det
        self.inv[:, 1, 1] = d1[:, 0] / det

    def _bin(self, pts):
        b = np.floor((pts - self.origin) / self.cell).astype(np.int64)
        return np.clip(b, 0, self.nb - 1)

    def bary(self, tri, pts):
        d = pts - self.p0[tri]
        l1 = self.inv[tri, 0, 0] * d[:, 0] + self.inv[tri, 0, 1] * d[:, 1]
        l2 = self.inv[tri, 1, 0] * d[:, 0] + self.inv[tri, 1, 1] * d[:, 1]
        return np.stack([1.0 - l1 - l2, l1, l2], axis=1)

    def candidates(self, pts):
        rel = (pts - self.origin) / self.cell
        inside = np.all((rel >= 0) & (rel <= self.nb), axis=1)
        b = self._bin(pts)
        bid = b[:, 0] * self.nb[1] + b[:, 1]
        s = self.start[bid]
        n = np.where(inside, self.start[bid + 1] - s, 0)
        return s, n

    def locate(self, pts):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        M = len(pts)
        tri = -np.ones(M, dtype=np.int64)
        bary = np.zeros((M, 3))
        if self.empty or M == 0:
            return tri, bary
        s, n = self.candidates(pts)
        for k in range(int(n.max()) if M else 0):
            act = np.nonzero((tri < 0) & (n > k))[0]
            if not len(act):
                break
            t = self.entries[s[act] + k]
            lam = self.bary(t, pts[act])
            hit = lam.min(axis=1) >= -BARY_TOL
            tri[act[hit]] = t[hit]
            bary[act[hit]] = lam[hit]
        found = tri >= 0
        lam = np.clip(bary[found], 0.0, None)
        bary[found] = lam / lam.sum(axis=1, keepdims=True)
        return tri, bary

    def snap(self, pts, tol):
        """Nearest triangle within ``tol`` for points the exact search missed."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        tri = -np.ones(len(pts), dtype=np.int64)
        bary = np.zeros((len(pts), 3))
        if self.empty:
            return tri, bary
        s, n = self.candidates(pts)
        P = self.mesh.nodes[self.mesh.triangles]
        for m in range(len(pts)):
            best, best_d, best_l = -1, np.inf, None
            for t in self.entries[s[m]:s[m] + n[m]]:
                q, lam = _closest_on_triangle(P[t], pts[m], self.bary(np.array([t]), pts[m:m + 1])[0])
                d = np.hypot(*(q - pts[m]))
                if d < best_d - 1e-300:
                    best, best_d, best_l = t, d, lam
            if best >= 0 and best_d <= tol:
                tri[m] = best
                bary[m] = best_l
        return tri, bary


def _closest_on_triangle(P, q, lam):
    if lam.min() >= 0:
        return q, lam
    best = None
    for i, j in ((0, 1), (1, 2), (2, 0)):
        e = P[j] - P[i]
        t = np.clip(np.dot(q - P[i], e) / np.dot(e, e), 0.0, 1.0)
        c = P[i] + t * e
        d = np.hypot(*(c - q))
        if best is None or d < best[0]:
            l = np.zeros(3)
            l[i], l[j] = 1.0 - t, t
            best = (d, c, l)
    return best[1], best[2]


def locate_points(mesh: Mesh, points, snap: float = 0.0):
    """Vectorised point location.

    Returns ``(tri, bary)``; ``tri`` is -1 for points outside.  Ties on shared
    edges go to the lowest triangle index.  With ``snap > 0`` points within
    that distance of the mesh are mapped to the closest boundary point.
    """
    loc = mesh._locator
    tri, bary = loc.locate(points)
    if snap > 0:
        miss = np.nonzero(tri < 0)[0]
        if len(miss):
            t2, b2 = loc.snap(np.asarray(points, dtype=float).reshape(-1, 2)[miss], snap)
            tri[miss] = t2
            bary[miss] = b2
    return tri, bary


def locate_point(mesh: Mesh, point):
    """Triangle index and barycentric coordinates of ``point``, or ``None`` if outside."""
    tri, bary = locate_points(mesh, np.asarray(point, dtype=float).reshape(1, 2))
    if tri[0] < 0:
        return None
    return int(tri[0]), tuple(float(v) for v in bary[0])


def evaluate(fld: NodalField, points, snap: float = SNAP_TOL) -> np.ndarray:
    """P1 evaluation of ``fld`` at arbitrary points (error if any is outside)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    mesh = fld.mesh
    tri, bary = locate_points(mesh, pts, snap=snap)
    bad = tri < 0
    if np.any(bad):
        raise OutsideDomainError(pts[bad])
    return np.einsum("ij,ij->i", bary, fld.values[mesh.tri_dofs[tri]])


def interpolate(fld: NodalField, target: Mesh, snap: float = SNAP_TOL) -> NodalField:
    """Nodal interpolation of ``fld`` onto ``target``."""
    vals = evaluate(fld, target.nodes, snap=snap) if target.n_nodes else np.zeros(0)
    out = np.zeros(target.ndof)
    out[target.dof] = vals
    return NodalField(target, out, p=fld.p, role=fld.role)


def audit_conformity(mesh: Mesh) -> bool:
    """Every edge belongs to one (boundary) or two (interior) triangles, and
    the count-one edges are exactly the tagged boundary edges."""
    if mesh.n_triangles == 0:
        return True
    t = mesh.triangles
    edges = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    if np.any(counts > 2):
        return False
    once = {tuple(e) for e in uniq[counts == 1]}
    tagged = set()
    for arr in mesh.boundary.values():
        tagged |= {tuple(sorted(e)) for e in np.asarray(arr).reshape(-1, 2)}
    return not mesh.boundary or once == tagged


def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text export: header, node lines, triangle lines, optional periodic block."""
    lines = [f"nodes {mesh.n_nodes} triangles {mesh.n_triangles}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    if mesh.periodic is not None:
        lines.append(f"periodic {len(mesh.periodic)}")
        lines += [f"{a} {b}" for a, b in mesh.periodic.tolist()]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    head = lines[0]
    if len(head) != 4 or head[0] != "nodes" or head[2] != "triangles":
        raise MeshError(f"bad mesh header: {' '.join(head)}")
    n, t = int(head[1]), int(head[3])
    nodes = np.array([[float(v) for v in ln] for ln in lines[1:1 + n]]).reshape(n, 2)
    tris = np.array([[int(v) for v in ln] for ln in lines[1 + n:1 + n + t]], dtype=np.int64).reshape(t, 3)
    rest = lines[1 + n + t:]
    pairs = None
    if rest:
        if rest[0][0] != "periodic":
            raise MeshError("expected a periodic block after the triangles")
        npair = int(rest[0][1])
        pairs = np.array([[int(v) for v in ln] for ln in rest[1:1 + npair]], dtype=np.int64).reshape(npair, 2)
    return Mesh(nodes, tris, {}, pairs)
