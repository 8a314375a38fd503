"""Scaled standard triangulations of convex state polytopes.

The standard triangulation splits every unit lattice cube into ``n!`` simplexes,
one per ordering of the coordinate axes (the Kuhn/Freudenthal split), with the
split mirrored through the coordinate hyperplanes so that every path starts at
the cube corner nearest the origin. The mesh is then symmetric under sign
flips of any coordinate. Scaling the lattice by ``rho`` and keeping the
simplexes whose vertices all satisfy the polytope inequalities gives the mesh
used by the synthesis loop.
"""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, HalfspaceIntersection

CONTAINMENT_TOL = 1e-12
BARY_TOL = 1e-10


class GeometryError(ValueError):
    pass


class EmptyTriangulation(GeometryError):
    pass


class OriginNotInterior(GeometryError):
    pass


class OutOfDomain(GeometryError):
    """Raised when a query point lies outside the triangulated set."""


@dataclass(frozen=True)
class Polytope:
    """Bounded convex set ``{x : A x <= b}`` with its vertex list.

    Rows of ``A`` are normalized to unit length on construction.
    """

    A: np.ndarray
    b: np.ndarray
    vertices: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise GeometryError("halfspace normals and offsets differ in length")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms == 0):
            raise GeometryError("zero halfspace normal")
        A = A / norms[:, None]
        b = b / norms
        if np.any(b <= 0):
            raise GeometryError("origin must be strictly inside the polytope")
        V = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if V.shape[1] != A.shape[1]:
            raise GeometryError("vertex dimension does not match halfspaces")
        if np.any(V @ A.T - b > 1e-9):
            raise GeometryError("vertex list violates the halfspaces")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "vertices", V)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @classmethod
    def from_halfspaces(cls, A, b) -> "Polytope":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        n = A.shape[1]
        if np.any(b <= 0):
            raise GeometryError("origin must be strictly inside the polytope")
        if n == 1:
            a = A[:, 0]
            with np.errstate(divide="ignore"):
                ratios = b / a
            if not (np.any(a > 0) and np.any(a < 0)):
                raise GeometryError("polytope is unbounded")
            hi = ratios[a > 0].min()
            lo = ratios[a < 0].max()
            return cls(A, b, np.array([[lo], [hi]]))
        hs = HalfspaceIntersection(np.hstack([A, -b[:, None]]), np.zeros(n))
        pts = hs.intersections
        if not np.all(np.isfinite(pts)):
            raise GeometryError("polytope is unbounded")
        hull = ConvexHull(pts)
        return cls(A, b, pts[hull.vertices])

    @classmethod
    def box(cls, lo, hi) -> "Polytope":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        n = lo.size
        A = np.vstack([np.eye(n), -np.eye(n)])
        b = np.concatenate([hi, -lo])
        corners = np.array(list(itertools.product(*zip(lo, hi))))
        return cls(A, b, corners)

    @classmethod
    def from_vertices(cls, points) -> "Polytope":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] == 1:
            lo, hi = pts.min(), pts.max()
            return cls.box([lo], [hi])
        hull = ConvexHull(pts)
        eq = np.unique(np.round(hull.equations, 12), axis=0)
        return cls(eq[:, :-1], -eq[:, -1], pts[hull.vertices])

    def contains(self, x, tol: float = 1e-9) -> bool:
        return bool(np.all(self.A @ np.asarray(x, dtype=float) <= self.b + tol))

    def volume(self) -> float:
        """Volume by a fan of simplexes from the vertex centroid to each hull facet."""
        V = self.vertices
        n = self.dim
        if n == 1:
            return float(V.max() - V.min())
        hull = ConvexHull(V)
        centre = V.mean(axis=0)
        total = 0.0
        for facet in hull.simplices:
            M = V[facet] - centre
            total += abs(np.linalg.det(M))
        return total / math.factorial(n)

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist(), "vertices": self.vertices.tolist()}


@dataclass(frozen=True)
class Simplex:
    vertex_ids: tuple
    vertices: np.ndarray
    shape_matrix: np.ndarray
    shape_inverse: np.ndarray
    c_coeffs: np.ndarray


def c_coefficients(vertices: np.ndarray) -> np.ndarray:
    """Taylor-remainder geometry factors for each vertex of one simplex.

    ``c_j = n/2 * |x_j - x_0| * (max_k |x_k - x_0| + |x_j - x_0|)``; ``c_0 = 0``.
    """
    vertices = np.asarray(vertices, dtype=float)
    n = vertices.shape[1]
    d = np.linalg.norm(vertices - vertices[0], axis=1)
    return 0.5 * n * d * (d[1:].max() + d)


def _kuhn_offsets(n: int):
    """Yield (perm, offsets) with offsets[t] the lattice offset of path vertex t."""
    for perm in itertools.permutations(range(n)):
        offs = np.zeros((n + 1, n), dtype=np.int64)
        for t, axis in enumerate(perm):
            offs[t + 1] = offs[t]
            offs[t + 1, axis] += 1
        yield perm, offs


def cell_frame(cells):
    """Inner corner and orthant signs of lattice cells given by lower corners."""
    cells = np.asarray(cells, dtype=np.int64)
    signs = np.where(cells >= 0, 1, -1)
    inner = np.where(cells >= 0, cells, cells + 1)
    return inner, signs


@dataclass
class Triangulation:
    """Immutable simplicial mesh on the ``rho``-scaled integer lattice.

    Arrays are indexed by vertex id (``vertices``, ``lattice``) or simplex id
    (``simplices``, ``shape``, ``shape_inv``, ``c``).
    """

    rho: float
    lattice: np.ndarray
    simplices: np.ndarray
    cells: np.ndarray
    perms: np.ndarray
    vertices: np.ndarray = field(init=False)
    shape: np.ndarray = field(init=False)
    shape_inv: np.ndarray = field(init=False)
    c: np.ndarray = field(init=False)

    def __post_init__(self):
        self.lattice = np.asarray(self.lattice, dtype=np.int64)
        self.simplices = np.asarray(self.simplices, dtype=np.int64)
        self.vertices = self.lattice * float(self.rho)
        pts = self.vertices[self.simplices]
        self.shape = pts[:, 1:, :] - pts[:, :1, :]
        self.shape_inv = np.linalg.inv(self.shape)
        self.c = np.array([c_coefficients(p) for p in pts])
        self._locate = {
            (tuple(cell), tuple(perm)): i
            for i, (cell, perm) in enumerate(zip(self.cells.tolist(), self.perms.tolist()))
        }
        self._by_cell = defaultdict(list)
        for i, cell in enumerate(self.cells.tolist()):
            self._by_cell[tuple(cell)].append(i)
        origin = np.flatnonzero(~self.lattice.any(axis=1))
        self.origin_id = int(origin[0]) if origin.size else -1
        self._build_adjacency()

    @property
    def n(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_simplices(self) -> int:
        return self.simplices.shape[0]

    def _build_adjacency(self):
        facets = defaultdict(list)
        n = self.n
        for i, ids in enumerate(self.simplices.tolist()):
            for drop in range(n + 1):
                key = tuple(sorted(ids[:drop] + ids[drop + 1:]))
                facets[key].append(i)
        self.facets = dict(facets)
        self.neighbors = [[] for _ in range(self.n_simplices)]
        boundary = set()
        for key, owners in self.facets.items():
            if len(owners) == 2:
                a, b = owners
                self.neighbors[a].append(b)
                self.neighbors[b].append(a)
            else:
                boundary.update(key)
        self.boundary_vertex_ids = np.array(sorted(boundary), dtype=np.int64)
        self.vertex_simplices = [[] for _ in range(self.n_vertices)]
        for i, ids in enumerate(self.simplices.tolist()):
            for v in ids:
                self.vertex_simplices[v].append(i)

    def simplex(self, i: int) -> Simplex:
        ids = self.simplices[i]
        return Simplex(tuple(int(v) for v in ids), self.vertices[ids], self.shape[i],
                       self.shape_inv[i], self.c[i])

    def origin_simplices(self) -> np.ndarray:
        if self.origin_id < 0:
            return np.zeros(0, dtype=np.int64)
        return np.array(self.vertex_simplices[self.origin_id], dtype=np.int64)

    def volumes(self) -> np.ndarray:
        return np.abs(np.linalg.det(self.shape)) / math.factorial(self.n)

    def volume(self) -> float:
        return float(self.volumes().sum())

    def barycentric(self, i: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x0 = self.vertices[self.simplices[i, 0]]
        lam = self.shape_inv[i].T @ (x - x0)
        return np.concatenate([[1.0 - lam.sum()], lam])

    def _candidate_cells(self, x):
        t = np.asarray(x, dtype=float) / self.rho
        base = np.floor(t)
        choices = []
        for tk, bk in zip(t, base):
            opts = {int(bk)}
            if tk - bk < 1e-9:
                opts.add(int(bk) - 1)
            if bk + 1 - tk < 1e-9:
                opts.add(int(bk) + 1)
            choices.append(sorted(opts))
        return itertools.product(*choices)

    def locate_all(self, x):
        """Every simplex containing ``x`` with clipped barycentric weights."""
        out = []
        for cell in self._candidate_cells(x):
            for i in self._by_cell.get(cell, ()):
                alpha = self.barycentric(i, x)
                if alpha.min() >= -BARY_TOL:
                    alpha = np.clip(alpha, 0.0, None)
                    out.append((i, alpha / alpha.sum()))
        if not out:
            raise OutOfDomain(f"point {np.asarray(x).tolist()} is outside the triangulation")
        return out

    def locate(self, x) -> int:
        """Index of one simplex containing ``x`` (fast path by cell and axis order)."""
        t = np.asarray(x, dtype=float) / self.rho
        cell = np.floor(t).astype(np.int64)
        inner, signs = cell_frame(cell)
        frac = signs * (t - inner)
        perm = tuple(int(p) for p in np.argsort(-frac, kind="stable"))
        i = self._locate.get((tuple(int(c) for c in cell), perm))
        if i is not None:
            return i
        return self.locate_all(x)[0][0]

    def contains(self, x) -> bool:
        try:
            self.locate(x)
        except OutOfDomain:
            return False
        return True

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.float64(self.rho).tobytes())
        h.update(self.lattice.tobytes())
        h.update(self.simplices.tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "rho": float(self.rho),
            "lattice": self.lattice.tolist(),
            "vertices": self.vertices.tolist(),
            "simplices": self.simplices.tolist(),
            "cells": self.cells.tolist(),
            "perms": self.perms.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Triangulation":
        n = len(d["lattice"][0])
        return cls(float(d["rho"]), np.array(d["lattice"]).reshape(-1, n),
                   np.array(d["simplices"]).reshape(-1, n + 1),
                   np.array(d["cells"]).reshape(-1, n), np.array(d["perms"]).reshape(-1, n))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        n = self.n
        w.writerow(["simplex"] + [f"v{j}" for j in range(n + 1)]
                   + [f"x{j}_{k}" for j in range(n + 1) for k in range(n)])
        for i, ids in enumerate(self.simplices):
            w.writerow([i] + ids.tolist() + self.vertices[ids].reshape(-1).tolist())
        return buf.getvalue()


def _star_of_origin(n: int):
    """All (cell, perm) pairs of the full lattice that have the origin as a vertex."""
    return [(cell, perm) for cell in itertools.product((-1, 0), repeat=n)
            for perm, _ in _kuhn_offsets(n)]


def connected_component(T: Triangulation, members, seeds) -> list:
    """Facet-connected component of ``members`` reachable from ``seeds``."""
    members = set(int(i) for i in members)
    seen = set()
    queue = deque(int(s) for s in seeds if int(s) in members)
    seen.update(queue)
    while queue:
        i = queue.popleft()
        for j in T.neighbors[i]:
            if j in members and j not in seen:
                seen.add(j)
                queue.append(j)
    return sorted(seen)


def build_triangulation(X: Polytope, rho: float) -> Triangulation:
    """Standard triangulation of the ``rho`` lattice restricted to simplexes inside ``X``."""
    if rho <= 0:
        raise GeometryError("rho must be positive")
    n = X.dim
    lo = np.floor(X.vertices.min(axis=0) / rho - 1e-9).astype(np.int64)
    hi = np.ceil(X.vertices.max(axis=0) / rho + 1e-9).astype(np.int64)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    pts = grid.reshape(-1, n) * rho
    slack = CONTAINMENT_TOL * max(1.0, float(np.abs(X.b).max()))
    inside = np.all(pts @ X.A.T <= X.b + slack, axis=1).reshape(grid.shape[:-1])

    cells = np.stack(np.meshgrid(*[np.arange(a, b) for a, b in zip(lo, hi)],
                                 indexing="ij"), axis=-1).reshape(-1, n)
    inner, signs = cell_frame(cells)
    kept_cells, kept_perms, kept_verts = [], [], []
    for perm, offs in _kuhn_offsets(n):
        verts = inner[:, None, :] + signs[:, None, :] * offs[None, :, :]
        idx = tuple((verts - lo)[..., k] for k in range(n))
        ok = inside[idx].all(axis=1)
        kept_cells.append(cells[ok])
        kept_perms.append(np.tile(perm, (int(ok.sum()), 1)))
        kept_verts.append(verts[ok])
    cells_k = np.concatenate(kept_cells)
    perms_k = np.concatenate(kept_perms).astype(np.int64)
    verts_k = np.concatenate(kept_verts)
    if cells_k.shape[0] == 0:
        raise EmptyTriangulation(f"no simplex of the rho={rho} lattice fits inside the polytope")

    star = _star_of_origin(n)
    present = {(tuple(c), tuple(p)) for c, p in zip(cells_k.tolist(), perms_k.tolist())}
    if not all(s in present for s in star):
        raise OriginNotInterior(f"origin is not interior to the rho={rho} triangulation")

    # keep the facet-connected component holding the origin star
    order = np.lexsort(cells_k.T[::-1])
    cells_k, perms_k, verts_k = cells_k[order], perms_k[order], verts_k[order]
    lattice, inv = np.unique(verts_k.reshape(-1, n), axis=0, return_inverse=True)
    simplices = inv.reshape(-1, n + 1)
    origin = int(np.flatnonzero(~lattice.any(axis=1))[0])
    for row in simplices:
        hit = np.flatnonzero(row == origin)
        if hit.size:
            j = hit[0]
        else:
            # free anchor: pick the vertex giving the smallest remainder factors
            pts = lattice[row].astype(float)
            j = int(np.argmin([c_coefficients(np.roll(pts, -t, axis=0)).sum() for t in range(n + 1)]))
        if j != 0:
            row[[0, j]] = row[[j, 0]]
    T = Triangulation(rho, lattice, simplices, cells_k, perms_k)
    comp = connected_component(T, range(T.n_simplices), T.origin_simplices())
    if len(comp) < T.n_simplices:
        T = _restrict(T, comp)
    return T


def _restrict(T: Triangulation, keep) -> Triangulation:
    keep = np.asarray(keep, dtype=np.int64)
    used = np.unique(T.simplices[keep])
    remap = -np.ones(T.n_vertices, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return Triangulation(T.rho, T.lattice[used], remap[T.simplices[keep]], T.cells[keep], T.perms[keep])


def barycentric_locate(T: Triangulation, x):
    """List of ``(simplex index, weights)`` for every simplex containing ``x``."""
    return T.locate_all(x)


def coverage_ratio(T: Triangulation, X: Polytope) -> float:
    return min(1.0, T.volume() / X.volume())
