"""Continuous piecewise-affine fields on a triangulation and their sublevel sets."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .geometry import Triangulation, connected_component


class DimensionMismatch(ValueError):
    pass


class DegenerateSet(ValueError):
    pass


def simplex_gradients(T: Triangulation, values: np.ndarray) -> np.ndarray:
    """Per-simplex gradients ``X_i^{-1} (W_{x_ij} - W_{x_i0})_j``; shape (m_T, n)."""
    W = values[T.simplices]
    Wbar = W[:, 1:] - W[:, :1]
    return np.einsum("ijk,ik->ij", T.shape_inv, Wbar)


@dataclass
class CpaScalarField:
    T: Triangulation
    values: np.ndarray
    grads: np.ndarray
    offsets: np.ndarray

    def __call__(self, x) -> float:
        return evaluate(self, x)

    def on_simplex(self, i: int, x) -> float:
        return float(np.asarray(x, dtype=float) @ self.grads[i] + self.offsets[i])

    def to_dict(self) -> dict:
        return {"values": {str(k): float(v) for k, v in enumerate(self.values)}}


@dataclass
class CpaVectorField:
    """``m`` scalar components sharing one triangulation; ``z`` bounds |grad u^(s)_i|."""

    components: list
    z: np.ndarray

    @property
    def T(self) -> Triangulation:
        return self.components[0].T

    @property
    def values(self) -> np.ndarray:
        return np.stack([c.values for c in self.components], axis=1)

    def __call__(self, x) -> np.ndarray:
        return np.array([evaluate(c, x) for c in self.components])


def interpolate(T: Triangulation, values) -> CpaScalarField:
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.shape[0] != T.n_vertices:
        raise DimensionMismatch(f"expected {T.n_vertices} vertex values, got {values.shape[0]}")
    grads = simplex_gradients(T, values)
    x0 = T.vertices[T.simplices[:, 0]]
    offsets = values[T.simplices[:, 0]] - np.einsum("ij,ij->i", x0, grads)
    return CpaScalarField(T, values, grads, offsets)


def interpolate_vector(T: Triangulation, values) -> CpaVectorField:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    comps = [interpolate(T, values[:, s]) for s in range(values.shape[1])]
    z = np.max(np.stack([np.abs(c.grads).max(axis=1) for c in comps]), axis=0)
    return CpaVectorField(comps, z)


def evaluate(F: CpaScalarField, x) -> float:
    """Barycentric combination of vertex values; face ties are averaged."""
    hits = F.T.locate_all(x)
    vals = [float(alpha @ F.values[F.T.simplices[i]]) for i, alpha in hits]
    return float(np.mean(vals))


def evaluate_many(F: CpaScalarField, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    idx = np.array([F.T.locate(x) for x in X])
    return np.einsum("ij,ij->i", X, F.grads[idx]) + F.offsets[idx]


@dataclass
class SublevelSet:
    """Connected component of ``{V <= r}`` containing the origin.

    ``members`` are the simplexes meeting the set; the set itself clips them.
    """

    V: CpaScalarField
    r: float
    members: list
    segments: np.ndarray

    def contains(self, x, strict: bool = False) -> bool:
        T = self.V.T
        try:
            hits = T.locate_all(x)
        except Exception:
            return False
        member = set(self.members)
        if not any(i in member for i, _ in hits):
            return False
        v = evaluate(self.V, x)
        return v < self.r if strict else v <= self.r

    def polyline(self) -> list:
        """Closed boundary curves for planar meshes, chained from level-set segments."""
        return chain_segments(self.segments)

    def boundary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        n = self.V.T.n
        w.writerow(["curve", "point"] + [f"x{k}" for k in range(n)])
        for c, curve in enumerate(self.polyline()):
            for p, pt in enumerate(curve):
                w.writerow([c, p] + [float(v) for v in pt])
        return buf.getvalue()


def _level_segments(T: Triangulation, values: np.ndarray, r: float, members) -> np.ndarray:
    """Level-set pieces of the CPA field inside each simplex (2-D meshes only)."""
    if T.n != 2:
        return np.zeros((0, 2, T.n))
    segs = []
    for i in members:
        ids = T.simplices[i]
        v = values[ids] - r
        pts = T.vertices[ids]
        cross = []
        for a, b in ((0, 1), (1, 2), (2, 0)):
            va, vb = v[a], v[b]
            if (va < 0) != (vb < 0):
                t = va / (va - vb)
                cross.append(pts[a] + t * (pts[b] - pts[a]))
        if len(cross) == 2:
            segs.append(cross)
    return np.array(segs).reshape(-1, 2, 2)


def chain_segments(segments: np.ndarray, tol: float = 1e-9) -> list:
    segs = [tuple(map(tuple, np.round(s, 12))) for s in segments]
    if not segs:
        return []
    adj = {}
    for k, (a, b) in enumerate(segs):
        adj.setdefault(a, []).append((k, b))
        adj.setdefault(b, []).append((k, a))
    used = set()
    curves = []
    for k0, (a0, b0) in enumerate(segs):
        if k0 in used:
            continue
        used.add(k0)
        curve = [a0, b0]
        cur = b0
        while True:
            nxt = [(k, p) for k, p in adj.get(cur, []) if k not in used]
            if not nxt:
                break
            k, p = nxt[0]
            used.add(k)
            curve.append(p)
            cur = p
        curves.append(np.array(curve))
    return curves


def sublevel_set(V: CpaScalarField, shrink: float = 0.99, simplices=None) -> SublevelSet:
    """Largest certified sublevel set inside the (sub)mesh ``simplices``.

    ``r = shrink * min V`` over vertices on the boundary of the union of
    ``simplices`` (defaults to the whole mesh).
    """
    if not 0 < shrink < 1:
        raise ValueError("shrink must lie in (0, 1)")
    T = V.T
    domain = list(range(T.n_simplices)) if simplices is None else sorted(int(i) for i in simplices)
    if simplices is None:
        bverts = T.boundary_vertex_ids
    else:
        bverts = boundary_vertices(T, domain)
    vmin = float(V.values[bverts].min())
    r = shrink * vmin
    if r <= 0:
        raise DegenerateSet(f"boundary vertex value {vmin:.3g} is not positive")
    low = [i for i in domain if V.values[T.simplices[i]].min() <= r]
    members = connected_component(T, low, T.origin_simplices())
    if not set(T.origin_simplices().tolist()) <= set(members):
        raise DegenerateSet("origin is not interior to the sublevel set")
    return SublevelSet(V, r, members, _level_segments(T, V.values, r, members))


def boundary_vertices(T: Triangulation, simplices) -> np.ndarray:
    """Vertices on facets owned by exactly one simplex of the subset."""
    keep = set(int(i) for i in simplices)
    count = {}
    for i in keep:
        ids = T.simplices[i].tolist()
        for drop in range(T.n + 1):
            key = tuple(sorted(ids[:drop] + ids[drop + 1:]))
            count[key] = count.get(key, 0) + 1
    out = set()
    for key, k in count.items():
        if k == 1:
            out.update(key)
    return np.array(sorted(out), dtype=np.int64)
