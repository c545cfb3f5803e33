"""Unit-sphere geometry: stereographic coordinates and point location.

Stereographic projection is taken from the north pole (0, 0, 1) onto the
equatorial plane, so the north pole maps to infinity, the south pole to 0 and
(1, 0, 0) to 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

ANGULAR_TOLERANCE = 1e-9
INF = complex(np.inf, 0.0)


def stereographic_project(p):
    """Map unit vector(s) to the extended complex plane (north pole -> inf)."""
    p = np.asarray(p, dtype=float)
    x, y, h = p[..., 0], p[..., 1], p[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        # the (1 + h) form avoids cancellation in the northern hemisphere
        z = np.where(h <= 0, (x + 1j * y) / (1 - h), (1 + h) / (x - 1j * y))
    z = np.where(np.isclose(h, 1.0, rtol=0, atol=1e-15) & (np.hypot(x, y) < 1e-15), INF, z)
    return z[()] if z.ndim == 0 else z


def inverse_stereographic(z):
    """Map extended complex value(s) back to the unit sphere."""
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape + (3,))
    inf = ~np.isfinite(z)
    zf = np.where(inf, 0, z)
    r2 = np.abs(zf) ** 2
    out[..., 0] = 2 * zf.real / (1 + r2)
    out[..., 1] = 2 * zf.imag / (1 + r2)
    out[..., 2] = (r2 - 1) / (r2 + 1)
    out[inf] = (0.0, 0.0, 1.0)
    return out


def to_spinor(p):
    """Homogeneous coordinates (s1, s2) with s1/s2 the stereographic image of ``p``."""
    p = np.asarray(p, dtype=float)
    x, y, h = p[..., 0], p[..., 1], p[..., 2]
    north = h > 0
    s1 = np.where(north, 1 + h, x + 1j * y)
    s2 = np.where(north, x - 1j * y, 1 - h)
    return np.stack([s1, s2], axis=-1)


def from_spinor(s):
    s = np.asarray(s, dtype=complex)
    s1, s2 = s[..., 0], s[..., 1]
    n1, n2 = np.abs(s1) ** 2, np.abs(s2) ** 2
    w = s1 * np.conj(s2)
    out = np.stack([2 * w.real, 2 * w.imag, n1 - n2], axis=-1) / (n1 + n2)[..., None]
    # renormalize away rounding so |p| = 1 to machine precision
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def spherical_area_element_weight(z):
    """Round-metric area density 4 / (1 + |z|^2)^2 in stereographic coordinates."""
    return 4.0 / (1.0 + np.abs(z) ** 2) ** 2


class BarycentricLocation(NamedTuple):
    triangle_id: int
    coords: tuple
    fallback: bool = False


@dataclass(frozen=True, eq=False)
class Locations:
    """Batched point-location result."""

    triangle_ids: np.ndarray
    coords: np.ndarray
    fallback: np.ndarray

    def __len__(self):
        return len(self.triangle_ids)

    def __getitem__(self, i):
        return BarycentricLocation(int(self.triangle_ids[i]), tuple(self.coords[i]), bool(self.fallback[i]))


class FlippedTriangleError(ValueError):
    pass


def triangle_orientations(points, triangles):
    """det(u0, u1, u2) for each spherical triangle (positive = counterclockwise outside)."""
    u = points[triangles]
    return np.einsum("ij,ij->i", u[:, 0], np.cross(u[:, 1], u[:, 2]))


class SphereLocator:
    """Point location in a bijective spherical triangulation.

    Candidates come from the triangles around the k nearest vertices (a KD-tree
    over vertex directions); the search widens when none contains the query.
    Barycentric coordinates are those of the query ray's intersection with the
    chord triangle.
    """

    def __init__(self, points, triangles, k=1):
        self.points = np.asarray(points, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        det = triangle_orientations(self.points, self.triangles)
        if not (np.all(det > 0) or np.all(det < 0)):
            raise FlippedTriangleError(
                f"{int(min(np.sum(det > 0), np.sum(det <= 0)))} flipped spherical triangle(s)"
            )
        self.orientation = 1.0 if det[0] > 0 else -1.0
        self.k = min(k, len(self.points))
        self.tree = cKDTree(self.points)
        flat = self.triangles.reshape(-1)
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=len(self.points))
        width = int(counts.max())
        table = np.full((len(self.points), width), -1, dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        table[flat[order], np.arange(len(flat)) - np.repeat(starts, counts)] = order // 3
        self.vertex_triangles = table
        a, b, c = (self.points[self.triangles[:, i]] for i in range(3))
        # edge-plane normals opposite each corner; q . n_k is proportional to the
        # k-th ray barycentric coordinate
        planes = np.stack([np.cross(b, c), np.cross(c, a), np.cross(a, b)], axis=1)
        self._planes = planes * self.orientation
        self._plane_norms = np.linalg.norm(planes, axis=2)

    def _pick(self, q, cand):
        """Best candidate per query: lowest triangle id among those containing it,
        else the one with the largest (negative) angular margin."""
        valid = cand >= 0
        safe = np.where(valid, cand, 0)
        raw = np.einsum("nk,nmjk->nmj", q, self._planes[safe])
        total = raw.sum(axis=-1)
        # sines of the angular distances to the three edge great circles
        margin = (raw / self._plane_norms[safe]).min(axis=-1)
        margin = np.where(valid & (total > 0), margin, -np.inf)
        inside = margin >= -ANGULAR_TOLERANCE
        ids = np.where(inside, safe, np.iinfo(np.int64).max)
        found = inside.any(axis=1)
        pick = np.where(found, ids.argmin(axis=1), margin.argmax(axis=1))
        rows = np.arange(len(q))
        chosen = raw[rows, pick]
        with np.errstate(divide="ignore", invalid="ignore"):
            bary = chosen / chosen.sum(axis=1, keepdims=True)
        bary = np.where(np.isfinite(bary), bary, 1.0 / 3.0)
        return safe[rows, pick], bary, found

    def _candidates(self, q, k):
        _, nn = self.tree.query(q, k=k)
        nn = np.asarray(nn).reshape(len(q), -1)
        cand = self.vertex_triangles[nn].reshape(len(q), -1)
        cand = np.sort(cand, axis=1)
        # drop duplicates so ties resolve on distinct ids
        dup = np.zeros_like(cand, dtype=bool)
        dup[:, 1:] = cand[:, 1:] == cand[:, :-1]
        return np.where(dup, -1, cand)

    def locate_many(self, queries):
        q = np.asarray(queries, dtype=float).reshape(-1, 3)
        q = q / np.linalg.norm(q, axis=1, keepdims=True)
        n = len(q)
        tri = np.zeros(n, dtype=np.int64)
        coords = np.zeros((n, 3))
        k = self.k
        todo = np.arange(n)
        while todo.size:
            t, b, found = self._pick(q[todo], self._candidates(q[todo], k))
            tri[todo[found]] = t[found]
            coords[todo[found]] = b[found]
            todo = todo[~found]
            if k >= len(self.points):
                break
            k = min(4 * k, len(self.points))
            if k > 64 and todo.size:
                break
        fallback = np.zeros(n, dtype=bool)
        if todo.size:
            # exhaustive scan over all triangles, chunked to bound memory
            per_chunk = max(1, 200_000 // len(self.triangles))
            for chunk in np.array_split(todo, -(-todo.size // per_chunk)):
                cand = np.broadcast_to(np.arange(len(self.triangles)), (len(chunk), len(self.triangles)))
                t, b, found = self._pick(q[chunk], cand)
                tri[chunk] = t
                coords[chunk] = b
                fallback[chunk] = ~found
        coords = np.clip(coords, 0.0, None)
        coords /= coords.sum(axis=1, keepdims=True)
        return Locations(tri, coords, fallback)

    def locate(self, q):
        return self.locate_many(np.atleast_2d(q))[0]


def build_locator(points, triangles):
    return SphereLocator(points, triangles)


def locate(locator, q):
    return locator.locate(q)


def embed(surface_mesh, loc):
    """Position on the flat surface triangle given by a location (single or batched)."""
    v = surface_mesh.vertices
    t = surface_mesh.triangles
    if isinstance(loc, Locations):
        corners = v[t[loc.triangle_ids]]
        return np.einsum("nk,nkd->nd", loc.coords, corners)
    b = np.asarray(loc.coords, dtype=float)
    return b @ v[t[loc.triangle_id]]
