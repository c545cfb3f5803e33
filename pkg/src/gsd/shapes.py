"""Synthetic genus-zero test surfaces."""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull

from .mesh import TriangleMesh, midpoint_subdivide, radial_projector

BUMP_WIDTH = 0.35
BUMP_HEIGHTS = (1.2, 1.4, 1.6)


def _outward_hull(points):
    """Convex-hull triangulation of points on a sphere, faces oriented outward."""
    hull = ConvexHull(points)
    tris = hull.simplices.copy()
    p = points[tris]
    normal = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    inward = np.einsum("ij,ij->i", normal, p.mean(axis=1)) < 0
    tris[inward] = tris[inward][:, ::-1]
    return tris


def icosahedron(radius=1.0):
    phi = (1 + 5**0.5) / 2
    v = []
    for a in (-1, 1):
        for b in (-phi, phi):
            v += [(0, a, b), (a, b, 0), (b, 0, a)]
    v = np.array(v, dtype=float)
    v *= radius / np.linalg.norm(v[0])
    return TriangleMesh(v, _outward_hull(v))


def gen_icosphere(subdivisions=3, radius=1.0):
    """Icosahedron with ``subdivisions`` rounds of midpoint splitting; F = 20 * 4**s."""
    if subdivisions < 0:
        raise ValueError("subdivisions must be >= 0")
    mesh = icosahedron(radius)
    proj = radial_projector(radius)
    for _ in range(subdivisions):
        mesh = midpoint_subdivide(mesh, proj)
    return mesh


def gen_geodesic_sphere(frequency, radius=1.0):
    """Frequency-n geodesic sphere: V = 10 n^2 + 2, F = 20 n^2.

    Each icosahedron face is cut into an n-by-n triangular grid before radial
    projection. frequency=10 gives the 1002-vertex sphere.
    """
    n = int(frequency)
    if n < 1:
        raise ValueError("frequency must be >= 1")
    ico = icosahedron(1.0)
    ij = [(i, j) for i in range(n + 1) for j in range(n + 1 - i)]
    index = {key: k for k, key in enumerate(ij)}
    bary = np.array([(n - i - j, i, j) for i, j in ij], dtype=float) / n
    local = []
    for i in range(n):
        for j in range(n - i):
            local.append((index[(i, j)], index[(i + 1, j)], index[(i, j + 1)]))
            if i + j < n - 1:
                local.append((index[(i + 1, j)], index[(i + 1, j + 1)], index[(i, j + 1)]))
    local = np.array(local)
    pts, tris = [], []
    for f, face in enumerate(ico.triangles):
        pts.append(bary @ ico.vertices[face])
        tris.append(local + f * len(ij))
    pts = np.vstack(pts)
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    _, first, inverse = np.unique(np.round(pts, 9), axis=0, return_index=True, return_inverse=True)
    # keep vertices in first-appearance order for reproducible numbering
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    verts = pts[first[order]] * radius
    return TriangleMesh(verts, rank[inverse.reshape(-1)][np.vstack(tris)])


def gen_random_sphere(n_points, seed=0, radius=1.0):
    """Uniform random points on the sphere, triangulated by their convex hull."""
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(n_points, 3))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    return TriangleMesh(p * radius, _outward_hull(p))


def sphere_mesh(resolution=3, radius=1.0):
    """Sphere by midpoint level (int) or geodesic frequency (``"f10"``)."""
    if isinstance(resolution, str) and resolution.startswith("f"):
        return gen_geodesic_sphere(int(resolution[1:]), radius)
    return gen_icosphere(int(resolution), radius)


def gen_ellipsoid(a, b, c, subdivisions=3):
    if min(a, b, c) <= 0:
        raise ValueError("semi-axes must be positive")
    base = sphere_mesh(subdivisions)
    return base.copy_with(vertices=base.vertices * np.array([a, b, c], dtype=float))


def mean_edge_length(mesh):
    return float(mesh.edge_lengths.mean())


def gen_noisy_sphere(subdivisions, noise_multiple, seed=0):
    """Unit sphere with Gaussian radial noise of std ``noise_multiple`` x mean edge length."""
    if noise_multiple < 0:
        raise ValueError("noise multiple must be nonnegative")
    base = sphere_mesh(subdivisions)
    if noise_multiple == 0:
        return base
    sigma = noise_multiple * mean_edge_length(base)
    rng = np.random.default_rng(seed)
    r = 1.0 + sigma * rng.standard_normal(base.n_vertices)
    return base.copy_with(vertices=base.vertices * r[:, None])


def bump_axes(theta):
    """Axes of the 1.2, 1.4 and 1.6 bumps; the first rotates from +y through -x to -y."""
    return np.array([[-np.sin(theta), np.cos(theta), 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def gen_three_bump(theta, subdivisions=3, width=BUMP_WIDTH, heights=BUMP_HEIGHTS):
    """Unit sphere with three Gaussian radial bumps of peak radius 1.2, 1.4, 1.6."""
    base = sphere_mesh(subdivisions)
    u = base.vertices / np.linalg.norm(base.vertices, axis=1, keepdims=True)
    r = np.ones(len(u))
    for axis, h in zip(bump_axes(theta), heights):
        ang = np.arccos(np.clip(u @ axis, -1.0, 1.0))
        r += (h - 1.0) * np.exp(-((ang / width) ** 2))
    return base.copy_with(vertices=u * r[:, None])
