"""Conformal maps from genus-zero meshes to the unit sphere.

The map is computed by conformalized mean-curvature flow: implicit
mean-curvature steps that keep the stiffness matrix of the input surface and
update only the mass matrix, renormalizing area and centroid every step. The
stiffness matrix is the cotangent Laplacian of the intrinsic Delaunay
triangulation, whose weights are nonnegative even on noisy meshes.
"""

from __future__ import annotations

import logging
import warnings
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TriangleMesh, reflect, require_valid
from .mobius import CenteringError, MobiusTransform, apply, center_vertices, compose
from .sphere import SphereLocator, triangle_orientations

log = logging.getLogger(__name__)


class FlatteningError(RuntimeError):
    pass


class QualityWarning(UserWarning):
    pass


@dataclass
class FlattenOptions:
    time_step: float = 1.0
    tol: float = 1e-7
    max_steps: int = 2000
    stall_window: int = 25
    min_step_ratio: float = 1.0 / 1024
    repair_passes: int = 20
    qc_warn: float | None = 1.10
    qc_fail: float | None = 1.30
    center: bool = True
    detect_sphere: bool = True
    # radial projection about the centroid when the flow degenerates on a
    # star-shaped mesh; bijective but not conformal, so off by default
    radial_fallback: bool = False


@dataclass
class QcReport:
    per_triangle: np.ndarray
    mean: float
    max: float
    area_weighted_mean: float

    def to_dict(self):
        return {"mean": self.mean, "max": self.max, "area_weighted_mean": self.area_weighted_mean}


@dataclass(eq=False)
class SphericalParameterization:
    source: TriangleMesh
    sphere_positions: np.ndarray
    centering: MobiusTransform
    quality: QcReport | None = None
    steps: int = 0
    reflected: bool = False
    method: str = "flow"
    _locator: SphereLocator | None = field(default=None, repr=False)

    @property
    def locator(self):
        if self._locator is None:
            self._locator = SphereLocator(self.sphere_positions, self.source.triangles)
        return self._locator

    @property
    def spherical_mesh(self):
        return TriangleMesh(self.sphere_positions, self.source.triangles)

    def transformed(self, m):
        """Same source, sphere positions moved by Möbius transform ``m``."""
        return replace(
            self,
            sphere_positions=apply(m, self.sphere_positions),
            centering=compose(m, self.centering),
            _locator=None,
        )

    def point_on_sphere(self, triangle_id, coords):
        """Spherical image of a surface point given in barycentric coordinates."""
        p = np.asarray(coords) @ self.sphere_positions[self.source.triangles[triangle_id]]
        return p / np.linalg.norm(p)


# ---------------------------------------------------------------------------
# intrinsic Delaunay Laplacian


def _cot_from_lengths(l_opp, p, q):
    """Cotangent of the angle opposite ``l_opp`` in a triangle with sides p, q, l_opp."""
    s = 0.5 * (p + q + l_opp)
    area = np.sqrt(np.maximum(s * (s - p) * (s - q) * (s - l_opp), 0.0))
    return (p * p + q * q - l_opp * l_opp) / (4.0 * np.maximum(area, 1e-300))


def intrinsic_delaunay(mesh, max_flips=None):
    """Flip edges intrinsically until every edge is locally Delaunay.

    Returns (triangles, halfedge_lengths) for the intrinsic triangulation; the
    vertex set and the metric are unchanged. Half-edge 3f+k runs from corner k
    to corner k+1 of triangle f.
    """
    tri = mesh.triangles.copy()
    v = mesh.vertices
    nf = len(tri)
    length = np.linalg.norm(v[tri[:, [1, 2, 0]]] - v[tri], axis=2).reshape(-1)
    heads = tri.reshape(-1)
    tails = tri[:, [1, 2, 0]].reshape(-1)
    lookup = {(int(a), int(b)): h for h, (a, b) in enumerate(zip(heads, tails))}
    twin = np.array([lookup[(int(b), int(a))] for a, b in zip(heads, tails)])
    tri = tri.tolist()
    length = length.tolist()
    twin = twin.tolist()

    def corner_cot(h):
        f, k = divmod(h, 3)
        return _cot_from_lengths(length[h], length[3 * f + (k + 1) % 3], length[3 * f + (k + 2) % 3])

    def is_delaunay(h):
        return corner_cot(h) + corner_cot(twin[h]) >= -1e-12

    queue = deque(range(3 * nf))
    queued = [True] * (3 * nf)
    max_flips = 50 * nf if max_flips is None else max_flips
    flips = 0
    while queue:
        h = queue.popleft()
        queued[h] = False
        g = twin[h]
        if h > g and queued[g]:
            continue
        if is_delaunay(h):
            continue
        if flips >= max_flips:
            raise FlatteningError("intrinsic Delaunay flipping did not terminate")
        f, k = divmod(h, 3)
        f2, k2 = divmod(g, 3)
        a, b, c = tri[f][k], tri[f][(k + 1) % 3], tri[f][(k + 2) % 3]
        d = tri[f2][(k2 + 2) % 3]
        h_bc, h_ca = 3 * f + (k + 1) % 3, 3 * f + (k + 2) % 3
        h_ad, h_db = 3 * f2 + (k2 + 1) % 3, 3 * f2 + (k2 + 2) % 3
        l_ab, l_bc, l_ca, l_ad, l_db = length[h], length[h_bc], length[h_ca], length[h_ad], length[h_db]
        t_bc, t_ca, t_ad, t_db = twin[h_bc], twin[h_ca], twin[h_ad], twin[h_db]
        # unfold the quad into the plane with a at the origin and b on the x-axis
        cx = (l_ab * l_ab + l_ca * l_ca - l_bc * l_bc) / (2 * l_ab)
        cy = np.sqrt(max(l_ca * l_ca - cx * cx, 0.0))
        dx = (l_ab * l_ab + l_ad * l_ad - l_db * l_db) / (2 * l_ab)
        dy = -np.sqrt(max(l_ad * l_ad - dx * dx, 0.0))
        l_cd = float(np.hypot(cx - dx, cy - dy))
        # new faces (a, d, c) and (d, b, c)
        tri[f] = [a, d, c]
        tri[f2] = [d, b, c]
        new = {
            3 * f: (l_ad, t_ad),
            3 * f + 1: (l_cd, 3 * f2 + 2),
            3 * f + 2: (l_ca, t_ca),
            3 * f2: (l_db, t_db),
            3 * f2 + 1: (l_bc, t_bc),
            3 * f2 + 2: (l_cd, 3 * f + 1),
        }
        for he, (ln, tw) in new.items():
            length[he] = ln
            twin[he] = tw
            twin[tw] = he
        flips += 1
        for he in (3 * f, 3 * f + 2, 3 * f2, 3 * f2 + 1):
            if not queued[he]:
                queued[he] = True
                queue.append(he)
    return np.array(tri, dtype=np.int64), np.array(length).reshape(-1, 3), flips


def cotan_stiffness(triangles, halfedge_lengths, n_vertices):
    """Positive semidefinite cotangent stiffness matrix from per-half-edge lengths."""
    L = halfedge_lengths
    rows, cols, vals = [], [], []
    for k in range(3):
        cot = _cot_from_lengths(L[:, k], L[:, (k + 1) % 3], L[:, (k + 2) % 3])
        i, j = triangles[:, k], triangles[:, (k + 1) % 3]
        rows += [i, j]
        cols += [j, i]
        vals += [0.5 * cot, 0.5 * cot]
    W = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_vertices, n_vertices)
    ).tocsr()
    return (sp.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()


# ---------------------------------------------------------------------------
# flow


def _lumped_mass(v, t):
    cross = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    area = 0.5 * np.linalg.norm(cross, axis=1)
    return np.bincount(t.reshape(-1), weights=np.repeat(area / 3, 3), minlength=len(v)), area.sum()


def _normalize(v, t):
    mass, area = _lumped_mass(v, t)
    c = mass @ v / mass.sum()
    return (v - c) * np.sqrt(4 * np.pi / area)


def _fit_sphere(v):
    """Algebraic least-squares sphere fit; returns (center, radius, relative radial spread)."""
    A = np.hstack([2 * v, np.ones((len(v), 1))])
    sol = np.linalg.lstsq(A, np.einsum("ij,ij->i", v, v), rcond=None)[0]
    center = sol[:3]
    r = np.linalg.norm(v - center, axis=1)
    return center, r.mean(), float(np.ptp(r) / r.mean())


def _centered(u, tol=1e-10):
    return apply(center_vertices(u, tol=tol), u)


def _align_rotation(w, ref):
    """Rotate ``w`` onto ``ref`` in the least-squares sense (Kabsch)."""
    U, _, Vt = np.linalg.svd(w.T @ ref)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return w @ (U @ D @ Vt)


def _flow(mesh, opts):
    """Run the flow; returns (sphere positions, steps taken).

    Progress is measured modulo the Möbius group: each iterate is projected to
    the sphere, centered, and rotated onto its predecessor. The flow stops when
    that motion drops below ``tol`` or stops shrinking over ``stall_window``
    steps (the discrete flow keeps creeping rather than reaching a fixed point).
    """
    t = mesh.triangles
    itri, ilen, nflips = intrinsic_delaunay(mesh)
    log.debug("intrinsic Delaunay: %d flips", nflips)
    v = _normalize(mesh.vertices, t)
    # rescale intrinsic lengths to match the area normalization
    scale = np.sqrt(4 * np.pi / mesh.triangle_areas.sum())
    K = cotan_stiffness(itri, ilen * scale, mesh.n_vertices)
    sign = 1.0 if mesh.signed_volume() >= 0 else -1.0

    def n_flipped(x):
        return int(np.sum(sign * triangle_orientations(x, t) <= 0))

    dt = opts.time_step
    flips = n_flipped(v)
    prev = None
    history = []
    step = 0
    for step in range(1, opts.max_steps + 1):
        mass, _ = _lumped_mass(v, t)
        while True:
            lu = spla.splu((sp.diags(mass) + dt * K).tocsc())
            cand = _normalize(lu.solve(mass[:, None] * v), t)
            n = n_flipped(cand)
            # halve the step while it creates new flips in the spherical image
            if n <= flips or dt <= opts.time_step * opts.min_step_ratio:
                break
            dt *= 0.5
        v, flips = cand, n
        u = v / np.linalg.norm(v, axis=1, keepdims=True)
        if np.linalg.norm(u.mean(axis=0)) > 0.9:
            raise FlatteningError(f"flow degenerated at step {step}: image concentrated at a point")
        try:
            w = _centered(u)
        except CenteringError as exc:
            raise FlatteningError(f"flow degenerated at step {step}: {exc}") from exc
        if prev is not None:
            motion = float(np.abs(_align_rotation(w, prev) - prev).max())
            history.append(motion)
            if motion < opts.tol:
                break
            n = opts.stall_window
            if len(history) > n and motion > 0.5 * history[-n - 1]:
                log.info("flow stalled at step %d (motion %.2e)", step, motion)
                break
        prev = w
    else:
        log.info("flow stopped at the step budget (%d)", opts.max_steps)
    return v / np.linalg.norm(v, axis=1, keepdims=True), step


def _radial(mesh):
    """Central projection from the area-weighted centroid."""
    mass, _ = _lumped_mass(mesh.vertices, mesh.triangles)
    d = mesh.vertices - mass @ mesh.vertices / mass.sum()
    u = d / np.linalg.norm(d, axis=1, keepdims=True)
    if np.any(triangle_orientations(u, mesh.triangles) * np.sign(mesh.signed_volume()) <= 0):
        raise FlatteningError("flow degenerated and the mesh is not star-shaped about its centroid")
    return u


def _repair_flips(u, mesh, passes, sweeps=10):
    """Untangle flipped spherical triangles by local smoothing.

    Vertices of flipped triangles and a surrounding ring are moved to the
    normalized average of their neighbours while everything else stays
    fixed; the ring widens by one each pass.
    """
    t = mesh.triangles
    n = len(u)
    rows = np.concatenate([t.reshape(-1), t[:, [1, 2, 0]].reshape(-1)])
    cols = np.concatenate([t[:, [1, 2, 0]].reshape(-1), t.reshape(-1)])
    adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    adj.data[:] = 1.0
    u = u.copy()
    for ring in range(1, passes + 1):
        bad = triangle_orientations(u, t) <= 0
        if not bad.any():
            return u, 0
        region = np.zeros(n, dtype=bool)
        region[t[bad].reshape(-1)] = True
        for _ in range(ring):
            region |= (adj @ region.astype(float)) > 0
        verts = np.flatnonzero(region)
        sub = adj[verts]
        for _ in range(sweeps):
            avg = sub @ u
            u[verts] = avg / np.linalg.norm(avg, axis=1, keepdims=True)
    return u, int(np.sum(triangle_orientations(u, t) <= 0))


def conformal_to_sphere(mesh, opts=None):
    """Discrete conformal map of a genus-zero mesh onto the unit sphere, Möbius-centered."""
    opts = opts or FlattenOptions()
    require_valid(mesh)
    center, radius, spread = _fit_sphere(mesh.vertices)
    steps = 0
    method = "sphere"
    if opts.detect_sphere and spread <= 1e-9:
        # a mesh inscribed in a round sphere is its own conformal image
        u = (mesh.vertices - center) / radius
        u /= np.linalg.norm(u, axis=1, keepdims=True)
    else:
        try:
            u, steps = _flow(mesh, opts)
            method = "flow"
        except FlatteningError as exc:
            if not opts.radial_fallback:
                raise
            log.warning("%s; falling back to radial projection", exc)
            u = _radial(mesh)
            method = "radial"
        if mesh.signed_volume() < 0:
            u = -u
    # centering maps great circles to small circles, so a barely positive
    # triangle can tip over; alternate repair and centering until both hold
    centering = MobiusTransform.identity()
    for _ in range(5):
        n_flipped = int(np.sum(triangle_orientations(u, mesh.triangles) <= 0))
        if n_flipped:
            u, n_flipped = _repair_flips(u, mesh, opts.repair_passes)
        if n_flipped:
            raise FlatteningError(f"{n_flipped} flipped spherical triangle(s) after repair")
        if not opts.center:
            break
        m = center_vertices(u)
        moved = apply(m, u)
        if np.all(triangle_orientations(moved, mesh.triangles) > 0):
            u, centering = moved, compose(m, centering)
            break
        u, centering = moved, compose(m, centering)
    else:
        raise FlatteningError("could not obtain a centered bijective spherical image")
    param = SphericalParameterization(mesh, u, centering, steps=steps, method=method)
    param.quality = qc_distortion(param)
    _gate(param.quality, opts)
    return param


def _gate(q, opts):
    value = q.area_weighted_mean
    if opts.qc_fail is not None and value > opts.qc_fail:
        raise FlatteningError(f"area-weighted mean QC error {value:.4f} exceeds {opts.qc_fail}")
    if opts.qc_warn is not None and value > opts.qc_warn:
        warnings.warn(f"area-weighted mean QC error {value:.4f} exceeds {opts.qc_warn}", QualityWarning)


def reflect_parameterization(param):
    """Parameterization of reflect(source): mirror the spherical image as well.

    Mirroring both surface and sphere composes two orientation reversals, so
    the result is again an orientation-preserving conformal map.
    """
    mirror = np.array([1.0, 1.0, -1.0])
    u = param.sphere_positions * mirror
    mesh = reflect(param.source)
    (a, b), (c, d) = np.conj(param.centering.matrix)
    # mirroring acts as z -> 1 / conj(z) in stereographic coordinates
    centering = MobiusTransform(np.array([[d, c], [b, a]]))
    out = SphericalParameterization(
        mesh, u, centering, steps=param.steps, reflected=not param.reflected, method=param.method
    )
    out.quality = qc_distortion(out)
    return out


# ---------------------------------------------------------------------------
# quality


def _local_frames(x, t):
    e1 = x[t[:, 1]] - x[t[:, 0]]
    e2 = x[t[:, 2]] - x[t[:, 0]]
    l1 = np.linalg.norm(e1, axis=1)
    h = e1 / l1[:, None]
    along = np.einsum("ij,ij->i", e2, h)
    across = np.linalg.norm(np.cross(h, e2), axis=1)
    S = np.zeros((len(t), 2, 2))
    S[:, 0, 0] = l1
    S[:, 0, 1] = along
    S[:, 1, 1] = across
    return S


def affine_qc(source_tri, target_tri):
    """Singular value ratio of the affine map between two triangles, each (n, 3, 3) or (3, 3)."""
    src = np.asarray(source_tri, dtype=float).reshape(-1, 3, 3)
    dst = np.asarray(target_tri, dtype=float).reshape(-1, 3, 3)
    idx = np.arange(3)[None, :].repeat(len(src), 0)
    t = idx + 3 * np.arange(len(src))[:, None]
    S = _local_frames(src.reshape(-1, 3), t)
    T = _local_frames(dst.reshape(-1, 3), t)
    J = T @ np.linalg.inv(S)
    # batched 2x2 singular values; the closed form via trace and det loses half the digits near 1
    sv = np.linalg.svd(J, compute_uv=False)
    if np.any(sv[:, 1] <= 0):
        raise FlatteningError("degenerate spherical triangle")
    return sv[:, 0] / sv[:, 1]


def qc_distortion(param):
    """Per-triangle quasi-conformal error of source triangle -> chord spherical triangle."""
    t = param.source.triangles
    q = affine_qc(param.source.vertices[t], param.sphere_positions[t])
    q = np.maximum(q, 1.0)
    area = param.source.triangle_areas
    return QcReport(q, float(q.mean()), float(q.max()), float(q @ area / area.sum()))
