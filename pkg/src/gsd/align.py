"""Distance computation: seeded Möbius alignment of two spherical parameterizations.

Each surface gets a principal-axis frame; its six extremal points on the
surface give 24 orientation-preserving axis assignments and hence 24 initial
Möbius transforms. Steepest descent on the symmetric distortion energy over a
six-parameter chart refines each seed and the lowest energy is the distance.
"""

from __future__ import annotations

import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .energy import CorrespondenceError, symmetric_distortion, transfer
from .flatten import FlatteningError, FlattenOptions, conformal_to_sphere, reflect_parameterization
from .mesh import normalize_area, require_valid
from .mobius import MobiusChart, MobiusTransform, from_three_points, perturb
from .sphere import Locations

log = logging.getLogger(__name__)

CORR_HEADER = "# gsd-corr v1"
TIE_TOL = 1e-12


class AlignmentError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# principal-axis frames


@dataclass(frozen=True, eq=False)
class AxisFrame:
    """Principal axes (rows, descending variance) and extremal points x+, x-, y+, y-, z+, z-."""

    centroid: np.ndarray
    axes: np.ndarray
    eigenvalues: np.ndarray
    points: np.ndarray
    triangle_ids: np.ndarray
    coords: np.ndarray
    flagged: np.ndarray


def _tie_break(vecs, vals, tol):
    """Replace eigenvector groups with repeated eigenvalues by the world axes closest to them."""
    vecs = vecs.copy()
    scale = max(abs(vals[0]), 1e-300)
    start = 0
    while start < 3:
        stop = start + 1
        while stop < 3 and abs(vals[stop - 1] - vals[stop]) <= tol * scale:
            stop += 1
        if stop - start > 1:
            Q = vecs[:, start:stop]
            chosen, sources = [], []
            for _ in range(stop - start):
                best = None
                for i in range(3):
                    if i in sources:
                        continue
                    w = Q @ (Q.T @ np.eye(3)[i])
                    for c in chosen:
                        w = w - (w @ c) * c
                    n = np.linalg.norm(w)
                    if best is None or n > best[0] + 1e-12:
                        best = (n, i, w)
                chosen.append(best[2] / best[0])
                sources.append(best[1])
            order = np.argsort(sources)
            vecs[:, start:stop] = np.array(chosen)[order].T
        start = stop
    return vecs


def _ray_hits(origin, direction, tris):
    """Möller-Trumbore against every triangle; returns (t, u, v) with t = inf on a miss."""
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    e1, e2 = b - a, c - a
    pv = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, pv)
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tv = origin - a
    u = np.einsum("ij,ij->i", tv, pv) * inv
    qv = np.cross(tv, e1)
    v = (qv @ direction) * inv
    t = np.einsum("ij,ij->i", e2, qv) * inv
    eps = 1e-12
    hit = ok & (u >= -eps) & (v >= -eps) & (u + v <= 1 + eps) & (t > 0)
    return np.where(hit, t, np.inf), u, v


def ellipsoid_axes(mesh, tie_tol=1e-9):
    """Area-weighted principal axes of the surface and the six ray-cast extremal points."""
    v = mesh.vertices
    t = mesh.triangles
    area = mesh.triangle_areas
    g = v[t].mean(axis=1)
    c = area @ g / area.sum()
    d = g - c
    cov = (d * area[:, None]).T @ d / area.sum()
    vals, vecs = np.linalg.eigh(cov)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    vecs = _tie_break(vecs, vals, tie_tol)
    for k in range(3):
        if vecs[np.argmax(np.abs(vecs[:, k])), k] < 0:
            vecs[:, k] *= -1
    if np.linalg.det(vecs) < 0:
        vecs[:, 2] *= -1
    axes = vecs.T
    tris = v[t]
    points, tids, coords, flagged = [], [], [], []
    for axis in axes:
        for sign in (1.0, -1.0):
            direction = sign * axis
            hit_t, u, w = _ray_hits(c, direction, tris)
            f = int(np.argmin(hit_t))
            if np.isfinite(hit_t[f]):
                b = np.array([1 - u[f] - w[f], u[f], w[f]])
                b = np.clip(b, 0, None)
                b /= b.sum()
                flag = False
            else:
                # no intersection: nearest vertex to the ray
                rel = v - c
                along = np.maximum(rel @ direction, 0.0)
                i = int(np.argmin(np.linalg.norm(rel - along[:, None] * direction, axis=1)))
                f = int(mesh.vertex_triangles[i, 0])
                b = (t[f] == i).astype(float)
                flag = True
            points.append(b @ tris[f])
            tids.append(f)
            coords.append(b)
            flagged.append(flag)
    return AxisFrame(c, axes, vals, np.array(points), np.array(tids), np.array(coords), np.array(flagged))


# ---------------------------------------------------------------------------
# seeds


def axis_assignments():
    """The 24 rotations mapping the signed axes of one frame onto another, as index pairs.

    Each entry lists, for x+ and y+ of the first frame, the index into
    (x+, x-, y+, y-, z+, z-) of its image; z+ follows from orientation.
    """
    out = []
    basis = np.eye(3)
    for ix in range(6):
        ex = basis[ix // 2] * (1 if ix % 2 == 0 else -1)
        for iy in range(6):
            if iy // 2 == ix // 2:
                continue
            ey = basis[iy // 2] * (1 if iy % 2 == 0 else -1)
            ez = np.cross(ex, ey)
            k = int(np.argmax(np.abs(ez)))
            iz = 2 * k + (0 if ez[k] > 0 else 1)
            out.append((ix, iy, iz))
    return out


def _sphere_points(frame, param):
    return np.array([param.point_on_sphere(f, b) for f, b in zip(frame.triangle_ids, frame.coords)])


def initial_seeds(frame1, frame2, param1, param2):
    """24 transforms sending the spherical images of x+, y+, z+ of F1 to an assignment on F2."""
    p = _sphere_points(frame1, param1)
    q = _sphere_points(frame2, param2)
    return [from_three_points(p[0], p[2], p[4], q[ix], q[iy], q[iz]) for ix, iy, iz in axis_assignments()]


# ---------------------------------------------------------------------------
# descent


@dataclass
class DescentOptions:
    method: str = "bfgs"
    fd_step: float = 1e-5
    armijo: float = 1e-4
    shrink: float = 0.5
    max_halvings: int = 30
    initial_step: float = 0.1
    grad_tol: float = 1e-6
    rel_tol: float = 1e-9
    stall_iters: int = 3
    max_iter: int = 500
    rebase_at: float = 0.5


@dataclass(eq=False)
class DescentResult:
    mobius: MobiusTransform
    energy: object
    iterations: int
    converged: bool
    status: str
    history: list = field(default_factory=list)
    initial_energy: float = float("nan")


def energy_at(param1, param2, m):
    return symmetric_distortion(transfer(param1, param2, m))


def _safe_energy(param1, param2, m):
    try:
        return energy_at(param1, param2, m).e_sd
    except (CorrespondenceError, FloatingPointError):
        return np.inf


def fd_gradient(fun, x, h=1e-5):
    """Central finite-difference gradient of ``fun`` at ``x``."""
    g = np.zeros(len(x))
    for k in range(len(x)):
        e = np.zeros(len(x))
        e[k] = h
        g[k] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def _chart_energy(param1, param2, chart):
    def fun(offset):
        return _safe_energy(param1, param2, perturb(chart, offset))

    return fun


def descent_gradient(param1, param2, m, opts=None):
    """The gradient ``minimize`` uses at ``m``: central differences in the chart around it."""
    opts = opts or DescentOptions()
    return fd_gradient(_chart_energy(param1, param2, MobiusChart(m)), np.zeros(6), opts.fd_step)


def minimize(param1, param2, seed, opts=None):
    """Descent of the symmetric distortion energy over the Möbius chart around ``seed``.

    ``method="steepest"`` steps along the normalized negative gradient;
    ``"bfgs"`` preconditions it with a quasi-Newton inverse Hessian. Either way
    the step is found by Armijo backtracking, the next trial length is twice
    the last accepted one, and every accepted step strictly lowers the energy.
    The chart is re-centered once the offset grows past ``rebase_at``.
    """
    opts = opts or DescentOptions()
    if opts.method not in ("bfgs", "steepest"):
        raise ValueError(f"unknown descent method {opts.method!r}")
    chart = MobiusChart(seed)
    x = np.zeros(6)
    e0 = energy_at(param1, param2, seed).e_sd
    history = [e0]
    H = np.eye(6)
    g = None
    trial = opts.initial_step
    status, converged = "max_iter", False
    it = 0
    fun = _chart_energy(param1, param2, chart)

    for it in range(1, opts.max_iter + 1):
        current = history[-1]
        if g is None:
            g = fd_gradient(fun, x, opts.fd_step)
        gnorm = float(np.linalg.norm(g))
        if not np.isfinite(gnorm):
            status = "nonfinite_gradient"
            break
        if gnorm < opts.grad_tol * (1 + current):
            status, converged = "gradient", True
            break
        d = -H @ g if opts.method == "bfgs" else -g
        slope = float(g @ d)
        if slope >= 0:
            H = np.eye(6)
            d, slope = -g, -gnorm**2
        d_unit = d / np.linalg.norm(d)
        slope /= np.linalg.norm(d)
        step = trial
        accepted = None
        for _ in range(opts.max_halvings + 1):
            value = fun(x + step * d_unit)
            # strict decrease as well: below rounding the Armijo term no longer separates values
            if value < current and value <= current + opts.armijo * step * slope:
                accepted = value
                break
            step *= opts.shrink
        if accepted is None:
            status = "line_search"
            break
        s_vec = step * d_unit
        x = x + s_vec
        history.append(accepted)
        trial = 2 * step
        if np.linalg.norm(x) > opts.rebase_at:
            chart = MobiusChart(perturb(chart, x))
            fun = _chart_energy(param1, param2, chart)
            x = np.zeros(6)
            H = np.eye(6)
            g = None
        else:
            g_new = fd_gradient(fun, x, opts.fd_step)
            y = g_new - g
            sy = float(s_vec @ y)
            if opts.method == "bfgs" and sy > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y):
                rho = 1.0 / sy
                V = np.eye(6) - rho * np.outer(s_vec, y)
                H = V @ H @ V.T + rho * np.outer(s_vec, s_vec)
            g = g_new
        k = opts.stall_iters
        if len(history) > k and history[-k - 1] - history[-1] < opts.rel_tol * history[-k - 1]:
            status, converged = "stalled", True
            break
    # a line-search failure after progress is the usual end of a finite-difference descent
    if status == "line_search" and len(history) > 1:
        converged = True
    best = perturb(chart, x)
    return DescentResult(best, energy_at(param1, param2, best), it, converged, status, history, e0)


# ---------------------------------------------------------------------------
# distance


@dataclass
class DsdOptions:
    normalize: bool = False
    allow_reflection: bool = False
    seeds: int | None = None
    threads: int = 1
    flatten: FlattenOptions = field(default_factory=FlattenOptions)
    descent: DescentOptions = field(default_factory=DescentOptions)


@dataclass
class SeedRecord:
    id: int
    initial_energy: float
    energy: float
    iters: int
    converged: bool
    status: str

    def to_dict(self):
        return {"id": self.id, "energy": self.energy, "iters": self.iters, "converged": self.converged}


@dataclass(eq=False)
class DistanceResult:
    d_sd: float
    best_mobius: MobiusTransform
    orientation_reversed: bool
    per_seed: list
    energy: object
    correspondence: object
    best_seed: int = 0

    @property
    def flagged_vertices(self):
        return int(self.energy.flagged_forward + self.energy.flagged_backward)

    def to_dict(self):
        return {
            "d_sd": self.d_sd,
            "orientation_reversed": self.orientation_reversed,
            "mobius": self.best_mobius.to_list(),
            "seeds": [s.to_dict() for s in self.per_seed],
            "flagged_vertices": self.flagged_vertices,
        }

    def to_json(self, indent=None):
        return json.dumps(self.to_dict(), indent=indent)


@dataclass(eq=False)
class Flattened:
    """A parameterization with its frame, plus the mirrored pair when needed."""

    param: object
    frame: AxisFrame
    mirrored: object = None
    mirrored_frame: AxisFrame | None = None

    def reflected(self):
        if self.mirrored is None:
            self.mirrored = reflect_parameterization(self.param)
            self.mirrored_frame = ellipsoid_axes(self.mirrored.source)
        return self.mirrored, self.mirrored_frame


def prepare(mesh, opts=None):
    opts = opts or DsdOptions()
    require_valid(mesh)
    if opts.normalize:
        mesh = normalize_area(mesh)
    param = conformal_to_sphere(mesh, opts.flatten)
    return Flattened(param, ellipsoid_axes(mesh))


def _select(seeds, param1, param2, limit):
    """Indices of the seeds to descend from: all, or the ``limit`` lowest initial energies."""
    initial = [_safe_energy(param1, param2, m) for m in seeds]
    if limit is None or limit >= len(seeds):
        return list(range(len(seeds))), initial
    order = sorted(range(len(seeds)), key=lambda i: (initial[i], i))
    return sorted(order[:limit]), initial


def dsd_prepared(f1, f2, opts=None):
    """Distance between two prepared surfaces (see ``prepare``)."""
    opts = opts or DsdOptions()
    runs = [(f1.param, f1.frame, False, 0)]
    if opts.allow_reflection:
        p, fr = f1.reflected()
        runs.append((p, fr, True, 24))
    tasks = []
    for param1, frame1, mirrored, offset in runs:
        seeds = initial_seeds(frame1, f2.frame, param1, f2.param)
        limit = None if opts.seeds is None else max(1, -(-opts.seeds // len(runs)))
        chosen, _ = _select(seeds, param1, f2.param, limit)
        tasks += [(offset + i, param1, seeds[i], mirrored) for i in chosen]

    def run(task):
        sid, param1, seed, mirrored = task
        return sid, param1, mirrored, minimize(param1, f2.param, seed, opts.descent)

    if opts.threads > 1:
        with ThreadPoolExecutor(opts.threads) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]
    records = [
        SeedRecord(sid, r.initial_energy, r.energy.e_sd, r.iterations, r.converged, r.status)
        for sid, _, _, r in results
    ]
    if not any(np.isfinite(r.energy) for r in records):
        raise AlignmentError("every seed failed")
    best = min(range(len(results)), key=lambda i: (records[i].energy, records[i].id))
    # lexicographically first seed among equal minima
    low = records[best].energy
    best = min((i for i in range(len(records)) if records[i].energy <= low + TIE_TOL), key=lambda i: records[i].id)
    sid, param1, mirrored, r = results[best]
    corr = transfer(param1, f2.param, r.mobius)
    return DistanceResult(r.energy.e_sd, r.mobius, mirrored, records, r.energy, corr, sid)


def dsd(mesh1, mesh2, opts=None):
    """Symmetric distortion distance between two genus-zero meshes."""
    opts = opts or DsdOptions()
    return dsd_prepared(prepare(mesh1, opts), prepare(mesh2, opts), opts)


# ---------------------------------------------------------------------------
# correspondence export


def _original_locations(loc, mirrored):
    if not mirrored:
        return loc
    # reflect() reverses each triangle, so corner k of the mirror is corner 2-k
    return Locations(loc.triangle_ids, loc.coords[:, ::-1].copy(), loc.fallback)


def write_correspondence(result):
    """Per-vertex (triangle, b0, b1, b2) tables for both directions, in the original meshes' numbering."""
    corr = result.correspondence
    lines = [CORR_HEADER, f"# orientation_reversed {int(result.orientation_reversed)}"]
    for name, loc in (
        ("forward", corr.forward),
        ("backward", _original_locations(corr.backward, result.orientation_reversed)),
    ):
        lines.append(f"{name} {len(loc)}")
        for tid, b in zip(loc.triangle_ids, loc.coords):
            lines.append(f"{int(tid)} {b[0]:.9g} {b[1]:.9g} {b[2]:.9g}")
    return "\n".join(lines) + "\n"


def read_correspondence(text):
    """Parse ``write_correspondence`` output into {"forward": Locations, "backward": Locations}."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != CORR_HEADER:
        raise ValueError("missing correspondence header")
    out = {}
    i = 1
    while i < len(lines):
        if lines[i].startswith("#"):
            i += 1
            continue
        name, count = lines[i].split()
        rows = np.array([ln.split() for ln in lines[i + 1 : i + 1 + int(count)]], dtype=float).reshape(-1, 4)
        out[name] = Locations(rows[:, 0].astype(np.int64), rows[:, 1:], np.zeros(len(rows), dtype=bool))
        i += 1 + int(count)
    return out


# ---------------------------------------------------------------------------
# matrices


@dataclass(eq=False)
class MatrixResult:
    matrix: np.ndarray
    pairs: dict
    errors: dict


def distance_matrix(meshes, opts=None):
    """Pairwise distances, each unordered pair computed once; failed pairs are NaN with an error."""
    opts = opts or DsdOptions()
    n = len(meshes)
    D = np.zeros((n, n))
    errors = {}
    pairs = {}
    prepared = []
    for i, mesh in enumerate(meshes):
        try:
            prepared.append(prepare(mesh, opts))
        except (FlatteningError, ValueError, RuntimeError) as exc:
            prepared.append(None)
            errors[(i, i)] = str(exc)
            D[i, i] = np.nan
    inner = DsdOptions(opts.normalize, opts.allow_reflection, opts.seeds, 1, opts.flatten, opts.descent)
    todo = [(i, j) for i, j in itertools.combinations(range(n), 2)]

    def run(pair):
        i, j = pair
        if prepared[i] is None or prepared[j] is None:
            return pair, None, "surface failed to flatten"
        try:
            return pair, dsd_prepared(prepared[i], prepared[j], inner), None
        except (AlignmentError, CorrespondenceError, FlatteningError, ValueError) as exc:
            return pair, None, str(exc)

    if opts.threads > 1:
        with ThreadPoolExecutor(opts.threads) as pool:
            results = list(pool.map(run, todo))
    else:
        results = [run(p) for p in todo]
    for (i, j), res, err in results:
        if res is None:
            D[i, j] = D[j, i] = np.nan
            errors[(i, j)] = err
        else:
            D[i, j] = D[j, i] = res.d_sd
            pairs[(i, j)] = res.to_dict()
    return MatrixResult(D, pairs, errors)


@dataclass
class AuditReport:
    max_symmetry_violation: float
    max_triangle_violation: float
    max_relative_triangle_violation: float
    negative_entries: int
    max_diagonal: float
    worst_triple: tuple | None

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def metric_audit(matrix):
    """Check the metric axioms on a distance matrix (NaN entries are skipped).

    The triangle violation for an ordered triple (i, j, k) is
    d(i, k) - d(i, j) - d(j, k); the relative version divides by d(i, k).
    """
    D = np.asarray(matrix, dtype=float)
    n = len(D)
    if n == 0:
        return AuditReport(0.0, 0.0, 0.0, 0, 0.0, None)
    sym = np.nanmax(np.abs(D - D.T)) if n else 0.0
    worst, worst_rel, triple = -np.inf, -np.inf, None
    for i, j, k in itertools.permutations(range(n), 3):
        viol = D[i, k] - D[i, j] - D[j, k]
        if np.isnan(viol):
            continue
        worst = max(worst, viol)
        rel = viol / D[i, k] if D[i, k] > 0 else (0.0 if viol <= 0 else np.inf)
        if rel > worst_rel:
            worst_rel, triple = rel, (i, j, k)
    return AuditReport(
        float(sym),
        float(worst) if np.isfinite(worst) else 0.0,
        float(worst_rel) if np.isfinite(worst_rel) else 0.0,
        int(np.sum(D < 0)),
        float(np.nanmax(np.abs(np.diag(D)))),
        triple,
    )
