"""Closed triangle meshes: loading, validation, measurement and simple transforms."""

from __future__ import annotations

import io
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

DEGENERATE_AREA_RATIO = 1e-12


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"{message} at line {line}"
        super().__init__(message)
        self.line = line


class InvalidMeshError(ValueError):
    """Raised when a mesh fails the genus-zero validity checks."""


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Vertex positions plus counterclockwise (outward) vertex-index triples.

    Arrays are copied on construction and made read-only, so derived tables
    can be cached safely.
    """

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 3)
        t = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise InvalidMeshError("triangle index out of range")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    @cached_property
    def _edge_tables(self):
        t = self.triangles
        heads = t.reshape(-1)
        tails = t[:, [1, 2, 0]].reshape(-1)
        keys = np.sort(np.stack([heads, tails], axis=1), axis=1)
        edges, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        return edges, inverse.reshape(-1), counts

    @property
    def edges(self):
        """Undirected edges as sorted (i, j) rows."""
        return self._edge_tables[0]

    @property
    def halfedge_to_edge(self):
        """For half-edge ``3*f + k`` (from corner k to k+1), its undirected edge id."""
        return self._edge_tables[1]

    @cached_property
    def triangle_areas(self):
        v = self.vertices
        t = self.triangles
        cross = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        return 0.5 * np.linalg.norm(cross, axis=1)

    @cached_property
    def edge_lengths(self):
        v = self.vertices
        e = self.edges
        return np.linalg.norm(v[e[:, 1]] - v[e[:, 0]], axis=1)

    @cached_property
    def vertex_triangles(self):
        """Padded (V, max_valence) table of incident triangles, -1 for padding."""
        flat = self.triangles.reshape(-1)
        order = np.argsort(flat, kind="stable")
        owners = order // 3
        counts = np.bincount(flat, minlength=self.n_vertices)
        width = max(int(counts.max()), 1) if counts.size else 1
        table = np.full((self.n_vertices, width), -1, dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        slot = np.arange(len(flat)) - np.repeat(starts, counts)
        table[flat[order], slot] = owners
        return table

    def signed_volume(self):
        v = self.vertices
        t = self.triangles
        return float(np.einsum("ij,ij->i", v[t[:, 0]], np.cross(v[t[:, 1]], v[t[:, 2]])).sum() / 6.0)

    def copy_with(self, vertices=None, triangles=None):
        return TriangleMesh(
            self.vertices if vertices is None else vertices,
            self.triangles if triangles is None else triangles,
        )


@dataclass
class ValidationReport:
    is_closed: bool
    is_manifold: bool
    is_oriented: bool
    euler_characteristic: int
    min_triangle_area: float
    min_edge_length: float
    defect_list: list = field(default_factory=list)

    @property
    def ok(self):
        return (
            self.is_closed
            and self.is_manifold
            and self.is_oriented
            and self.euler_characteristic == 2
            and not self.defect_list
        )

    def to_dict(self):
        return {**asdict(self), "ok": self.ok}


@dataclass(frozen=True, eq=False)
class DiscreteMetric:
    """Per-edge lengths of a triangulation, keyed by the mesh's edge order."""

    edges: np.ndarray
    lengths: np.ndarray

    def as_dict(self):
        return {(int(i), int(j)): float(l) for (i, j), l in zip(self.edges, self.lengths)}

    @classmethod
    def from_lengths(cls, mesh, lengths):
        """Build a metric from externally supplied lengths.

        ``lengths`` is either an array aligned with ``mesh.edges`` or a mapping
        from ``(i, j)`` pairs (either order) to length.
        """
        if isinstance(lengths, dict):
            lookup = {tuple(sorted(k)): float(val) for k, val in lengths.items()}
            try:
                arr = np.array([lookup[(int(i), int(j))] for i, j in mesh.edges])
            except KeyError as exc:
                raise InvalidMeshError(f"missing length for edge {exc.args[0]}") from None
        else:
            arr = np.asarray(lengths, dtype=float)
            if arr.shape != (mesh.n_edges,):
                raise InvalidMeshError("length array does not match edge count")
        _check_triangle_inequality(mesh, arr)
        return cls(mesh.edges.copy(), arr)


def _check_triangle_inequality(mesh, lengths):
    if np.any(lengths <= 0):
        raise InvalidMeshError("non-positive edge length")
    per_tri = lengths[mesh.halfedge_to_edge].reshape(-1, 3)
    a, b, c = per_tri.T
    slack = np.minimum.reduce([b + c - a, a + c - b, a + b - c])
    tol = 1e-12 * per_tri.max(axis=1)
    bad = np.flatnonzero(slack <= tol)
    if bad.size:
        raise InvalidMeshError(f"triangle inequality violated in triangle {int(bad[0])}")


# ---------------------------------------------------------------------------
# reading


def _content_lines(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _floats(tokens, lineno):
    try:
        return [float(x) for x in tokens]
    except ValueError:
        raise MeshFormatError("malformed number", lineno) from None


def _ints(tokens, lineno):
    try:
        return [int(x) for x in tokens]
    except ValueError:
        raise MeshFormatError("malformed index", lineno) from None


def _read_off(text):
    lines = _content_lines(text)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise MeshFormatError("empty file") from None
    tokens = header.split()
    if not tokens[0].endswith("OFF"):
        raise MeshFormatError("missing OFF header", lineno)
    tokens = tokens[1:]
    if not tokens:
        try:
            lineno, header = next(lines)
        except StopIteration:
            raise MeshFormatError("missing element counts") from None
        tokens = header.split()
    counts = _ints(tokens[:3], lineno)
    if len(counts) < 2:
        raise MeshFormatError("missing element counts", lineno)
    nv, nf = counts[0], counts[1]
    verts, faces = [], []
    for _ in range(nv):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise MeshFormatError("unexpected end of file in vertex block") from None
        xyz = _floats(line.split()[:3], lineno)
        if len(xyz) != 3:
            raise MeshFormatError("vertex needs three coordinates", lineno)
        verts.append(xyz)
    for _ in range(nf):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise MeshFormatError("unexpected end of file in face block") from None
        tokens = line.split()
        n = _ints(tokens[:1], lineno)[0]
        if n != 3:
            raise MeshFormatError("non-triangular face", lineno)
        idx = _ints(tokens[1:4], lineno)
        if len(idx) != 3:
            raise MeshFormatError("face lists too few indices", lineno)
        faces.append(idx)
    return verts, faces


def _obj_index(token, nv, lineno):
    head = token.split("/", 1)[0]
    k = _ints([head], lineno)[0]
    if k < 0:
        return nv + k
    if k == 0:
        raise MeshFormatError("OBJ indices are 1-based", lineno)
    return k - 1


def _read_obj(text):
    verts, faces = [], []
    for lineno, line in _content_lines(text):
        tokens = line.split()
        tag = tokens[0]
        if tag == "v":
            xyz = _floats(tokens[1:4], lineno)
            if len(xyz) != 3:
                raise MeshFormatError("vertex needs three coordinates", lineno)
            verts.append(xyz)
        elif tag == "f":
            if len(tokens) != 4:
                raise MeshFormatError("non-triangular face", lineno)
            faces.append([_obj_index(tok, len(verts), lineno) for tok in tokens[1:]])
    return verts, faces


def _read_ply(text):
    lines = iter(enumerate(text.splitlines(), start=1))
    lineno, first = next(lines, (1, ""))
    if first.strip() != "ply":
        raise MeshFormatError("missing ply magic", lineno)
    elements = []
    for lineno, raw in lines:
        tokens = raw.split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "format":
            if tokens[1] != "ascii":
                raise MeshFormatError("only ASCII PLY is supported", lineno)
        elif tokens[0] == "element":
            elements.append({"name": tokens[1], "count": int(tokens[2]), "props": []})
        elif tokens[0] == "property":
            if not elements:
                raise MeshFormatError("property before element", lineno)
            elements[-1]["props"].append(tokens[1:])
        elif tokens[0] == "end_header":
            break
        else:
            raise MeshFormatError(f"unknown header keyword {tokens[0]!r}", lineno)
    else:
        raise MeshFormatError("missing end_header")

    body = ((n, l.split()) for n, l in lines if l.strip())
    verts, faces = [], []
    for element in elements:
        names = [p[-1] for p in element["props"]]
        for _ in range(element["count"]):
            try:
                lineno, tokens = next(body)
            except StopIteration:
                raise MeshFormatError(f"unexpected end of {element['name']} block") from None
            if element["name"] == "vertex":
                try:
                    pos = [names.index(c) for c in "xyz"]
                except ValueError:
                    raise MeshFormatError("vertex element lacks x/y/z", lineno) from None
                verts.append(_floats([tokens[i] for i in pos], lineno))
            elif element["name"] == "face":
                n = _ints(tokens[:1], lineno)[0]
                if n != 3:
                    raise MeshFormatError("non-triangular face", lineno)
                faces.append(_ints(tokens[1:4], lineno))
    return verts, faces


_READERS = {"off": _read_off, "obj": _read_obj, "ply": _read_ply}


def load_mesh(source, format=None):
    """Parse an ASCII OFF, OBJ or PLY mesh.

    ``source`` may be a path, bytes, text, or a binary/text file object.
    Vertices and faces are taken verbatim; nothing is welded or repaired.
    """
    if hasattr(source, "read"):
        data = source.read()
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        path = str(source)
        if format is None:
            format = path.rsplit(".", 1)[-1]
        with open(path, "rb") as fh:
            data = fh.read()
    text = data.decode("ascii", errors="replace") if isinstance(data, bytes) else data
    if format is None:
        raise ValueError("format is required when reading from a stream")
    fmt = format.lower().replace("-ascii", "")
    if fmt not in _READERS:
        raise ValueError(f"unsupported mesh format {format!r}")
    verts, faces = _READERS[fmt](text)
    faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if faces.size and (faces.min() < 0 or faces.max() >= len(verts)):
        raise MeshFormatError("face index out of range")
    return TriangleMesh(np.array(verts, dtype=float).reshape(-1, 3), faces)


# ---------------------------------------------------------------------------
# writing

SCALAR_HEADER = "# gsd-scalars v1"


def _fmt(x):
    return f"{x:.9g}"


def scalar_colors(scalars):
    """Map scalars to white-to-red RGB bytes (larger values are redder)."""
    s = np.asarray(scalars, dtype=float)
    lo, hi = (s.min(), s.max()) if s.size else (0.0, 0.0)
    u = (s - lo) / (hi - lo) if hi > lo else np.zeros_like(s)
    fade = np.round(255 * (1 - u)).astype(int)
    return np.stack([np.full_like(fade, 255), fade, fade], axis=1)


def write_scalars(scalars):
    s = np.asarray(scalars, dtype=float)
    lines = [f"{SCALAR_HEADER} {len(s)}"] + [_fmt(x) for x in s]
    return ("\n".join(lines) + "\n").encode()


def read_scalars(data):
    text = data.decode() if isinstance(data, bytes) else data
    lines = text.splitlines()
    head = lines[0].split()
    if " ".join(head[:3]) != SCALAR_HEADER:
        raise MeshFormatError("missing scalar table header", 1)
    count = int(head[3])
    values = np.array([float(x) for x in lines[1:1 + count]])
    if len(values) != count:
        raise MeshFormatError("scalar table shorter than its header count")
    return values


def write_mesh(mesh, format="off", vertex_scalars=None):
    """Serialize ``mesh`` to ASCII bytes.

    Per-vertex scalars become ``scalar`` plus RGB properties in PLY output.
    For OFF and OBJ use :func:`write_scalars` to produce the sidecar table;
    :func:`save_mesh` does both.
    """
    fmt = format.lower().replace("-ascii", "")
    v, t = mesh.vertices, mesh.triangles
    if vertex_scalars is not None:
        vertex_scalars = np.asarray(vertex_scalars, dtype=float)
        if vertex_scalars.shape != (len(v),):
            raise ValueError(f"expected {len(v)} vertex scalars, got {vertex_scalars.shape}")
    out = io.StringIO()
    if fmt == "off":
        out.write(f"OFF\n{len(v)} {len(t)} {mesh.n_edges}\n")
        for p in v:
            out.write(" ".join(map(_fmt, p)) + "\n")
        for tri in t:
            out.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n")
    elif fmt == "obj":
        for p in v:
            out.write("v " + " ".join(map(_fmt, p)) + "\n")
        for tri in t + 1:
            out.write(f"f {tri[0]} {tri[1]} {tri[2]}\n")
    elif fmt == "ply":
        out.write("ply\nformat ascii 1.0\n")
        out.write(f"element vertex {len(v)}\n")
        out.write("property float x\nproperty float y\nproperty float z\n")
        if vertex_scalars is not None:
            out.write("property float scalar\n")
            out.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        out.write(f"element face {len(t)}\nproperty list uchar int vertex_indices\nend_header\n")
        colors = scalar_colors(vertex_scalars) if vertex_scalars is not None else None
        for i, p in enumerate(v):
            row = list(map(_fmt, p))
            if colors is not None:
                row.append(_fmt(vertex_scalars[i]))
                row.extend(str(c) for c in colors[i])
            out.write(" ".join(row) + "\n")
        for tri in t:
            out.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n")
    else:
        raise ValueError(f"unsupported mesh format {format!r}")
    return out.getvalue().encode()


def save_mesh(path, mesh, vertex_scalars=None):
    path = str(path)
    fmt = path.rsplit(".", 1)[-1]
    with open(path, "wb") as fh:
        fh.write(write_mesh(mesh, fmt, vertex_scalars))
    if vertex_scalars is not None and fmt.lower() != "ply":
        with open(path + ".scalars", "wb") as fh:
            fh.write(write_scalars(vertex_scalars))


# ---------------------------------------------------------------------------
# validation and measurement


def validate(mesh):
    """Check closedness, manifoldness, orientation, genus and degeneracy."""
    defects = []
    t = mesh.triangles
    if mesh.n_triangles == 0:
        return ValidationReport(False, False, False, mesh.n_vertices, 0.0, 0.0, ["mesh has no triangles"])
    edges, inverse, counts = mesh._edge_tables
    is_closed = bool(np.all(counts >= 2))
    is_manifold = bool(np.all(counts <= 2))
    if not is_closed:
        defects.append(f"{int(np.sum(counts == 1))} boundary edge(s)")
    if not is_manifold:
        defects.append(f"{int(np.sum(counts > 2))} edge(s) shared by more than two triangles")

    directed = np.stack([t.reshape(-1), t[:, [1, 2, 0]].reshape(-1)], axis=1)
    _, dcounts = np.unique(directed, axis=0, return_counts=True)
    is_oriented = bool(np.all(dcounts == 1))
    if not is_oriented:
        defects.append("inconsistent triangle orientation")

    used = np.unique(t)
    if len(used) != mesh.n_vertices:
        defects.append(f"{mesh.n_vertices - len(used)} unreferenced vertex(es)")
    if np.any(t[:, 0] == t[:, 1]) or np.any(t[:, 1] == t[:, 2]) or np.any(t[:, 0] == t[:, 2]):
        defects.append("triangle with repeated vertex index")

    _, vcounts = np.unique(mesh.vertices, axis=0, return_counts=True)
    if np.any(vcounts > 1):
        defects.append(f"{int(np.sum(vcounts > 1))} duplicated vertex position(s)")

    euler = mesh.n_vertices - len(edges) + mesh.n_triangles
    if euler != 2:
        defects.append(f"Euler characteristic {euler}, expected 2")

    areas = mesh.triangle_areas
    threshold = DEGENERATE_AREA_RATIO * areas.mean()
    n_degenerate = int(np.sum(areas <= threshold))
    if n_degenerate:
        defects.append(f"{n_degenerate} degenerate triangle(s)")

    return ValidationReport(
        is_closed=is_closed,
        is_manifold=is_manifold,
        is_oriented=is_oriented,
        euler_characteristic=int(euler),
        min_triangle_area=float(areas.min()),
        min_edge_length=float(mesh.edge_lengths.min()),
        defect_list=defects,
    )


def require_valid(mesh):
    report = validate(mesh)
    if not report.ok:
        raise InvalidMeshError("; ".join(report.defect_list) or "invalid mesh")
    return report


def surface_area(mesh):
    return float(mesh.triangle_areas.sum())


def normalize_area(mesh):
    """Uniformly rescale so the total area is one."""
    area = surface_area(mesh)
    if not area > 0:
        raise InvalidMeshError("cannot normalize a zero-area mesh")
    scale = 1.0 / np.sqrt(area)
    if scale == 1.0:
        return mesh
    return mesh.copy_with(vertices=mesh.vertices * scale)


def discrete_metric(mesh):
    lengths = mesh.edge_lengths
    _check_triangle_inequality(mesh, lengths)
    return DiscreteMetric(mesh.edges, lengths)


def edge_area_weights(mesh):
    """Sum of the two adjacent triangle areas for every edge (``A_ij``)."""
    return np.bincount(
        mesh.halfedge_to_edge, weights=np.repeat(mesh.triangle_areas, 3), minlength=mesh.n_edges
    )


def reflect(mesh):
    """Mirror through the xy-plane, reversing triangle order to stay outward-facing."""
    v = mesh.vertices * np.array([1.0, 1.0, -1.0])
    return TriangleMesh(v, mesh.triangles[:, ::-1])


def midpoint_subdivide(mesh, projector=None):
    """Split every triangle into four at the edge midpoints.

    Midpoints are shared between neighbouring triangles. ``projector`` maps an
    (n, 3) array of new positions to their final positions.
    """
    v = mesh.vertices
    e = mesh.edges
    mids = 0.5 * (v[e[:, 0]] + v[e[:, 1]])
    if projector is not None:
        mids = np.asarray(projector(mids), dtype=float)
    nv = len(v)
    m = mesh.halfedge_to_edge.reshape(-1, 3) + nv
    a, b, c = mesh.triangles.T
    ab, bc, ca = m.T
    tris = np.concatenate(
        [
            np.stack([a, ab, ca], axis=1),
            np.stack([ab, b, bc], axis=1),
            np.stack([ca, bc, c], axis=1),
            np.stack([ab, bc, ca], axis=1),
        ]
    )
    return TriangleMesh(np.vstack([v, mids]), tris)


def radial_projector(radius=1.0, center=(0.0, 0.0, 0.0)):
    center = np.asarray(center, dtype=float)

    def project(points):
        d = points - center
        return center + radius * d / np.linalg.norm(d, axis=1, keepdims=True)

    return project
