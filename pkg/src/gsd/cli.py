"""Command-line interface: ``gsd compare|matrix|oracle|experiment|flatten|validate``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import oracles
from .align import AlignmentError, DsdOptions, distance_matrix, dsd, metric_audit, write_correspondence
from .energy import CorrespondenceError, distortion_field
from .experiments import EXPERIMENTS, ExperimentConfig, run_experiment
from .flatten import FlatteningError, FlattenOptions, conformal_to_sphere
from .mesh import InvalidMeshError, MeshFormatError, TriangleMesh, load_mesh, save_mesh, validate
from .mobius import CenteringError, MobiusTransform
from .sphere import FlippedTriangleError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MESH_SUFFIXES = (".off", ".obj", ".ply")

log = logging.getLogger("gsd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _gate(value):
    if value.lower() in ("none", "off"):
        return None
    x = float(value)
    if x < 1:
        raise argparse.ArgumentTypeError("QC gate must be >= 1")
    return x


def _experiment_gate(value):
    return "auto" if value.lower() == "auto" else _gate(value)


def _common(p):
    p.add_argument("--normalize", action="store_true", help="rescale every surface to unit area")
    p.add_argument("--allow-reflection", action="store_true", help="also try the mirrored first surface")
    p.add_argument("--seeds", type=int, default=None, help="descend only from the N lowest-energy seeds")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--qc-gate", type=_gate, default=1.30, help="max mean QC error, or 'none'")
    p.add_argument("--method", choices=("bfgs", "steepest"), default="bfgs", help="descent direction")


def _options(args):
    gate = args.qc_gate
    flatten = FlattenOptions(qc_fail=gate, qc_warn=None if gate is None else min(1.10, gate))
    opts = DsdOptions(args.normalize, args.allow_reflection, args.seeds, args.threads, flatten)
    opts.descent.method = args.method
    return opts


def build_parser():
    parser = _Parser(prog="gsd", description="Distances between genus-zero triangle meshes.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("compare", help="distance between two meshes")
    p.add_argument("mesh1")
    p.add_argument("mesh2")
    _common(p)
    p.add_argument("--json", help="write the result as JSON to this file")
    p.add_argument("--corr", help="write the vertex correspondence to this file")
    p.add_argument("--color", help="prefix for PLY meshes colored by local stretch")

    p = sub.add_parser("matrix", help="pairwise distances of all meshes in a directory")
    p.add_argument("directory")
    _common(p)
    p.add_argument("--csv", help="write the matrix as CSV")
    p.add_argument("--audit", action="store_true", help="check the metric axioms")

    p = sub.add_parser("oracle", help="closed-form reference values")
    osub = p.add_subparsers(dest="oracle", required=True, parser_class=_Parser)
    q = osub.add_parser("e1-scaling", help="average stretch of z -> A z")
    q.add_argument("A", type=float)
    q = osub.add_parser("quadrature", help="average stretch of z -> A z + B by quadrature")
    q.add_argument("A", type=complex)
    q.add_argument("B", type=complex, nargs="?", default=0j)
    q = osub.add_parser("lambda", help="dilation of a translation or scaling at z")
    q.add_argument("kind", choices=("translation", "scaling"))
    q.add_argument("param", type=complex)
    q.add_argument("z", type=complex)
    q = osub.add_parser("rescaling", help="distance between round spheres of two areas")
    q.add_argument("area1", type=float)
    q.add_argument("area2", type=float)
    q = osub.add_parser("elastic", help="A1 + A2 - 2 E1")
    q.add_argument("area1", type=float)
    q.add_argument("area2", type=float)
    q.add_argument("e1", type=float)

    p = sub.add_parser("experiment", help="run a parameter sweep")
    p.add_argument("name", choices=EXPERIMENTS)
    p.add_argument("--out", default="results")
    p.add_argument("--grid", nargs="+", help="override the parameter grid")
    p.add_argument("--resolution", help="icosphere level or geodesic frequency such as f10")
    p.add_argument("--seed", type=int, default=0, help="RNG seed for random meshes")
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--seeds", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--qc-gate", type=_experiment_gate, default="auto", help="max mean QC error, 'none', or 'auto' (per experiment)")
    p.add_argument("--color", action="store_true", help="write colored meshes for every row")

    p = sub.add_parser("flatten", help="conformal map to the unit sphere")
    p.add_argument("mesh")
    p.add_argument("--out", required=True, help="output mesh of the spherical image")
    p.add_argument("--qc-gate", type=_gate, default=1.30)

    p = sub.add_parser("validate", help="check that a mesh is a valid genus-zero surface")
    p.add_argument("mesh")
    return parser


def _load(path):
    return load_mesh(Path(path))


def _cmd_compare(args):
    opts = _options(args)
    res = dsd(_load(args.mesh1), _load(args.mesh2), opts)
    print(f"d_sd = {res.d_sd:.9g}" + ("  (orientation reversed)" if res.orientation_reversed else ""))
    if args.json:
        Path(args.json).write_text(res.to_json(indent=2) + "\n")
    if args.corr:
        Path(args.corr).write_text(write_correspondence(res))
    if args.color:
        f1, f2 = distortion_field(res.correspondence)
        save_mesh(f"{args.color}_1.ply", res.correspondence.param1.source, f1)
        save_mesh(f"{args.color}_2.ply", res.correspondence.param2.source, f2)
    return EXIT_OK


def _cmd_matrix(args):
    folder = Path(args.directory)
    if not folder.is_dir():
        raise UsageError(f"{folder} is not a directory")
    paths = sorted(p for p in folder.iterdir() if p.suffix.lower() in MESH_SUFFIXES)
    meshes = [_load(p) for p in paths]
    result = distance_matrix(meshes, _options(args))
    names = [p.name for p in paths]
    width = max([len(n) for n in names] + [4])
    for name, row in zip(names, result.matrix):
        print(f"{name:<{width}} " + " ".join(f"{x:10.6f}" for x in row))
    for (i, j), err in sorted(result.errors.items()):
        print(f"failed {names[i]} / {names[j]}: {err}", file=sys.stderr)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([""] + names)
            for name, row in zip(names, result.matrix):
                w.writerow([name] + [f"{x:.9g}" for x in row])
    if args.audit:
        print(json.dumps(metric_audit(result.matrix).to_dict(), indent=2))
    return EXIT_NUMERIC if result.errors else EXIT_OK


def _cmd_oracle(args):
    if args.oracle == "e1-scaling":
        value = oracles.e1_scaling(args.A)
    elif args.oracle == "quadrature":
        value = oracles.quadrature_e1(MobiusTransform.from_coefficients(args.A, args.B, 0, 1))
    elif args.oracle == "lambda":
        value = float(oracles.lambda_closed_form(args.kind, args.param, args.z))
    elif args.oracle == "rescaling":
        value = oracles.rescaling_distance(args.area1, args.area2)
    else:
        value = oracles.elastic_identity(args.area1, args.area2, args.e1)
    print(f"{value:.12g}")
    return EXIT_OK


def _grid_value(token):
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        return token


def _cmd_experiment(args):
    resolution = None if args.resolution is None else _grid_value(args.resolution)
    grid = None if args.grid is None else [_grid_value(g) for g in args.grid]
    cfg = ExperimentConfig(
        args.name, grid, resolution, args.seed, args.repetitions, args.out, args.seeds, args.threads,
        args.qc_gate, args.color,
    )
    result = run_experiment(cfg)
    print(result.csv_path.read_text(), end="")
    failed = sum(r["status"] == "failed" for r in result.rows)
    if failed:
        print(f"{failed} row(s) failed", file=sys.stderr)
    return EXIT_OK


def _cmd_flatten(args):
    gate = args.qc_gate
    opts = FlattenOptions(qc_fail=gate, qc_warn=None if gate is None else min(1.10, gate))
    param = conformal_to_sphere(_load(args.mesh), opts)
    # per-vertex mean of the incident triangles' QC error, for coloring
    t = param.source.triangles
    qc = param.quality.per_triangle
    per_vertex = np.bincount(t.reshape(-1), np.repeat(qc, 3), len(param.sphere_positions))
    per_vertex /= np.bincount(t.reshape(-1), minlength=len(param.sphere_positions))
    save_mesh(args.out, TriangleMesh(param.sphere_positions, t), per_vertex)
    print(json.dumps({"steps": param.steps, "method": param.method, **param.quality.to_dict()}))
    return EXIT_OK


def _cmd_validate(args):
    report = validate(_load(args.mesh))
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK if report.ok else EXIT_DATA


COMMANDS = {
    "compare": _cmd_compare,
    "matrix": _cmd_matrix,
    "oracle": _cmd_oracle,
    "experiment": _cmd_experiment,
    "flatten": _cmd_flatten,
    "validate": _cmd_validate,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gsd: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MeshFormatError, InvalidMeshError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"gsd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (
        FlatteningError, CenteringError, AlignmentError, CorrespondenceError, FlippedTriangleError,
        oracles.QuadratureError, np.linalg.LinAlgError,
    ) as exc:
        print(f"gsd: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"gsd: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
