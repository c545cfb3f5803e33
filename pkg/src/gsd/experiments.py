"""Experiment runners: parameter sweeps over synthetic surfaces, written as CSV.

Every run is deterministic for a given config: meshes come from seeded
generators, descents are single-threaded per pair, and rows are written in
grid order. Wall-clock times go to a JSON sidecar so the CSV stays
byte-identical between runs (apart from its timestamp line).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .align import DsdOptions, dsd_prepared, prepare
from .energy import distortion_field
from .flatten import FlattenOptions, QualityWarning
from .mesh import midpoint_subdivide, require_valid, save_mesh, surface_area
from .oracles import rescaling_distance
from .shapes import gen_ellipsoid, gen_noisy_sphere, gen_random_sphere, gen_three_bump, sphere_mesh

log = logging.getLogger(__name__)

CSV_HEADER = "# gsd-csv v1"
EXPERIMENTS = ("rescaling", "ellipsoid", "noise", "subdivision", "chirality")

DEFAULT_GRIDS = {
    "rescaling": [0.5, 1.0, 1.5, 2.0, 3.0],
    "ellipsoid": [1.0, 1.2, 1.4, 1.6, 1.8, 2.0],
    "noise": [0.0, 0.5, 1.0, 2.0, 4.0],
    # negative entries are flat subdivision rounds of the base mesh (-1: 4x, -2: 16x),
    # "f<n>" geodesic spheres, positive integers random vertex counts
    "subdivision": [-1, -2, "f3", "f5", "f7", 100, 250, 500, 1000],
    "chirality": [0.0, 0.25, 0.5, 0.75, 1.0],
}
# radial noise of an edge length or more is far from conformal by construction, so the
# noise sweep records QC per row instead of gating on it
DEFAULT_QC_GATE = {
    "rescaling": 1.30,
    "ellipsoid": 1.30,
    "noise": None,
    "subdivision": 1.30,
    "chirality": 1.30,
}
DEFAULT_RESOLUTION = {
    "rescaling": 3,
    "ellipsoid": 3,
    "noise": "f29",
    "subdivision": "f10",
    "chirality": 3,
}


@dataclass
class ExperimentConfig:
    name: str
    grid: list | None = None
    resolution: int | str | None = None
    seed: int = 0
    repetitions: int = 1
    output_dir: str | None = None
    seeds: int | None = None
    threads: int = 1
    qc_gate: float | str | None = "auto"
    color_meshes: bool = False

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.name!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.grid is None:
            self.grid = list(DEFAULT_GRIDS[self.name])
        if self.resolution is None:
            self.resolution = DEFAULT_RESOLUTION[self.name]
        if self.qc_gate == "auto":
            self.qc_gate = DEFAULT_QC_GATE[self.name]
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    columns: list
    rows: list
    runtimes: list = field(default_factory=list)
    csv_path: Path | None = None

    def column(self, name):
        return np.array([np.nan if r.get(name) in (None, "") else float(r[name]) for r in self.rows])


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.9g}"
    return "" if x is None else str(x)


def to_csv(result, timestamp=None):
    buf = io.StringIO()
    buf.write(f"{CSV_HEADER}\n")
    buf.write(f"# experiment {result.config.name} resolution {result.config.resolution} seed {result.config.seed}\n")
    stamp = timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
    buf.write(f"# created {stamp}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(result.columns)
    for row in result.rows:
        writer.writerow([_fmt(row.get(c)) for c in result.columns])
    return buf.getvalue()


def _options(cfg, normalize, reflection=False):
    gate = cfg.qc_gate
    flatten = FlattenOptions(
        qc_fail=gate,
        qc_warn=None if gate is None else min(1.10, gate),
        radial_fallback=cfg.name == "noise",
    )
    return DsdOptions(normalize=normalize, allow_reflection=reflection, seeds=cfg.seeds, flatten=flatten)


def _seed_energies(res):
    return ";".join(f"{s.energy:.9g}" for s in sorted(res.per_seed, key=lambda s: s.id))


def _compare(cfg, base, mesh, opts, label):
    """One distance row; failures are recorded instead of raised."""
    row = {"status": "ok", "error": ""}
    try:
        require_valid(mesh)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", QualityWarning)
            f2 = prepare(mesh, opts)
        row["qc"] = f2.param.quality.area_weighted_mean
        row["flatten"] = f2.param.method
        if caught:
            row["status"] = "qc_warning"
        res = dsd_prepared(base, f2, opts)
    except Exception as exc:  # every failure is data for the sweep
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        return row, None
    row["d_sd"] = res.d_sd
    row["flagged"] = res.flagged_vertices
    row["seed_energies"] = _seed_energies(res)
    if res.flagged_vertices and row["status"] == "ok":
        row["status"] = "flagged"
    if cfg.output_dir and (cfg.color_meshes or row["status"] != "ok"):
        _write_colored(cfg, res, label)
    return row, res


def _write_colored(cfg, res, label):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    f1, f2 = distortion_field(res.correspondence)
    save_mesh(out / f"{cfg.name}_{label}_source.ply", res.correspondence.param1.source, f1)
    save_mesh(out / f"{cfg.name}_{label}_target.ply", res.correspondence.param2.source, f2)


def _run_rows(cfg, jobs):
    """Run (params, thunk) jobs, concurrently if requested, keeping grid order."""

    def run(job):
        params, thunk = job
        t0 = time.perf_counter()
        row = thunk()
        row = {**params, **row}
        return row, time.perf_counter() - t0

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            out = list(pool.map(run, jobs))
    else:
        out = [run(j) for j in jobs]
    return [r for r, _ in out], [t for _, t in out]


def _rescaling(cfg):
    base_mesh = sphere_mesh(cfg.resolution)
    opts = _options(cfg, normalize=False)
    base = prepare(base_mesh, opts)
    a1 = surface_area(base_mesh)
    jobs = []
    for s in cfg.grid:
        mesh = base_mesh.copy_with(vertices=base_mesh.vertices * float(s))

        def thunk(mesh=mesh, s=s):
            row, _ = _compare(cfg, base, mesh, opts, f"s{s}")
            row["expected"] = rescaling_distance(a1, surface_area(mesh))
            return row

        jobs.append(({"scale": float(s)}, thunk))
    return ["scale", "d_sd", "expected", "qc", "flatten", "flagged", "status", "seed_energies", "error"], jobs


def _ellipsoid(cfg):
    opts = _options(cfg, normalize=True)
    base = prepare(sphere_mesh(cfg.resolution), opts)
    jobs = []
    for a in cfg.grid:

        def thunk(a=a):
            row, _ = _compare(cfg, base, gen_ellipsoid(float(a), 1.0, 1.0, cfg.resolution), opts, f"a{a}")
            return row

        jobs.append(({"a": float(a)}, thunk))
    return ["a", "d_sd", "qc", "flatten", "flagged", "status", "seed_energies", "error"], jobs


def _noise(cfg):
    opts = _options(cfg, normalize=True)
    base = prepare(sphere_mesh(cfg.resolution), opts)
    jobs = []
    for n in cfg.grid:
        for rep in range(cfg.repetitions):
            rng_seed = cfg.seed + rep

            def thunk(n=n, rng_seed=rng_seed, rep=rep):
                mesh = gen_noisy_sphere(cfg.resolution, float(n), seed=rng_seed)
                row, _ = _compare(cfg, base, mesh, opts, f"N{n}_r{rep}")
                return row

            jobs.append(({"N": float(n), "rep": rep, "rng_seed": rng_seed}, thunk))
    cols = ["N", "rep", "rng_seed", "d_sd", "qc", "flatten", "flagged", "status", "seed_energies", "error"]
    return cols, jobs


def _subdivision_mesh(base_mesh, entry, seed):
    if isinstance(entry, str):
        return sphere_mesh(entry), "uniform"
    entry = int(entry)
    if entry < 0:
        mesh = base_mesh
        for _ in range(-entry):
            # flat split into four similar triangles: the same polyhedron, finer mesh
            mesh = midpoint_subdivide(mesh)
        return mesh, "subdivided"
    return gen_random_sphere(entry, seed), "random"


def _subdivision(cfg):
    opts = _options(cfg, normalize=True)
    base_mesh = sphere_mesh(cfg.resolution)
    base = prepare(base_mesh, opts)
    jobs = []
    for entry in cfg.grid:
        reps = cfg.repetitions if isinstance(entry, int) and entry > 0 else 1
        for rep in range(reps):
            rng_seed = cfg.seed + rep

            def thunk(entry=entry, rng_seed=rng_seed, rep=rep):
                mesh, kind = _subdivision_mesh(base_mesh, entry, rng_seed)
                row, _ = _compare(cfg, base, mesh, opts, f"{entry}_r{rep}")
                row.update(kind=kind, vertices=mesh.n_vertices, faces=mesh.n_triangles)
                return row

            jobs.append(({"mesh": str(entry), "rep": rep, "rng_seed": rng_seed}, thunk))
    cols = ["mesh", "kind", "vertices", "faces", "rep", "rng_seed", "d_sd", "qc", "flatten", "flagged", "status"]
    return cols + ["seed_energies", "error"], jobs


def _chirality(cfg):
    opts = _options(cfg, normalize=True, reflection=True)
    base = prepare(gen_three_bump(0.0, cfg.resolution), opts)
    jobs = []
    for frac in cfg.grid:
        theta = float(frac) * np.pi

        def thunk(theta=theta, frac=frac):
            row, res = _compare(cfg, base, gen_three_bump(theta, cfg.resolution), opts, f"t{frac}")
            if res is not None:
                oriented = [s.energy for s in res.per_seed if s.id < 24]
                row["d_sd"] = min(oriented) if oriented else np.nan
                row["dbar_sd"] = res.d_sd
                row["orientation_reversed"] = res.orientation_reversed
            return row

        jobs.append(({"theta_over_pi": float(frac), "theta": theta}, thunk))
    cols = ["theta_over_pi", "theta", "d_sd", "dbar_sd", "orientation_reversed", "qc", "flatten", "flagged", "status"]
    return cols + ["seed_energies", "error"], jobs


_BUILDERS = {
    "rescaling": _rescaling,
    "ellipsoid": _ellipsoid,
    "noise": _noise,
    "subdivision": _subdivision,
    "chirality": _chirality,
}


def run_experiment(cfg, timestamp=None):
    """Run one sweep; writes <name>.csv and <name>.runtimes.json when ``output_dir`` is set."""
    columns, jobs = _BUILDERS[cfg.name](cfg)
    rows, runtimes = _run_rows(cfg, jobs)
    result = ExperimentResult(cfg, columns, rows, runtimes)
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.csv_path = out / f"{cfg.name}.csv"
        result.csv_path.write_text(to_csv(result, timestamp))
        meta = {"config": asdict(cfg), "runtimes_s": runtimes}
        (out / f"{cfg.name}.runtimes.json").write_text(json.dumps(meta, indent=2, default=str))
    return result
