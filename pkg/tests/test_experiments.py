import json

import numpy as np
import pytest

from gsd.experiments import CSV_HEADER, ExperimentConfig, run_experiment, to_csv


def strip_stamp(text):
    return "\n".join(ln for ln in text.splitlines() if not ln.startswith("# created"))


@pytest.fixture(scope="module")
def ellipsoid_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("ell")
    cfg = ExperimentConfig("ellipsoid", grid=[1.0, 1.3, 1.6], resolution=2, output_dir=str(out), seeds=6)
    return run_experiment(cfg)


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig("noise")
        assert cfg.grid == [0.0, 0.5, 1.0, 2.0, 4.0]
        assert cfg.qc_gate is None
        assert ExperimentConfig("ellipsoid").qc_gate == 1.30

    def test_unknown(self):
        with pytest.raises(ValueError):
            ExperimentConfig("teeth")

    def test_repetitions(self):
        with pytest.raises(ValueError):
            ExperimentConfig("noise", repetitions=0)


class TestEllipsoid:
    def test_rows(self, ellipsoid_run):
        d = ellipsoid_run.column("d_sd")
        assert len(d) == 3
        assert d[0] <= 1e-6
        assert np.all(np.diff(d) > 0)
        # 320 faces is coarse enough for the a=1.6 flattening to trip the QC warning
        assert [r["status"] for r in ellipsoid_run.rows][:2] == ["ok", "ok"]
        assert ellipsoid_run.rows[2]["status"] in ("ok", "qc_warning")

    def test_files(self, ellipsoid_run):
        text = ellipsoid_run.csv_path.read_text()
        lines = text.splitlines()
        assert lines[0] == CSV_HEADER
        assert "seed 0" in lines[1]
        assert lines[3].split(",")[:2] == ["a", "d_sd"]
        meta = json.loads(ellipsoid_run.csv_path.with_name("ellipsoid.runtimes.json").read_text())
        assert len(meta["runtimes_s"]) == 3 and meta["config"]["seed"] == 0

    def test_reproducible(self, ellipsoid_run, tmp_path):
        cfg = ExperimentConfig("ellipsoid", grid=[1.0, 1.3, 1.6], resolution=2, output_dir=str(tmp_path), seeds=6)
        again = run_experiment(cfg)
        assert strip_stamp(again.csv_path.read_text()) == strip_stamp(ellipsoid_run.csv_path.read_text())

    def test_nine_digits(self, ellipsoid_run):
        text = to_csv(ellipsoid_run, timestamp="T")
        value = text.splitlines()[5].split(",")[1]
        assert len(value.replace(".", "").lstrip("0")) <= 9


def test_rescaling_matches_formula(tmp_path):
    cfg = ExperimentConfig("rescaling", grid=[1.0, 2.0], resolution=3, seeds=2)
    res = run_experiment(cfg)
    d, expected = res.column("d_sd"), res.column("expected")
    assert d[0] < 1e-6
    assert d[1] == pytest.approx(expected[1], rel=0.01)


def test_noise_rows_and_failures(tmp_path):
    cfg = ExperimentConfig("noise", grid=[0.0, 1.0, 200.0], resolution=2, seeds=2, output_dir=str(tmp_path))
    res = run_experiment(cfg)
    status = [r["status"] for r in res.rows]
    assert status[0] == "ok" and res.column("d_sd")[0] < 1e-6
    assert res.rows[1]["status"] in ("ok", "flagged") and np.isfinite(res.column("d_sd")[1])
    # an absurd noise level gives an invalid mesh, recorded without stopping the sweep
    assert status[2] == "failed" and res.rows[2]["error"]
    assert res.column("rng_seed").tolist() == [0, 0, 0]


def test_subdivision_kinds():
    cfg = ExperimentConfig("subdivision", grid=[-1, "f3", 60], resolution="f4", seeds=2)
    res = run_experiment(cfg)
    assert [r["kind"] for r in res.rows] == ["subdivided", "uniform", "random"]
    assert res.rows[0]["vertices"] == 4 * 160 + 2
    assert res.column("d_sd")[0] < 0.05


def test_chirality_columns():
    cfg = ExperimentConfig("chirality", grid=[0.0, 1.0], resolution=2, seeds=4)
    res = run_experiment(cfg)
    oriented, unoriented = res.column("d_sd"), res.column("dbar_sd")
    assert oriented[0] < 1e-6
    assert unoriented[1] < 1e-6 and res.rows[1]["orientation_reversed"]
    assert oriented[1] > 5 * unoriented[1]
