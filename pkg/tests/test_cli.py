import json
import shutil
import subprocess

import numpy as np
import pytest

from gsd.align import read_correspondence
from gsd.cli import main
from gsd.mesh import load_mesh, save_mesh
from gsd.shapes import gen_ellipsoid, sphere_mesh
from test_mesh import torus


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("meshes")
    save_mesh(d / "a.off", sphere_mesh(2))
    save_mesh(d / "b.obj", gen_ellipsoid(1.3, 1.0, 1.0, 2))
    save_mesh(d / "c.ply", gen_ellipsoid(1.6, 1.0, 1.0, 2))
    (d / "notes.txt").write_text("ignored")
    bad = tmp_path_factory.mktemp("bad")
    save_mesh(bad / "torus.off", torus())
    (bad / "quad.off").write_text("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
    return d, bad


def test_oracle_e1(capsys):
    assert main(["oracle", "e1-scaling", "2"]) == 0
    assert capsys.readouterr().out.startswith("11.6137")


@pytest.mark.parametrize(
    "argv, expected",
    [
        (["oracle", "quadrature", "2"], 11.6137924816),
        (["oracle", "lambda", "scaling", "2", "1"], 0.8),
        (["oracle", "rescaling", "12.566370614359172", "50.26548245743669"], 7.08981540362),
        (["oracle", "elastic", "1", "1", "1"], 0.0),
    ],
)
def test_oracles(capsys, argv, expected):
    assert main(argv) == 0
    assert float(capsys.readouterr().out) == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_oracle_bad_value(capsys):
    assert main(["oracle", "e1-scaling", "0.5"]) == 1


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["compare", "a.off"])
    assert exc.value.code == 1


def test_compare(files, tmp_path, capsys):
    d, _ = files
    out = tmp_path / "r.json"
    corr = tmp_path / "r.corr"
    argv = ["compare", str(d / "a.off"), str(d / "b.obj"), "--normalize", "--seeds", "4"]
    assert main(argv + ["--json", str(out), "--corr", str(corr), "--color", str(tmp_path / "col")]) == 0
    assert capsys.readouterr().out.startswith("d_sd = ")
    result = json.loads(out.read_text())
    assert set(result) == {"d_sd", "orientation_reversed", "mobius", "seeds", "flagged_vertices"}
    assert 0 < result["d_sd"] < 1
    locs = read_correspondence(corr.read_text())
    assert len(locs["forward"]) == sphere_mesh(2).n_vertices
    colored = load_mesh(tmp_path / "col_2.ply")
    assert colored.n_vertices == gen_ellipsoid(1.3, 1, 1, 2).n_vertices


def test_compare_data_errors(files, capsys):
    d, bad = files
    assert main(["compare", str(d / "a.off"), str(d / "missing.off")]) == 2
    assert main(["compare", str(d / "a.off"), str(bad / "torus.off")]) == 2
    assert main(["validate", str(bad / "quad.off")]) == 2
    assert "line 7" in capsys.readouterr().err


def test_compare_numerical_failure(files, capsys):
    d, _ = files
    # no flattening of an elongated ellipsoid passes a gate of 1.0001
    assert main(["compare", str(d / "a.off"), str(d / "c.ply"), "--qc-gate", "1.0001"]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_matrix(files, tmp_path, capsys):
    d, _ = files
    out = tmp_path / "m.csv"
    assert main(["matrix", str(d), "--normalize", "--seeds", "4", "--csv", str(out), "--audit"]) == 0
    text = capsys.readouterr().out
    audit = json.loads(text[text.index("{") :])
    assert audit["max_symmetry_violation"] == 0
    rows = out.read_text().splitlines()
    assert rows[0] == ",a.off,b.obj,c.ply"
    D = np.array([[float(x) for x in r.split(",")[1:]] for r in rows[1:]])
    np.testing.assert_array_equal(D, D.T)
    assert np.all(np.diag(D) == 0)


def test_matrix_not_a_directory(files):
    d, _ = files
    assert main(["matrix", str(d / "a.off")]) == 1


def test_matrix_with_bad_mesh(files, tmp_path, capsys):
    d, bad = files
    folder = tmp_path / "mix"
    folder.mkdir()
    shutil.copy(d / "a.off", folder / "a.off")
    shutil.copy(d / "c.ply", folder / "c.ply")
    # a mesh that loads but cannot be flattened under the gate
    assert main(["matrix", str(folder), "--seeds", "2", "--qc-gate", "1.0001"]) == 3
    assert "failed" in capsys.readouterr().err


def test_flatten(files, tmp_path, capsys):
    d, _ = files
    out = tmp_path / "s.ply"
    assert main(["flatten", str(d / "b.obj"), "--out", str(out)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["area_weighted_mean"] < 1.1 and report["method"] == "flow"
    sphere = load_mesh(out)
    np.testing.assert_allclose(np.linalg.norm(sphere.vertices, axis=1), 1.0, atol=1e-8)


def test_validate(files, capsys):
    d, bad = files
    assert main(["validate", str(d / "a.off")]) == 0
    assert json.loads(capsys.readouterr().out)["ok"] is True
    assert main(["validate", str(bad / "torus.off")]) == 2
    assert json.loads(capsys.readouterr().out)["euler_characteristic"] == 0


def test_experiment(tmp_path, capsys):
    argv = ["experiment", "ellipsoid", "--grid", "1.0", "1.2", "--resolution", "2", "--seeds", "2"]
    assert main(argv + ["--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("# gsd-csv v1")
    assert (tmp_path / "ellipsoid.csv").exists()


def test_console_script():
    exe = shutil.which("gsd")
    if exe is None:
        pytest.skip("console script not installed")
    proc = subprocess.run([exe, "oracle", "e1-scaling", "2"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("11.6137")
