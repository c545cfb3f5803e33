import json

import numpy as np
import pytest
from scipy.linalg import expm
from scipy.spatial.transform import Rotation

from gsd.align import (
    CORR_HEADER,
    DescentOptions,
    DsdOptions,
    descent_gradient,
    axis_assignments,
    distance_matrix,
    dsd,
    ellipsoid_axes,
    energy_at,
    initial_seeds,
    metric_audit,
    minimize,
    prepare,
    read_correspondence,
    write_correspondence,
)
from gsd.flatten import conformal_to_sphere
from gsd.mesh import reflect, surface_area
from gsd.mobius import MobiusChart, MobiusTransform, perturb
from gsd.shapes import gen_ellipsoid, gen_three_bump, sphere_mesh

NORM = DsdOptions(normalize=True)


def moved(mesh, seed):
    R = Rotation.random(random_state=seed).as_matrix()
    shift = np.random.default_rng(seed).normal(size=3) * 3
    return mesh.copy_with(vertices=mesh.vertices @ R.T + shift)


@pytest.fixture(scope="module")
def ell2():
    return gen_ellipsoid(1.4, 1.0, 1.0, 2)


@pytest.fixture(scope="module")
def sphere_vs_ell2(ell2):
    return dsd(sphere_mesh(2), ell2, NORM)


class TestAxes:
    def test_axis_aligned_ellipsoid(self):
        frame = ellipsoid_axes(gen_ellipsoid(2.0, 1.5, 1.0, 3))
        np.testing.assert_allclose(frame.axes, np.eye(3), atol=1e-9)
        expected = np.array([[2, 0, 0], [-2, 0, 0], [0, 1.5, 0], [0, -1.5, 0], [0, 0, 1], [0, 0, -1]])
        # the rays hit flat faces slightly inside the smooth surface
        np.testing.assert_allclose(frame.points, expected, atol=0.02)
        assert not frame.flagged.any()

    def test_sphere_tie_break(self):
        frame = ellipsoid_axes(sphere_mesh(2))
        np.testing.assert_allclose(frame.axes, np.eye(3), atol=1e-12)

    def test_rigid_covariance(self):
        mesh = gen_ellipsoid(2.0, 1.5, 1.0, 2)
        base = ellipsoid_axes(mesh)
        for seed in range(3):
            R = Rotation.random(random_state=seed).as_matrix()
            frame = ellipsoid_axes(mesh.copy_with(vertices=mesh.vertices @ R.T + 1.0))
            rotated = base.axes @ R.T
            dots = np.abs(np.sum(frame.axes * rotated, axis=1))
            np.testing.assert_allclose(dots, 1.0, atol=1e-6)

    def test_right_handed(self):
        frame = ellipsoid_axes(moved(gen_ellipsoid(1.8, 1.3, 1.0, 2), 5))
        assert np.linalg.det(frame.axes) == pytest.approx(1.0)


class TestSeeds:
    def test_assignments(self):
        a = axis_assignments()
        assert len(a) == 24 and len(set(a)) == 24

    def test_identical_surfaces_contain_identity(self, param_ellipsoid15, ellipsoid15):
        frame = ellipsoid_axes(ellipsoid15)
        seeds = initial_seeds(frame, frame, param_ellipsoid15, param_ellipsoid15)
        assert len(seeds) == 24
        assert min(s.distance_to(MobiusTransform.identity()) for s in seeds) < 1e-6
        for s in seeds:
            (a, b), (c, d) = s.matrix
            assert abs(a * d - b * c - 1) < 1e-10

    def test_reflection_doubles_seeds(self, bump0):
        res = dsd(bump0, bump0, DsdOptions(normalize=True, allow_reflection=True, seeds=4))
        assert res.d_sd < 1e-6
        full = dsd(bump0, bump0, DsdOptions(normalize=True, allow_reflection=True))
        assert len(full.per_seed) == 48
        assert sorted(s.id for s in full.per_seed) == list(range(48))


class TestMinimize:
    def test_identity_stays(self, param_ico3):
        r = minimize(param_ico3, param_ico3, MobiusTransform.identity())
        assert r.energy.e_sd < 1e-9 and r.converged

    def test_small_perturbation_recovers(self, param_ico3):
        seed = perturb(MobiusChart(MobiusTransform.identity()), 0.05 * np.random.default_rng(0).normal(size=6))
        r = minimize(param_ico3, param_ico3, seed)
        assert r.initial_energy > 0.05
        assert r.energy.e_sd <= 1e-6

    @pytest.mark.parametrize("method", ["bfgs", "steepest"])
    def test_monotone_history(self, method, param_ico3):
        p2 = conformal_to_sphere(gen_ellipsoid(1.2, 1.0, 1.0, 3))
        seed = MobiusTransform.from_coefficients(1.2, 0.1, 0.05j, 1)
        r = minimize(param_ico3, p2, seed, DescentOptions(method=method, max_iter=40))
        h = np.array(r.history)
        assert np.all(np.diff(h) < 0)
        assert r.energy.e_sd == pytest.approx(h[-1], rel=1e-12)
        assert r.energy.e_sd <= r.initial_energy

    def test_unknown_method(self, param_ico3):
        with pytest.raises(ValueError):
            minimize(param_ico3, param_ico3, MobiusTransform.identity(), DescentOptions(method="newton"))

    def test_gradient_check(self, param_ico3, param_ellipsoid15):
        # independent central differences on matrices built with scipy's expm, same step as the optimizer
        basis = [
            np.array([[1, 0], [0, -1]]),
            np.array([[1j, 0], [0, -1j]]),
            np.array([[0, 1], [0, 0]]),
            np.array([[0, 1j], [0, 0]]),
            np.array([[0, 0], [1, 0]]),
            np.array([[0, 0], [1j, 0]]),
        ]
        h = DescentOptions().fd_step
        rng = np.random.default_rng(3)
        for _ in range(20):
            m = perturb(MobiusChart(MobiusTransform.identity()), 0.3 * rng.normal(size=6))

            def e(X):
                return energy_at(param_ico3, param_ellipsoid15, MobiusTransform(expm(X) @ m.matrix)).e_sd

            ref = np.array([(e(h * B) - e(-h * B)) / (2 * h) for B in basis])
            g = descent_gradient(param_ico3, param_ellipsoid15, m)
            assert np.linalg.norm(g - ref) <= 1e-4 * np.linalg.norm(ref)


class TestDistance:
    def test_self_distance(self, ell2):
        for mesh in (sphere_mesh(2), ell2):
            res = dsd(mesh, mesh)
            assert res.d_sd <= 1e-6 * np.sqrt(surface_area(mesh))

    def test_result_invariants(self, sphere_vs_ell2):
        res = sphere_vs_ell2
        # ties within 1e-12 go to the lowest seed id
        assert res.d_sd == pytest.approx(min(s.energy for s in res.per_seed), abs=1e-12)
        assert res.d_sd == res.energy.e_sd
        assert res.d_sd <= min(s.initial_energy for s in res.per_seed) + 1e-12
        assert len(res.per_seed) == 24 and not res.orientation_reversed

    def test_rigid_motion_invariance(self, ell2, sphere_vs_ell2):
        for seed in (1, 2):
            res = dsd(sphere_mesh(2), moved(ell2, seed), NORM)
            assert res.d_sd == pytest.approx(sphere_vs_ell2.d_sd, rel=0.01)

    def test_symmetry(self, ell2, sphere_vs_ell2):
        back = dsd(ell2, sphere_mesh(2), NORM)
        assert back.d_sd == pytest.approx(sphere_vs_ell2.d_sd, rel=1e-3)

    def test_rescaling(self):
        res = dsd(sphere_mesh(3), sphere_mesh(3, radius=2.0))
        assert res.d_sd == pytest.approx(4 * np.sqrt(np.pi), rel=0.01)

    def test_reflection_found(self):
        mesh = gen_three_bump(0.0, 2)
        res = dsd(mesh, reflect(mesh), DsdOptions(normalize=True, allow_reflection=True))
        assert res.d_sd < 1e-6 and res.orientation_reversed

    def test_seed_subset(self, ell2, sphere_vs_ell2):
        res = dsd(sphere_mesh(2), ell2, DsdOptions(normalize=True, seeds=3))
        assert len(res.per_seed) == 3
        assert res.d_sd >= sphere_vs_ell2.d_sd - 1e-9

    def test_threads_match_serial(self, ell2, sphere_vs_ell2):
        res = dsd(sphere_mesh(2), ell2, DsdOptions(normalize=True, threads=2))
        assert res.d_sd == sphere_vs_ell2.d_sd and res.best_seed == sphere_vs_ell2.best_seed

    def test_json(self, sphere_vs_ell2):
        out = json.loads(sphere_vs_ell2.to_json())
        assert set(out) == {"d_sd", "orientation_reversed", "mobius", "seeds", "flagged_vertices"}
        assert len(out["mobius"]) == 8
        assert set(out["seeds"][0]) == {"id", "energy", "iters", "converged"}
        m = MobiusTransform.from_list(out["mobius"])
        assert m.distance_to(sphere_vs_ell2.best_mobius) < 1e-12


class TestCorrespondenceFile:
    def test_round_trip(self, sphere_vs_ell2):
        text = write_correspondence(sphere_vs_ell2)
        assert text.startswith(CORR_HEADER)
        back = read_correspondence(text)
        corr = sphere_vs_ell2.correspondence
        np.testing.assert_array_equal(back["forward"].triangle_ids, corr.forward.triangle_ids)
        np.testing.assert_allclose(back["backward"].coords, corr.backward.coords, atol=1e-8)

    def test_mirrored_backward_uses_original_numbering(self):
        mesh = gen_three_bump(0.0, 2)
        res = dsd(mesh, reflect(mesh), DsdOptions(normalize=True, allow_reflection=True, seeds=2))
        assert res.orientation_reversed
        back = read_correspondence(write_correspondence(res))["backward"]
        # exported locations, read on the original first surface, mirror the internal ones
        pts = np.einsum("nk,nkd->nd", back.coords, mesh.vertices[mesh.triangles[back.triangle_ids]])
        src = res.correspondence.param1.source
        loc = res.correspondence.backward
        ref = np.einsum("nk,nkd->nd", loc.coords, src.vertices[src.triangles[loc.triangle_ids]])
        scale = np.sqrt(surface_area(mesh))
        np.testing.assert_allclose(pts / scale * [1, 1, -1], ref, atol=1e-7)

    def test_bad_header(self):
        with pytest.raises(ValueError):
            read_correspondence("forward 0\n")


class TestMatrix:
    def test_empty(self):
        res = distance_matrix([])
        assert res.matrix.shape == (0, 0)
        assert metric_audit(res.matrix).max_triangle_violation == 0

    def test_copies_and_distinct(self, ell2):
        s = sphere_mesh(2)
        res = distance_matrix([s, s, ell2], DsdOptions(normalize=True, seeds=4))
        D = res.matrix
        assert np.abs(np.diag(D)).max() == 0
        assert D[0, 1] < 1e-6
        np.testing.assert_array_equal(D, D.T)
        assert D[0, 2] == pytest.approx(D[1, 2], rel=1e-9)
        assert not res.errors

    def test_ellipsoid_triple(self):
        meshes = [gen_ellipsoid(a, 1.0, 1.0, 2) for a in (1.0, 1.5, 2.0)]
        D = distance_matrix(meshes, NORM).matrix
        report = metric_audit(D)
        assert report.max_symmetry_violation == 0
        assert report.max_triangle_violation <= 1e-6
        assert report.negative_entries == 0

    def test_failed_pair_marked(self, ell2):
        from test_mesh import torus

        res = distance_matrix([sphere_mesh(1), torus(), ell2], DsdOptions(normalize=True, seeds=2))
        assert np.isnan(res.matrix[0, 1]) and np.isnan(res.matrix[1, 2])
        assert np.isfinite(res.matrix[0, 2])
        assert (1, 1) in res.errors


class TestAudit:
    def test_hand_built_violation(self):
        D = np.array([[0, 1, 10], [1, 0, 1], [10, 1, 0]], dtype=float)
        r = metric_audit(D)
        assert r.max_triangle_violation == 8
        assert r.worst_triple in ((0, 1, 2), (2, 1, 0))
        assert r.max_relative_triangle_violation == pytest.approx(0.8)

    def test_asymmetry_and_negatives(self):
        D = np.array([[0, 1, 2], [1.5, 0, -1], [2, -1, 0]])
        r = metric_audit(D)
        assert r.max_symmetry_violation == 0.5
        assert r.negative_entries == 2
        assert set(r.to_dict()) >= {"max_symmetry_violation", "max_triangle_violation", "negative_entries"}
