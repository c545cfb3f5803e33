import numpy as np
import pytest
from scipy import integrate

from gsd.mobius import MobiusTransform, dilation, inverse
from gsd.oracles import (
    SPHERE_AREA,
    QuadratureError,
    QuadratureSpec,
    e1_scaling,
    elastic_identity,
    lambda_closed_form,
    quadrature_e1,
    rescaling_distance,
)
from gsd.sphere import inverse_stereographic


class TestLambda:
    def test_translation(self):
        assert lambda_closed_form("translation", 1.0, 0) == pytest.approx(0.5)

    def test_scaling(self):
        assert lambda_closed_form("scaling", 2.0, 1) == pytest.approx(0.8)

    def test_unit_scaling(self):
        z = np.array([0, 1j, 3 - 2j, 100])
        np.testing.assert_allclose(lambda_closed_form("scaling", 1.0, z), 1.0)

    def test_matches_dilation(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            kind = ["translation", "scaling"][rng.integers(2)]
            param = complex(*rng.normal(size=2) * 2)
            z = complex(*rng.normal(size=2) * 2)
            m = getattr(MobiusTransform, kind)(param)
            assert lambda_closed_form(kind, param, z) == pytest.approx(
                dilation(m, inverse_stereographic(z)), rel=1e-10
            )

    def test_unknown(self):
        with pytest.raises(ValueError):
            lambda_closed_form("rotation", 1, 0)


class TestE1Scaling:
    def test_values(self):
        assert e1_scaling(2) == pytest.approx(16 * np.pi * np.log(2) / 3, rel=1e-14)
        assert e1_scaling(2) == pytest.approx(11.6137, abs=1e-4)
        assert e1_scaling(5) == pytest.approx(8 * np.pi * 5 * np.log(5) / 24, rel=1e-14)
        assert e1_scaling(5) == pytest.approx(8.42700, abs=1e-5)

    def test_limit(self):
        assert e1_scaling(1 + 1e-9) == pytest.approx(SPHERE_AREA, rel=1e-8)

    def test_rejects_small(self):
        for A in (1.0, 0.5, -2):
            with pytest.raises(ValueError):
                e1_scaling(A)

    def test_decreasing_to_zero(self):
        A = np.geomspace(1.001, 1e8, 200)
        v = np.array([e1_scaling(a) for a in A])
        assert np.all(np.diff(v) < 0)
        assert v[-1] < 1e-5


class TestQuadrature:
    def test_identity(self):
        assert quadrature_e1(MobiusTransform.identity()) == pytest.approx(4 * np.pi, rel=1e-8)

    def test_rotation(self):
        m = MobiusTransform.from_coefficients(np.exp(0.3j), 0.4, -0.4, np.exp(-0.3j))
        assert quadrature_e1(m) == pytest.approx(4 * np.pi, rel=1e-8)

    @pytest.mark.parametrize("A", [1.1, 1.5, 2.0, 5.0, 10.0])
    def test_scaling_closed_form(self, A):
        assert quadrature_e1(MobiusTransform.scaling(A)) == pytest.approx(e1_scaling(A), rel=1e-6)

    @pytest.mark.parametrize("A", [1.5, 2.0, 5.0])
    def test_reciprocity(self, A):
        m = MobiusTransform.scaling(A)
        assert quadrature_e1(inverse(m)) == pytest.approx(quadrature_e1(m), rel=1e-6)

    def test_converged_on_unit_dilation(self):
        spec = QuadratureSpec()
        a = quadrature_e1(MobiusTransform.identity(), spec)
        b = quadrature_e1(MobiusTransform.identity(), spec.doubled())
        assert abs(a - b) < 1e-8 * a

    def test_affine_case_against_scipy(self):
        # z -> A z + B has no closed form; check against adaptive quadrature in the plane
        A, B = 2.0, 0.7

        def f(r, t):
            z = r * np.exp(1j * t)
            lam = A * (1 + r * r) / (1 + abs(A * z + B) ** 2)
            return lam * 4 / (1 + r * r) ** 2 * r

        ref, _ = integrate.dblquad(f, 0, 2 * np.pi, 0, np.inf, epsabs=1e-11, epsrel=1e-11)
        m = MobiusTransform.from_coefficients(A, B, 0, 1)
        assert quadrature_e1(m) == pytest.approx(ref, rel=1e-7)

    def test_decreasing_under_translation(self):
        values = [quadrature_e1(MobiusTransform.translation(B)) for B in (0.5, 1, 2, 4, 8)]
        assert np.all(np.diff(values) < 0)

    def test_cutoff_half_sphere(self):
        spec = QuadratureSpec(cutoff=1.0)
        assert quadrature_e1(MobiusTransform.identity(), spec) == pytest.approx(2 * np.pi, rel=1e-9)

    def test_unconverged_reported(self):
        with pytest.raises(QuadratureError):
            quadrature_e1(MobiusTransform.scaling(50.0), QuadratureSpec(radial_nodes=8, angular_nodes=8))


class TestDistances:
    def test_rescaling(self):
        assert rescaling_distance(3.0, 3.0) == 0
        assert rescaling_distance(4 * np.pi, 16 * np.pi) == pytest.approx(4 * np.sqrt(np.pi))
        assert rescaling_distance(4 * np.pi, 16 * np.pi) == pytest.approx(7.0898, abs=1e-4)
        assert rescaling_distance(16 * np.pi, 4 * np.pi) == rescaling_distance(4 * np.pi, 16 * np.pi)

    def test_rescaling_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            rescaling_distance(0, 1)

    def test_elastic_identity(self):
        assert elastic_identity(4 * np.pi, 4 * np.pi, 4 * np.pi) == 0
        assert elastic_identity(4 * np.pi, 4 * np.pi, e1_scaling(2)) == pytest.approx(1.90516, abs=1e-5)
        for e1 in (0.0, 1.0, 11.6):
            assert elastic_identity(4 * np.pi, 4 * np.pi, e1) <= 8 * np.pi
