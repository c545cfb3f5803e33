"""Closed-form reference values and quadrature for conformal self-maps of the unit sphere.

For a Möbius transform m with dilation lambda, the average stretch is
E1(m) = integral of lambda over the unit sphere. For m(z) = A z it equals
8 pi A log A / (A^2 - 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mobius import MobiusTransform, apply, dilation

SPHERE_AREA = 4.0 * np.pi


class QuadratureError(RuntimeError):
    pass


def lambda_closed_form(kind, param, z):
    """Dilation of z -> z + B (``kind="translation"``) or z -> A z (``kind="scaling"``) at z."""
    z = np.asarray(z, dtype=complex)
    r2 = np.abs(z) ** 2
    if kind == "translation":
        return (1 + r2) / (1 + np.abs(z + param) ** 2)
    if kind == "scaling":
        a = abs(param)
        return a * (1 + r2) / (1 + a * a * r2)
    raise ValueError(f"unknown kind {kind!r}")


def e1_scaling(A):
    """Average stretch of z -> A z on the unit sphere, A > 1.

    E1 is invariant under A -> 1/A (the inverse map), so for 0 < A < 1 call
    ``e1_scaling(1 / A)``. The A -> 1 limit is the sphere area 4 pi.
    """
    A = float(A)
    if not A > 1:
        raise ValueError("A must be > 1; use e1_scaling(1 / A) for A < 1")
    return 8 * np.pi * A * np.log1p(A - 1) / ((A - 1) * (A + 1))


@dataclass(frozen=True)
class QuadratureSpec:
    """Tensor grid on the sphere: Gauss-Legendre in cos(theta), trapezoid in phi.

    theta is the angle from the south pole, so the stereographic radius is
    r = tan(theta / 2) and the whole plane maps to a finite interval.
    ``cutoff`` restricts the integral to r <= cutoff; None integrates the full
    plane.
    """

    radial_nodes: int = 400
    angular_nodes: int = 64
    cutoff: float | None = None
    tol: float = 1e-9

    def doubled(self):
        return QuadratureSpec(2 * self.radial_nodes, 2 * self.angular_nodes, self.cutoff, self.tol)


def _integrate(m, spec, frame):
    # x = -cos(theta) runs from the south pole (r = 0) to the cutoff
    top = 1.0 if spec.cutoff is None else (spec.cutoff**2 - 1) / (spec.cutoff**2 + 1)
    nodes, weights = np.polynomial.legendre.leggauss(spec.radial_nodes)
    x = -1 + (nodes + 1) * (top + 1) / 2
    wx = weights * (top + 1) / 2
    phi = 2 * np.pi * np.arange(spec.angular_nodes) / spec.angular_nodes
    s = np.sqrt(np.maximum(1 - x * x, 0.0))
    p = np.empty((len(x), len(phi), 3))
    p[..., 0] = s[:, None] * np.cos(phi)
    p[..., 1] = s[:, None] * np.sin(phi)
    p[..., 2] = x[:, None]
    # dA = d(cos theta) d(phi) on the unit sphere
    lam = dilation(m, p.reshape(-1, 3) @ frame.T).reshape(p.shape[:2])
    return float(wx @ lam.sum(axis=1) * (2 * np.pi / spec.angular_nodes))


def _stretch_frame(m):
    """Rotation whose pole (0, 0, -1) is the direction of m's strongest stretch."""
    # with m = U diag(s1, s2) V^H the dilation peaks at the spinor v2, so the
    # unitary V, which sends (0, 1) to v2, carries the south pole there
    _, _, vh = np.linalg.svd(m.matrix)
    return apply(MobiusTransform(vh.conj().T), np.eye(3)).T


def quadrature_e1(m, spec=None):
    """Integral of dilation(m, .) over the unit sphere; raises if doubling the grid disagrees."""
    spec = spec or QuadratureSpec()
    # a cutoff is a disc in the original plane, so only rotate the full-sphere grid
    frame = np.eye(3) if spec.cutoff is not None else _stretch_frame(m)
    coarse = _integrate(m, spec, frame)
    fine = _integrate(m, spec.doubled(), frame)
    if abs(fine - coarse) > spec.tol * abs(fine):
        raise QuadratureError(f"quadrature not converged: {coarse!r} vs {fine!r} after doubling")
    return fine


def rescaling_distance(area1, area2):
    """Distance between two round spheres of the given areas: 2 |sqrt(A2) - sqrt(A1)|."""
    if area1 <= 0 or area2 <= 0:
        raise ValueError("areas must be positive")
    return 2.0 * abs(np.sqrt(area2) - np.sqrt(area1))


def elastic_identity(area1, area2, e1):
    """Elastic energy of a conformal map with average stretch ``e1``: A2 + A1 - 2 e1."""
    return area2 + area1 - 2.0 * e1
