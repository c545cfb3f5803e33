"""Möbius transformations of the unit sphere as unit-determinant 2x2 complex matrices.

A transform acts on stereographic coordinates by z -> (az + b) / (cz + d).
Internally points are lifted to homogeneous pairs (s1, s2) with z = s1 / s2,
which keeps the poles free of special cases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sphere import from_spinor, to_spinor


class CenteringError(RuntimeError):
    pass


def _unit_det(M):
    M = np.asarray(M, dtype=complex)
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    if abs(det) == 0:
        raise ValueError("singular Möbius matrix")
    return M / np.sqrt(det)


@dataclass(frozen=True, eq=False)
class MobiusTransform:
    matrix: np.ndarray

    def __post_init__(self):
        M = _unit_det(self.matrix)
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @classmethod
    def identity(cls):
        return cls(np.eye(2, dtype=complex))

    @classmethod
    def from_coefficients(cls, a, b, c, d):
        return cls(np.array([[a, b], [c, d]], dtype=complex))

    @classmethod
    def scaling(cls, A):
        """z -> A z."""
        return cls.from_coefficients(A, 0, 0, 1)

    @classmethod
    def translation(cls, B):
        """z -> z + B."""
        return cls.from_coefficients(1, B, 0, 1)

    @classmethod
    def from_rotation(cls, R):
        """The Möbius transform realizing a proper 3x3 rotation of the sphere."""
        R = np.asarray(R, dtype=float)
        ref = np.eye(3)
        return from_three_points(ref[0], ref[1], ref[2], R @ ref[0], R @ ref[1], R @ ref[2])

    def __call__(self, z):
        """Act on (extended) complex numbers."""
        z = np.asarray(z, dtype=complex)
        (a, b), (c, d) = self.matrix
        inf = ~np.isfinite(z)
        zf = np.where(inf, 0, z)
        num = np.where(inf, a, a * zf + b)
        den = np.where(inf, c, c * zf + d)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(den == 0, complex(np.inf, 0), num / np.where(den == 0, 1, den))
        return out[()] if out.ndim == 0 else out

    def to_list(self):
        return [float(x) for entry in self.matrix.reshape(-1) for x in (entry.real, entry.imag)]

    @classmethod
    def from_list(cls, values):
        v = np.asarray(values, dtype=float).reshape(4, 2)
        return cls((v[:, 0] + 1j * v[:, 1]).reshape(2, 2))

    def distance_to(self, other):
        """Frobenius distance between matrices, minimized over the sign ambiguity."""
        return float(min(np.linalg.norm(self.matrix - other.matrix), np.linalg.norm(self.matrix + other.matrix)))

    def __repr__(self):
        (a, b), (c, d) = self.matrix
        return f"MobiusTransform(a={a:.6g}, b={b:.6g}, c={c:.6g}, d={d:.6g})"


def apply(m, p):
    """Image of unit vector(s) ``p`` under ``m``."""
    s = to_spinor(p)
    return from_spinor(s @ m.matrix.T)


def dilation(m, p):
    """Conformal factor of ``m`` at ``p`` for the round metric.

    In stereographic coordinates this is |m'(z)| (1 + |z|^2) / (1 + |m(z)|^2),
    which for a unit-determinant matrix reduces to |s|^2 / |M s|^2 on the
    homogeneous lift s of ``p``.
    """
    s = to_spinor(p)
    ms = s @ m.matrix.T
    return np.sum(np.abs(s) ** 2, axis=-1) / np.sum(np.abs(ms) ** 2, axis=-1)


def compose(m1, m2):
    """m1 after m2."""
    return MobiusTransform(m1.matrix @ m2.matrix)


def inverse(m):
    (a, b), (c, d) = m.matrix
    return MobiusTransform(np.array([[d, -b], [-c, a]]))


def _normalizer(p1, p2, p3):
    """Matrix sending p1 -> 0, p2 -> 1, p3 -> infinity."""
    s1, s2, s3 = (to_spinor(np.asarray(p, dtype=float)) for p in (p1, p2, p3))
    A = np.stack([s3, s1], axis=1)
    if abs(np.linalg.det(A)) < 1e-14 * np.linalg.norm(s1) * np.linalg.norm(s3):
        raise ValueError("coincident points")
    alpha, beta = np.linalg.solve(A, s2)
    if min(abs(alpha), abs(beta)) < 1e-14 * np.linalg.norm(s2):
        raise ValueError("coincident points")
    return np.diag([1 / alpha, 1 / beta]) @ np.linalg.inv(A)


def from_three_points(p1, p2, p3, q1, q2, q3):
    """The unique transform with p_i -> q_i (points given as unit vectors)."""
    Tp = _normalizer(p1, p2, p3)
    Tq = _normalizer(q1, q2, q3)
    return MobiusTransform(np.linalg.solve(Tq, Tp))


# ---------------------------------------------------------------------------
# local chart

# real basis of sl(2, C): offset t maps to [[t0 + i t1, t2 + i t3], [t4 + i t5, -(t0 + i t1)]]


def sl2_element(offset):
    t = np.asarray(offset, dtype=float)
    u = t[0] + 1j * t[1]
    return np.array([[u, t[2] + 1j * t[3]], [t[4] + 1j * t[5], -u]])


def expm_traceless(X):
    """exp of a traceless 2x2 matrix, using X^2 = -det(X) I."""
    delta = X[0, 0] ** 2 + X[0, 1] * X[1, 0]
    if abs(delta) < 1e-8:
        ch = 1 + delta / 2 + delta**2 / 24
        sh = 1 + delta / 6 + delta**2 / 120
    else:
        s = np.sqrt(delta + 0j)
        ch = np.cosh(s)
        sh = np.sinh(s) / s
    return ch * np.eye(2) + sh * X


@dataclass(frozen=True, eq=False)
class MobiusChart:
    """Six-parameter chart around ``base``: offset t gives exp(X(t)) after base."""

    base: MobiusTransform
    offset: np.ndarray = None

    def __post_init__(self):
        off = np.zeros(6) if self.offset is None else np.asarray(self.offset, dtype=float).reshape(6)
        object.__setattr__(self, "offset", off)

    def at(self, offset):
        return MobiusChart(self.base, offset)


def perturb(chart, offset=None):
    off = chart.offset if offset is None else np.asarray(offset, dtype=float)
    if not np.any(off):
        return chart.base
    return MobiusTransform(expm_traceless(sl2_element(off)) @ chart.base.matrix)


# ---------------------------------------------------------------------------
# centering


def _rotation_to_north(u):
    """3x3 rotation taking unit vector u to (0, 0, 1)."""
    n = np.array([0.0, 0.0, 1.0])
    axis = np.cross(u, n)
    s = np.linalg.norm(axis)
    c = float(np.dot(u, n))
    if s < 1e-15:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    k = axis / s
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * K + (1 - c) * K @ K


def hyperbolic_translation(vector):
    """Transform pushing points away from direction ``vector`` by hyperbolic distance |vector|.

    To first order a point x moves by -(b - (x.b) x) for b = ``vector``.
    """
    b = np.asarray(vector, dtype=float)
    t = np.linalg.norm(b)
    if t == 0:
        return MobiusTransform.identity()
    rot = MobiusTransform.from_rotation(_rotation_to_north(b / t))
    shrink = MobiusTransform.scaling(np.exp(-t))
    return compose(inverse(rot), compose(shrink, rot))


def center_vertices(points, tol=1e-8, max_iter=1000, max_step=1.0):
    """Möbius transform moving the Euclidean mean of ``points`` to the origin.

    Newton iteration on hyperbolic translations: the mean c responds to a
    translation b as dc = -(I - E[x x^T]) b, so each step solves for b and caps
    its length at ``max_step``.
    """
    pts = np.asarray(points, dtype=float)
    if len(pts) < 4:
        raise CenteringError("need at least four points to center")
    total = MobiusTransform.identity()
    cur = pts
    norm = np.inf
    for _ in range(max_iter):
        c = cur.mean(axis=0)
        norm = np.linalg.norm(c)
        if norm <= tol:
            return total
        if norm > 1 - 1e-12:
            raise CenteringError("points are concentrated at a single location")
        J = np.eye(3) - cur.T @ cur / len(cur)
        b = np.linalg.lstsq(J, c, rcond=None)[0]
        step = np.linalg.norm(b)
        if step > max_step:
            b *= max_step / step
        total = compose(hyperbolic_translation(b), total)
        cur = apply(total, pts)
    raise CenteringError(f"centering did not converge; |center| = {norm:.3e} after {max_iter} iterations")
