"""Correspondences induced by Möbius transforms and the energies evaluated on them.

A correspondence maps every vertex of one mesh to a barycentric location on
the other by pushing its spherical image through a Möbius transform. Energies
are edge sums over the domain mesh: for edge e with length l(e), image length
l(f(e)) (chordal distance between the embedded image points) and ratio
r = l(f(e)) / l(e), each term is weighted by A_e / 3 where A_e is the area of
the two triangles sharing e.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .mesh import edge_area_weights, surface_area
from .mobius import MobiusTransform, apply, inverse
from .sphere import Locations, embed

FLAG_LIMIT = 1e-3
RATIO_FLOOR = 1e-12


class CorrespondenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class CorrespondenceMap:
    """Forward (F1 -> F2) and backward (F2 -> F1) vertex locations for one transform."""

    param1: object
    param2: object
    forward: Locations
    backward: Locations
    mobius: MobiusTransform

    @property
    def flags_forward(self):
        return self.forward.fallback

    @property
    def flags_backward(self):
        return self.backward.fallback

    def swapped(self):
        return CorrespondenceMap(self.param2, self.param1, self.backward, self.forward, inverse(self.mobius))

    def _sides(self, direction):
        if direction == "forward":
            return self.param1.source, self.param2.source, self.forward
        if direction == "backward":
            return self.param2.source, self.param1.source, self.backward
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")


def transfer(param1, param2, m):
    """Correspondence f = c2^-1 o m o c1 and its inverse, located vertex by vertex."""
    forward = param2.locator.locate_many(apply(m, param1.sphere_positions))
    backward = param1.locator.locate_many(apply(inverse(m), param2.sphere_positions))
    return CorrespondenceMap(param1, param2, forward, backward, m)


def stretch_ratios(corr, direction="forward"):
    """Per-edge ratios l(f(e)) / l(e) over the domain mesh, with the weights A_e / 3."""
    domain, codomain, loc = corr._sides(direction)
    image = embed(codomain, loc)
    e = domain.edges
    ratio = np.linalg.norm(image[e[:, 1]] - image[e[:, 0]], axis=1) / domain.edge_lengths
    return ratio, edge_area_weights(domain) / 3.0


def _weighted_sum(values, weights):
    # fixed-order reduction keeps results bit-stable
    return float(np.dot(values, weights))


def elastic_sum(corr, direction="forward"):
    r, w = stretch_ratios(corr, direction)
    return _weighted_sum((r - 1.0) ** 2, w)


def average_stretch(corr, direction="forward"):
    r, w = stretch_ratios(corr, direction)
    return _weighted_sum(r, w)


def dirichlet_energy(corr, direction="forward"):
    r, w = stretch_ratios(corr, direction)
    return _weighted_sum(r**2, w)


def lp_energy(corr, direction="forward", p=2.0):
    if p < 1:
        raise ValueError("p must be >= 1")
    r, w = stretch_ratios(corr, direction)
    if np.any(r <= 0):
        raise CorrespondenceError("nonpositive stretch ratio")
    u = np.abs(np.log(np.maximum(r, RATIO_FLOOR)))
    return _weighted_sum(u**p, w) ** (1.0 / p)


def lemma_e1_residual(corr):
    """L(f) - (Area(F2) + Area(F1) - 2 E1(f)); vanishes for resolved conformal maps."""
    f1 = corr.param1.source
    f2 = corr.param2.source
    return elastic_sum(corr) - (surface_area(f2) + surface_area(f1) - 2.0 * average_stretch(corr))


@dataclass(eq=False)
class EnergyBreakdown:
    forward_elastic: float
    backward_elastic: float
    e_sd: float
    per_edge_forward: np.ndarray
    per_edge_backward: np.ndarray
    areas_F1: np.ndarray
    areas_F2: np.ndarray
    flagged_forward: int = 0
    flagged_backward: int = 0

    def to_dict(self):
        return {
            "e_sd": self.e_sd,
            "forward_elastic": self.forward_elastic,
            "backward_elastic": self.backward_elastic,
            "flagged_forward": self.flagged_forward,
            "flagged_backward": self.flagged_backward,
        }

    def to_json(self):
        return json.dumps(self.to_dict())


def symmetric_distortion(corr, flag_limit=FLAG_LIMIT):
    """E_sd = sqrt(L(f)) + sqrt(L(f^-1)), each direction weighted by its own domain mesh."""
    nf = int(np.count_nonzero(corr.flags_forward))
    nb = int(np.count_nonzero(corr.flags_backward))
    if nf > flag_limit * len(corr.forward) or nb > flag_limit * len(corr.backward):
        raise CorrespondenceError(f"too many point-location fallbacks ({nf} forward, {nb} backward)")
    rf, wf = stretch_ratios(corr, "forward")
    rb, wb = stretch_ratios(corr, "backward")
    lf = _weighted_sum((rf - 1.0) ** 2, wf)
    lb = _weighted_sum((rb - 1.0) ** 2, wb)
    return EnergyBreakdown(
        forward_elastic=lf,
        backward_elastic=lb,
        e_sd=float(np.sqrt(lf) + np.sqrt(lb)),
        per_edge_forward=rf,
        per_edge_backward=rb,
        areas_F1=corr.param1.source.triangle_areas,
        areas_F2=corr.param2.source.triangle_areas,
        flagged_forward=nf,
        flagged_backward=nb,
    )


def distortion_field(corr):
    """Per-vertex mean |r - 1| over incident F1 edges, and the same field carried to F2.

    Returns (field_on_F1, field_on_F2); the F2 values interpolate the F1 field
    at each F2 vertex's backward location.
    """
    f1 = corr.param1.source
    r, _ = stretch_ratios(corr, "forward")
    dev = np.abs(r - 1.0)
    e = f1.edges
    total = np.bincount(e.reshape(-1), weights=np.repeat(dev, 2), minlength=f1.n_vertices)
    count = np.bincount(e.reshape(-1), minlength=f1.n_vertices)
    field1 = total / np.maximum(count, 1)
    corners = f1.triangles[corr.backward.triangle_ids]
    field2 = np.einsum("nk,nk->n", corr.backward.coords, field1[corners])
    return field1, field2
