"""
The transformation model that carries a source joint onto a target joint.

The moving part is articulated by its joint motion (a hinge rotation or a
prismatic translation), shifted by a local translation, then the whole
joint is rotated about world up and translated. Each part also has a box
deformer: six face displacements of its oriented bounding box.

Every function accepts arrays or tape variables for points and parameters.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import PointCloud, as_points
from .util import NumericalError

log = logging.getLogger(__name__)

UNIT_TOLERANCE = 1e-6


class ArticulationError(NumericalError):
    """Invalid transform parameters, such as a collapsed box."""


def _check_unit(axis):
    if ad.is_variable(axis):
        return
    length = np.linalg.norm(ad.value_of(axis))
    if abs(length - 1.0) > UNIT_TOLERANCE:
        raise ArticulationError('axis must be unit length, got norm {}'.format(length))


@dataclass
class HingeParams:
    axis: object
    center: object
    angle: object = 0.0

    def __post_init__(self):
        _check_unit(self.axis)

    @property
    def amount(self):
        return self.angle


@dataclass
class PrismaticParams:
    axis: object
    displacement: object = 0.0

    def __post_init__(self):
        _check_unit(self.axis)

    @property
    def amount(self):
        return self.displacement


@dataclass
class AlignmentParams:
    global_translation: object = None
    global_up_rotation: object = 0.0
    local_translation: object = None

    def __post_init__(self):
        if self.global_translation is None:
            self.global_translation = np.zeros(3)
        if self.local_translation is None:
            self.local_translation = np.zeros(3)


@dataclass
class BoxDeform:
    """Face displacements ordered +x, -x, +y, -y, +z, -z in the box frame."""
    faces: object = None

    def __post_init__(self):
        if self.faces is None:
            self.faces = np.zeros(6)


def _wrap(source, points):
    if isinstance(source, PointCloud):
        return PointCloud(ad.value_of(points), source.flags)
    return points


def _lift(x, ndim, vector=False):
    """Reshape a per-pair (K,) scalar or (K, 3) vector to broadcast over points."""
    value = ad.value_of(x)
    base = 1 if vector else 0
    if value.ndim <= base:
        return x
    return ad.reshape(x, value.shape[:1] + (1,) * (ndim - base) + value.shape[1:])


def _trailing(points):
    return min(np.ndim(ad.value_of(points)), 2)


def apply_hinge(cloud, h, fraction=1.0):
    """
    Rotate by fraction * angle about the axis line through the center.

    A (K,) angle rotates the cloud K times and gives a (K, N, 3) batch.
    """
    points = as_points(cloud)
    angle = _lift(ad.mul(h.angle, fraction), _trailing(points))
    moved = ad.add(ad.rotate(ad.sub(points, h.center), h.axis, angle), h.center)
    return _wrap(cloud, moved)


def apply_prismatic(cloud, p, fraction=1.0):
    """Translate by fraction * displacement along the axis."""
    points = as_points(cloud)
    d = _lift(ad.mul(p.displacement, fraction), _trailing(points))
    return _wrap(cloud, ad.add(points, ad.mul(p.axis, d)))


def apply_motion(cloud, motion, fraction=1.0):
    if isinstance(motion, HingeParams):
        return apply_hinge(cloud, motion, fraction)
    return apply_prismatic(cloud, motion, fraction)


def project_local_translation(local_translation, axis):
    """Remove the component of a translation along the axis."""
    along = ad.expand(ad.dot(local_translation, axis), -1)
    return ad.sub(local_translation, ad.mul(along, axis))


def axial_local_translation(local_translation, axis):
    """Keep only the component of a translation along the axis."""
    return ad.mul(ad.expand(ad.dot(local_translation, axis), -1), axis)


def deformed_scales(obb, deform):
    """Per-axis scales of the positive and negative half of the box."""
    half = obb.half_extents
    faces = deform.faces
    pos = ad.add(half, ad.getitem(faces, (Ellipsis, slice(0, 6, 2))))
    neg = ad.add(half, ad.getitem(faces, (Ellipsis, slice(1, 6, 2))))
    if np.any(ad.value_of(pos) <= 0) or np.any(ad.value_of(neg) <= 0):
        raise ArticulationError('box deformation collapses a face pair')
    return ad.div(pos, half), ad.div(neg, half)


def apply_box_deform(cloud, obb, deform):
    """
    Remap each box coordinate piecewise linearly so the two face planes of
    every axis land on their displaced positions, keeping the center fixed.
    """
    points = as_points(cloud)
    pos, neg = deformed_scales(obb, deform)
    nd = _trailing(points)
    pos, neg = _lift(pos, nd, vector=True), _lift(neg, nd, vector=True)
    local = ad.matmul(ad.sub(points, obb.center), ad.transpose(obb.axes))
    positive = ad.value_of(local) >= 0
    scaled = ad.where(positive, ad.mul(local, pos), ad.mul(local, neg))
    return _wrap(cloud, ad.add(ad.matmul(scaled, obb.axes), obb.center))


def rotate_about_up(points, angle, up, pivot=None):
    """Rotate points about the world up direction through pivot."""
    angle = _lift(angle, _trailing(points))
    if pivot is None:
        return ad.rotate(points, up, angle)
    return ad.add(ad.rotate(ad.sub(points, pivot), up, angle), pivot)


def _align(points, align, up, pivot):
    rotated = rotate_about_up(points, align.global_up_rotation, up, pivot)
    return ad.add(rotated, _lift(align.global_translation, _trailing(points), vector=True))


def transform_moving(moving, motion, align, deform, moving_obb, up=(0.0, 0.0, 1.0),
                     pivot=None, fraction=1.0):
    """
    Carry the moving part of a source joint toward a target.

    The box deformer acts in the rest-pose box frame, then the joint motion,
    the local translation, the global up rotation and the global
    translation follow in that order. Parameters with a leading axis of K
    pairs give a (K, N, 3) batch.
    """
    points = as_points(moving)
    if deform is not None:
        points = apply_box_deform(points, moving_obb, deform)
    points = apply_motion(points, motion, fraction)
    points = ad.add(points, _lift(align.local_translation, _trailing(points), vector=True))
    return _wrap(moving, _align(points, align, np.asarray(up, dtype=float), pivot))


def transform_base(base, align, deform, base_obb, up=(0.0, 0.0, 1.0), pivot=None):
    """Carry the base part: box deformation, up rotation, translation."""
    points = as_points(base)
    if deform is not None:
        points = apply_box_deform(points, base_obb, deform)
    return _wrap(base, _align(points, align, np.asarray(up, dtype=float), pivot))


def transport_box(obb, motion, fraction=1.0):
    """
    Center and axes of a rest-pose box rigidly carried by the joint motion.

    Returns:
        tuple: (center, axes) as arrays or variables, (K, 3) and (K, 3, 3)
        for a batch of K amounts.
    """
    if isinstance(motion, HingeParams):
        angle = ad.mul(motion.angle, fraction)
        center = ad.add(ad.rotate(ad.sub(obb.center, motion.center), motion.axis,
                                  _lift(angle, 1)), motion.center)
        axes = ad.rotate(obb.axes, motion.axis, _lift(angle, 2))
        return center, axes
    offset = ad.mul(motion.axis, _lift(ad.mul(motion.displacement, fraction), 1))
    return ad.add(obb.center, offset), obb.axes
