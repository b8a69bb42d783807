"""
Objectives for carrying a source joint onto a target joint.

Each term is written with :mod:`motioncluster.autodiff` operations, so it
evaluates on plain arrays and records onto a tape when any parameter is a
variable. All terms are non-negative.
"""

import logging
from dataclasses import dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from .annotations import HINGE, PRISMATIC
from .articulation import (HingeParams, apply_hinge, transform_base, transform_moving,
                           transport_box)
from .util import NumericalError

log = logging.getLogger(__name__)

ABLATIONS = ('small_motion', 'local_alignment', 'deformation', 'physics')


@dataclass(frozen=True)
class LossWeights:
    """
    Weights and thresholds for one motion type.

    tau_theta is the hinge small-motion threshold in radians; prismatic
    joints use tau_d_fraction times the largest extent of the moving box.
    """
    w_joint: float = 0.001
    w_align_global: float = 0.0
    w_align_local: float = 0.0025
    w_collide: float = 0.01
    w_detach: float = 0.01
    w_center_detach: float = 5.0
    w_deform: float = 0.001
    tau_theta: float = 0.3
    tau_d_fraction: float = 0.15
    contact_slack: float = 0.01
    path_samples: int = 8

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError('{} must be non-negative'.format(f.name))
        if self.path_samples < 2:
            raise ValueError('path_samples must be >= 2')

    def tau(self, motion_type, joint):
        if motion_type == HINGE:
            return self.tau_theta
        return self.tau_d_fraction * 2 * float(np.max(joint.moving_obb.half_extents))

    def ablated(self, ablations):
        """These weights with the named components switched off."""
        unknown = set(ablations) - set(ABLATIONS)
        if unknown:
            raise ValueError('unknown ablations {}'.format(sorted(unknown)))
        changes = {}
        if 'small_motion' in ablations:
            changes['w_joint'] = 0.0
        if 'local_alignment' in ablations:
            changes['w_align_local'] = 0.0
        if 'deformation' in ablations:
            changes['w_deform'] = 0.0
        if 'physics' in ablations:
            changes.update(w_collide=0.0, w_detach=0.0, w_center_detach=0.0)
        return replace(self, **changes)


HINGE_WEIGHTS = LossWeights()
PRISMATIC_WEIGHTS = LossWeights(w_joint=0.001, w_align_global=0.0, w_align_local=0.005,
                                w_collide=0.5, w_detach=0.5, w_center_detach=0.0,
                                w_deform=0.001)


TERMS = ('recon', 'joint', 'align', 'deform', 'collide', 'detach')


@dataclass
class LossBreakdown:
    """Weighted loss terms of one pair; total is their sum."""
    recon: object = 0.0
    joint: object = 0.0
    align: object = 0.0
    deform: object = 0.0
    collide: object = 0.0
    detach: object = 0.0
    total: object = None

    def __post_init__(self):
        if self.total is None:
            total = 0.0
            for name in TERMS:
                total = ad.add(total, getattr(self, name))
            self.total = total

    def check_finite(self):
        for name in TERMS + ('total',):
            if not np.all(np.isfinite(ad.value_of(getattr(self, name)))):
                raise NumericalError('non-finite {} loss'.format(name))
        return self

    def values(self):
        """The same breakdown with plain floats."""
        return LossBreakdown(**{name: float(ad.value_of(getattr(self, name)))
                                for name in TERMS + ('total',)})

    def to_dict(self):
        return {name: float(ad.value_of(getattr(self, name))) for name in TERMS + ('total',)}

    def batch_mean(self):
        """Mean over the pairs of a batched breakdown; the group loss."""
        return LossBreakdown(**{name: ad.mean(getattr(self, name)) for name in TERMS})

    def pair(self, i):
        """Plain float breakdown of pair i of a batch."""
        out = {}
        for name in TERMS + ('total',):
            value = np.asarray(ad.value_of(getattr(self, name)))
            out[name] = float(value[i]) if value.ndim else float(value)
        return LossBreakdown(**out)


def group_mean(breakdowns):
    """Component-wise mean of pair breakdowns (group or collection loss)."""
    breakdowns = list(breakdowns)
    if not breakdowns:
        raise ValueError('no pairs to average')
    k = float(len(breakdowns))
    terms = {}
    for name in TERMS:
        acc = 0.0
        for b in breakdowns:
            acc = ad.add(acc, getattr(b, name))
        terms[name] = ad.div(acc, k)
    return LossBreakdown(**terms)


def _safe_diag(points):
    return ad.maximum(geo.diag(points), 1e-6)


def recon_loss(moved_moving, moved_base, target_moving, target_base):
    """Chamfer of each transformed part to its target, divided by its diagonal."""
    m = ad.div(geo.chamfer(moved_moving, target_moving), _safe_diag(moved_moving))
    b = ad.div(geo.chamfer(moved_base, target_base), _safe_diag(moved_base))
    return ad.add(m, b)


def small_motion_penalty(amount, tau, w_joint):
    """w_joint * max(tau - |amount|, 0)."""
    return ad.mul(w_joint, ad.maximum(ad.sub(tau, ad.absolute(amount)), 0.0))


def alignment_penalty(align, weights):
    """Weighted magnitude of the global up rotation and the local translation."""
    rg = ad.mul(weights.w_align_global, ad.absolute(align.global_up_rotation))
    tl = ad.mul(weights.w_align_local, ad.norm(align.local_translation))
    return ad.add(rg, tl)


def deformation_penalty(moving_deform, base_deform, w_deform):
    total = 0.0
    for deform in (moving_deform, base_deform):
        if deform is not None:
            total = ad.add(total, ad.asum(ad.absolute(deform.faces), axis=-1))
    return ad.mul(w_deform, total)


def _fractions(n):
    return [i / n for i in range(1, n + 1)]


def rest_penetration(joint, base_points=None):
    """The most negative signed distance of base points to the rest moving box, or 0."""
    obb = joint.moving_obb
    points = joint.base.points if base_points is None else base_points
    sdf = geo.signed_distance(points, obb.center, obb.axes, obb.half_extents)
    return min(0.0, float(np.min(sdf)))


def collision_penalty(joint, motion, n, w_collide, base_points=None, d0=None):
    """
    Mean penetration of base points into the moving box along the motion path.

    The rest box is carried to n equally spaced poses; penetration already
    present at rest (d0) is not penalized.
    """
    if w_collide == 0:
        return 0.0
    points = joint.base.points if base_points is None else base_points
    if d0 is None:
        d0 = rest_penetration(joint, points)
    half = joint.moving_obb.half_extents
    total = 0.0
    for fraction in _fractions(n):
        center, axes = transport_box(joint.moving_obb, motion, fraction)
        sdf = geo.signed_distance(points, center, axes, half)
        total = ad.add(total, ad.mean(ad.maximum(ad.sub(d0, sdf), 0.0), axis=-1))
    return ad.mul(w_collide, ad.div(total, float(n)))


def detachment_penalty_hinge(joint, h, n, r, w_detach, w_center):
    """
    Keep the rest contact points together while rotating, and the rotation
    center inside the moving box.

    Contact points are paired by rank: the k-th moving point closest to the
    base with the k-th base point closest to the moving part.
    """
    total = 0.0
    if w_detach > 0:
        base = joint.base_contacts
        for fraction in _fractions(n):
            moved = apply_hinge(joint.moving_contacts, h, fraction)
            gap = ad.asum(ad.norm(ad.sub(moved, base)), axis=-1)
            total = ad.add(total, ad.maximum(ad.sub(gap, r), 0.0))
        total = ad.mul(w_detach, ad.div(total, float(n)))
    if w_center > 0:
        obb = joint.moving_obb
        outside = geo.signed_distance(h.center, obb.center, obb.axes, obb.half_extents)
        total = ad.add(total, ad.mul(w_center, ad.maximum(outside, 0.0)))
    return total


def detachment_penalty_prismatic(joint, p, n, w_detach):
    """Mean distance of the base points nearest the moving part to its sliding box."""
    if w_detach == 0:
        return 0.0
    points = joint.base_neighbors
    half = joint.moving_obb.half_extents
    total = 0.0
    for fraction in _fractions(n):
        center, axes = transport_box(joint.moving_obb, p, fraction)
        sdf = geo.signed_distance(points, center, axes, half)
        total = ad.add(total, ad.mean(ad.maximum(sdf, 0.0), axis=-1))
    return ad.mul(w_detach, ad.div(total, float(n)))


@dataclass
class PairState:
    """Motion and nuisance parameters of one source/target pair."""
    motion: object
    align: object
    moving_deform: object = None
    base_deform: object = None


def total_loss(source, target_moving, target_base, state, weights, pivot=None, d0=None):
    """
    Loss of carrying source onto a target: reconstruction plus all priors.

    Args:
        source (Joint): the source joint at rest.
        target_moving, target_base: target clouds, already pre-aligned.
        state (PairState): parameters, arrays or variables.
        weights (LossWeights): weights of the motion type of state.motion.
        pivot: center of the global up rotation, defaults to the source
            centroid.
        d0: rest penetration, computed when omitted.

    Returns:
        LossBreakdown
    """
    if pivot is None:
        pivot = np.concatenate([source.moving.points, source.base.points]).mean(axis=0)
    motion_type = HINGE if isinstance(state.motion, HingeParams) else PRISMATIC
    moved_moving = transform_moving(source.moving.points, state.motion, state.align,
                                    state.moving_deform, source.moving_obb, source.up, pivot)
    moved_base = transform_base(source.base.points, state.align, state.base_deform,
                                source.base_obb, source.up, pivot)
    n = weights.path_samples
    if motion_type == HINGE:
        detach = detachment_penalty_hinge(source, state.motion, n, weights.contact_slack,
                                          weights.w_detach, weights.w_center_detach)
    else:
        detach = detachment_penalty_prismatic(source, state.motion, n, weights.w_detach)
    breakdown = LossBreakdown(
        recon=recon_loss(moved_moving, moved_base, target_moving, target_base),
        joint=small_motion_penalty(state.motion.amount, weights.tau(motion_type, source),
                                   weights.w_joint),
        align=alignment_penalty(state.align, weights),
        deform=deformation_penalty(state.moving_deform, state.base_deform, weights.w_deform),
        collide=collision_penalty(source, state.motion, n, weights.w_collide, d0=d0),
        detach=detach,
    )
    return breakdown.check_finite()
