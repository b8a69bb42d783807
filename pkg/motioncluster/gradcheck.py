"""
Finite-difference check of every loss term.

Each term is written as a function of one flat parameter vector

    axis(3) center(3) amount(1) global_translation(3) up_rotation(1)
    local_translation(3) moving_faces(6) base_faces(6)

on a small laptop joint, and its tape gradient is compared with central
differences at random parameter points.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .annotations import HINGE, PRISMATIC
from .articulation import (AlignmentParams, BoxDeform, HingeParams, PrismaticParams,
                           transform_base, transform_moving)
from .losses import (LossWeights, alignment_penalty, collision_penalty,
                     deformation_penalty, detachment_penalty_hinge,
                     detachment_penalty_prismatic, PairState, recon_loss,
                     rest_penetration, small_motion_penalty, total_loss)
from .shapes import ExtractOptions, Part, Shape, extract_joints
from .synth import build_parts, part_mesh

log = logging.getLogger(__name__)

TOLERANCE = 1e-4
STEP = 1e-4
N_PARAMS = 26
UNIT_WEIGHTS = LossWeights(w_joint=1.0, w_align_global=1.0, w_align_local=1.0, w_collide=1.0,
                           w_detach=1.0, w_center_detach=1.0, w_deform=1.0)
TERMS = ('recon', 'joint', 'align', 'deform', 'collide', 'detach', 'total')


@dataclass
class CheckResult:
    term: str
    motion_type: str
    error: float
    points: int

    @property
    def passed(self):
        return self.error < TOLERANCE


def fixture_joint(seed=0, n_points=64):
    """The lid joint of a generated laptop, sampled sparsely."""
    rng = np.random.default_rng(seed)
    parts = [Part(p.id, part_mesh(p), p.label, p.motion) for p in build_parts('laptop', rng)]
    shape = Shape('gradcheck', parts)
    options = ExtractOptions(points_per_part=n_points, dense_factor=2, eps_connect=0.02)
    joints = {j.part_id: j for j in extract_joints(shape, seed=seed, options=options)}
    return joints['lid']


def unpack(x, motion_type):
    """PairState of a flat parameter vector, array or variable."""
    axis = ad.normalize(ad.getitem(x, slice(0, 3)))
    amount = ad.getitem(x, 6)
    if motion_type == HINGE:
        motion = HingeParams(axis, ad.getitem(x, slice(3, 6)), amount)
    else:
        motion = PrismaticParams(axis, amount)
    align = AlignmentParams(ad.getitem(x, slice(7, 10)), ad.getitem(x, 10),
                            ad.getitem(x, slice(11, 14)))
    return PairState(motion, align, BoxDeform(ad.getitem(x, slice(14, 20))),
                     BoxDeform(ad.getitem(x, slice(20, 26))))


def random_point(joint, rng):
    """A parameter vector near the joint with a clear, non-zero motion."""
    x = np.zeros(N_PARAMS)
    x[0:3] = joint.moving_obb.axes[0] + rng.normal(0.0, 0.2, 3)
    x[3:6] = joint.moving_obb.center + rng.normal(0.0, 0.05, 3)
    x[6] = rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 0.25)
    x[7:10] = rng.normal(0.0, 0.02, 3)
    x[10] = rng.uniform(-0.2, 0.2)
    x[11:14] = rng.normal(0.0, 0.02, 3)
    x[14:20] = rng.uniform(-0.2, 0.2, 6) * np.repeat(joint.moving_obb.half_extents, 2)
    x[20:26] = rng.uniform(-0.2, 0.2, 6) * np.repeat(joint.base_obb.half_extents, 2)
    return x


def term_function(term, motion_type, joint, target, weights=UNIT_WEIGHTS):
    """Scalar function of the flat parameter vector computing one term."""
    pivot = np.concatenate([joint.moving.points, joint.base.points]).mean(axis=0)
    d0 = rest_penetration(joint)
    n = weights.path_samples

    def f(x):
        state = unpack(x, motion_type)
        if term == 'recon':
            moving = transform_moving(joint.moving.points, state.motion, state.align,
                                      state.moving_deform, joint.moving_obb, joint.up, pivot)
            base = transform_base(joint.base.points, state.align, state.base_deform,
                                  joint.base_obb, joint.up, pivot)
            return recon_loss(moving, base, target[0], target[1])
        if term == 'joint':
            return small_motion_penalty(state.motion.amount,
                                        weights.tau(motion_type, joint), weights.w_joint)
        if term == 'align':
            return alignment_penalty(state.align, weights)
        if term == 'deform':
            return deformation_penalty(state.moving_deform, state.base_deform,
                                       weights.w_deform)
        if term == 'collide':
            return collision_penalty(joint, state.motion, n, weights.w_collide, d0=d0)
        if term == 'detach':
            if motion_type == HINGE:
                return detachment_penalty_hinge(joint, state.motion, n, weights.contact_slack,
                                                weights.w_detach, weights.w_center_detach)
            return detachment_penalty_prismatic(joint, state.motion, n, weights.w_detach)
        return total_loss(joint, target[0], target[1], state, weights, pivot, d0).total
    return f


def _target(joint, motion_type, rng):
    state = unpack(random_point(joint, rng), motion_type)
    pivot = np.concatenate([joint.moving.points, joint.base.points]).mean(axis=0)
    moving = transform_moving(joint.moving.points, state.motion, state.align,
                              state.moving_deform, joint.moving_obb, joint.up, pivot)
    base = transform_base(joint.base.points, state.align, state.base_deform, joint.base_obb,
                          joint.up, pivot)
    return np.asarray(moving), np.asarray(base)


def run_gradcheck(points=20, seed=0, terms=TERMS, h=STEP):
    """
    Check every term for both motion types.

    Returns:
        list: CheckResult per (term, motion type) with the worst error over
        the random points.
    """
    joint = fixture_joint(seed)
    results = []
    for motion_type in (HINGE, PRISMATIC):
        for term in terms:
            rng = np.random.default_rng(seed)
            worst = 0.0
            for _ in range(points):
                target = _target(joint, motion_type, rng)
                x = random_point(joint, rng)
                f = term_function(term, motion_type, joint, target)
                worst = max(worst, ad.finite_diff_check(f, x, h))
            results.append(CheckResult(term, motion_type, worst, points))
            log.info('%s %s max error %.3g', motion_type, term, worst)
    return results


def format_results(results):
    rows = ['{:<10} {:<8} {:>12} {:>6}'.format('type', 'term', 'max error', 'status')]
    for r in results:
        rows.append('{:<10} {:<8} {:>12.3e} {:>6}'.format(
            r.motion_type, r.term, r.error, 'ok' if r.passed else 'FAIL'))
    return '\n'.join(rows)
