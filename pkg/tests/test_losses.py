import numpy as np
import pytest

from motioncluster import geometry as geo
from motioncluster.articulation import (AlignmentParams, BoxDeform, HingeParams, PrismaticParams,
                                        transform_base, transform_moving)
from motioncluster.geometry import OrientedBox, PointCloud
from motioncluster.losses import (HINGE_WEIGHTS, PRISMATIC_WEIGHTS, LossBreakdown, LossWeights,
                                  PairState, alignment_penalty, collision_penalty,
                                  deformation_penalty, detachment_penalty_hinge,
                                  detachment_penalty_prismatic, group_mean, recon_loss,
                                  rest_penetration, small_motion_penalty, total_loss)
from motioncluster.shapes import Joint
from motioncluster.util import NumericalError

X = np.array([1.0, 0.0, 0.0])
Y = np.array([0.0, 1.0, 0.0])
Z = np.array([0.0, 0.0, 1.0])


def box_surface(lo, hi, step=0.1):
    """Grid points on the six faces of an axis-aligned box."""
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    axes = [np.round(np.arange(lo[i], hi[i] + step / 2, step), 9) for i in range(3)]
    points = []
    for i in range(3):
        j, k = [a for a in range(3) if a != i]
        for value in (lo[i], hi[i]):
            for u in axes[j]:
                for v in axes[k]:
                    p = np.empty(3)
                    p[i], p[j], p[k] = value, u, v
                    points.append(p)
    return np.unique(np.array(points), axis=0)


def make_joint(moving, base, contacts=10, neighbors=50):
    moving, base = np.asarray(moving, dtype=float), np.asarray(base, dtype=float)
    mc, bc = geo.contact_points(moving, base, contacts)
    return Joint('s/m', 's', PointCloud(moving), PointCloud(base), ('m',), 'b',
                 geo.min_volume_obb(moving), geo.min_volume_obb(base), (1, 1), mc, bc,
                 geo.nearest_to(base, moving, neighbors))


def lid_joint():
    """A thin lid lying on a base slab, touching along z = 0."""
    return make_joint(box_surface((0, 0, 0), (1, 1, 0.1)), box_surface((0, 0, -0.2), (1, 1, 0)))


def test_weight_presets():
    assert(HINGE_WEIGHTS.w_align_local == 0.0025)
    assert(HINGE_WEIGHTS.w_center_detach == 5.0)
    assert(PRISMATIC_WEIGHTS.w_collide == 0.5)
    assert(PRISMATIC_WEIGHTS.w_detach == 0.5)
    assert(PRISMATIC_WEIGHTS.w_align_local == 0.005)
    with pytest.raises(ValueError):
        LossWeights(w_joint=-1.0)
    with pytest.raises(ValueError):
        LossWeights(path_samples=1)


def test_ablated_weights():
    w = HINGE_WEIGHTS.ablated(('physics', 'small_motion'))
    assert(w.w_collide == 0 and w.w_detach == 0 and w.w_center_detach == 0)
    assert(w.w_joint == 0)
    assert(w.w_deform == HINGE_WEIGHTS.w_deform)
    with pytest.raises(ValueError):
        HINGE_WEIGHTS.ablated(('gravity',))


def test_recon_loss_identity_and_scale():
    rng = np.random.default_rng(0)
    m, b = rng.normal(size=(40, 3)), rng.normal(size=(40, 3)) + 2
    tm, tb = rng.normal(size=(30, 3)), rng.normal(size=(30, 3)) + 2
    assert(float(recon_loss(m, b, m, b)) == 0.0)
    loss = float(recon_loss(m, b, tm, tb))
    assert(float(recon_loss(2 * m, 2 * b, 2 * tm, 2 * tb)) == pytest.approx(loss, abs=1e-6))
    expected = (float(geo.chamfer(m, tm)) / float(geo.diag(m))
                + float(geo.chamfer(b, tb)) / float(geo.diag(b)))
    assert(loss == pytest.approx(expected))


def test_recon_loss_guards_zero_diag():
    point = np.zeros((1, 3))
    other = np.ones((1, 3))
    assert(np.isfinite(float(recon_loss(point, point, other, other))))


def test_small_motion_penalty():
    assert(float(small_motion_penalty(0.3, 0.3, 0.001)) == 0.0)
    assert(float(small_motion_penalty(-0.1, 0.3, 0.001)) == pytest.approx(0.0002))
    assert(float(small_motion_penalty(0.0, 0.3, 0.001)) == pytest.approx(0.0003))


def test_alignment_penalty():
    assert(float(alignment_penalty(AlignmentParams(), HINGE_WEIGHTS)) == 0.0)
    align = AlignmentParams(np.array([5.0, 5.0, 5.0]), 1.0, np.array([3.0, 4.0, 0.0]))
    assert(float(alignment_penalty(align, HINGE_WEIGHTS)) == pytest.approx(0.0125))
    double = AlignmentParams(local_translation=np.array([6.0, 8.0, 0.0]))
    assert(float(alignment_penalty(double, HINGE_WEIGHTS)) == pytest.approx(0.025))


def test_deformation_penalty():
    assert(float(deformation_penalty(BoxDeform(), BoxDeform(), 0.001)) == 0.0)
    one = BoxDeform(np.array([0.5, 0, 0, 0, 0, 0]))
    assert(float(deformation_penalty(one, BoxDeform(), 0.001)) == pytest.approx(0.0005))
    flipped = BoxDeform(np.array([-0.5, 0, 0, 0, 0, 0]))
    assert(float(deformation_penalty(BoxDeform(), flipped, 0.001)) == pytest.approx(0.0005))
    assert(float(deformation_penalty(None, None, 0.001)) == 0.0)


def test_collision_sliding_away():
    joint = make_joint(box_surface((0, 0, 0), (1, 1, 1), 0.25),
                       box_surface((-1.5, 0, 0), (-0.5, 1, 1), 0.25))
    assert(float(collision_penalty(joint, PrismaticParams(X, 2.0), 8, 1.0)) == 0.0)
    assert(float(collision_penalty(joint, PrismaticParams(X, 0.0), 8, 1.0)) == 0.0)


def test_collision_through_base_matches_brute_force():
    joint = make_joint(box_surface((0, 0, 0), (1, 1, 1), 0.25),
                       box_surface((1.5, 0, 0), (2.5, 1, 1), 0.25))
    motion = PrismaticParams(X, 3.0)
    n = 8
    value = float(collision_penalty(joint, motion, n, 1.0))
    assert(value > 0)

    obb = joint.moving_obb
    d0 = min(0.0, min(geo.box_sdf(x, obb) for x in joint.base.points))
    total = 0.0
    for i in range(1, n + 1):
        moved = OrientedBox(obb.center + 3.0 * i / n * X, obb.axes, obb.half_extents)
        total += np.mean([max(0.0, d0 - geo.box_sdf(x, moved)) for x in joint.base.points])
    assert(value == pytest.approx(total / n))


def test_collision_close_to_dense_path():
    joint = make_joint(box_surface((0, 0, 0), (1, 1, 1), 0.25),
                       box_surface((1.5, 0, 0), (2.5, 1, 1), 0.25))
    motion = PrismaticParams(X, 3.0)
    coarse = float(collision_penalty(joint, motion, 8, 1.0))
    dense = float(collision_penalty(joint, motion, 80, 1.0))
    assert(coarse == pytest.approx(dense, rel=0.1))


def test_collision_ignores_rest_penetration():
    # the base pokes 0.1 into the moving box at rest
    joint = make_joint(box_surface((0, 0, 0), (1, 1, 1), 0.25),
                       box_surface((0.9, 0, 0), (1.9, 1, 1), 0.25))
    assert(rest_penetration(joint) < 0)
    assert(float(collision_penalty(joint, PrismaticParams(X, 0.0), 8, 1.0)) == pytest.approx(0.0))
    assert(float(collision_penalty(joint, PrismaticParams(-X, 0.5), 8, 1.0)) == pytest.approx(0.0))


def test_detachment_hinge_small_angle():
    joint = lid_joint()
    h = HingeParams(X, np.zeros(3), 0.0005)
    assert(float(detachment_penalty_hinge(joint, h, 8, 0.01, 1.0, 0.0)) == 0.0)


def test_detachment_hinge_center_term():
    joint = lid_joint()
    inside = HingeParams(X, np.array([0.5, 0.5, 0.05]), 0.3)
    assert(float(detachment_penalty_hinge(joint, inside, 8, 0.01, 0.0, 5.0)) == pytest.approx(0.0))
    outside = HingeParams(X, np.array([0.5, 0.5, 0.4]), 0.3)
    assert(float(detachment_penalty_hinge(joint, outside, 8, 0.01, 0.0, 5.0)) ==
           pytest.approx(1.5))


def test_detachment_hinge_grows_when_lid_lifts_off():
    joint = lid_joint()
    # a rotation about an axis far from the contact drags the lid away
    far = HingeParams(X, np.array([0.5, 5.0, 0.0]), 0.3)
    assert(float(detachment_penalty_hinge(joint, far, 8, 0.01, 1.0, 0.0)) > 0.1)


def test_detachment_prismatic():
    drawer = box_surface((0, 0, 0), (1, 1, 1))
    plates = np.concatenate([box_surface((0, 0, -0.1), (1, 2, 0)),
                             box_surface((0, 0, 1), (1, 2, 1.1))])
    joint = make_joint(drawer, plates)
    rest = float(detachment_penalty_prismatic(joint, PrismaticParams(Y, 0.0), 8, 1.0))
    assert(rest == pytest.approx(0.0, abs=1e-9))
    one = float(detachment_penalty_prismatic(joint, PrismaticParams(Y, 2.0), 8, 1.0))
    two = float(detachment_penalty_prismatic(joint, PrismaticParams(Y, 4.0), 8, 1.0))
    assert(0 < one < two)
    assert(float(detachment_penalty_prismatic(joint, PrismaticParams(Y, 2.0), 8, 0.0)) == 0.0)


def _identity_state(joint, amount=0.0):
    motion = HingeParams(X, joint.moving_obb.center, amount)
    return PairState(motion, AlignmentParams(), BoxDeform(), BoxDeform())


def test_total_loss_identity_pair():
    joint = lid_joint()
    breakdown = total_loss(joint, joint.moving.points, joint.base.points, _identity_state(joint),
                           HINGE_WEIGHTS)
    assert(float(breakdown.recon) == pytest.approx(0.0, abs=1e-12))
    assert(float(breakdown.total) == pytest.approx(HINGE_WEIGHTS.w_joint * HINGE_WEIGHTS.tau_theta))


def test_total_loss_components_sum():
    joint = lid_joint()
    state = PairState(HingeParams(X, np.array([0.5, 0.0, 0.0]), 0.4),
                      AlignmentParams(np.array([0.1, 0, 0]), 0.2, np.array([0, 0.05, 0])),
                      BoxDeform(np.full(6, 0.01)), BoxDeform(np.full(6, -0.01)))
    b = total_loss(joint, joint.moving.points + 0.1, joint.base.points, state, HINGE_WEIGHTS)
    parts = [b.recon, b.joint, b.align, b.deform, b.collide, b.detach]
    assert(float(b.total) == pytest.approx(sum(float(p) for p in parts)))
    assert(all(float(p) >= 0 for p in parts))


def test_group_of_identical_pairs():
    joint = lid_joint()
    pivot = np.concatenate([joint.moving.points, joint.base.points]).mean(axis=0)
    state = PairState(HingeParams(X, np.array([0.5, 0.0, 0.0]), 0.4),
                      AlignmentParams(np.array([0.1, 0, 0]), 0.2), None, None)
    target_m = transform_moving(joint.moving.points, HingeParams(X, np.zeros(3), 0.5),
                                AlignmentParams(), None, joint.moving_obb, Z, pivot)
    target_b = joint.base.points + 0.05
    single = total_loss(joint, target_m, target_b, state, HINGE_WEIGHTS, pivot)
    assert(float(group_mean([single] * 5).total) == pytest.approx(float(single.total)))

    k = 5
    batched_state = PairState(HingeParams(X, np.array([0.5, 0.0, 0.0]), np.full(k, 0.4)),
                              AlignmentParams(np.tile([0.1, 0, 0], (k, 1)), np.full(k, 0.2),
                                              np.zeros((k, 3))), None, None)
    batched = total_loss(joint, np.stack([target_m] * k), np.stack([target_b] * k),
                         batched_state, HINGE_WEIGHTS, pivot)
    assert(np.asarray(batched.total).shape == (k,))
    assert(float(batched.batch_mean().total) == pytest.approx(float(single.total)))
    assert(batched.pair(3).recon == pytest.approx(float(single.recon)))


def test_base_transform_shared_by_total_loss():
    joint = lid_joint()
    align = AlignmentParams(np.array([0.2, 0.0, 0.0]), 0.0)
    moved_base = transform_base(joint.base.points, align, None, joint.base_obb)
    state = PairState(HingeParams(X, joint.moving_obb.center, 0.0), align)
    b = total_loss(joint, joint.moving.points + [0.2, 0.0, 0.0], moved_base, state, HINGE_WEIGHTS)
    assert(float(b.recon) == pytest.approx(0.0, abs=1e-12))


def test_non_finite_term_is_named():
    with pytest.raises(NumericalError) as info:
        LossBreakdown(recon=np.nan).check_finite()
    assert('recon' in str(info.value))
    with pytest.raises(ValueError):
        group_mean([])
