import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from motioncluster import autodiff as ad
from motioncluster import geometry as geo
from motioncluster.articulation import (AlignmentParams, ArticulationError, BoxDeform,
                                        HingeParams, PrismaticParams, apply_box_deform,
                                        apply_hinge, apply_prismatic, axial_local_translation,
                                        project_local_translation, transform_base,
                                        transform_moving, transport_box)
from motioncluster.geometry import OrientedBox, PointCloud

Z = np.array([0.0, 0.0, 1.0])
X = np.array([1.0, 0.0, 0.0])


def _pairwise(points):
    return np.linalg.norm(points[:, None] - points[None], axis=-1)


def test_hinge_quarter_turn():
    out = apply_hinge(np.array([[1.0, 0.0, 0.0]]), HingeParams(Z, np.zeros(3), np.pi / 2))
    assert(np.allclose(out, [[0, 1, 0]]))


def test_hinge_fraction_zero_and_halves():
    rng = np.random.default_rng(0)
    points = rng.normal(size=(20, 3))
    h = HingeParams(geo.principal_axes(points)[0], np.array([0.3, -0.1, 0.2]), 1.3)
    assert(np.allclose(apply_hinge(points, h, 0.0), points))
    twice = apply_hinge(apply_hinge(points, h, 0.5), h, 0.5)
    assert(np.allclose(twice, apply_hinge(points, h, 1.0), atol=1e-9))


def test_hinge_keeps_distance_to_axis():
    rng = np.random.default_rng(1)
    points = rng.normal(size=(30, 3))
    axis = np.array([1.0, 2.0, -1.0]) / np.sqrt(6)
    center = np.array([0.5, 0.0, -0.5])
    moved = apply_hinge(points, HingeParams(axis, center, 2.1))

    def to_line(p):
        offset = p - center
        return np.linalg.norm(offset - np.outer(offset @ axis, axis), axis=1)
    assert(np.allclose(to_line(points), to_line(moved)))


def test_hinge_keeps_point_cloud_flags():
    cloud = PointCloud(np.eye(3), [1, 0, 1])
    out = apply_hinge(cloud, HingeParams(Z, np.zeros(3), 0.3))
    assert(isinstance(out, PointCloud))
    assert(np.array_equal(out.flags, [1, 0, 1]))


def test_prismatic():
    assert(np.allclose(apply_prismatic(np.zeros((1, 3)), PrismaticParams(X, 2.0)), [[2, 0, 0]]))
    rng = np.random.default_rng(2)
    points = rng.normal(size=(15, 3))
    p = PrismaticParams(np.array([0.0, 0.6, 0.8]), 0.7)
    assert(np.allclose(apply_prismatic(points, p, 0.0), points))
    assert(np.allclose(_pairwise(apply_prismatic(points, p)), _pairwise(points)))


def test_axis_must_be_unit():
    with pytest.raises(ArticulationError):
        HingeParams(np.array([0.0, 0.0, 2.0]), np.zeros(3))
    with pytest.raises(ArticulationError):
        PrismaticParams(np.array([1.0, 1.0, 0.0]))


def test_project_local_translation():
    assert(np.allclose(project_local_translation(np.array([1.0, 1.0, 0.0]), X), [0, 1, 0]))
    assert(np.allclose(project_local_translation(np.array([3.0, 0.0, 0.0]), X), 0))
    assert(np.allclose(project_local_translation(np.array([0.0, 2.0, -1.0]), X), [0, 2, -1]))


def test_axial_local_translation():
    assert(np.allclose(axial_local_translation(np.array([1.0, 1.0, 0.0]), X), [1, 0, 0]))
    batch = np.array([[0.0, 2.0, -1.0], [-3.0, 0.5, 0.0]])
    kept = axial_local_translation(batch, X)
    assert(np.allclose(kept, [[0, 0, 0], [-3, 0, 0]]))
    assert(np.allclose(kept + project_local_translation(batch, X), batch))


def test_box_deform():
    box = OrientedBox(np.zeros(3), np.eye(3), np.ones(3))
    points = np.array([[1.0, 0.0, 0.0], [-1.0, 0.5, 0.0], [0.0, 0.0, 0.0]])
    assert(np.allclose(apply_box_deform(points, box, BoxDeform()), points))
    out = apply_box_deform(points, box, BoxDeform(np.array([1.0, 0, 0, 0, 0, 0])))
    assert(np.allclose(out, [[2, 0, 0], [-1, 0.5, 0], [0, 0, 0]]))
    with pytest.raises(ArticulationError):
        apply_box_deform(points, box, BoxDeform(np.array([0, -1.0, 0, 0, 0, 0])))


def test_box_deform_commutes_with_rigid_motion():
    rng = np.random.default_rng(3)
    points = rng.uniform(-1, 1, size=(25, 3)) * [1.0, 0.5, 0.3]
    box = geo.min_volume_obb(points)
    deform = BoxDeform(rng.uniform(-0.1, 0.1, size=6) * np.repeat(box.half_extents, 2))
    r = Rotation.from_rotvec([0.3, -0.7, 0.2]).as_matrix()
    t = np.array([1.0, -2.0, 0.5])
    moved_box = OrientedBox(r @ box.center + t, box.axes @ r.T, box.half_extents)
    a = apply_box_deform(points, box, deform) @ r.T + t
    b = apply_box_deform(points @ r.T + t, moved_box, deform)
    assert(np.allclose(a, b, atol=1e-9))


def test_transform_identity():
    rng = np.random.default_rng(4)
    points = rng.normal(size=(10, 3))
    box = geo.min_volume_obb(points)
    moved = transform_moving(points, HingeParams(Z, np.zeros(3), 0.0), AlignmentParams(),
                             BoxDeform(), box)
    assert(np.allclose(moved, points))
    assert(np.allclose(transform_base(points, AlignmentParams(), BoxDeform(), box), points))


def test_transform_order():
    box = OrientedBox(np.zeros(3), np.eye(3), np.ones(3))
    moved = transform_moving(np.array([[1.0, 0.0, 0.0]]), HingeParams(Z, np.zeros(3), np.pi / 2),
                             AlignmentParams(global_translation=X), None, box)
    assert(np.allclose(moved, [[1, 1, 0]]))


def test_zero_motion_matches_base_path():
    rng = np.random.default_rng(5)
    points = rng.normal(size=(12, 3))
    box = geo.min_volume_obb(points)
    align = AlignmentParams(np.array([0.2, 0.1, -0.3]), 0.4, np.array([0.05, 0.0, 0.02]))
    pivot = np.array([0.1, 0.2, 0.0])
    moving = transform_moving(points, PrismaticParams(X, 0.5), align, None, box, Z, pivot,
                              fraction=0.0)
    shifted = transform_base(points + align.local_translation, align, None, box, Z, pivot)
    assert(np.allclose(moving, shifted))


def test_base_rotation_and_translation():
    # a square symmetric under a half turn about z
    square = np.array([[1, 1, 0], [-1, 1, 0], [-1, -1, 0], [1, -1, 0]], dtype=float)
    box = OrientedBox(np.zeros(3), np.eye(3), [1, 1, 1e-6])
    turned = transform_base(square, AlignmentParams(global_up_rotation=np.pi), None, box)
    assert(float(geo.chamfer(turned, square)) < 1e-12)
    shift = np.array([0.5, -0.25, 2.0])
    moved = transform_base(square, AlignmentParams(global_translation=shift), None, box)
    assert(np.allclose(moved.mean(axis=0) - square.mean(axis=0), shift))


def test_zero_motion_is_rigid_for_whole_joint():
    rng = np.random.default_rng(6)
    moving, base = rng.normal(size=(10, 3)), rng.normal(size=(10, 3)) + 2.0
    align = AlignmentParams(np.array([1.0, 2.0, 3.0]), 0.8)
    pivot = np.vstack([moving, base]).mean(axis=0)
    m = transform_moving(moving, HingeParams(X, np.zeros(3), 0.0), align, None,
                         geo.min_volume_obb(moving), Z, pivot)
    b = transform_base(base, align, None, geo.min_volume_obb(base), Z, pivot)
    assert(np.allclose(_pairwise(np.vstack([m, b])), _pairwise(np.vstack([moving, base]))))


def test_batched_transform_matches_single():
    rng = np.random.default_rng(7)
    points = rng.normal(size=(8, 3))
    box = geo.min_volume_obb(points)
    angles = np.array([0.1, -0.4, 1.2])
    shifts = rng.normal(size=(3, 3))
    turns = np.array([0.0, 0.3, -0.5])
    faces = rng.uniform(-0.05, 0.05, size=(3, 6)) * np.repeat(box.half_extents, 2)
    center = np.array([0.1, 0.0, 0.2])
    batched = transform_moving(points, HingeParams(Z, center, angles),
                               AlignmentParams(shifts, turns, np.zeros((3, 3))),
                               BoxDeform(faces), box, Z, np.zeros(3))
    assert(batched.shape == (3, 8, 3))
    for k in range(3):
        single = transform_moving(points, HingeParams(Z, center, angles[k]),
                                  AlignmentParams(shifts[k], turns[k]), BoxDeform(faces[k]),
                                  box, Z, np.zeros(3))
        assert(np.allclose(batched[k], single))


def test_transport_box():
    box = OrientedBox([1.0, 0.0, 0.0], np.eye(3), [0.5, 0.5, 0.5])
    center, axes = transport_box(box, HingeParams(Z, np.zeros(3), np.pi / 2))
    assert(np.allclose(center, [0, 1, 0]))
    assert(np.allclose(axes[0], [0, 1, 0]))
    center, axes = transport_box(box, PrismaticParams(X, 2.0), 0.5)
    assert(np.allclose(center, [2, 0, 0]))
    assert(np.array_equal(axes, box.axes))
    centers, axes = transport_box(box, HingeParams(Z, np.zeros(3), np.array([0.0, np.pi])))
    assert(centers.shape == (2, 3) and axes.shape == (2, 3, 3))
    assert(np.allclose(centers[1], [-1, 0, 0]))


def test_transform_gradients():
    rng = np.random.default_rng(8)
    points = rng.normal(size=(6, 3))
    box = geo.min_volume_obb(points)

    def f(x):
        h = HingeParams(ad.normalize(ad.getitem(x, slice(0, 3))), ad.getitem(x, slice(3, 6)),
                        ad.getitem(x, 6))
        align = AlignmentParams(ad.getitem(x, slice(7, 10)), ad.getitem(x, 10))
        deform = BoxDeform(ad.getitem(x, slice(11, 17)))
        moved = transform_moving(points, h, align, deform, box, Z, np.zeros(3))
        return ad.asum(ad.mul(moved, moved))
    x = np.concatenate([[0.2, 0.3, 0.9], [0.1, 0.0, -0.1], [0.7], [0.1, 0.2, 0.3], [0.4],
                        0.05 * np.repeat(box.half_extents, 2) * [1, -1, 1, -1, 1, -1]])
    assert(ad.finite_diff_check(f, x) < 1e-5)
