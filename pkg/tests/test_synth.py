import numpy as np
import pytest
import trimesh

from motioncluster.annotations import MotionAnnotation
from motioncluster.geometry import PointCloud
from motioncluster.shapes import Part, Shape
from motioncluster.synth import (FAMILIES, boxes_overlap, build_parts, export_sweep,
                                 interpenetrating, synth_generate, _box)
from motioncluster.util import InputError


def annotations_from_truth(shape):
    return {pid: MotionAnnotation(pid, gt.type, gt.axis, gt.center, gt.range)
            for pid, gt in shape.ground_truth.items()}


@pytest.mark.parametrize('family', FAMILIES)
def test_generate_family(family):
    shapes = synth_generate(family, 2, seed=1)
    assert([s.id for s in shapes] == ['{}_000'.format(family), '{}_001'.format(family)])
    for shape in shapes:
        assert(shape.category == family)
        assert(set(shape.ground_truth) == set(shape.part_ids))
        assert(any(gt.movable for gt in shape.ground_truth.values()))
        assert(np.allclose(shape.up, [0, 0, 1]))


@pytest.mark.parametrize('family', FAMILIES)
def test_no_interpenetration_at_rest_or_fully_open(family):
    for seed in range(3):
        parts = build_parts(family, np.random.default_rng(seed))
        assert(interpenetrating(parts) == [])
        fully_open = {p.id: p.motion.range[1] for p in parts if p.motion.movable}
        assert(interpenetrating(parts, fully_open) == [])


def test_boxes_overlap():
    a = _box((0, 0, 0), (1, 1, 1))
    assert(boxes_overlap(a, _box((0.5, 0.5, 0.5), (2, 2, 2))))
    assert(not boxes_overlap(a, _box((1, 0, 0), (2, 1, 1))))
    assert(not boxes_overlap(a, _box((1.5, 0, 0), (2, 1, 1))))


def test_generate_is_reproducible():
    a = synth_generate('mixed', 2, pose_level=3, seed=4)
    b = synth_generate('mixed', 2, pose_level=3, seed=4)
    for sa, sb in zip(a, b):
        assert(sa.part_ids == sb.part_ids)
        for pa, pb in zip(sa.parts, sb.parts):
            assert(np.array_equal(pa.vertices(), pb.vertices()))


def test_pose_level_keeps_rest_in_range():
    for shape in synth_generate('drawer_cabinet', 3, pose_level=5, seed=2):
        for gt in shape.ground_truth.values():
            if gt.movable:
                assert(gt.range[0] <= 0.0 <= gt.range[1])


def test_generate_errors():
    with pytest.raises(InputError):
        synth_generate('laptop', 1)
    with pytest.raises(InputError):
        synth_generate('toaster', 2)


def test_export_sweep(tmp_path):
    shape = synth_generate('hinged_door', 2, seed=0)[0]
    path = str(tmp_path / 'sweeps' / 'door.obj')
    assert(export_sweep(shape, annotations_from_truth(shape), 3, path) == path)
    swept = trimesh.load(path, force='mesh')
    closed = np.concatenate([p.vertices() for p in shape.parts])
    # the open door sticks out of the closed shape's box
    assert(np.prod(np.ptp(swept.vertices, axis=0)) > np.prod(np.ptp(closed, axis=0)))


def test_export_sweep_errors(tmp_path):
    shape = synth_generate('hinged_door', 2, seed=0)[0]
    with pytest.raises(InputError):
        export_sweep(shape, annotations_from_truth(shape), 1, str(tmp_path / 'a.obj'))
    cloud = Shape('pts', [Part('a', PointCloud(np.zeros((4, 3))))])
    with pytest.raises(InputError):
        export_sweep(cloud, {}, 3, str(tmp_path / 'b.obj'))
