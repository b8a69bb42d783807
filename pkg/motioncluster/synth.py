"""
Procedural articulated shapes with known motions.

Every part is a union of boxes. Shapes stand on z = 0 with z up and open
toward -y, and are generated at rest with all moving parts closed; pose
variation and a random turn about up are applied afterwards.

Families:
    drawer_cabinet  hollow body with 1 to 3 stacked drawers
    hinged_door     hollow body closed by a door hinged on its left edge
    laptop          base and lid hinged along the back edge, 0 to 135 deg
    fan             stand and a four-blade rotor turning a full revolution
    mixed           body with a shelf, a door above and drawers below
"""

import logging
import os
from dataclasses import dataclass

import numpy as np
import trimesh

from .annotations import HINGE, PRISMATIC, STATIC, GroundTruthMotion
from .articulation import HingeParams, PrismaticParams, apply_motion
from .autodiff import rotate
from .geometry import OrientedBox, PointCloud
from .shapes import Part, Shape, apply_pose_variation, random_up_rotation
from .util import InputError, derive_seed

log = logging.getLogger(__name__)

FAMILIES = ('drawer_cabinet', 'hinged_door', 'laptop', 'fan', 'mixed')
THICKNESS = 0.02
GAP = 0.005
JITTER = 0.25


@dataclass
class SynthPart:
    id: str
    label: str
    boxes: list
    motion: GroundTruthMotion


def _box(lo, hi):
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    return OrientedBox((lo + hi) / 2, np.eye(3), (hi - lo) / 2)


def _static(part_id):
    return GroundTruthMotion(part_id, STATIC)


def _dims(rng, base):
    return np.asarray(base, dtype=float) * rng.uniform(1 - JITTER, 1 + JITTER, len(base))


def _shell(w, d, h, shelf=None):
    """Body with an open front at y = -d/2."""
    t = THICKNESS
    boxes = [
        _box((-w / 2, d / 2 - t, 0), (w / 2, d / 2, h)),
        _box((-w / 2, -d / 2, 0), (-w / 2 + t, d / 2, h)),
        _box((w / 2 - t, -d / 2, 0), (w / 2, d / 2, h)),
        _box((-w / 2, -d / 2, 0), (w / 2, d / 2, t)),
        _box((-w / 2, -d / 2, h - t), (w / 2, d / 2, h)),
    ]
    if shelf is not None:
        boxes.append(_box((-w / 2 + t, -d / 2, shelf - t / 2),
                          (w / 2 - t, d / 2 - t, shelf + t / 2)))
    return SynthPart('body', 'body', boxes, _static('body'))


def _drawers(w, d, z_lo, z_hi, count):
    t = THICKNESS
    slot = (z_hi - z_lo) / count
    out = []
    for i in range(count):
        lo = (-w / 2 + t + GAP, -d / 2, z_lo + i * slot + GAP)
        hi = (w / 2 - t - GAP, d / 2 - t - GAP, z_lo + (i + 1) * slot - GAP)
        depth = hi[1] - lo[1]
        pid = 'drawer_{}'.format(i)
        motion = GroundTruthMotion(pid, PRISMATIC, (0, -1, 0), None, (0.0, 0.8 * depth))
        out.append(SynthPart(pid, 'drawer', [_box(lo, hi)], motion))
    return out


def _door(w, d, z_lo, z_hi):
    """A door panel in front of the opening, hinged on its outer left edge."""
    t = THICKNESS
    y_out = -d / 2 - GAP - t
    box = _box((-w / 2, y_out, z_lo), (w / 2, -d / 2 - GAP, z_hi))
    motion = GroundTruthMotion('door', HINGE, (0, 0, -1), (-w / 2, y_out, (z_lo + z_hi) / 2),
                               (0.0, np.pi / 2))
    return SynthPart('door', 'door', [box], motion)


def drawer_cabinet(rng):
    w, d, h = _dims(rng, (1.0, 0.6, 1.0))
    count = int(rng.integers(1, 4))
    return [_shell(w, d, h)] + _drawers(w, d, THICKNESS, h - THICKNESS, count)


def hinged_door(rng):
    w, d, h = _dims(rng, (0.6, 0.5, 1.2))
    return [_shell(w, d, h), _door(w, d, 0.0, h)]


def laptop(rng):
    w, d = _dims(rng, (0.35, 0.25))
    base_t, lid_t = 0.02, 0.01
    base = SynthPart('base', 'base', [_box((-w / 2, -d / 2, 0), (w / 2, d / 2, base_t))],
                     _static('base'))
    z = base_t
    lid = SynthPart('lid', 'lid', [_box((-w / 2, -d / 2, z), (w / 2, d / 2, z + lid_t))],
                    GroundTruthMotion('lid', HINGE, (-1, 0, 0), (0, d / 2, z),
                                      (0.0, np.radians(135))))
    return [base, lid]


def fan(rng):
    radius, blade, foot = _dims(rng, (0.2, 0.03, 0.15))
    plate, pole, t = 0.02, 0.02, 0.01
    hub = plate + np.hypot(radius, blade) + 0.05
    stand = SynthPart('stand', 'stand', [
        _box((-foot, -foot, 0), (foot, foot, plate)),
        _box((-pole, -pole, plate), (pole, pole, hub + 2 * pole)),
    ], _static('stand'))
    y0 = pole
    rotor = SynthPart('rotor', 'rotor', [
        _box((-radius, y0, hub - blade), (radius, y0 + t, hub + blade)),
        _box((-blade, y0, hub - radius), (blade, y0 + t, hub + radius)),
    ], GroundTruthMotion('rotor', HINGE, (0, 1, 0), (0, y0, hub), (0.0, 2 * np.pi)))
    return [stand, rotor]


def mixed(rng):
    w, d, h = _dims(rng, (0.8, 0.5, 1.2))
    shelf = h * rng.uniform(0.4, 0.6)
    count = int(rng.integers(1, 3))
    body = _shell(w, d, h, shelf)
    drawers = _drawers(w, d, THICKNESS, shelf - THICKNESS / 2, count)
    return [body] + drawers + [_door(w, d, shelf, h)]


BUILDERS = {
    'drawer_cabinet': drawer_cabinet,
    'hinged_door': hinged_door,
    'laptop': laptop,
    'fan': fan,
    'mixed': mixed,
}


def _box_mesh(box):
    transform = np.eye(4)
    transform[:3, :3] = box.axes.T
    transform[:3, 3] = box.center
    return trimesh.creation.box(extents=2 * box.half_extents, transform=transform)


def part_mesh(part):
    return trimesh.util.concatenate([_box_mesh(b) for b in part.boxes])


def posed_boxes(part, amount):
    """The part's boxes carried by its own motion to amount."""
    gt = part.motion
    if not gt.movable or amount == 0:
        return list(part.boxes)
    out = []
    for box in part.boxes:
        if gt.type == HINGE:
            center = rotate(box.center - gt.center, gt.axis, amount) + gt.center
            axes = rotate(box.axes, gt.axis, amount)
        else:
            center, axes = box.center + amount * gt.axis, box.axes
        out.append(OrientedBox(center, axes, box.half_extents))
    return out


def boxes_overlap(a, b, tol=1e-9):
    """Separating axis test; touching boxes do not overlap."""
    candidates = list(a.axes) + list(b.axes)
    for u in a.axes:
        for v in b.axes:
            c = np.cross(u, v)
            n = np.linalg.norm(c)
            if n > 1e-9:
                candidates.append(c / n)
    offset = b.center - a.center
    for axis in candidates:
        ra = np.sum(a.half_extents * np.abs(a.axes @ axis))
        rb = np.sum(b.half_extents * np.abs(b.axes @ axis))
        if abs(offset @ axis) >= ra + rb - tol:
            return False
    return True


def interpenetrating(parts, amounts=None):
    """Pairs of part ids whose boxes overlap with each part posed at its amount."""
    amounts = amounts or {}
    posed = {p.id: posed_boxes(p, amounts.get(p.id, 0.0)) for p in parts}
    out = []
    for i, p in enumerate(parts):
        for q in parts[i + 1:]:
            if any(boxes_overlap(a, b) for a in posed[p.id] for b in posed[q.id]):
                out.append((p.id, q.id))
    return out


def build_parts(family, rng):
    if family not in BUILDERS:
        raise InputError('unknown family {!r}, expected one of {}'.format(family, FAMILIES))
    return BUILDERS[family](rng)


def synth_generate(family, count, pose_level=0, seed=0):
    """
    Generate count shapes of a family with ground-truth motions.

    Each shape gets its own dimensions, a pose within a pose_level share of
    every motion range, and a random turn about up, all derived from seed.

    Returns:
        list: Shape objects with ids '<family>_000', '<family>_001', ...
    """
    if count < 2:
        raise InputError('count must be >= 2, got {}'.format(count))
    shapes = []
    for i in range(count):
        shape_id = '{}_{:03d}'.format(family, i)
        rng = np.random.default_rng(derive_seed(seed, shape_id))
        parts = [Part(p.id, part_mesh(p), p.label, p.motion) for p in build_parts(family, rng)]
        shape = Shape(shape_id, parts, (0.0, 0.0, 1.0), family)
        shape = apply_pose_variation(shape, pose_level, seed)
        shapes.append(random_up_rotation(shape, seed))
    log.info('generated %d %s shapes at pose level %d', count, family, pose_level)
    return shapes


def _motion(annotation, amount):
    if annotation.type == HINGE:
        return HingeParams(annotation.axis, annotation.center, amount)
    return PrismaticParams(annotation.axis, amount)


def export_sweep(shape, annotations, steps, path):
    """
    Write an OBJ of the shape with every movable part repeated at steps
    evenly spaced poses across its range.

    Args:
        shape (Shape): a shape with mesh parts.
        annotations (dict): part id to MotionAnnotation.
        steps (int): poses per movable part, at least 2.
        path (str): output OBJ file.
    """
    if steps < 2:
        raise InputError('steps must be >= 2, got {}'.format(steps))
    meshes = []
    for part in shape.parts:
        if isinstance(part.geometry, PointCloud):
            raise InputError('part {} has no mesh to export'.format(part.id))
        annotation = annotations.get(part.id)
        if annotation is None or annotation.type == STATIC or annotation.range is None:
            meshes.append(part.geometry)
            continue
        for amount in np.linspace(annotation.range[0], annotation.range[1], steps):
            posed = part.geometry.copy()
            posed.vertices = apply_motion(np.asarray(part.geometry.vertices),
                                          _motion(annotation, amount))
            meshes.append(posed)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    trimesh.util.concatenate(meshes).export(path)
    log.info('wrote sweep of %s to %s', shape.id, path)
    return path
