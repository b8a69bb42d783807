"""
Per-part motion records: predicted annotations and ground truth.

Internally hinge amounts are radians; every JSON file stores degrees.
"""

import json
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .util import InputError

log = logging.getLogger(__name__)

HINGE = 'hinge'
PRISMATIC = 'prismatic'
STATIC = 'static'
MOTION_TYPES = (HINGE, PRISMATIC, STATIC)

DECIMALS = 6


def _vector(value, name):
    if value is None:
        return None
    v = np.asarray(value, dtype=float).reshape(-1)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise InputError('{} must be a finite 3-vector, got {!r}'.format(name, value))
    return v


def _unit(value, name):
    v = _vector(value, name)
    if v is None:
        return None
    length = np.linalg.norm(v)
    if length == 0:
        raise InputError('{} must be non-zero'.format(name))
    return v / length


def _range(value, name):
    if value is None:
        return None
    lo, hi = (float(x) for x in value)
    if lo > hi:
        raise InputError('{} minimum {} exceeds maximum {}'.format(name, lo, hi))
    return (lo, hi)


def canonicalize_axis(axis, motion_range=None):
    """
    Flip an axis into the hemisphere of (1, 1, 1), reversing the range with it.

    An axis orthogonal to (1, 1, 1) keeps the sign that makes its first
    non-zero component positive.
    """
    axis = np.asarray(axis, dtype=float)
    s = axis.sum()
    if abs(s) < 1e-12:
        nonzero = np.flatnonzero(np.abs(axis) > 1e-12)
        s = axis[nonzero[0]] if len(nonzero) else 1.0
    if s >= 0:
        return axis, motion_range
    if motion_range is not None:
        motion_range = (-motion_range[1], -motion_range[0])
    return -axis, motion_range


def _angle_to_json(value, motion_type):
    return math.degrees(value) if motion_type == HINGE else value


def _angle_from_json(value, motion_type):
    return math.radians(value) if motion_type == HINGE else value


def _round(x):
    if x is None:
        return None
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_round(v) for v in x]
    r = round(float(x), DECIMALS)
    return 0.0 if r == 0 else r


@dataclass(frozen=True)
class GroundTruthMotion:
    """A part's reference motion: type, axis, center (hinge), range."""
    part_id: str
    type: str
    axis: np.ndarray = None
    center: np.ndarray = None
    range: tuple = None

    def __post_init__(self):
        if self.type not in MOTION_TYPES:
            raise InputError('part {}: unknown motion type {!r}'.format(self.part_id, self.type))
        object.__setattr__(self, 'axis', _unit(self.axis, 'axis'))
        object.__setattr__(self, 'center', _vector(self.center, 'center'))
        object.__setattr__(self, 'range', _range(self.range, 'range'))
        if self.type == STATIC:
            return
        if self.axis is None or self.range is None:
            raise InputError('part {}: {} motion needs axis and range'.format(
                self.part_id, self.type))
        if self.type == HINGE and self.center is None:
            raise InputError('part {}: hinge motion needs a center'.format(self.part_id))

    @property
    def movable(self):
        return self.type != STATIC

    def shifted(self, pose):
        """The same motion with its range expressed relative to pose."""
        if not self.movable:
            return self
        return replace(self, range=(self.range[0] - pose, self.range[1] - pose))

    def transformed(self, rotation, translation):
        """The motion after the rigid map x -> rotation @ x + translation."""
        if not self.movable:
            return self
        center = None if self.center is None else rotation @ self.center + translation
        return replace(self, axis=rotation @ self.axis, center=center)

    def to_json(self):
        if not self.movable:
            return {'type': STATIC}
        return {
            'type': self.type,
            'axis': _round(self.axis),
            'center': _round(self.center),
            'range': _round([_angle_to_json(v, self.type) for v in self.range]),
        }

    @classmethod
    def from_json(cls, part_id, data):
        try:
            motion_type = data['type']
        except (KeyError, TypeError):
            raise InputError('part {}: ground truth without type'.format(part_id))
        motion_range = data.get('range')
        if motion_range is not None:
            motion_range = [_angle_from_json(float(v), motion_type) for v in motion_range]
        return cls(part_id, motion_type, data.get('axis'), data.get('center'), motion_range)


@dataclass(frozen=True)
class MotionAnnotation:
    """Final per-part output. Static entries carry no axis, center or range."""
    part_id: str
    type: str
    axis: np.ndarray = None
    center: np.ndarray = None
    range: tuple = None
    confidence: float = 0.0

    def __post_init__(self):
        if self.type not in MOTION_TYPES:
            raise InputError('part {}: unknown motion type {!r}'.format(self.part_id, self.type))
        if self.type == STATIC:
            object.__setattr__(self, 'axis', None)
            object.__setattr__(self, 'center', None)
            object.__setattr__(self, 'range', None)
            return
        object.__setattr__(self, 'axis', _unit(self.axis, 'axis'))
        object.__setattr__(self, 'center', _vector(self.center, 'center')
                           if self.type == HINGE else None)
        object.__setattr__(self, 'range', _range(self.range, 'range'))

    def canonical(self):
        if self.type == STATIC:
            return self
        axis, motion_range = canonicalize_axis(self.axis, self.range)
        return replace(self, axis=axis, range=motion_range)

    def to_json(self):
        out = {
            'type': self.type,
            'axis': _round(self.axis),
            'center': _round(self.center),
            'range': None,
            'confidence': _round(self.confidence),
        }
        if self.range is not None:
            out['range'] = _round([_angle_to_json(v, self.type) for v in self.range])
        return out

    @classmethod
    def from_json(cls, part_id, data):
        motion_type = data.get('type')
        motion_range = data.get('range')
        if motion_range is not None:
            motion_range = [_angle_from_json(float(v), motion_type) for v in motion_range]
        return cls(part_id, motion_type, data.get('axis'), data.get('center'),
                   motion_range, float(data.get('confidence', 0.0)))


def dumps(data):
    """Serialize with sorted keys so identical results give identical bytes."""
    return json.dumps(data, sort_keys=True, indent=2) + '\n'


def write_annotations(path, annotations):
    """
    Write annotations grouped by shape.

    Args:
        path: output file.
        annotations (dict): shape id to list of MotionAnnotation.
    """
    data = {shape_id: {a.part_id: a.canonical().to_json() for a in items}
            for shape_id, items in annotations.items()}
    with open(path, 'w') as f:
        f.write(dumps(data))
    log.info('wrote %d shapes to %s', len(data), path)


def read_annotations(path):
    """Read an annotations file into shape id -> part id -> MotionAnnotation."""
    try:
        with open(path) as f:
            data = json.load(f)
    except (OSError, ValueError) as e:
        raise InputError('cannot read annotations {}: {}'.format(path, e))
    return {shape_id: {part_id: MotionAnnotation.from_json(part_id, entry)
                       for part_id, entry in parts.items()}
            for shape_id, parts in data.items()}
