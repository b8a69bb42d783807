"""
Scoring predicted annotations against ground truth.

Axis, center and range errors are averaged over joints whose predicted
and true types agree and move. In worst_case mode a movable joint with a
wrong type counts with the worst value of each metric instead.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .annotations import HINGE, STATIC, dumps
from .shapes import ExtractOptions, moving_sets
from .util import InputError

log = logging.getLogger(__name__)

MATCHED = 'matched'
WORST_CASE = 'worst_case'
MODES = (MATCHED, WORST_CASE)

WORST_AXIS = 90.0
WORST_CENTER = 100.0
WORST_IOU = 0.0


class EvalError(InputError):
    """Predictions and ground truth that cannot be compared."""


def type_accuracy(pred, gt):
    """
    Fraction of parts whose predicted type equals the true one.

    Args:
        pred (dict): part key to type.
        gt (dict): part key to type, the same keys as pred.
    """
    if set(pred) != set(gt):
        missing = sorted(map(str, set(gt) - set(pred)))
        extra = sorted(map(str, set(pred) - set(gt)))
        raise EvalError('prediction ids differ from ground truth: missing {} extra {}'.format(
            missing, extra))
    if not gt:
        raise EvalError('no parts to compare')
    return sum(pred[k] == gt[k] for k in gt) / len(gt)


def axis_error(pred_axis, gt_axis):
    """Angle in degrees between two axis lines, ignoring direction."""
    a = np.asarray(pred_axis, dtype=float)
    b = np.asarray(gt_axis, dtype=float)
    cos = abs(float(a @ b)) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.degrees(np.arccos(min(1.0, cos))))


def center_error(pred_center, gt_axis_line, part_diag):
    """
    Distance of a predicted center to the true axis line, in percent of
    the diagonal of the moving part together with the parts it carries.

    Args:
        pred_center: 3-vector.
        gt_axis_line: (point, direction) of the true axis.
        part_diag (float): bounding box diagonal of the moving set.
    """
    if not part_diag > 0:
        raise EvalError('part diagonal must be positive, got {}'.format(part_diag))
    point, direction = (np.asarray(v, dtype=float) for v in gt_axis_line)
    direction = direction / np.linalg.norm(direction)
    offset = np.asarray(pred_center, dtype=float) - point
    distance = np.linalg.norm(offset - (offset @ direction) * direction)
    return float(100.0 * distance / part_diag)


def moving_set_diag(shape, part_ids):
    """Bounding box diagonal of the listed parts taken together."""
    return float(geo.diag(np.concatenate([shape.part(pid).vertices() for pid in part_ids])))


def _iou(a, b):
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = max(a[1], b[1]) - min(a[0], b[0])
    if union <= 0:
        return 1.0 if tuple(a) == tuple(b) else 0.0
    return inter / union


def range_iou(pred, gt):
    """Interval IoU, the better of the prediction and its sign reversal."""
    pred = (float(pred[0]), float(pred[1]))
    gt = (float(gt[0]), float(gt[1]))
    return max(_iou(pred, gt), _iou((-pred[1], -pred[0]), gt))


def _mean(values):
    return float(np.mean(values)) if values else None


@dataclass
class EvalReport:
    type_accuracy: float
    mean_axis_error_deg: float = None
    mean_center_error_pct: float = None
    mean_range_iou: float = None
    counts: dict = field(default_factory=dict)
    per_category: dict = field(default_factory=dict)
    mode: str = MATCHED

    def to_json(self):
        return {
            'mode': self.mode,
            'type_accuracy': self.type_accuracy,
            'mean_axis_error_deg': self.mean_axis_error_deg,
            'mean_center_error_pct': self.mean_center_error_pct,
            'mean_range_iou': self.mean_range_iou,
            'counts': dict(self.counts),
            'per_category': {k: v.to_json() for k, v in self.per_category.items()},
        }

    def write(self, path):
        with open(path, 'w') as f:
            f.write(dumps(self.to_json()))

    def table(self):
        """Plain-text table: one row for the whole set and one per category."""
        def cell(value, fmt):
            return '-' if value is None else fmt.format(value)

        header = '{:<16} {:>6} {:>9} {:>10} {:>11} {:>10}'.format(
            'category', 'parts', 'type acc', 'axis err', 'center err', 'range iou')
        rows = [header, '-' * len(header)]
        for name, report in [('all', self)] + sorted(self.per_category.items()):
            rows.append('{:<16} {:>6} {:>9} {:>10} {:>11} {:>10}'.format(
                name, report.counts.get('parts', 0),
                cell(report.type_accuracy, '{:.3f}'),
                cell(report.mean_axis_error_deg, '{:.2f}'),
                cell(report.mean_center_error_pct, '{:.2f}'),
                cell(report.mean_range_iou, '{:.3f}')))
        return '\n'.join(rows)


def _joint_scores(pred, gt, part_diag, mode):
    """Axis, center and range scores of one movable ground-truth joint."""
    if pred.type != gt.type:
        if mode == MATCHED:
            return None, None, None
        return WORST_AXIS, WORST_CENTER if gt.type == HINGE else None, WORST_IOU
    axis = axis_error(pred.axis, gt.axis)
    center = None
    if gt.type == HINGE:
        center = WORST_CENTER if pred.center is None else center_error(
            pred.center, (gt.center, gt.axis), part_diag)
    iou = range_iou(pred.range, gt.range) if pred.range is not None else WORST_IOU
    return axis, center, iou


def _report(rows, mode):
    types_pred = {key: row[0].type for key, row in rows.items()}
    types_gt = {key: row[1].type for key, row in rows.items()}
    axes, centers, ious = [], [], []
    for pred, gt, diag in rows.values():
        if gt.type == STATIC:
            continue
        axis, center, iou = _joint_scores(pred, gt, diag, mode)
        if axis is not None:
            axes.append(axis)
            ious.append(iou)
        if center is not None:
            centers.append(center)
    counts = {
        'parts': len(rows),
        'movable': sum(gt.type != STATIC for _, gt, _ in rows.values()),
        'axis': len(axes),
        'center': len(centers),
        'range': len(ious),
    }
    return EvalReport(type_accuracy(types_pred, types_gt), _mean(axes), _mean(centers),
                      _mean(ious), counts, mode=mode)


def evaluate(pred, shapes, mode=MATCHED, options=ExtractOptions()):
    """
    Score predictions on a dataset with ground truth.

    Args:
        pred (dict): shape id to part id to MotionAnnotation.
        shapes (list): Shape objects carrying GroundTruthMotion.
        mode (str): 'matched' or 'worst_case'.
        options (ExtractOptions): sampling and contact distance that decide
            which parts move together.

    Returns:
        EvalReport with a breakdown per shape category.

    Raises:
        EvalError: shape or part ids differ, or no ground truth at all.
    """
    if mode not in MODES:
        raise EvalError('unknown evaluation mode {!r}'.format(mode))
    known = {s.id for s in shapes}
    if set(pred) - known:
        raise EvalError('predictions for unknown shapes {}'.format(sorted(set(pred) - known)))
    rows, categories = {}, {}
    for shape in shapes:
        gt = shape.ground_truth
        if not gt:
            continue
        if shape.id not in pred:
            raise EvalError('no predictions for shape {}'.format(shape.id))
        predicted = pred[shape.id]
        if set(predicted) != set(gt):
            raise EvalError('shape {}: predicted parts {} differ from ground truth {}'.format(
                shape.id, sorted(predicted), sorted(gt)))
        carried = moving_sets(shape, options=options)
        for pid, truth in gt.items():
            diag = moving_set_diag(shape, carried[pid])
            key = (shape.id, pid)
            rows[key] = (predicted[pid], truth, diag)
            categories.setdefault(shape.category or 'uncategorized', {})[key] = rows[key]
    if not rows:
        raise EvalError('the dataset carries no ground truth')
    report = _report(rows, mode)
    report.per_category = {name: _report(items, mode) for name, items in categories.items()}
    log.info('evaluated %d parts of %d shapes', len(rows), len(shapes))
    return report
