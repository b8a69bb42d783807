"""
The discovery driver.

Each round every source joint is pre-aligned with its targets, then a
hinge and a prismatic motion are fitted to carry it onto all of them at
once. Reconstruction losses train the joint encoder, whose embedding picks
the next round's targets. After the last round every candidate gets a
motion range and a confidence, the best candidate of each joint is kept
and parts are labeled movable or static.
"""

import json
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from .annotations import HINGE, PRISMATIC, STATIC, MotionAnnotation, dumps, write_annotations
from .articulation import (AlignmentParams, BoxDeform, HingeParams, PrismaticParams,
                           apply_hinge, axial_local_translation, project_local_translation,
                           rotate_about_up)
from .config import dump_config
from .encoder import EncoderParams, train_embedding
from .looper import Looper
from .losses import LossBreakdown, PairState, rest_penetration, small_motion_penalty, total_loss
from .shapes import ExtractOptions, build_part_graph, extract_joints
from .targets import (SimilarityMatrix, affine_residuals, build_similarity_matrix,
                      embed_all, initial_targets, sample_targets)
from .util import InputError, NumericalError, derive_seed

log = logging.getLogger(__name__)

PREALIGN_BINS = 64
PREALIGN_POINTS = 128
PREALIGN_STEPS = 30
MIN_FACE = -0.9
SEED_ANGLES = 16
SEED_TIE = 1e-9
LR_FLOOR = 0.1
CHECKPOINTS = 'checkpoints'


class PipelineError(InputError):
    """Not enough usable joints, or a checkpoint that cannot be resumed."""


@dataclass
class Init:
    """Starting axis, and center for a hinge, of one optimization run."""
    axis: np.ndarray
    center: np.ndarray = None


@dataclass
class AlignedTarget:
    """A target joint's clouds after turning it toward the source about up."""
    joint_id: str
    moving: np.ndarray
    base: np.ndarray
    angle: float = 0.0


@dataclass
class MotionCandidate:
    """
    One fitted motion of a source joint.

    Amounts are per target: radians for a hinge, model units for a
    prismatic joint. The range spans the valid targets' amounts and the
    rest pose; it is None while unestimated or when no target is valid.
    """
    joint_id: str
    type: str
    axis: np.ndarray
    center: np.ndarray = None
    amounts: np.ndarray = None
    target_ids: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    group_loss: float = np.inf
    init_losses: list = field(default_factory=list)
    iteration: int = 0
    valid_targets: list = field(default_factory=list)
    valid_amounts: list = field(default_factory=list)
    range: tuple = None
    n_bin: int = 0
    confidence: float = 0.0

    @property
    def n_valid(self):
        return len(self.valid_targets)

    @property
    def valid(self):
        return self.range is not None

    def motion(self, amount=0.0):
        if self.type == HINGE:
            return HingeParams(self.axis, self.center, amount)
        return PrismaticParams(self.axis, amount)

    def to_json(self):
        return {
            'joint_id': self.joint_id,
            'type': self.type,
            'axis': np.asarray(self.axis).tolist(),
            'center': None if self.center is None else np.asarray(self.center).tolist(),
            'amounts': np.asarray(self.amounts).tolist(),
            'target_ids': list(self.target_ids),
            'losses': [b.to_dict() for b in self.losses],
            'group_loss': float(self.group_loss),
            'init_losses': [float(v) for v in self.init_losses],
            'iteration': self.iteration,
            'valid_targets': list(self.valid_targets),
            'valid_amounts': [float(v) for v in self.valid_amounts],
            'range': None if self.range is None else list(self.range),
            'n_bin': self.n_bin,
            'confidence': float(self.confidence),
        }

    @classmethod
    def from_json(cls, data):
        center = data.get('center')
        motion_range = data.get('range')
        return cls(
            joint_id=data['joint_id'],
            type=data['type'],
            axis=np.asarray(data['axis'], dtype=float),
            center=None if center is None else np.asarray(center, dtype=float),
            amounts=np.asarray(data['amounts'], dtype=float),
            target_ids=list(data['target_ids']),
            losses=[LossBreakdown(**b) for b in data['losses']],
            group_loss=float(data['group_loss']),
            init_losses=[float(v) for v in data['init_losses']],
            iteration=int(data['iteration']),
            valid_targets=list(data.get('valid_targets', [])),
            valid_amounts=[float(v) for v in data.get('valid_amounts', [])],
            range=None if motion_range is None else tuple(motion_range),
            n_bin=int(data.get('n_bin', 0)),
            confidence=float(data.get('confidence', 0.0)),
        )


def _all_points(joint):
    return np.concatenate([joint.moving.points, joint.base.points])


def _wrap_angle(angle):
    return float((angle + np.pi) % (2 * np.pi) - np.pi)


def alignment_residual(j_s, target, angle, n_points=PREALIGN_POINTS, seed=0):
    """
    Chamfer of the target's parts to the source's after turning the target
    by angle about up; both joints centered on their centroids.
    """
    up = np.asarray(j_s.up, dtype=float)
    c_s, c_t = _all_points(j_s).mean(axis=0), _all_points(target).mean(axis=0)
    total = 0.0
    for i, part in enumerate(('moving', 'base')):
        src = geo.resample(getattr(j_s, part).points, n_points, seed + i) - c_s
        dst = geo.resample(getattr(target, part).points, n_points, seed + i) - c_t
        total = ad.add(total, geo.chamfer(ad.rotate(dst, up, angle), src))
    return total


def prealign_targets(j_s, targets, seed=0, bins=PREALIGN_BINS, steps=PREALIGN_STEPS,
                     lr=0.01, n_points=PREALIGN_POINTS):
    """
    Up rotation of each whole target joint that best matches the source.

    A coarse search over bins angles is refined by Adam; the best angle
    seen is kept, so the residual never exceeds that of the unturned target.

    Returns:
        list: one angle in [-pi, pi) per target.
    """
    if not targets:
        raise ValueError('prealign_targets needs at least one target')
    angles = []
    for target in targets:
        tseed = derive_seed(seed, j_s.id, target.id)

        def residual(angle, target=target):
            return alignment_residual(j_s, target, angle, n_points, tseed)

        grid = np.arange(bins) * 2 * np.pi / bins
        values = [float(residual(a)) for a in grid]
        best_value, best = min(zip(values, grid))
        angle = np.array(best)
        state = ad.AdamState(lr=lr)
        for _ in range(steps):
            tape = ad.Tape()
            out = residual(tape.param('angle', angle))
            if float(out.value) < best_value:
                best_value, best = float(out.value), float(angle)
            grads = ad.backward(tape, out)
            updated, state = ad.adam_step(state, {'angle': angle}, grads)
            angle = updated['angle']
        final = float(residual(angle))
        if final < best_value:
            best = float(angle)
        angles.append(_wrap_angle(best))
    return angles


def align_targets(j_s, targets, angles, n_points=256, seed=0):
    """Resample each target to n_points per part and turn it about its centroid."""
    up = np.asarray(j_s.up, dtype=float)
    out = []
    for target, angle in zip(targets, angles):
        tseed = derive_seed(seed, j_s.id, target.id, 'aligned')
        pivot = _all_points(target).mean(axis=0)
        parts = [rotate_about_up(geo.resample(getattr(target, name).points, n_points, tseed + i),
                                 angle, up, pivot)
                 for i, name in enumerate(('moving', 'base'))]
        out.append(AlignedTarget(target.id, parts[0], parts[1], angle))
    return out


def enumerate_inits(j, motion_type):
    """
    Hinge: the 3 moving box axes times 5 centers, the moving centroid and
    the 4 box face centers farthest from it. Prismatic: the 2 longest box
    axes.
    """
    obb = j.moving_obb
    if motion_type == PRISMATIC:
        order = np.argsort(-obb.half_extents, kind='stable')[:2]
        return [Init(obb.axes[i].copy()) for i in order]
    centroid = j.moving.centroid
    faces = obb.face_centers()
    far = np.argsort(-np.linalg.norm(faces - centroid, axis=1), kind='stable')[:4]
    centers = [centroid] + [faces[i] for i in sorted(far)]
    return [Init(axis.copy(), center.copy()) for axis in obb.axes for center in centers]


def _face_halves(obb):
    return np.repeat(obb.half_extents, 2)


@dataclass
class _Problem:
    """One source joint against a stack of aligned targets."""
    source: object
    moving_targets: np.ndarray
    base_targets: np.ndarray
    motion_type: str
    weights: object
    pivot: np.ndarray
    scale: float
    d0: float
    ablate: tuple = ()
    axis: np.ndarray = None
    center: np.ndarray = None

    @property
    def k(self):
        return len(self.moving_targets)

    def state(self, p):
        L = self.scale
        axis = ad.normalize(p['axis']) if 'axis' in p else self.axis
        if self.motion_type == HINGE:
            center = ad.add(self.pivot, ad.mul(p['center'], L)) if 'center' in p else self.center
            motion = HingeParams(axis, center, p['amount'])
        else:
            motion = PrismaticParams(axis, ad.mul(p['amount'], L))
        local = ad.mul(p['local'], L) if 'local' in p else np.zeros((self.k, 3))
        # a hinge keeps only the slide along its axis, otherwise the local
        # translation can stand in for any center
        if self.motion_type == PRISMATIC:
            local = project_local_translation(local, axis)
        else:
            local = axial_local_translation(local, axis)
        align = AlignmentParams(ad.mul(p['shift'], L), p['turn'], local)
        moving_deform = base_deform = None
        if 'moving_faces' in p:
            moving_deform = BoxDeform(ad.maximum(
                ad.mul(p['moving_faces'], L), MIN_FACE * _face_halves(self.source.moving_obb)))
            base_deform = BoxDeform(ad.maximum(
                ad.mul(p['base_faces'], L), MIN_FACE * _face_halves(self.source.base_obb)))
        return PairState(motion, align, moving_deform, base_deform)

    def loss(self, p):
        return total_loss(self.source, self.moving_targets, self.base_targets, self.state(p),
                          self.weights, self.pivot, self.d0)

    def amounts(self, p):
        """Per-target amounts in radians or model units."""
        amount = np.asarray(p['amount'], dtype=float)
        return amount if self.motion_type == HINGE else amount * self.scale

    def base_shift(self):
        """Global translations that bring the base centroids together, scaled."""
        source = self.source.base.points.mean(axis=0)
        return (self.base_targets.mean(axis=1) - source) / self.scale

    def seed_amounts(self, shift, init=None):
        """
        Per-target starting amounts in parameter units.

        A prismatic amount is the offset of the moving centroids along the
        axis once the bases are matched; a hinge angle is the best of a
        coarse scan scored by the moving part's reconstruction plus the
        small-motion penalty. Magnitudes below the small-motion floor are
        raised to it.
        """
        axis = self.axis if init is None else np.asarray(init.axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        moving = self.source.moving.points
        offsets = shift * self.scale
        if self.motion_type == PRISMATIC:
            delta = self.moving_targets.mean(axis=1) - moving.mean(axis=0) - offsets
            amounts = (delta @ axis) / self.scale
        else:
            center = self.center if init is None else np.asarray(init.center, dtype=float)
            grid = np.arange(SEED_ANGLES) * 2 * np.pi / SEED_ANGLES - np.pi
            turned = np.asarray(apply_hinge(moving, HingeParams(axis, center, grid)))
            prior = small_motion_penalty(grid, self.weights.tau_theta, self.weights.w_joint)
            diag = max(float(geo.diag(moving)), 1e-6)
            amounts = np.empty(self.k)
            for i in range(self.k):
                d = np.asarray(geo.chamfer(turned + offsets[i], self.moving_targets[i]))
                score = d / diag + prior
                # equally good angles resolve to the smallest turn
                near = np.flatnonzero(score <= score.min() + SEED_TIE)
                amounts[i] = grid[near[np.argmin(np.abs(grid[near]))]]
        floor = _initial_amount(self)
        small = np.abs(amounts) < floor
        amounts[small] = np.where(amounts[small] < 0, -floor, floor)
        return amounts

    def nuisance(self):
        """Zero local translations and box deformations, unless ablated."""
        p = {}
        if 'local_alignment' not in self.ablate:
            p['local'] = np.zeros((self.k, 3))
        if 'deformation' not in self.ablate:
            p['moving_faces'] = np.zeros((self.k, 6))
            p['base_faces'] = np.zeros((self.k, 6))
        return p

    def initial(self, amounts, init=None, nuisance=True):
        p = {
            'amount': np.asarray(amounts, dtype=float),
            'shift': self.base_shift(),
            'turn': np.zeros(self.k),
        }
        if init is not None:
            p['axis'] = np.asarray(init.axis, dtype=float).copy()
            if self.motion_type == HINGE:
                p['center'] = (np.asarray(init.center) - self.pivot) / self.scale
        if nuisance:
            p.update(self.nuisance())
        return p


def _make_problem(j_s, targets, motion_type, weights, n_points, seed, ablate):
    source = replace(j_s,
                     moving=geo.PointCloud(geo.resample(j_s.moving.points, n_points, seed)),
                     base=geo.PointCloud(geo.resample(j_s.base.points, n_points, seed + 1)))
    return _Problem(
        source=source,
        moving_targets=np.stack([t.moving for t in targets]),
        base_targets=np.stack([t.base for t in targets]),
        motion_type=motion_type,
        weights=weights,
        pivot=_all_points(source).mean(axis=0),
        scale=max(float(geo.diag(_all_points(j_s))), 1e-6),
        d0=rest_penetration(source),
        ablate=tuple(ablate),
    )


def cosine_lr(lr, t, budget, floor=LR_FLOOR):
    """Learning rate after t of budget steps, decayed from lr to floor * lr."""
    progress = min(t / max(budget, 1), 1.0)
    return lr * (floor + (1.0 - floor) * 0.5 * (1.0 + np.cos(np.pi * progress)))


@dataclass
class _Run:
    index: int
    params: dict
    adam: ad.AdamState
    budget: int = 1
    loss: float = np.inf
    diverged: bool = False
    pruned: bool = False

    def __post_init__(self):
        self.lr = self.adam.lr

    def release(self, problem):
        """Start optimizing the local translations and deformations."""
        if not self.diverged:
            self.params = dict(self.params, **problem.nuisance())

    def step(self, problem, steps):
        for _ in range(steps):
            if self.diverged:
                return
            tape = ad.Tape()
            variables = {k: tape.param(k, v) for k, v in self.params.items()}
            try:
                group = problem.loss(variables).batch_mean()
                grads = ad.backward(tape, group.total)
                self.adam.lr = cosine_lr(self.lr, self.adam.t, self.budget)
                self.params, self.adam = ad.adam_step(self.adam, self.params, grads)
            except NumericalError as e:
                log.debug('run %d diverged: %s', self.index, e)
                self.diverged, self.loss = True, np.inf
                return
            self.loss = float(ad.value_of(group.total))

    def final(self, problem):
        """Per-pair breakdown at the current parameters, None when diverged."""
        if self.diverged:
            return None
        try:
            breakdown = problem.loss(self.params)
        except NumericalError as e:
            log.debug('run %d diverged: %s', self.index, e)
            self.diverged, self.loss = True, np.inf
            return None
        self.loss = float(np.mean(breakdown.total))
        return breakdown


def _initial_amount(problem):
    tau = problem.weights.tau(problem.motion_type, problem.source)
    if problem.motion_type == PRISMATIC:
        tau = tau / problem.scale
    return max(0.5 * tau, 0.05)


def optimize_group(j_s, targets, motion_type, weights, epochs, lr, seed=0, prune=True,
                   prune_at=0.25, n_points=256, ablate=()):
    """
    Fit one shared motion carrying the source joint onto every target.

    Each initialization optimizes the axis (and hinge center) together with
    a per-target amount, alignment and box deformation by Adam on the mean
    pair loss. Global translations start on the base centroids and amounts
    start from the data. The epoch budget is split evenly among
    initializations; local translations and deformations join after
    prune_at of it, when, with pruning, the worse half stops and the rest
    share the remaining budget. The learning rate follows a cosine decay
    over each run's steps.

    Args:
        j_s (Joint): source joint.
        targets (list): AlignedTarget objects.
        motion_type (str): 'hinge' or 'prismatic'.
        weights (LossWeights): loss weights of the motion type.
        epochs (int): total Adam steps over all initializations.
        lr (float): learning rate.
        seed (int): seed of the point subsampling.
        prune (bool): drop the worse half early.
        prune_at (float): share of the budget before pruning.
        n_points (int): source points per part.
        ablate: switched off components.

    Returns:
        MotionCandidate of the initialization with the lowest final loss.

    Raises:
        NumericalError: every initialization diverged.
    """
    if not targets:
        raise ValueError('optimize_group needs at least one target')
    problem = _make_problem(j_s, targets, motion_type, weights, n_points, seed, ablate)
    shift = problem.base_shift()
    inits = enumerate_inits(j_s, motion_type)
    n = len(inits)
    if prune and n > 1:
        first = max(1, int(round(prune_at * epochs / n)))
        rest = max(1, (epochs - n * first) // ((n + 1) // 2))
    else:
        per = max(1, epochs // n)
        first = max(1, int(round(prune_at * per)))
        rest = max(0, per - first)
    runs = [_Run(i, problem.initial(problem.seed_amounts(shift, init), init, nuisance=False),
                 ad.AdamState(lr=lr), first + rest)
            for i, init in enumerate(inits)]

    # local translations and deformations stay fixed until the motion has
    # settled, so they cannot absorb it
    for run in runs:
        run.step(problem, first)
    active = runs
    if prune and n > 1:
        ranked = sorted(runs, key=lambda r: (r.loss, r.index))
        active = ranked[:(n + 1) // 2]
        for run in ranked[len(active):]:
            run.pruned = True
    for run in active:
        run.release(problem)
        run.step(problem, rest)

    finals = {}
    for run in runs:
        if not run.pruned:
            breakdown = run.final(problem)
            if breakdown is not None:
                finals[run.index] = breakdown
        log.debug('%s %s init %d loss %.6f%s', j_s.id, motion_type, run.index, run.loss,
                  ' (pruned)' if run.pruned else '')
    if not finals:
        raise NumericalError('{}: every {} initialization diverged'.format(j_s.id, motion_type))

    best = min(finals, key=lambda i: (runs[i].loss, i))
    params, breakdown = runs[best].params, finals[best]
    axis = ad.normalize(params['axis'])
    center = None
    if motion_type == HINGE:
        center = problem.pivot + params['center'] * problem.scale
    return MotionCandidate(
        joint_id=j_s.id,
        type=motion_type,
        axis=np.asarray(axis),
        center=center,
        amounts=problem.amounts(params),
        target_ids=[t.joint_id for t in targets],
        losses=[breakdown.pair(i) for i in range(problem.k)],
        group_loss=runs[best].loss,
        init_losses=[r.loss for r in runs],
    )


def snap_axis(axis, moving, base, threshold=0.975):
    """
    Replace an axis by the world or principal axis it nearly matches.

    Candidates are the world axes and the principal axes of the moving and
    base clouds; the one with the largest absolute dot product is taken if
    it exceeds threshold, with the sign of the input kept.
    """
    axis = np.asarray(axis, dtype=float)
    candidates = np.concatenate([np.eye(3), geo.principal_axes(moving),
                                 geo.principal_axes(base)])
    dots = candidates @ axis
    best = 0
    for i in range(1, len(dots)):
        if abs(dots[i]) > abs(dots[best]):
            best = i
    if abs(dots[best]) <= threshold:
        return axis
    return np.sign(dots[best]) * candidates[best]


def motion_range(amounts):
    """[min, max] of the amounts and the rest pose, or None for no amounts."""
    amounts = [float(a) for a in amounts]
    if not amounts:
        return None
    return (min(0.0, min(amounts)), max(0.0, max(amounts)))


def estimate_range(j_s, candidate, targets, weights, epochs, lr, recon_threshold, seed=0,
                   n_points=256, ablate=()):
    """
    Poses the candidate's motion reaches on fresh targets.

    The axis and center stay fixed; each target gets its own amount,
    alignment and deformation, started once from the data and once from
    its mirror on the other side of the rest pose.
    A target is valid when its reconstruction loss ends below
    recon_threshold.

    Returns:
        tuple: (range or None, list of (target id, amount) for valid targets)
    """
    if not targets:
        return None, []
    m = len(targets)
    problem = _make_problem(j_s, targets + targets, candidate.type, weights, n_points, seed,
                            ablate)
    problem.axis = np.asarray(candidate.axis, dtype=float)
    problem.center = None if candidate.center is None else np.asarray(candidate.center)
    seeded = problem.seed_amounts(problem.base_shift())[:m]
    run = _Run(0, problem.initial(np.concatenate([seeded, -seeded])), ad.AdamState(lr=lr),
               epochs)
    run.step(problem, epochs)
    breakdown = run.final(problem)
    if breakdown is None:
        log.warning('%s: range estimation diverged', j_s.id)
        return None, []
    amounts = problem.amounts(run.params)
    totals = np.asarray(breakdown.total)
    recon = np.asarray(breakdown.recon)
    valid = []
    for i, target in enumerate(targets):
        pick = i if totals[i] <= totals[i + m] else i + m
        if recon[pick] < recon_threshold:
            valid.append((target.joint_id, float(amounts[pick])))
    if not valid:
        log.warning('%s: %s candidate has no valid target', j_s.id, candidate.type)
        return None, []
    return motion_range([a for _, a in valid]), valid


def occupied_bins(amounts, motion_range, n_bins):
    """Number of the n_bins equal bins of the range holding at least one amount."""
    if motion_range is None or not len(amounts):
        return 0
    lo, hi = motion_range
    if hi - lo <= 0:
        return 1
    index = np.floor((np.asarray(amounts, dtype=float) - lo) / (hi - lo) * n_bins)
    return len(set(np.clip(index, 0, n_bins - 1).astype(int)))


def motion_confidence(candidate, lambda1, lambda2, n_bins):
    """lambda1 * valid targets + lambda2 * occupied range bins; 0 when invalid."""
    if not candidate.valid or candidate.n_valid == 0:
        return 0.0
    n_bin = occupied_bins(candidate.valid_amounts, candidate.range, n_bins)
    return lambda1 * candidate.n_valid + lambda2 * n_bin


def part_volumes(shape):
    """Axis-aligned box volume of every part."""
    return {p.id: geo.aabb_volume(p.vertices()) for p in shape.parts}


def classify_static(shape, candidates, joints, lambda3, lambda4, ratio_threshold,
                    volumes=None):
    """
    Label each part of a shape static or movable.

    A part's movable and static confidences average the confidences of the
    valid candidates moving it, or resting on it, plus lambda4 per such
    candidate. It is static when the static confidence exceeds
    ratio_threshold times the movable one, or both are zero. The largest
    part is always static.

    Args:
        shape (Shape): the shape.
        candidates (list): MotionCandidate objects of its joints.
        joints (dict): joint id to Joint.
        volumes (dict): part id to volume, from the part geometry by default.

    Returns:
        dict: part id to (is_static, movable confidence, static confidence).
    """
    if volumes is None:
        volumes = part_volumes(shape)
    largest = min(shape.part_ids, key=lambda p: (-volumes[p], p))
    scored = [c for c in candidates if c.valid and c.confidence > 0]
    labels = {}
    for pid in shape.part_ids:
        moving = [c.confidence for c in scored if pid in joints[c.joint_id].moving_part_ids]
        base = [c.confidence for c in scored if joints[c.joint_id].base_part_id == pid]
        c_mov = (lambda3 * float(np.mean(moving)) if moving else 0.0) + lambda4 * len(moving)
        c_static = (lambda3 * float(np.mean(base)) if base else 0.0) + lambda4 * len(base)
        if pid == largest or c_mov == 0:
            static = True
        else:
            static = c_static / c_mov > ratio_threshold
        labels[pid] = (static, c_mov, c_static)
    return labels


def select_best(candidates):
    """Highest confidence, then lowest group loss, then hinge first."""
    if not candidates:
        return None
    order = {HINGE: 0, PRISMATIC: 1}
    return min(candidates, key=lambda c: (-c.confidence, c.group_loss, order[c.type],
                                          c.iteration))


def discover_joint(source, targets, config, iteration):
    """One round for one source joint: both motion types, axes snapped."""
    if not targets:
        return []
    seed = derive_seed(config.pipeline.seed, source.id, iteration)
    opt = config.optimization
    epochs, lr = ((opt.initial_epochs, opt.initial_lr) if iteration == 0
                  else (opt.iterative_epochs, opt.iterative_lr))
    angles = prealign_targets(source, targets, seed)
    aligned = align_targets(source, targets, angles, opt.points, seed)
    out = []
    for motion_type in (HINGE, PRISMATIC):
        candidate = optimize_group(source, aligned, motion_type, config.weights(motion_type),
                                   epochs, lr, seed, opt.prune, opt.prune_at, opt.points,
                                   config.pipeline.ablate)
        axis = snap_axis(candidate.axis, source.moving.points, source.base.points,
                         config.selection.snap_threshold)
        out.append(replace(candidate, axis=axis, iteration=iteration))
    return out


def score_joint(source, targets, candidates, config):
    """Range and confidence of every candidate of one joint."""
    if not candidates:
        return []
    seed = derive_seed(config.pipeline.seed, source.id, 'range')
    opt, sel = config.optimization, config.selection
    aligned = []
    if targets:
        angles = prealign_targets(source, targets, seed)
        aligned = align_targets(source, targets, angles, opt.points, seed)
    out = []
    for candidate in candidates:
        motion_range, valid = estimate_range(
            source, candidate, aligned, config.weights(candidate.type), opt.range_epochs,
            opt.range_lr, sel.recon_threshold, seed, opt.points, config.pipeline.ablate)
        scored = replace(candidate, range=motion_range,
                         valid_targets=[t for t, _ in valid],
                         valid_amounts=[a for _, a in valid])
        scored.n_bin = occupied_bins(scored.valid_amounts, motion_range, sel.n_bins)
        scored.confidence = motion_confidence(scored, sel.lambda1, sel.lambda2, sel.n_bins)
        out.append(scored)
    return out


def extract_all(shapes, config):
    """Joints of every shape, in shape order."""
    s = config.sampling
    options = ExtractOptions(s.points_per_part, s.dense_factor, s.eps_connect,
                             s.component_eps, s.tiny_fraction, s.contact_count,
                             s.neighbor_count)
    joints = []
    for shape in shapes:
        seed = derive_seed(config.pipeline.seed, shape.id)
        dense = shape.sampled(s.points_per_part * s.dense_factor, seed)
        graph = build_part_graph(shape, s.eps_connect, clouds=dense)
        joints += extract_joints(shape, graph, seed, options, dense)
    return joints


def _checkpoint_dir(out_dir):
    return os.path.join(out_dir, CHECKPOINTS)


def _write_json(path, data):
    with open(path, 'w') as f:
        f.write(dumps(data))


def save_checkpoint(out_dir, iteration, targets, candidates, recon, params, space):
    """Write one finished round: the encoder first, then the round's record."""
    root = _checkpoint_dir(out_dir)
    os.makedirs(root, exist_ok=True)
    params.save(os.path.join(root, 'encoder_{:02d}.npz'.format(iteration)))
    _write_json(os.path.join(root, 'iter_{:02d}.json'.format(iteration)), {
        'iteration': iteration,
        'targets': targets,
        'candidates': {jid: [c.to_json() for c in items] for jid, items in candidates.items()},
        'recon': [[s, t, float(r)] for (s, t), r in sorted(recon.items())],
        'embeddings': None if space is None else space.to_json(),
        'alpha': params.alpha,
    })


def load_checkpoints(out_dir):
    """
    Every finished round under out_dir.

    Returns:
        tuple: (last finished iteration or -1, joint id to candidates,
        recon pairs, encoder params or None)
    """
    root = _checkpoint_dir(out_dir)
    candidates, recon, params, last = {}, {}, None, -1
    iteration = 0
    while True:
        record = os.path.join(root, 'iter_{:02d}.json'.format(iteration))
        encoder = os.path.join(root, 'encoder_{:02d}.npz'.format(iteration))
        if not (os.path.exists(record) and os.path.exists(encoder)):
            break
        try:
            with open(record) as f:
                data = json.load(f)
            params = EncoderParams.load(encoder)
        except (OSError, ValueError, KeyError) as e:
            raise PipelineError('cannot resume from {}: {}'.format(record, e))
        for jid, items in data['candidates'].items():
            candidates.setdefault(jid, []).extend(MotionCandidate.from_json(c) for c in items)
        recon = {(s, t): r for s, t, r in data['recon']}
        last = iteration
        iteration += 1
    return last, candidates, recon, params


def _similarity(joints, config, looper, out_dir, resume):
    path = None if out_dir is None else os.path.join(out_dir, 'similarity.json')
    if resume and path and os.path.exists(path):
        with open(path) as f:
            sim = SimilarityMatrix.from_json(json.load(f))
        if sim.joint_ids == [j.id for j in joints]:
            return sim
        log.warning('similarity.json is for other joints, recomputing')
    t = config.targets
    residuals = affine_residuals(joints, looper, t.affine_steps, config.pipeline.seed,
                                 t.affine_points, t.anisotropy)
    sim = build_similarity_matrix(joints, residuals)
    if path:
        _write_json(path, sim.to_json())
    return sim


def _annotate(shape, joints, candidates, config):
    by_part = {j.part_id: j for j in joints.values() if j.shape_id == shape.id}
    shape_candidates = [c for j in by_part.values() for c in candidates.get(j.id, [])]
    sel = config.selection
    labels = classify_static(shape, shape_candidates, joints, sel.lambda3, sel.lambda4,
                             sel.ratio_threshold)
    out = []
    for pid in shape.part_ids:
        static, _, c_static = labels[pid]
        joint = by_part.get(pid)
        best = None if joint is None else select_best(candidates.get(joint.id, []))
        if static or best is None or not best.valid:
            out.append(MotionAnnotation(pid, STATIC, confidence=c_static))
            continue
        out.append(MotionAnnotation(pid, best.type, best.axis, best.center, best.range,
                                    best.confidence))
    return out


def run_pipeline(shapes, config, out_dir=None, resume=False, looper=None):
    """
    Discover the motions of every part of a shape collection.

    Args:
        shapes (list): Shape objects.
        config (Config): run configuration.
        out_dir (str): where checkpoints, annotations.json and config.yaml
            go; nothing is written when None.
        resume (bool): continue after the last finished round in out_dir.
        looper (Looper): worker pool, one with config.pipeline.workers
            workers by default.

    Returns:
        dict: shape id to list of MotionAnnotation in part order.
    """
    config.validate()
    own = looper is None
    if own:
        looper = Looper(config.pipeline.workers)
    try:
        return _run(shapes, config, out_dir, resume, looper)
    finally:
        if own:
            looper.close()


def _run(shapes, config, out_dir, resume, looper):
    seed = config.pipeline.seed
    t = config.targets
    joints = extract_all(shapes, config)
    if len(joints) < 2:
        raise PipelineError('need at least 2 joints, found {}'.format(len(joints)))
    log.info('%d joints from %d shapes', len(joints), len(shapes))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        dump_config(config, os.path.join(out_dir, 'config.yaml'))

    index = {j.id: i for i, j in enumerate(joints)}
    sim = _similarity(joints, config, looper, out_dir, resume)

    candidates, recon, params, start = {}, {}, None, 0
    if resume and out_dir is not None:
        last, candidates, recon, params = load_checkpoints(out_dir)
        start = last + 1
        if last >= 0:
            log.info('resuming after iteration %d', last)
    if params is None:
        params = EncoderParams.initial(derive_seed(seed, 'encoder'))
    space, inputs = embed_all(joints, params, t.encoder_points, seed)

    for iteration in range(start, config.pipeline.iterations):
        targets = {}
        for s, joint in enumerate(joints):
            if iteration == 0:
                chosen = initial_targets(sim, s, t.initial_targets)
            else:
                eligible = sim.eligible(s)
                chosen = [] if len(eligible) == 0 else sample_targets(
                    space, s, t.k, derive_seed(seed, joint.id, iteration), eligible)
            targets[joint.id] = [joints[i].id for i in chosen]

        jobs = [(j, [joints[index[tid]] for tid in targets[j.id]], config, iteration)
                for j in joints]
        results = looper.map(discover_joint, jobs)
        round_candidates = {}
        for joint, found in zip(joints, results):
            round_candidates[joint.id] = found
            candidates.setdefault(joint.id, []).extend(found)
            best = {}
            for c in found:
                for tid, b in zip(c.target_ids, c.losses):
                    best[tid] = min(best.get(tid, np.inf), b.recon)
            for tid, r in best.items():
                recon[(joint.id, tid)] = r

        pairs = [(index[s], index[d], r) for (s, d), r in sorted(recon.items())]
        if pairs:
            epochs, lr = ((t.initial_embedding_epochs, t.initial_embedding_lr) if iteration == 0
                          else (t.embedding_epochs, t.embedding_lr))
            params = train_embedding(pairs, inputs, params, epochs, lr)
        else:
            log.warning('iteration %d produced no reconstruction pairs', iteration)
        used_space = space if iteration > 0 else None
        space, _ = embed_all(joints, params, t.encoder_points, seed)
        if out_dir is not None:
            save_checkpoint(out_dir, iteration, targets, round_candidates, recon, params,
                            used_space)
        log.info('iteration %d done, %d pairs', iteration, len(pairs))

    jobs = []
    for s, joint in enumerate(joints):
        eligible = sim.eligible(s)
        chosen = [] if len(eligible) == 0 else sample_targets(
            space, s, t.range_targets, derive_seed(seed, joint.id, 'range'), eligible)
        jobs.append((joint, [joints[i] for i in chosen], candidates.get(joint.id, []), config))
    scored = dict(zip([j.id for j in joints], looper.map(score_joint, jobs)))

    by_id = {j.id: j for j in joints}
    annotations = {shape.id: _annotate(shape, by_id, scored, config) for shape in shapes}
    if out_dir is not None:
        write_annotations(os.path.join(out_dir, 'annotations.json'), annotations)
    return annotations
