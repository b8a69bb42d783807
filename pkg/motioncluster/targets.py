"""
Choosing which joints a source joint should be transformed into.

The first round ranks joints by a cheap affine registration residual; later
rounds sample targets near the source in the learned embedding space.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from .encoder import encode, joint_input
from .util import derive_seed

log = logging.getLogger(__name__)


@dataclass
class SimilarityMatrix:
    """
    Symmetric non-negative joint similarities.

    Zero marks pairs that must never be matched: a joint with itself, joints
    of one shape sharing a moving part, and joints whose moving or base
    parts have different numbers of connected components.
    """
    scores: np.ndarray
    joint_ids: list

    def __len__(self):
        return len(self.joint_ids)

    def eligible(self, s):
        return np.flatnonzero(self.scores[s] > 0)

    def to_json(self):
        return {'joint_ids': list(self.joint_ids), 'scores': self.scores.tolist()}

    @classmethod
    def from_json(cls, data):
        return cls(np.asarray(data['scores'], dtype=float), list(data['joint_ids']))


@dataclass
class EmbeddingSpace:
    """Per-joint embeddings of one encoder version."""
    embeddings: np.ndarray
    joint_ids: list
    version: int = 0

    def distances(self, s):
        return np.linalg.norm(self.embeddings - self.embeddings[s], axis=1)

    def to_json(self):
        return {'joint_ids': list(self.joint_ids), 'version': self.version,
                'embeddings': self.embeddings.tolist()}

    @classmethod
    def from_json(cls, data):
        return cls(np.asarray(data['embeddings'], dtype=float), list(data['joint_ids']),
                   int(data['version']))


def _affine_apply(points, centroid, pivot, up, angle, log_scale, translation):
    scaled = ad.add(ad.sub(centroid, pivot),
                    ad.mul(ad.exp(log_scale), ad.sub(points, centroid)))
    return ad.add(ad.add(ad.rotate(scaled, up, angle), pivot), translation)


def _anisotropy(log_scale):
    mean = ad.mean(log_scale)
    return ad.asum(ad.absolute(ad.sub(log_scale, mean)))


def pairwise_affine_fit(j1, j2, steps=100, seed=0, n_points=128, anisotropy=0.1,
                        lr=0.02, coarse_angles=8):
    """
    Register j1 onto j2 with a shared up rotation, per-part translation and
    per-part per-axis scale.

    Returns:
        float: chamfer(moving) + chamfer(base) after fitting, without the
        anisotropy penalty.
    """
    src = [geo.resample(j1.moving.points, n_points, seed),
           geo.resample(j1.base.points, n_points, seed + 1)]
    dst = [geo.resample(j2.moving.points, n_points, seed),
           geo.resample(j2.base.points, n_points, seed + 1)]
    up = np.asarray(j1.up, dtype=float)
    pivot = np.concatenate(src).mean(axis=0)
    centroids = [p.mean(axis=0) for p in src]

    def residual(params, with_penalty):
        total = 0.0
        for i in range(2):
            moved = _affine_apply(src[i], centroids[i], pivot, up, params['angle'],
                                  params['scale{}'.format(i)], params['shift{}'.format(i)])
            total = ad.add(total, geo.chamfer(moved, dst[i]))
            if with_penalty:
                total = ad.add(total, ad.mul(anisotropy, _anisotropy(params['scale{}'.format(i)])))
        return total

    shifts = {'shift{}'.format(i): dst[i].mean(axis=0) - centroids[i] for i in range(2)}
    params = dict(shifts, scale0=np.zeros(3), scale1=np.zeros(3))
    best = None
    for angle in np.linspace(0, 2 * np.pi, coarse_angles, endpoint=False):
        shifted = {}
        for i in range(2):
            turned = ad.rotate(centroids[i] - pivot, up, angle) + pivot
            shifted['shift{}'.format(i)] = dst[i].mean(axis=0) - turned
        trial = dict(params, angle=np.array(angle), **shifted)
        value = float(residual(trial, False))
        if best is None or value < best[0]:
            best = (value, trial)
    params = best[1]

    state = ad.AdamState(lr=lr)
    scale = float(geo.diag(np.concatenate(dst)))
    for _ in range(steps):
        tape = ad.Tape()
        variables = {k: tape.param(k, v) for k, v in params.items()}
        out = residual(variables, True)
        grads = ad.backward(tape, out)
        updated, state = ad.adam_step(state, params, grads)
        # translations step in units of the joint size
        for k in shifts:
            updated[k] = params[k] + (updated[k] - params[k]) * scale
        params = updated
    return float(residual(params, False))


def _fit_job(j1, j2, steps, seed, n_points, anisotropy):
    return pairwise_affine_fit(j1, j2, steps, seed, n_points, anisotropy)


def affine_residuals(joints, looper, steps=100, seed=0, n_points=128, anisotropy=0.1):
    """
    Residuals of all unordered pairs, fitted once per pair and mirrored.

    Returns:
        (N, N) symmetric array with zero diagonal.
    """
    n = len(joints)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    jobs = [(joints[i], joints[j], steps, derive_seed(seed, joints[i].id, joints[j].id),
             n_points, anisotropy) for i, j in pairs]
    values = looper.map(_fit_job, jobs)
    residuals = np.zeros((n, n))
    for (i, j), r in zip(pairs, values):
        residuals[i, j] = residuals[j, i] = r
    return residuals


def excluded_pairs(joints):
    """Self pairs and same-shape pairs whose moving parts overlap."""
    n = len(joints)
    out = np.eye(n, dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = joints[i], joints[j]
            if a.shape_id == b.shape_id and set(a.moving_part_ids) & set(b.moving_part_ids):
                out[i, j] = out[j, i] = True
    return out


def build_similarity_matrix(joints, residuals):
    """
    exp(-residual / median residual), zeroed for excluded and structurally
    different pairs.
    """
    residuals = np.asarray(residuals, dtype=float)
    n = len(joints)
    off = residuals[~np.eye(n, dtype=bool)]
    sigma = float(np.median(off)) if len(off) else 1.0
    if sigma <= 0:
        sigma = 1.0
    scores = np.exp(-residuals / sigma)
    counts = np.array([j.component_counts for j in joints]).reshape(n, 2)
    mismatch = np.any(counts[:, None, :] != counts[None, :, :], axis=2)
    scores[mismatch | excluded_pairs(joints)] = 0.0
    return SimilarityMatrix(scores, [j.id for j in joints])


def initial_targets(sim, s, m=16):
    """
    The m most similar eligible joints, best first, ties by joint id.

    An empty list means the joint cannot be targeted.
    """
    eligible = sim.eligible(s)
    if len(eligible) == 0:
        log.warning('joint %s has no eligible targets', sim.joint_ids[s])
        return []
    order = sorted(eligible, key=lambda t: (-sim.scores[s, t], sim.joint_ids[t]))
    return [int(t) for t in order[:m]]


def sample_weights(space, s, candidates):
    """Probabilities proportional to exp(-distance) over the candidates."""
    d = space.distances(s)[np.asarray(candidates, dtype=int)]
    weights = np.exp(-(d - d.min()))
    return weights / weights.sum()


def sample_targets(space, s, k=5, seed=0, eligible=None):
    """
    Draw k distinct targets with probability proportional to exp(-distance).

    Args:
        space (EmbeddingSpace): current embeddings.
        s (int): source index.
        k (int): number of targets.
        seed (int): sampling seed.
        eligible: candidate indices, by default every other joint.

    Returns:
        list: target indices; all eligible ones when fewer than k exist.
    """
    if eligible is None:
        eligible = [t for t in range(len(space.joint_ids)) if t != s]
    eligible = np.asarray(eligible, dtype=int)
    if len(eligible) <= k:
        return sorted(int(t) for t in eligible)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(eligible, size=k, replace=False, p=sample_weights(space, s, eligible))
    return [int(t) for t in chosen]


def embed_all(joints, params, n_points=256, seed=0):
    """Embed every joint once with one encoder version."""
    inputs = np.stack([joint_input(j, n_points, derive_seed(seed, j.id)) for j in joints])
    emb = np.asarray(encode(inputs, params))
    return EmbeddingSpace(emb, [j.id for j in joints], params.version), inputs
