"""
Point-set joint encoder.

Per-point layers 4 -> 64 -> 128 -> 512, each with per-sample feature
normalization and a leaky ReLU, a max-pool over points, then a
512 -> 256 -> 48 head. Input points carry (x, y, z, moving flag).
"""

import logging

import numpy as np

from . import autodiff as ad
from . import geometry as geo

log = logging.getLogger(__name__)

POINT_LAYERS = (4, 64, 128, 512)
HEAD_LAYERS = (512, 256, 48)
EMBEDDING_DIM = HEAD_LAYERS[-1]
NORM_EPS = 1e-5


class EncoderParams:
    """Named encoder weights plus log(alpha); alpha = exp(log_alpha) stays positive."""

    def __init__(self, arrays, version=0):
        self.arrays = {k: np.asarray(v, dtype=float) for k, v in arrays.items()}
        self.version = version

    @classmethod
    def initial(cls, seed):
        rng = np.random.default_rng(seed)
        arrays = {}
        for i, (fan_in, fan_out) in enumerate(zip(POINT_LAYERS, POINT_LAYERS[1:])):
            arrays['point{}.weight'.format(i)] = rng.normal(
                0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out))
            arrays['point{}.bias'.format(i)] = np.zeros(fan_out)
            arrays['point{}.scale'.format(i)] = np.ones(fan_out)
            arrays['point{}.shift'.format(i)] = np.zeros(fan_out)
        for i, (fan_in, fan_out) in enumerate(zip(HEAD_LAYERS, HEAD_LAYERS[1:])):
            arrays['head{}.weight'.format(i)] = rng.normal(
                0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out))
            arrays['head{}.bias'.format(i)] = np.zeros(fan_out)
        arrays['head0.scale'] = np.ones(HEAD_LAYERS[1])
        arrays['head0.shift'] = np.zeros(HEAD_LAYERS[1])
        arrays['log_alpha'] = np.array(0.0)
        return cls(arrays)

    @property
    def alpha(self):
        return float(np.exp(self.arrays['log_alpha']))

    def copy(self):
        return EncoderParams({k: v.copy() for k, v in self.arrays.items()}, self.version)

    def save(self, path):
        np.savez(path, version=self.version, **self.arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files if k != 'version'}
            return cls(arrays, int(data['version']))


def _normalize(x, scale, shift, axis):
    mu = ad.mean(x, axis=axis, keepdims=True)
    centered = ad.sub(x, mu)
    var = ad.mean(ad.mul(centered, centered), axis=axis, keepdims=True)
    return ad.add(ad.mul(ad.div(centered, ad.sqrt(ad.add(var, NORM_EPS))), scale), shift)


def forward(inputs, weights):
    """
    Embed a batch of point sets.

    Args:
        inputs: (B, P, 4) array.
        weights (dict): name to array or variable.

    Returns:
        (B, 48) embeddings.
    """
    x = inputs
    for i in range(len(POINT_LAYERS) - 1):
        x = ad.add(ad.matmul(x, weights['point{}.weight'.format(i)]),
                   weights['point{}.bias'.format(i)])
        x = _normalize(x, weights['point{}.scale'.format(i)],
                       weights['point{}.shift'.format(i)], axis=1)
        x = ad.leaky_relu(x)
    x = ad.amax(x, axis=1)
    x = ad.add(ad.matmul(x, weights['head0.weight']), weights['head0.bias'])
    x = ad.leaky_relu(_normalize(x, weights['head0.scale'], weights['head0.shift'], axis=-1))
    return ad.add(ad.matmul(x, weights['head1.weight']), weights['head1.bias'])


def joint_input(joint, n_points=256, seed=0):
    """
    Encoder input of a joint: half moving, half base points, centered and
    scaled to unit diagonal, with the moving flag as fourth channel.
    """
    half = n_points // 2
    moving = geo.resample(joint.moving.points, half, seed)
    base = geo.resample(joint.base.points, n_points - half, seed + 1)
    points = np.concatenate([moving, base])
    points = points - points.mean(axis=0)
    scale = float(geo.diag(points))
    if scale > 0:
        points = points / scale
    flags = np.concatenate([np.full(half, geo.MOVING), np.full(n_points - half, geo.BASE)])
    return np.concatenate([points, flags[:, None].astype(float)], axis=1)


def encode(inputs, params):
    """Embeddings of a (B, P, 4) batch or a single (P, 4) set."""
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 2:
        return forward(inputs[None], params.arrays)[0]
    return forward(inputs, params.arrays)


def encode_joint(joint, params, n_points=256, seed=0):
    return encode(joint_input(joint, n_points, seed), params)


def embedding_loss(pairs, inputs, weights):
    """
    Mean |L_recon - alpha * ||E(s) - E(t)||| over (s, t, L_recon) pairs.

    Args:
        pairs: list of (s, t, recon) with s, t row indices of inputs.
        inputs: (N, P, 4) encoder inputs.
        weights (dict): parameter arrays or variables.
    """
    rows = sorted({i for s, t, _ in pairs for i in (s, t)})
    where = {r: k for k, r in enumerate(rows)}
    emb = forward(inputs[rows], weights)
    src = ad.getitem(emb, np.array([where[s] for s, _, _ in pairs]))
    dst = ad.getitem(emb, np.array([where[t] for _, t, _ in pairs]))
    target = np.array([recon for _, _, recon in pairs], dtype=float)
    dist = ad.norm(ad.sub(src, dst))
    alpha = ad.exp(weights['log_alpha'])
    return ad.mean(ad.absolute(ad.sub(target, ad.mul(alpha, dist))))


def train_embedding(pairs, inputs, params, epochs, lr):
    """
    Fit the encoder so embedding distances follow reconstruction losses.

    Training continues from params; a new copy is returned.

    Args:
        pairs: list of (s, t, recon) with s, t row indices of inputs.
        inputs: (N, P, 4) encoder inputs.
        params (EncoderParams): starting weights.
        epochs (int): full-batch Adam steps.
        lr (float): learning rate.
    """
    if not pairs:
        raise ValueError('train_embedding needs at least one pair')
    inputs = np.asarray(inputs, dtype=float)
    arrays = {k: v.copy() for k, v in params.arrays.items()}
    state = ad.AdamState(lr=lr)
    loss = None
    for epoch in range(epochs):
        tape = ad.Tape()
        weights = {k: tape.param(k, v) for k, v in arrays.items()}
        out = embedding_loss(pairs, inputs, weights)
        grads = ad.backward(tape, out)
        arrays, state = ad.adam_step(state, arrays, grads)
        loss = float(out.value)
        if epoch % 50 == 0:
            log.debug('embedding epoch %d loss %.6f', epoch, loss)
    log.info('embedding trained %d epochs on %d pairs, loss %.6f', epochs, len(pairs), loss)
    return EncoderParams(arrays, params.version + 1)
