"""
Reverse-mode differentiation over numpy arrays, plus Adam.

Every operation in this module is polymorphic: called on plain arrays it
returns a plain array, called with at least one :class:`Variable` it
records a node on that variable's tape. The geometry and loss kernels are
written once against these operations and serve both numeric code and the
optimizers.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .util import Error, NumericalError

log = logging.getLogger(__name__)


class TapeError(Error):
    """Misuse of a tape: mixed tapes, repeated backward, non-scalar output."""


class Tape:
    """Records every node created from its parameters, in creation order."""

    def __init__(self):
        self.nodes = []
        self.params = {}
        self._consumed = False

    def param(self, name, value):
        """Declare a named parameter and return its variable."""
        if name in self.params:
            raise TapeError('parameter {!r} declared twice'.format(name))
        if self._consumed:
            raise TapeError('tape already differentiated')
        var = Variable(np.array(value, dtype=float), self, ())
        var.name = name
        self.params[name] = var
        return var

    def __len__(self):
        return len(self.nodes)


class Variable:
    """A node of a tape holding an array value and, after backward, its adjoint."""

    __array_ufunc__ = None

    def __init__(self, value, tape, parents):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.name = None
        self._adjoint = None
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def adjoint(self):
        if self._adjoint is None:
            return np.zeros_like(self.value)
        return self._adjoint

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return 'Variable({}{})'.format(
            '' if self.name is None else self.name + '=', self.value)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return asum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


def value_of(x):
    """The numeric value of a variable or array-like."""
    if isinstance(x, Variable):
        return x.value
    return np.asarray(x, dtype=float)


def is_variable(x):
    return isinstance(x, Variable)


def _node(value, *links):
    """Wrap value as a tape node when any link's source is a Variable."""
    links = tuple((src, vjp) for src, vjp in links if isinstance(src, Variable))
    if not links:
        return value
    tape = links[0][0].tape
    for src, _ in links[1:]:
        if src.tape is not tape:
            raise TapeError('operands belong to different tapes')
    return Variable(np.asarray(value, dtype=float), tape, links)


def _unbroadcast(grad, shape):
    """Sum grad down to shape, undoing numpy broadcasting."""
    grad = np.asarray(grad)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def backward(tape, output):
    """
    Propagate adjoints from a scalar output back to the tape's parameters.

    Args:
        tape (Tape): the tape the output was recorded on.
        output (Variable): a scalar node of tape.

    Returns:
        dict: parameter name to gradient array (zeros for parameters the
        output does not depend on).
    """
    if not isinstance(output, Variable) or output.tape is not tape:
        raise TapeError('output is not a node of this tape')
    if output.value.size != 1:
        raise TapeError('output must be scalar, got shape {}'.format(output.shape))
    if tape._consumed:
        raise TapeError('backward already ran on this tape')
    tape._consumed = True

    output._adjoint = np.ones_like(output.value)
    for node in reversed(tape.nodes[:output.index + 1]):
        if node._adjoint is None:
            continue
        for src, vjp in node.parents:
            contribution = vjp(node._adjoint)
            if src._adjoint is None:
                src._adjoint = np.array(contribution, dtype=float).reshape(src.shape)
            else:
                src._adjoint = src._adjoint + contribution
    return {name: var.adjoint for name, var in tape.params.items()}


# elementwise arithmetic

def add(a, b):
    av, bv = value_of(a), value_of(b)
    return _node(av + bv,
                 (a, lambda g: _unbroadcast(g, av.shape)),
                 (b, lambda g: _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    return _node(av - bv,
                 (a, lambda g: _unbroadcast(g, av.shape)),
                 (b, lambda g: _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    return _node(av * bv,
                 (a, lambda g: _unbroadcast(g * bv, av.shape)),
                 (b, lambda g: _unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = value_of(a), value_of(b)
    if np.any(bv == 0):
        raise NumericalError('division by zero')
    return _node(av / bv,
                 (a, lambda g: _unbroadcast(g / bv, av.shape)),
                 (b, lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape)))


def neg(a):
    return _node(-value_of(a), (a, lambda g: -g))


def power(a, exponent):
    """a ** exponent for a constant exponent."""
    if isinstance(exponent, Variable):
        raise TapeError('only constant exponents are supported')
    av = value_of(a)
    p = float(exponent)
    return _node(av ** p, (a, lambda g: g * p * av ** (p - 1)))


def sqrt(a):
    av = value_of(a)
    if np.any(av < 0):
        raise NumericalError('sqrt of negative value')
    out = np.sqrt(av)
    safe = np.where(out > 0, out, 1.0)

    def vjp(g):
        return np.where(out > 0, g * 0.5 / safe, 0.0)
    return _node(out, (a, vjp))


def exp(a):
    out = np.exp(value_of(a))
    return _node(out, (a, lambda g: g * out))


def log(a):
    av = value_of(a)
    if np.any(av <= 0):
        raise NumericalError('log of non-positive value')
    return _node(np.log(av), (a, lambda g: g / av))


def absolute(a):
    av = value_of(a)
    return _node(np.abs(av), (a, lambda g: g * np.sign(av)))


def maximum(a, b):
    """Elementwise max; on ties neither side receives gradient."""
    av, bv = value_of(a), value_of(b)
    return _node(np.maximum(av, bv),
                 (a, lambda g: _unbroadcast(g * (av > bv), av.shape)),
                 (b, lambda g: _unbroadcast(g * (bv > av), bv.shape)))


def minimum(a, b):
    av, bv = value_of(a), value_of(b)
    return _node(np.minimum(av, bv),
                 (a, lambda g: _unbroadcast(g * (av < bv), av.shape)),
                 (b, lambda g: _unbroadcast(g * (bv < av), bv.shape)))


def leaky_relu(a, slope=0.2):
    av = value_of(a)
    scale = np.where(av > 0, 1.0, slope)
    return _node(av * scale, (a, lambda g: g * scale))


def sin(a):
    av = value_of(a)
    return _node(np.sin(av), (a, lambda g: g * np.cos(av)))


def cos(a):
    av = value_of(a)
    return _node(np.cos(av), (a, lambda g: -g * np.sin(av)))


# reductions and shape

def asum(a, axis=None, keepdims=False):
    av = value_of(a)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape)
    return _node(np.sum(av, axis=axis, keepdims=keepdims), (a, vjp))


def mean(a, axis=None, keepdims=False):
    av = value_of(a)
    count = av.size if axis is None else np.prod(
        [av.shape[i] for i in np.atleast_1d(axis)])
    return div(asum(a, axis, keepdims), float(count))


def _arg_reduce(a, axis, pick):
    av = value_of(a)
    if axis is None:
        flat = pick(av.reshape(-1))
        index = np.unravel_index(flat, av.shape)
        out = av[index]

        def vjp(g):
            grad = np.zeros_like(av)
            grad[index] = g
            return grad
        return _node(out, (a, vjp))

    idx = np.expand_dims(pick(av, axis=axis), axis)
    out = np.take_along_axis(av, idx, axis=axis).squeeze(axis)

    def vjp(g):
        grad = np.zeros_like(av)
        np.put_along_axis(grad, idx, np.expand_dims(g, axis), axis=axis)
        return grad
    return _node(out, (a, vjp))


def amax(a, axis=None):
    """Max over an axis; the gradient goes to the first maximal entry."""
    return _arg_reduce(a, axis, np.argmax)


def amin(a, axis=None):
    return _arg_reduce(a, axis, np.argmin)


def getitem(a, index):
    av = value_of(a)

    def vjp(g):
        grad = np.zeros_like(av)
        np.add.at(grad, index, g)
        return grad
    return _node(av[index], (a, vjp))


def reshape(a, shape):
    av = value_of(a)
    return _node(av.reshape(shape), (a, lambda g: np.reshape(g, av.shape)))


def expand(a, axis):
    av = value_of(a)
    return reshape(a, np.expand_dims(av, axis).shape)


def transpose(a, axes=None):
    av = value_of(a)
    inverse = None if axes is None else np.argsort(axes)
    return _node(np.transpose(av, axes), (a, lambda g: np.transpose(g, inverse)))


def concat(items, axis=0):
    values = [value_of(x) for x in items]
    bounds = np.cumsum([0] + [v.shape[axis] for v in values])
    links = []
    for i, x in enumerate(items):
        lo, hi = bounds[i], bounds[i + 1]
        sl = [slice(None)] * values[i].ndim
        sl[axis] = slice(lo, hi)
        links.append((x, lambda g, sl=tuple(sl): g[sl]))
    return _node(np.concatenate(values, axis=axis), *links)


def stack(items, axis=0):
    items = [expand(x, axis) for x in items]
    return concat(items, axis)


def where(condition, a, b):
    """Select from a where condition holds, else from b; condition is constant."""
    cond = np.asarray(condition, dtype=bool)
    av, bv = value_of(a), value_of(b)
    return _node(np.where(cond, av, bv),
                 (a, lambda g: _unbroadcast(np.where(cond, g, 0.0), av.shape)),
                 (b, lambda g: _unbroadcast(np.where(cond, 0.0, g), bv.shape)))


# linear algebra

def matmul(a, b):
    """
    Matrix product for (..., n, m) @ (m, k), (..., n, m) @ (..., m, k) and
    (..., n, m) @ (m,).
    """
    av, bv = value_of(a), value_of(b)
    if av.ndim < 2:
        raise TapeError('matmul expects a matrix on the left')
    if bv.ndim == 1:
        return _node(av @ bv,
                     (a, lambda g: g[..., None] * bv),
                     (b, lambda g: np.einsum('...nm,...n->m', av, g)))
    return _node(av @ bv,
                 (a, lambda g: _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)),
                 (b, lambda g: _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)))


def dot(a, b):
    """Inner product over the last axis, broadcasting the rest."""
    return asum(mul(a, b), axis=-1)


def cross(a, b):
    av, bv = value_of(a), value_of(b)
    return _node(np.cross(av, bv),
                 (a, lambda g: _unbroadcast(np.cross(bv, g), av.shape)),
                 (b, lambda g: _unbroadcast(np.cross(g, av), bv.shape)))


def norm(a, axis=-1):
    """Euclidean norm over an axis; the gradient at the zero vector is 0."""
    av = value_of(a)
    out = np.sqrt(np.sum(av * av, axis=axis))
    safe = np.where(out > 0, out, 1.0)

    def vjp(g):
        scale = np.where(out > 0, g / safe, 0.0)
        return np.expand_dims(scale, axis) * av
    return _node(out, (a, vjp))


def normalize(a, axis=-1):
    return div(a, expand(norm(a, axis), axis))


def rotate(points, axis, angle):
    """
    Rotate points about a unit axis through the origin by angle (Rodrigues).

    Args:
        points: (..., 3) array or variable.
        axis: unit 3-vector.
        angle: scalar, radians.
    """
    c, s = cos(angle), sin(angle)
    along = expand(dot(points, axis), -1)
    return add(add(mul(points, c), mul(cross(axis, points), s)),
               mul(mul(axis, along), sub(1.0, c)))


# optimization

@dataclass
class AdamState:
    """Bias-corrected Adam moments keyed by parameter name."""
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(state, params, grads):
    """
    Apply one Adam update.

    Args:
        state (AdamState): moments, updated in place.
        params (dict): name to array.
        grads (dict): name to gradient array, same keys and shapes.

    Returns:
        tuple: (new params dict, state)
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError('non-finite gradient for parameter {!r}'.format(name))
    if set(params) != set(grads):
        raise TapeError('parameters and gradients differ: {} vs {}'.format(
            sorted(params), sorted(grads)))

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    updated = {}
    for name in params:
        p = np.asarray(params[name], dtype=float)
        g = np.asarray(grads[name], dtype=float)
        if p.shape != g.shape:
            raise TapeError('shape mismatch for {!r}: {} vs {}'.format(name, p.shape, g.shape))
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        updated[name] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return updated, state


def gradient(f, x):
    """Value and gradient of a scalar function of one array."""
    tape = Tape()
    var = tape.param('x', x)
    out = f(var)
    if not isinstance(out, Variable):
        return float(np.asarray(out)), np.zeros_like(np.asarray(x, dtype=float))
    return float(out.value), backward(tape, out)['x']


def finite_diff_check(f, x, h=1e-5, retries=(1, 3, 9)):
    """
    Compare the tape gradient of f at x with central differences.

    Args:
        f: function of one array returning a scalar, written with this
            module's operations so it runs on plain arrays and variables.
        x: the point to check.
        h (float): central difference step.
        retries: divisors of h tried per coordinate; the smallest error is
            kept so an isolated kink within h does not fail a coordinate.

    Returns:
        float: max over coordinates of |autodiff - central| / (|central| + 1e-8).
    """
    x = np.array(x, dtype=float)
    _, grad = gradient(f, x)
    grad = np.asarray(grad).reshape(-1)
    flat = x.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        best = np.inf
        for div_ in retries:
            step = h / div_
            hi, lo = flat.copy(), flat.copy()
            hi[i] += step
            lo[i] -= step
            central = (float(value_of(f(hi.reshape(x.shape))))
                       - float(value_of(f(lo.reshape(x.shape))))) / (2 * step)
            best = min(best, abs(grad[i] - central) / (abs(central) + 1e-8))
            if best < 1e-6:
                break
        worst = max(worst, best)
    return worst
