"""Minimal reverse-mode automatic differentiation over float64 arrays.

The graph is built define-by-run: every operation that has at least one
``requires_grad`` input records its parents and a closure mapping the
output gradient to input gradients. :meth:`Tensor.backward` replays those
closures in exact reverse creation order.

Only the broadcasting needed by the networks in this package is supported
(bias add, batch tiling); binary elementwise operations demand equal shapes.
"""

import itertools

import numpy as np

from .exceptions import ContractError, DomainError, NonFiniteError, ShapeError

__all__ = [
    "Tensor",
    "Dense",
    "add",
    "sub",
    "mul",
    "neg",
    "exp",
    "log",
    "leaky_relu",
    "sigmoid",
    "tanh",
    "softplus",
    "clamp_min",
    "softmax",
    "sum",
    "mean",
    "matmul",
    "add_bias",
    "reshape",
    "concat",
    "broadcast_batch",
    "mixture_sum",
    "dropout",
    "dense_layer",
    "glorot_uniform",
]

_creation_counter = itertools.count()

DEFAULT_LEAKY_SLOPE = 0.2


class Tensor:
    """A dense float64 array that can take part in a differentiation graph.

    Parameters
    ----------
    data : array_like
        Values; always copied and converted to float64.
    requires_grad : bool
        Whether gradients should be accumulated into :attr:`grad`.
    name : str, optional
        Label used by checkpoints and diagnostics.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_grad_fn", "_order")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._grad_fn = None
        self._order = next(_creation_counter)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data.copy()

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def backward(self):
        """Accumulate d(self)/d(t) into ``t.grad`` for every reachable ``t``.

        Repeated calls without :meth:`zero_grad` accumulate.
        """
        if self.data.shape != () and self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return

        nodes = []
        seen = set()
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(p for p in node._parents if p.requires_grad)
        nodes.sort(key=lambda n: n._order, reverse=True)

        pending = {id(self): np.ones_like(self.data)}
        for node in nodes:
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node._grad_fn is None:
                continue
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _check_finite(arr, opname):
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise NonFiniteError(f"{opname} produced a non-finite value at index {tuple(bad)}")


def _result(data, parents, grad_fn, opname):
    _check_finite(data, opname)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._order = next(_creation_counter)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    else:
        out._parents = ()
        out._grad_fn = None
    return out


def _lift(x, like=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if like is not None and arr.shape == ():
        arr = np.full(like.shape, float(arr))
    return Tensor(arr)


def _binary_operands(a, b, opname):
    if isinstance(a, Tensor):
        b = _lift(b, a)
    else:
        b = _lift(b)
        a = _lift(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} differ")
    return a, b


# -- elementwise ---------------------------------------------------------


def add(a, b):
    a, b = _binary_operands(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = _binary_operands(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    a, b = _binary_operands(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def neg(x):
    return _result(-x.data, (x,), lambda g: (-g,), "neg")


def exp(x):
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    xd = x.data
    if np.any(xd <= 0):
        idx = tuple(int(i) for i in np.argwhere(xd <= 0)[0])
        err = DomainError(f"log of non-positive value {xd[idx]!r} at index {idx}")
        err.index = idx
        raise err
    return _result(np.log(xd), (x,), lambda g: (g / xd,), "log")


def leaky_relu(x, slope=DEFAULT_LEAKY_SLOPE):
    # gradient at exactly 0 takes the positive branch
    positive = x.data >= 0
    out = np.where(positive, x.data, slope * x.data)
    return _result(out, (x,), lambda g: (np.where(positive, g, slope * g),), "leaky_relu")


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x):
    s = _sigmoid(x.data)
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(x):
    t = np.tanh(x.data)
    return _result(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def softplus(x):
    xd = x.data
    return _result(np.logaddexp(0.0, xd), (x,), lambda g: (g * _sigmoid(xd),), "softplus")


def clamp_min(x, floor):
    """``max(x, floor)``; the gradient is blocked where the floor is active."""
    keep = x.data >= floor
    out = np.where(keep, x.data, floor)
    return _result(out, (x,), lambda g: (np.where(keep, g, 0.0),), "clamp_min")


def softmax(x):
    """Softmax over the last axis, with max subtraction."""
    if x.shape == () or x.shape[-1] < 1:
        raise ShapeError("softmax needs at least one entry along the last axis")
    _check_finite(x.data, "softmax input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _result(s, (x,), grad_fn, "softmax")


# -- reductions ----------------------------------------------------------


def sum(x):  # noqa: A001 - mirrors numpy naming
    if x.size == 0:
        raise DomainError("sum of an empty tensor")
    shape = x.shape
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),), "sum")


def mean(x):
    if x.size == 0:
        raise DomainError("mean of an empty tensor")
    shape, n = x.shape, x.size
    return _result(np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),), "mean")


# -- linear algebra and shape plumbing -----------------------------------


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    # overflow surfaces as a NonFiniteError from _result, not a warning
    with np.errstate(over="ignore", invalid="ignore"):
        out = ad @ bd
    return _result(out, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def add_bias(x, bias):
    if x.ndim != 2 or bias.shape != (x.shape[1],):
        raise ShapeError(f"bias of shape {bias.shape} does not fit input {x.shape}")
    return _result(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=0)), "add_bias")


def reshape(x, shape):
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _result(out, (x,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors, axis=1):
    tensors = [_lift(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(out, tensors, grad_fn, "concat")


def broadcast_batch(x, batch):
    """Tile ``x`` along a new leading batch axis of length ``batch``."""
    out = np.broadcast_to(x.data, (batch,) + x.shape).copy()
    return _result(out, (x,), lambda g: (g.sum(axis=0),), "broadcast_batch")


def mixture_sum(components, weights):
    """Row-wise weighted sum: ``out[b] = sum_i weights[b, i] * components[b, i]``."""
    if components.ndim != 3 or weights.shape != components.shape[:2]:
        raise ShapeError(
            f"mixture_sum needs components (b, N, p) and weights (b, N), "
            f"got {components.shape} and {weights.shape}"
        )
    cd, wd = components.data, weights.data
    out = np.einsum("bnp,bn->bp", cd, wd)

    def grad_fn(g):
        return wd[:, :, None] * g[:, None, :], np.einsum("bnp,bp->bn", cd, g)

    return _result(out, (components, weights), grad_fn, "mixture_sum")


def dropout(x, rate, rng, training=True):
    """Inverted dropout. Identity when ``training`` is false or ``rate`` is 0."""
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise DomainError(f"dropout rate must lie in [0, 1), got {rate}")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _result(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


_ACTIVATIONS = {
    "identity": lambda t: t,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
}


def dense_layer(x, W, bias, activation="identity"):
    """``activation(x @ W + bias)``."""
    fn = _ACTIVATIONS[activation] if isinstance(activation, str) else activation
    return fn(add_bias(matmul(x, W), bias))


def glorot_uniform(fan_in, fan_out, rng, name=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True, name=name)


class Dense:
    """A single fully connected layer owning its weight and bias."""

    def __init__(self, fan_in, fan_out, rng, activation="identity", name="dense"):
        self.W = glorot_uniform(fan_in, fan_out, rng, name=f"{name}.W")
        self.b = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.b")
        self.activation = activation

    def __call__(self, x):
        return dense_layer(x, self.W, self.b, self.activation)

    def parameters(self):
        return [self.W, self.b]
