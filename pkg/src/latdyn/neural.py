"""Small reverse-mode autodiff engine, dense networks and Adam.

Values are float64 numpy arrays. A :class:`Tape` records every primitive
applied to a :class:`Var`; :func:`backward` walks the records in reverse and
accumulates adjoints. Primitives work on whole arrays (batched vectors), so a
50-step rollout is a few thousand records, not millions of scalar nodes.

Every primitive also accepts plain arrays and then runs eagerly without
recording, so the same model code serves training and inference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, GradientError

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


class Tape:
    """Ordered record of primitives applied to watched variables."""

    def __init__(self):
        self.records = []
        self._inputs = set()

    def watch(self, value) -> "Var":
        return Var(np.asarray(value, dtype=np.float64), self)

    def _record(self, value, parents, backward_fn) -> "Var":
        out = Var(value, self)
        self.records.append((out, parents, backward_fn))
        for p in parents:
            if p is not None:
                self._inputs.add(id(p))
        return out

    def __len__(self):
        return len(self.records)


class Var:
    """An array value tracked on a :class:`Tape`."""

    __slots__ = ("value", "tape")
    __array_priority__ = 1000

    def __init__(self, value, tape):
        self.value = value
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

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
        return mul(-1.0, self)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*args):
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _shape(x):
    return np.shape(value_of(x))


def _binary(a, b, out, grad_a, grad_b):
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = _shape(a), _shape(b)
    pa = a if isinstance(a, Var) else None
    pb = b if isinstance(b, Var) else None

    def backward_fn(g):
        return (
            _unbroadcast(grad_a(g), sa) if pa is not None else None,
            _unbroadcast(grad_b(g), sb) if pb is not None else None,
        )

    return tape._record(out, (pa, pb), backward_fn)


def add(a, b):
    return _binary(a, b, value_of(a) + value_of(b), lambda g: g, lambda g: g)


def sub(a, b):
    return _binary(a, b, value_of(a) - value_of(b), lambda g: g, lambda g: -g)


def mul(a, b):
    va, vb = value_of(a), value_of(b)
    return _binary(a, b, va * vb, lambda g: g * vb, lambda g: g * va)


def div(a, b):
    va, vb = value_of(a), value_of(b)
    out = va / vb
    return _binary(a, b, out, lambda g: g / vb, lambda g: -g * out / vb)


def _unary(x, out, grad_fn):
    if not isinstance(x, Var):
        return out
    return x.tape._record(out, (x,), lambda g: (grad_fn(g),))


def square(x):
    v = value_of(x)
    return _unary(x, v * v, lambda g: 2.0 * g * v)


def gelu(x):
    """Tanh-approximated GELU."""
    v = value_of(x)
    inner = _GELU_C * (v + _GELU_K * v**3)
    th = np.tanh(inner)
    out = 0.5 * v * (1.0 + th)
    if not isinstance(x, Var):
        return out
    deriv = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * _GELU_C * (1.0 + 3.0 * _GELU_K * v * v)
    return _unary(x, out, lambda g: g * deriv)


def softplus(x):
    """``log(1 + exp(x))`` evaluated without overflow."""
    v = value_of(x)
    out = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
    if not isinstance(x, Var):
        return out
    sig = np.exp(-np.logaddexp(0.0, -v))
    return _unary(x, out, lambda g: g * sig)


def norm(x):
    """Euclidean norm over the last axis, keepdims. Gradient at 0 is taken as 0."""
    v = value_of(x)
    out = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    if not isinstance(x, Var):
        return out
    safe = np.where(out > 0.0, out, 1.0)
    return _unary(x, out, lambda g: np.where(out > 0.0, g * v / safe, 0.0))


def total(x):
    """Sum of all entries (scalar)."""
    v = value_of(x)
    shape = np.shape(v)
    return _unary(x, np.sum(v), lambda g: np.broadcast_to(g, shape).copy())


def mean(x):
    v = value_of(x)
    n = np.size(v)
    shape = np.shape(v)
    return _unary(x, np.sum(v) / n, lambda g: np.full(shape, g / n))


def concat(parts):
    """Concatenate along the last axis."""
    values = [value_of(p) for p in parts]
    out = np.concatenate(values, axis=-1)
    tape = _tape_of(*parts)
    if tape is None:
        return out
    bounds = np.cumsum([0] + [v.shape[-1] for v in values])
    parents = tuple(p if isinstance(p, Var) else None for p in parts)

    def backward_fn(g):
        return tuple(
            g[..., bounds[i] : bounds[i + 1]] if parents[i] is not None else None
            for i in range(len(parts))
        )

    return tape._record(out, parents, backward_fn)


def where(mask, replacement, x):
    """Entries of ``replacement`` where ``mask`` is true, else ``x``.

    ``replacement`` is treated as a constant; no gradient flows through it.
    """
    out = np.where(mask, value_of(replacement), value_of(x))
    return _unary(x, out, lambda g: np.where(mask, 0.0, g))


def dense(x, weight, bias):
    """Affine layer ``x @ weight.T + bias`` with ``weight`` shaped (out, in)."""
    vx, vw, vb = value_of(x), value_of(weight), value_of(bias)
    out = vx @ vw.T + vb
    tape = _tape_of(x, weight, bias)
    if tape is None:
        return out
    parents = tuple(p if isinstance(p, Var) else None for p in (x, weight, bias))

    def backward_fn(g):
        gx = g @ vw if parents[0] is not None else None
        if parents[1] is not None:
            gw = np.outer(g, vx) if g.ndim == 1 else g.reshape(-1, g.shape[-1]).T @ vx.reshape(-1, vx.shape[-1])
        else:
            gw = None
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if parents[2] is not None else None
        return gx, gw, gb

    return tape._record(out, parents, backward_fn)


def backward(tape: Tape, loss: Var, wrt):
    """Gradients of scalar ``loss`` with respect to each variable in ``wrt``.

    Raises :class:`GradientError` if a requested variable never entered a
    recorded primitive.
    """
    if not isinstance(loss, Var) or loss.tape is not tape:
        raise GradientError("loss was not produced under this tape")
    if np.size(loss.value) != 1:
        raise DimensionError("backward needs a scalar loss")
    for w in wrt:
        if id(w) not in tape._inputs:
            raise GradientError(f"variable {w!r} is not on the tape")
    grads = {id(loss): np.ones_like(loss.value)}
    for out, parents, fn in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for p, pg in zip(parents, fn(g)):
            if p is None or pg is None:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return [grads[id(w)] if id(w) in grads else np.zeros_like(w.value) for w in wrt]


# --------------------------------------------------------------------------
# networks


@dataclass
class DenseNet:
    """MLP with GELU hidden activations and a linear or softplus head.

    ``weights[i]`` has shape (out, in); ``biases[i]`` has shape (out,).
    """

    weights: list
    biases: list
    head: str = "linear"

    def __post_init__(self):
        if self.head not in ("linear", "softplus"):
            raise ValueError(f"head must be 'linear' or 'softplus', got {self.head!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionError(
                    f"layer {i} expects {w.shape[1]} inputs but layer {i - 1} emits {self.weights[i - 1].shape[0]}"
                )

    @property
    def widths(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_inputs(self):
        return self.weights[0].shape[1]

    @property
    def n_outputs(self):
        return self.weights[-1].shape[0]

    def parameters(self):
        """Flat list of parameter arrays: w0, b0, w1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_parameters(self, params):
        return DenseNet(list(params[0::2]), list(params[1::2]), self.head)

    def __call__(self, x, params=None):
        return forward(self, x, params)


def forward(net: DenseNet, x, params=None):
    """Evaluate ``net`` on ``x`` (shape (..., n_inputs)).

    ``params`` optionally overrides the stored parameters, e.g. with tape
    variables during training.
    """
    if _shape(x)[-1] != net.n_inputs:
        raise DimensionError(f"network expects {net.n_inputs} inputs, got {_shape(x)[-1]}")
    if params is None:
        params = net.parameters()
    h = x
    n_layers = len(params) // 2
    for i in range(n_layers):
        h = dense(h, params[2 * i], params[2 * i + 1])
        if i < n_layers - 1:
            h = gelu(h)
    if net.head == "softplus":
        h = softplus(h)
    return h


def init_dense_net(widths, seed=0, head="linear", rng=None, output_scale=1.0) -> DenseNet:
    """Kaiming-uniform (fan-in, ReLU gain) weights, zero biases, PCG64 stream.

    ``output_scale`` shrinks the last layer's weights so a fresh network
    starts close to its bias.
    """
    if len(widths) < 2 or any(int(w) < 1 for w in widths):
        raise DimensionError(f"invalid layer widths {widths}")
    if not 0.0 <= output_scale <= 1.0:
        raise ValueError("output_scale must lie in [0, 1]")
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(seed))
    weights, biases = [], []
    n_layers = len(widths) - 1
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = math.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        if i == n_layers - 1:
            w = w * output_scale
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return DenseNet(weights, biases, head)


def zeros_like_net(net: DenseNet) -> DenseNet:
    return DenseNet([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases], net.head)


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Moment buffers and step count for Adam with bias correction."""

    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kwargs):
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kwargs)


def adam_step(state: AdamState, params, grads):
    """Return updated parameter arrays; ``state`` is advanced in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params, grads and optimizer buffers must have equal length")
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise DimensionError(f"parameter {i}: shape {p.shape} vs gradient {g.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        out.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


# --------------------------------------------------------------------------
# finite-difference checking


def numerical_gradient(fn, params, h=1e-5):
    """Central-difference gradient of scalar ``fn(params)`` for every entry of every array.

    The default step sits near the cube root of machine epsilon, where the
    truncation and roundoff errors of a central difference balance.
    """
    params = [np.array(p, dtype=np.float64) for p in params]
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn(params)
            flat[i] = orig - h
            down = fn(params)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def relative_error(analytic, numeric, floor=1e-4):
    """Max over entries of ``|a - n| / max(|a|, |n|, floor)``; ``inf`` if anything is non-finite."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a, n = np.asarray(a), np.asarray(n)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(n))):
            return np.inf
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
