"""Dense float64 tensors with reverse-mode differentiation and ADAM.

Only the handful of operations needed by the two attention architectures are
provided.  Every op returns a new :class:`Tensor`; when at least one input
requires a gradient the result keeps a reference to its parents and a closure
that propagates the upstream gradient back to them.  :func:`backward` orders
the recorded graph into a :class:`Tape` and replays it in reverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        # the gradient buffer is allocated by backward() when it is needed
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t, g):
    if t.requires_grad:
        t.grad += g


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a, b, opname):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(
            f"{opname}: incompatible shapes {a.shape} and {b.shape}"
        ) from None


# -- elementwise -------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def mul(a, b):
    """Element-wise (Hadamard) product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward)


def tanh(t):
    y = np.tanh(t.data)
    def backward(g):
        t.grad += g * (1.0 - y * y)

    return _result(y, (t,), backward)


def _sigmoid(x):
    # 1 / (1 + exp(-x)) written so that exp never overflows
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(t):
    y = _sigmoid(t.data)
    def backward(g):
        t.grad += g * y * (1.0 - y)

    return _result(y, (t,), backward)


# -- linear algebra and shape ops --------------------------------------------


def matmul(a, b):
    """``a @ b`` where ``a`` is ``[..., n, k]`` and ``b`` is ``[k, m]`` or batched."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                k, m = b.shape
                b.grad += a.data.reshape(-1, k).T @ g.reshape(-1, m)
            else:
                b.grad += _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)

    return _result(a.data @ b.data, (a, b), backward)


def concat_last_axis(*ts):
    ts = [as_tensor(t) for t in ts]
    lead = ts[0].shape[:-1]
    for t in ts[1:]:
        if t.shape[:-1] != lead:
            shapes = ", ".join(str(x.shape) for x in ts)
            raise ValueError(f"concat_last_axis: leading shapes differ: {shapes}")
    widths = [t.shape[-1] for t in ts]
    bounds = np.cumsum([0] + widths)
    def backward(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                t.grad += g[..., lo:hi]

    return _result(np.concatenate([t.data for t in ts], axis=-1), ts, backward)


def sum_over_axis(t, axis=None, keepdims=False):
    def backward(g):
        if axis is None:
            t.grad += np.broadcast_to(g, t.shape)
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        t.grad += np.broadcast_to(g, t.shape)

    return _result(np.sum(t.data, axis=axis, keepdims=keepdims), (t,), backward)


def mean(t):
    return mul(sum_over_axis(t), 1.0 / t.data.size)


def reshape(t, shape):
    def backward(g):
        t.grad += g.reshape(t.shape)

    return _result(t.data.reshape(shape), (t,), backward)


def expand_last(t):
    return reshape(t, t.shape + (1,))


def embedding_lookup(table, indices):
    """Gather rows of ``table`` ([vocab, dim]) for an integer index array."""
    indices = np.asarray(indices)
    if not np.issubdtype(indices.dtype, np.integer):
        raise TypeError("embedding_lookup: indices must be integers")
    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise IndexError(
            f"embedding_lookup: index out of range for table of shape {table.shape}"
        )
    def backward(g):
        np.add.at(table.grad, indices, g)

    return _result(table.data[indices], (table,), backward)


# -- normalisation and loss ---------------------------------------------------


def _masked_softmax_values(x, mask, axis):
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    shifted = np.where(mask, x, -np.inf)
    top = np.max(shifted, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(np.where(mask, x - top, 0.0)), 0.0)
    z = e.sum(axis=axis, keepdims=True)
    return np.divide(e, z, out=np.zeros_like(e), where=z > 0)


def softmax_masked(t, mask=None, axis=-1):
    """Softmax along ``axis`` that assigns exactly zero to masked-out entries.

    ``mask`` must broadcast to ``t``; rows without any true entry yield zeros.
    """
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        try:
            np.broadcast_shapes(mask.shape, t.shape)
        except ValueError:
            raise ValueError(
                f"softmax_masked: mask shape {mask.shape} does not fit {t.shape}"
            ) from None
    y = _masked_softmax_values(t.data, mask, axis)
    def backward(g):
        t.grad += y * (g - np.sum(g * y, axis=axis, keepdims=True))

    return _result(y, (t,), backward)


def softmax(t, axis=-1):
    return softmax_masked(t, None, axis)


def log_softmax_values(logits):
    top = logits.max(axis=-1, keepdims=True)
    shifted = logits - top
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits, targets):
    """Mean negative log-likelihood of integer ``targets`` under ``softmax(logits)``."""
    targets = np.asarray(targets)
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy: expected [batch, classes], got {logits.shape}")
    n, k = logits.shape
    if targets.shape != (n,):
        raise ValueError(
            f"cross_entropy: targets shape {targets.shape} does not match batch {n}"
        )
    if n and (targets.min() < 0 or targets.max() >= k):
        raise ValueError(f"cross_entropy: target out of range for {k} classes")
    logp = log_softmax_values(logits.data)
    rows = np.arange(n)
    loss = -logp[rows, targets].mean()
    def backward(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        logits.grad += d * g / n

    return _result(np.asarray(loss), (logits,), backward)


# -- tape and backward --------------------------------------------------------


@dataclass
class Tape:
    """Differentiable operations reachable from an output, inputs first."""

    nodes: list = field(default_factory=list)

    @classmethod
    def record(cls, output):
        order, seen = [], set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)


def backward(loss):
    """Populate ``.grad`` of every tensor that ``loss`` depends on.

    Gradients accumulate; callers zero them between optimisation steps.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not depend on any trainable tensor")
    tape = Tape.record(loss)
    for node in tape.nodes:
        if node._backward is not None and node is not loss:
            node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node._backward is not None:
            node._backward(node.grad)
    return tape


# -- initialisation and optimiser --------------------------------------------


def glorot_uniform(rng, shape, name=None):
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True, name=name)


def zeros(shape, name=None):
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
        return state


def adam_step(params, grads, state):
    """One bias-corrected ADAM update applied in place to ``params``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState.for_params(
            self.params, lr=lr, beta1=beta1, beta2=beta2, eps=eps
        )

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state)
