"""Dense tensors with reverse-mode automatic differentiation and Adam.

Everything runs on numpy float64 by default. Each operation records its
parents and a backward closure; calling ``backward()`` on a scalar loss
walks the graph in reverse topological order and accumulates gradients
into leaf tensors. Gradients accumulate across backward calls until they
are explicitly zeroed (the optimizer zeroes them after each update).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


class GraphError(RuntimeError):
    """Raised on invalid use of the computation graph (e.g. backward on a non-scalar)."""


def _as_array(values, dtype=DEFAULT_DTYPE) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    return arr


class Tensor:
    """A node in the computation graph wrapping an ndarray.

    ``data`` is the value, ``grad`` the accumulated gradient (same shape,
    allocated lazily), ``op`` a short tag naming the operation that
    produced the node (leaves are tagged ``"leaf"``).
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: tuple = (), backward=None, name: str | None = None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self.name = name
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        tag = self.name or self.op
        return f"Tensor({tag}, shape={self.shape})"

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def accumulate_grad(self, g: np.ndarray) -> None:
        if not self._parents and not self.requires_grad:
            return  # constant or frozen leaf
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from a scalar; gradients accumulate into leaves."""
        if self.data.size != 1:
            raise GraphError(f"backward() requires a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(_wrap(other), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return multiply(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcastable(a: tuple, b: tuple) -> bool:
    for x, y in zip(reversed(a), reversed(b)):
        if x != y and x != 1 and y != 1:
            return False
    return True


# -- elementwise and linear algebra -------------------------------------

def add(a: Tensor, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    out = Tensor(a.data + b.data, op="add", parents=(a, b))
    def backward(g):
        a.accumulate_grad(_unbroadcast(g, a.shape))
        b.accumulate_grad(_unbroadcast(g, b.shape))
    out._backward = backward
    return out


def multiply(a: Tensor, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"multiply: shapes {a.shape} and {b.shape} do not broadcast")
    out = Tensor(a.data * b.data, op="multiply", parents=(a, b))
    def backward(g):
        a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        b.accumulate_grad(_unbroadcast(g * a.data, b.shape))
    out._backward = backward
    return out


def scale(a: Tensor, factor: float) -> Tensor:
    a = _wrap(a)
    factor = float(factor)
    out = Tensor(a.data * factor, op="scale", parents=(a,))
    out._backward = lambda g: a.accumulate_grad(g * factor)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ for shapes {a.shape} and {b.shape}")
    out = Tensor(np.matmul(a.data, b.data), op="matmul", parents=(a, b))
    def backward(g):
        swap = lambda x: np.swapaxes(x, -1, -2)
        a.accumulate_grad(_unbroadcast(np.matmul(g, swap(b.data)), a.shape))
        b.accumulate_grad(_unbroadcast(np.matmul(swap(a.data), g), b.shape))
    out._backward = backward
    return out


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    first = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(first):
            raise ShapeError(f"concat: rank mismatch, {first} vs {t.shape}")
        for d, (x, y) in enumerate(zip(first, t.shape)):
            if d != axis % len(first) and x != y:
                raise ShapeError(f"concat: shapes {first} and {t.shape} differ off axis {axis}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 op="concat", parents=tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    def backward(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offset, offset + n)
            t.accumulate_grad(g[tuple(index)])
            offset += n
    out._backward = backward
    return out


def transpose(a: Tensor, axes) -> Tensor:
    a = _wrap(a)
    axes = tuple(axes)
    out = Tensor(np.transpose(a.data, axes), op="transpose", parents=(a,))
    inverse = tuple(np.argsort(axes))
    out._backward = lambda g: a.accumulate_grad(np.transpose(g, inverse))
    return out


def reshape(a: Tensor, shape) -> Tensor:
    a = _wrap(a)
    out = Tensor(a.data.reshape(shape), op="reshape", parents=(a,))
    out._backward = lambda g: a.accumulate_grad(g.reshape(a.shape))
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    a = _wrap(a)
    if start < 0 or length < 0 or start + length > a.shape[axis]:
        raise ShapeError(f"narrow: [{start}:{start + length}] out of range for {a.shape} axis {axis}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = Tensor(a.data[index], op="narrow", parents=(a,))
    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        a.accumulate_grad(full)
    out._backward = backward
    return out


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), op="sum", parents=(a,))
    def backward(g):
        if axis is None:
            a.accumulate_grad(np.broadcast_to(g, a.shape).copy() if g.ndim else np.full_like(a.data, g))
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            a.accumulate_grad(np.broadcast_to(g, a.shape).copy())
    out._backward = backward
    return out


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` by integer id; shape ids.shape + (width,)."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError("embedding: ids must be integers")
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: id out of range for table with {table.shape[0]} rows")
    out = Tensor(table.data[ids], op="embedding", parents=(table,))
    def backward(g):
        if not table._parents and not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids.reshape(-1), g.reshape(-1, table.shape[1]))
    out._backward = backward
    return out


# -- nonlinearities ------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = Tensor(np.maximum(a.data, 0.0), op="relu", parents=(a,))
    out._backward = lambda g: a.accumulate_grad(g * (a.data > 0))
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = _wrap(a)
    value = sigmoid_array(a.data)
    out = Tensor(value, op="sigmoid", parents=(a,))
    out._backward = lambda g: a.accumulate_grad(g * value * (1.0 - value))
    return out


def tanh(a: Tensor) -> Tensor:
    a = _wrap(a)
    value = np.tanh(a.data)
    out = Tensor(value, op="tanh", parents=(a,))
    out._backward = lambda g: a.accumulate_grad(g * (1.0 - value * value))
    return out


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax_array(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis; -inf entries get exactly zero weight."""
    m = np.max(x, axis=-1, keepdims=True)
    if np.isneginf(m).any():
        raise ShapeError("softmax: a row is fully masked")
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a: Tensor) -> Tensor:
    a = _wrap(a)
    value = softmax_array(a.data)
    out = Tensor(value, op="softmax", parents=(a,))
    def backward(g):
        inner = (g * value).sum(axis=-1, keepdims=True)
        a.accumulate_grad(value * (g - inner))
    out._backward = backward
    return out


def log_softmax(a: Tensor) -> Tensor:
    a = _wrap(a)
    m = np.max(a.data, axis=-1, keepdims=True)
    if np.isneginf(m).any():
        raise ShapeError("log_softmax: a row is fully masked")
    shifted = a.data - m
    value = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = Tensor(value, op="log_softmax", parents=(a,))
    def backward(g):
        soft = np.exp(value)
        a.accumulate_grad(g - soft * g.sum(axis=-1, keepdims=True))
    out._backward = backward
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    eps sits inside the square root, so a constant (zero-variance) row
    normalizes to exact zeros instead of NaN.
    """
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({width},), "
                         f"got {gain.shape} and {bias.shape}")
    mean = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mean) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed = (x.data - mean) * inv
    out = Tensor(normed * gain.data + bias.data, op="layer_norm", parents=(x, gain, bias))
    def backward(g):
        axes = tuple(range(g.ndim - 1))
        gain.accumulate_grad((g * normed).sum(axis=axes))
        bias.accumulate_grad(g.sum(axis=axes))
        gn = g * gain.data
        n = float(width)
        dx = inv / n * (n * gn - gn.sum(axis=-1, keepdims=True)
                        - normed * (gn * normed).sum(axis=-1, keepdims=True))
        x.accumulate_grad(dx)
    out._backward = backward
    return out


def masked_fill(a: Tensor, mask, value: float = -np.inf) -> Tensor:
    """Replace entries where ``mask`` is true; masked positions get zero gradient."""
    a = _wrap(a)
    mask = np.asarray(mask, dtype=bool)
    if not _broadcastable(a.shape, mask.shape):
        raise ShapeError(f"masked_fill: mask shape {mask.shape} does not broadcast to {a.shape}")
    keep = np.broadcast_to(~mask, a.shape)
    out = Tensor(np.where(keep, a.data, value), op="masked_fill", parents=(a,))
    out._backward = lambda g: a.accumulate_grad(g * keep)
    return out


def dropout(a: Tensor, mask, keep_prob: float) -> Tensor:
    """Inverted dropout with a caller-supplied 0/1 mask (no internal RNG)."""
    a = _wrap(a)
    if not 0.0 < keep_prob <= 1.0:
        raise ShapeError(f"dropout: keep_prob must be in (0, 1], got {keep_prob}")
    mask = np.asarray(mask, dtype=a.data.dtype)
    if mask.shape != a.shape:
        raise ShapeError(f"dropout: mask shape {mask.shape} != input shape {a.shape}")
    factor = mask / keep_prob
    out = Tensor(a.data * factor, op="dropout", parents=(a,))
    out._backward = lambda g: a.accumulate_grad(g * factor)
    return out


# -- gradient checking ---------------------------------------------------

@dataclass
class GradCheckReport:
    tol: float
    per_param: dict = field(default_factory=dict)  # name -> max relative error

    @property
    def max_rel_err(self) -> float:
        return max(self.per_param.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def __str__(self):
        lines = [f"grad_check: {'PASS' if self.passed else 'FAIL'} "
                 f"(max rel err {self.max_rel_err:.3e}, tol {self.tol:.1e})"]
        for name, err in sorted(self.per_param.items()):
            lines.append(f"  {name}: {err:.3e}")
        return "\n".join(lines)


def grad_check(build_loss, params: dict, h: float = 1e-5, tol: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``build_loss`` must be a deterministic zero-argument callable returning
    a scalar loss Tensor built from ``params`` (name -> Tensor). Relative
    error per element is |analytic - numeric| / max(|analytic|, |numeric|, 1e-3);
    the floor keeps finite-difference noise on near-zero gradients from
    registering as spurious failures.
    """
    if h <= 0:
        raise ValueError(f"grad_check: h must be positive, got {h}")
    for p in params.values():
        p.requires_grad = True
    first = build_loss()
    second = build_loss()
    if first.data.size != 1:
        raise GraphError("grad_check: build_loss must return a scalar")
    if not np.array_equal(first.data, second.data):
        raise GraphError("grad_check: build_loss is not deterministic "
                         f"({first.data} vs {second.data})")
    for p in params.values():
        p.zero_grad()
    second.backward()
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params.items()}

    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            up = build_loss().item()
            flat[i] = original - h
            down = build_loss().item()
            flat[i] = original
            numeric = (up - down) / (2.0 * h)
            denom = max(abs(numeric), abs(ana[i]), 1e-3)
            worst = max(worst, abs(numeric - ana[i]) / denom)
        report.per_param[name] = worst
        p.zero_grad()
    return report


# -- Adam with inverse-square-root warmup schedule -----------------------

def warmup_rsqrt_lr(step: int, base_lr: float, d_model: int, warmup_steps: int) -> float:
    """base_lr * d_model^-0.5 * min(step^-0.5, step * warmup_steps^-1.5)."""
    if step < 1:
        raise ValueError(f"schedule step must be >= 1, got {step}")
    return base_lr * d_model ** -0.5 * min(step ** -0.5, step * warmup_steps ** -1.5)


class Adam:
    """Bias-corrected Adam over a named parameter dict.

    Learning rate follows the warmup / inverse-square-root schedule keyed
    on the model width. ``step()`` consumes and zeroes the accumulated
    gradients, so explicit gradient accumulation across several backward
    calls works by delaying ``step()``.
    """

    def __init__(self, params: dict, d_model: int, base_lr: float = 2.0,
                 beta1: float = 0.9, beta2: float = 0.998, epsilon: float = 1e-8,
                 warmup_steps: int = 8000):
        if warmup_steps < 1:
            raise ValueError(f"warmup_steps must be positive, got {warmup_steps}")
        self.params = dict(params)
        self.d_model = d_model
        self.base_lr = base_lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.warmup_steps = warmup_steps
        self.step_count = 0
        self.moment1 = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.moment2 = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def learning_rate(self, step: int | None = None) -> float:
        return warmup_rsqrt_lr(step if step is not None else self.step_count,
                               self.base_lr, self.d_model, self.warmup_steps)

    def step(self) -> float:
        """Apply one update from accumulated gradients; returns the lr used."""
        self.step_count += 1
        lr = self.learning_rate(self.step_count)
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            grad = p.grad
            if grad is None:
                continue
            if np.isnan(grad).any():
                raise FloatingPointError(f"NaN gradient in parameter '{name}'")
            m = self.moment1[name]
            v = self.moment2[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)
            p.zero_grad()
        return lr
