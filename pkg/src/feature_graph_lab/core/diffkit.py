"""Minimal dense reverse-mode differentiation, Adam and a plateau schedule.

A ``Tape`` records every operation whose inputs require gradients, in
execution order (which is a topological order). ``Tape.backward`` walks the
records once in reverse and accumulates gradients into leaf tensors.
Values are float64 and every forward result is checked for NaN/Inf.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

GradFn = Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


class Tensor:
    """A float64 array with an optional gradient buffer."""

    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.array(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class _Record:
    op: str
    output: Tensor
    parents: tuple[Tensor, ...]
    backward: GradFn


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from e


@dataclass
class BatchNormState:
    """Learnable scale/shift plus running statistics for one normalization layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, momentum: float = 0.1, eps: float = 1e-5, name: str = "bn") -> BatchNormState:
        return cls(
            gamma=Tensor(np.ones(channels), requires_grad=True, name=f"{name}.gamma"),
            beta=Tensor(np.zeros(channels), requires_grad=True, name=f"{name}.beta"),
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
            momentum=momentum,
            eps=eps,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


class Tape:
    """Records operations for one forward pass; not shareable across concurrent tasks."""

    def __init__(self):
        self.records: list[_Record] = []

    def reset(self) -> None:
        self.records.clear()

    def _emit(self, op: str, value: np.ndarray, parents: Sequence[Tensor], backward: GradFn) -> Tensor:
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"{op} produced a non-finite value")
        requires = any(p.requires_grad for p in parents)
        out = Tensor(value, requires_grad=requires, name=op)
        if requires:
            self.records.append(_Record(op, out, tuple(parents), backward))
        return out

    # Forward primitives

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        """``a @ b`` with ``b`` a matrix and ``a`` of any rank >= 2 (leading axes batch)."""
        if b.ndim != 2 or a.ndim < 2 or a.shape[-1] != b.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

        def backward(g: np.ndarray):
            ga = g @ b.value.T
            gb = a.value.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb

        return self._emit("matmul", a.value @ b.value, (a, b), backward)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        _broadcast_shape("add", a, b)

        def backward(g: np.ndarray):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return self._emit("add", a.value + b.value, (a, b), backward)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise product with broadcasting."""
        _broadcast_shape("mul", a, b)

        def backward(g: np.ndarray):
            return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

        return self._emit("mul", a.value * b.value, (a, b), backward)

    def scale(self, a: Tensor, factor: float) -> Tensor:
        return self._emit("scale", a.value * factor, (a,), lambda g: (g * factor,))

    def concat(self, tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
        """Concatenate along ``axis`` (the last axis by default)."""
        try:
            value = np.concatenate([t.value for t in tensors], axis=axis)
        except ValueError as e:
            raise ShapeError(f"concat: {[t.shape for t in tensors]} along axis {axis}") from e
        splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

        def backward(g: np.ndarray):
            return tuple(np.split(g, splits, axis=axis))

        return self._emit("concat", value, tuple(tensors), backward)

    def relu(self, a: Tensor) -> Tensor:
        mask = a.value > 0
        return self._emit("relu", np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))

    def mean(self, a: Tensor, axis: int) -> Tensor:
        size = a.shape[axis]

        def backward(g: np.ndarray):
            return (np.broadcast_to(np.expand_dims(g, axis), a.shape) / size,)

        return self._emit("mean", a.value.mean(axis=axis), (a,), backward)

    def sum(self, a: Tensor, axis: int) -> Tensor:
        def backward(g: np.ndarray):
            return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

        return self._emit("sum", a.value.sum(axis=axis), (a,), backward)

    def reshape(self, a: Tensor, shape: tuple[int, ...]) -> Tensor:
        try:
            value = a.value.reshape(shape)
        except ValueError as e:
            raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from e
        return self._emit("reshape", value, (a,), lambda g: (g.reshape(a.shape),))

    def broadcast_to(self, a: Tensor, shape: tuple[int, ...]) -> Tensor:
        try:
            value = np.broadcast_to(a.value, shape).copy()
        except ValueError as e:
            raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from e
        return self._emit("broadcast_to", value, (a,), lambda g: (_unbroadcast(g, a.shape),))

    def gather(self, a: Tensor, index: np.ndarray, axis: int) -> Tensor:
        """Select entries of ``a`` along ``axis`` (repeats allowed)."""
        index = np.asarray(index, dtype=np.intp)

        def backward(g: np.ndarray):
            ga = np.zeros_like(a.value)
            np.add.at(np.moveaxis(ga, axis, 0), index, np.moveaxis(g, axis, 0))
            return (ga,)

        return self._emit("gather", np.take(a.value, index, axis=axis), (a,), backward)

    def mse(self, pred: Tensor, target: Tensor) -> Tensor:
        if pred.shape != target.shape:
            raise ShapeError(f"mse: prediction {pred.shape} vs target {target.shape}")
        diff = pred.value - target.value
        size = diff.size

        def backward(g: np.ndarray):
            grad = 2.0 * diff / size * g
            return grad, -grad

        return self._emit("mse", np.array(np.mean(diff**2)), (pred, target), backward)

    # Graph primitives

    def segment_softmax(self, scores: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
        """
        Softmax of arc scores within each destination segment.

        Arcs run along the last axis of ``scores``; leading axes are batch.
        Scores are max-shifted per segment before exponentiation.
        """
        seg = np.asarray(segment_ids, dtype=np.intp)
        arcs = scores.shape[-1]
        if seg.shape != (arcs,):
            raise ShapeError(f"segment_softmax: {seg.shape[0]} segment ids for {arcs} arcs")
        s = scores.value.reshape(-1, arcs).T
        seg_max = np.full((num_segments, s.shape[1]), -np.inf)
        np.maximum.at(seg_max, seg, s)
        e = np.exp(s - seg_max[seg])
        denom = np.zeros((num_segments, s.shape[1]))
        np.add.at(denom, seg, e)
        w = e / denom[seg]

        def backward(g: np.ndarray):
            gw = g.reshape(-1, arcs).T
            dot = np.zeros((num_segments, gw.shape[1]))
            np.add.at(dot, seg, gw * w)
            return ((w * (gw - dot[seg])).T.reshape(scores.shape),)

        return self._emit("segment_softmax", w.T.reshape(scores.shape), (scores,), backward)

    def segment_sum(self, messages: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
        """
        Sum arc messages per destination segment.

        Arcs run along axis -2 of ``messages`` (shape ``(..., arcs, channels)``);
        segments with no arcs receive zeros.
        """
        seg = np.asarray(segment_ids, dtype=np.intp)
        if messages.ndim < 2 or seg.shape != (messages.shape[-2],):
            raise ShapeError(f"segment_sum: {seg.shape} segment ids for messages {messages.shape}")
        m = np.moveaxis(messages.value, -2, 0)
        out = np.zeros((num_segments,) + m.shape[1:])
        np.add.at(out, seg, m)

        def backward(g: np.ndarray):
            return (np.moveaxis(np.moveaxis(g, -2, 0)[seg], 0, -2),)

        return self._emit("segment_sum", np.moveaxis(out, 0, -2), (messages,), backward)

    def batch_norm(self, x: Tensor, state: BatchNormState, training: bool) -> Tensor:
        """
        Per-channel normalization over every row of ``x`` (all axes but the last).

        Training mode uses batch statistics and updates the running statistics;
        eval mode uses the running statistics.
        """
        channels = x.shape[-1]
        if channels != state.channels:
            raise ShapeError(f"batch_norm: {channels} channels, state has {state.channels}")
        rows = x.value.reshape(-1, channels)
        n = rows.shape[0]
        gamma, beta = state.gamma.value, state.beta.value

        if training:
            if n < 2:
                raise ShapeError("batch_norm needs at least 2 rows in training mode")
            mu = rows.mean(axis=0)
            var = rows.var(axis=0)
            inv = 1.0 / np.sqrt(var + state.eps)
            xhat = (rows - mu) * inv
            state.running_mean = (1 - state.momentum) * state.running_mean + state.momentum * mu
            state.running_var = (1 - state.momentum) * state.running_var + state.momentum * var * n / (n - 1)

            def backward(g: np.ndarray):
                g2 = g.reshape(-1, channels)
                dxhat = g2 * gamma
                dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
                return dx.reshape(x.shape), (g2 * xhat).sum(axis=0), g2.sum(axis=0)
        else:
            inv = 1.0 / np.sqrt(state.running_var + state.eps)
            xhat = (rows - state.running_mean) * inv

            def backward(g: np.ndarray):
                g2 = g.reshape(-1, channels)
                return (g2 * gamma * inv).reshape(x.shape), (g2 * xhat).sum(axis=0), g2.sum(axis=0)

        value = (xhat * gamma + beta).reshape(x.shape)
        return self._emit("batch_norm", value, (x, state.gamma, state.beta), backward)

    # Reverse pass

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every leaf tensor that requires gradients."""
        if loss.value.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

        produced = {id(r.output) for r in self.records}
        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        leaves: dict[int, Tensor] = {}
        if id(loss) not in produced and loss.requires_grad:
            leaves[id(loss)] = loss

        for record in reversed(self.records):
            g = pending.pop(id(record.output), None)
            if g is None:
                continue
            for parent, pg in zip(record.parents, record.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pending[key] + pg if key in pending else pg
                if key not in produced:
                    leaves[key] = parent

        for key, leaf in leaves.items():
            g = np.asarray(pending[key], dtype=np.float64).reshape(leaf.shape)
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.zero_grad()


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the step counter and hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], lr: float = 1e-3, **kwargs) -> AdamState:
        return cls(
            lr=lr,
            m=[np.zeros_like(p.value) for p in params],
            v=[np.zeros_like(p.value) for p in params],
            **kwargs,
        )


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
) -> Sequence[Tensor]:
    """Apply one bias-corrected Adam update in place; a missing gradient counts as zero."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("adam_step: params, grads and moment buffers differ in length")
    state.step += 1
    t = state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.value)
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ShapeError(f"adam_step: gradient {g.shape} for parameter {p.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g**2
        m_hat = state.m[i] / (1 - state.beta1**t)
        v_hat = state.v[i] / (1 - state.beta2**t)
        p.value = p.value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


class ReduceOnPlateau:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement."""

    def __init__(self, factor: float = 0.5, patience: int = 10, threshold: float = 1e-4, min_lr: float = 1e-5):
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.min_lr = min_lr
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, loss: float, state: AdamState) -> bool:
        """Record an epoch loss; returns True when the learning rate was reduced."""
        if loss < self.best - self.threshold:
            self.best = loss
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs < self.patience:
            return False
        self.bad_epochs = 0
        new_lr = max(state.lr * self.factor, self.min_lr)
        if new_lr < state.lr:
            logger.info(f"Plateau: learning rate {state.lr:.3g} -> {new_lr:.3g}")
            state.lr = new_lr
            return True
        return False


def finite_difference_grad(fn: Callable[[], float], tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function with respect to ``tensor``."""
    grad = np.zeros_like(tensor.value)
    for index in np.ndindex(tensor.shape):
        original = tensor.value[index]
        tensor.value[index] = original + h
        upper = fn()
        tensor.value[index] = original - h
        lower = fn()
        tensor.value[index] = original
        grad[index] = (upper - lower) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error between two gradient arrays."""
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric)) / scale
