"""Dense float64 arrays with a recorded-operation reverse-mode gradient tape.

Each forward primitive records its inputs and a backward rule onto the
thread's active ``Tape``; ``Tape.backward`` replays the records once in
reverse order and accumulates gradients into every tensor that requires
them.  One tape per forward pass (define-by-run, so decode length may vary
per example), one tape per worker thread.  With no active tape the
primitives run forward-only, which is what generation uses.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class TensorError(Exception):
    """Base class for tensor and tape failures."""


class ShapeMismatch(TensorError):
    pass


class IndexOutOfRange(TensorError):
    pass


class NotScalarLoss(TensorError):
    pass


class DetachedTensor(TensorError):
    pass


class NonFiniteValue(TensorError):
    pass


class NonFiniteGradient(TensorError):
    pass


_LOCAL = threading.local()
_DEBUG_FINITE_CHECKS = False


def set_debug_finite_checks(enabled: bool) -> None:
    """Toggle the NaN/Inf check after every forward op (slow; for tests)."""
    global _DEBUG_FINITE_CHECKS
    _DEBUG_FINITE_CHECKS = bool(enabled)


def active_tape() -> "Tape | None":
    return getattr(_LOCAL, "tape", None)


class Tensor:
    """A dense float64 array, optionally participating in gradient recording.

    ``grad`` is a lazily allocated same-shape accumulator: ``None`` means
    all-zero.  ``requires_grad`` propagates through every primitive.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def grad_or_zeros(self) -> np.ndarray:
        return np.zeros_like(self.data) if self.grad is None else self.grad

    def _accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # operator sugar; scalars are folded in as constants
    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, _coerce(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _coerce(other))

    @property
    def T(self):
        return transpose(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"


def _coerce(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def constant(value) -> Tensor:
    """Wrap an array as a non-differentiable tensor (masks, targets, ...)."""
    return Tensor(value, requires_grad=False)


class Tape:
    """Ordered record of forward operations for one differentiation pass.

    Use as a context manager around the forward computation; ops executed
    inside append to ``_records`` in execution order, which is a valid
    topological order for the reverse sweep.
    """

    def __init__(self, retain_grads: bool = False):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.retain_grads = retain_grads

    def __enter__(self) -> "Tape":
        if active_tape() is not None:
            raise TensorError("a tape is already active on this thread")
        _LOCAL.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _LOCAL.tape = None
        return False

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(t) into ``t.grad`` for every leaf tensor.

        Visits each recorded op exactly once, in reverse order.  Repeated
        calls keep accumulating unless grads are zeroed in between.
        Intermediate tensors only keep their grads when the tape was built
        with ``retain_grads=True``; leaves (parameters, inputs) always do.
        """
        if loss._tape is not self:
            raise DetachedTensor("loss was not produced on this tape")
        if loss.data.size != 1:
            raise NotScalarLoss(f"loss has shape {loss.data.shape}, expected a scalar")
        # flow holds the upstream gradient for tensors not yet consumed
        flow: dict[int, tuple[Tensor, np.ndarray]] = {
            id(loss): (loss, np.ones_like(loss.data))
        }
        retain = self.retain_grads
        for out, inputs, vjp in reversed(self._records):
            entry = flow.pop(id(out), None)
            if entry is None:
                continue
            g = entry[1]
            if retain:
                out._accumulate_grad(g)
            for t, gi in zip(inputs, vjp(g)):
                if gi is None or not t.requires_grad:
                    continue
                prev = flow.get(id(t))
                if prev is None:
                    flow[id(t)] = (t, gi)
                else:
                    flow[id(t)] = (t, prev[1] + gi)
        # whatever remains belongs to leaves (parameters / inputs)
        for t, g in flow.values():
            t._accumulate_grad(g)


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def _record(out_data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    if _DEBUG_FINITE_CHECKS and not np.all(np.isfinite(out_data)):
        raise NonFiniteValue(f"non-finite values produced by {op}")
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    tape = active_tape()
    if requires and tape is not None:
        out._tape = tape
        tape._records.append((out, tuple(inputs), vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting introduced."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --- elementwise arithmetic ---------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError as e:
        raise ShapeMismatch(f"add: {a.data.shape} vs {b.data.shape}") from e

    def vjp(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g, b.data.shape) if b.requires_grad else None,
        )

    return _record(out, (a, b), vjp, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data - b.data
    except ValueError as e:
        raise ShapeMismatch(f"sub: {a.data.shape} vs {b.data.shape}") from e

    def vjp(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.data.shape) if b.requires_grad else None,
        )

    return _record(out, (a, b), vjp, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError as e:
        raise ShapeMismatch(f"mul: {a.data.shape} vs {b.data.shape}") from e

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
        )

    return _record(out, (a, b), vjp, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data / b.data
    except ValueError as e:
        raise ShapeMismatch(f"div: {a.data.shape} vs {b.data.shape}") from e

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.data.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
        return (ga, gb)

    return _record(out, (a, b), vjp, "div")


def scale(a: Tensor, s: float) -> Tensor:
    out = a.data * s

    def vjp(g):
        return (g * s if a.requires_grad else None,)

    return _record(out, (a,), vjp, "scale")


# --- matrix ops -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """numpy-style matmul with 1-D promotion and broadcast-aware backward."""
    ad, bd = a.data, b.data
    a_vec = ad.ndim == 1
    b_vec = bd.ndim == 1
    a2 = ad[None, :] if a_vec else ad
    b2 = bd[:, None] if b_vec else bd
    try:
        out2 = np.matmul(a2, b2)
    except ValueError as e:
        raise ShapeMismatch(f"matmul: {ad.shape} @ {bd.shape}") from e
    out = out2
    if b_vec:
        out = out[..., 0]
    if a_vec:
        out = out[..., 0, :] if not b_vec else out[..., 0]

    def vjp(g):
        g2 = g.reshape(out2.shape)
        ga = gb = None
        if a.requires_grad:
            ga2 = np.matmul(g2, np.swapaxes(b2, -1, -2))
            ga = _unbroadcast(ga2, a2.shape)
            if a_vec:
                ga = ga.reshape(ad.shape)
        if b.requires_grad:
            gb2 = np.matmul(np.swapaxes(a2, -1, -2), g2)
            gb = _unbroadcast(gb2, b2.shape)
            if b_vec:
                gb = gb.reshape(bd.shape)
        return (ga, gb)

    return _record(out, (a, b), vjp, "matmul")


def linear(x: Tensor, w: Tensor) -> Tensor:
    """x @ w.T for a [O, D]-shaped weight, fused into one record."""
    xd, wd = x.data, w.data
    if wd.ndim != 2 or xd.shape[-1] != wd.shape[1]:
        raise ShapeMismatch(f"linear: {xd.shape} @ {wd.shape}.T")
    out = np.matmul(xd, wd.T)

    def vjp(g):
        gx = gw = None
        if x.requires_grad:
            gx = np.matmul(g, wd)
        if w.requires_grad:
            g2 = g.reshape(-1, wd.shape[0])
            x2 = xd.reshape(-1, wd.shape[1])
            gw = np.matmul(g2.T, x2)
        return (gx, gw)

    return _record(out, (x, w), vjp, "linear")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim < 2:
        raise ShapeMismatch("transpose needs at least 2 dimensions")
    out = np.swapaxes(a.data, -1, -2)

    def vjp(g):
        return (np.swapaxes(g, -1, -2) if a.requires_grad else None,)

    return _record(out, (a,), vjp, "transpose")


# --- nonlinearities -------------------------------------------------------


def sigmoid(a: Tensor) -> Tensor:
    # clipping keeps exp in range; the result saturates to 0/1 either way
    s = 1.0 / (1.0 + np.exp(-np.clip(a.data, -700.0, 700.0)))

    def vjp(g):
        return (g * s * (1.0 - s) if a.requires_grad else None,)

    return _record(s, (a,), vjp, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - y * y) if a.requires_grad else None,)

    return _record(y, (a,), vjp, "tanh")


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)

    def vjp(g):
        return (g * 0.5 / y if a.requires_grad else None,)

    return _record(y, (a,), vjp, "sqrt")


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, shifted by the row max for stability."""
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)

    return _record(y, (a,), vjp, "softmax")


# --- shape plumbing -------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeMismatch(f"reshape {old} -> {shape}") from e

    def vjp(g):
        return (g.reshape(old) if a.requires_grad else None,)

    return _record(out, (a,), vjp, "reshape")


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeMismatch("concat of zero tensors")
    datas = [p.data for p in parts]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError as e:
        raise ShapeMismatch(f"concat along axis {axis}") from e
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(p if t.requires_grad else None for t, p in zip(parts, pieces))

    return _record(out, tuple(parts), vjp, "concat")


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous range along one axis."""
    dim = a.data.shape[axis]
    if not (0 <= start < stop <= dim):
        raise IndexOutOfRange(f"slice [{start}:{stop}] on axis {axis} of extent {dim}")
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = a.data[index]

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _record(out, (a,), vjp, "slice")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Index rows of a [V, E] matrix with an integer array of any shape."""
    idx = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeMismatch(f"embedding table must be 2-D, got {table.data.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise IndexOutOfRange(
            f"embedding ids outside [0, {table.data.shape[0]})"
        )
    out = table.data[idx]

    def vjp(g):
        if not table.requires_grad:
            return (None,)
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record(out, (table,), vjp, "embedding_lookup")


# --- reductions -----------------------------------------------------------


def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk, a.data.shape).copy(),)

    return _record(out, (a,), vjp, "reduce_sum")


def mean_last(a: Tensor) -> Tensor:
    """Mean over the last axis."""
    k = a.data.shape[-1]
    out = a.data.mean(axis=-1)

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        return (np.broadcast_to(g[..., None] / k, a.data.shape).copy(),)

    return _record(out, (a,), vjp, "mean_last")


def std_last(a: Tensor, eps: float = 0.0) -> Tensor:
    """Population standard deviation over the last axis, sqrt(var + eps)."""
    x = a.data
    k = x.shape[-1]
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1)
    sd = np.sqrt(var + eps)

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        return ((g / (k * sd))[..., None] * centered,)

    return _record(sd, (a,), vjp, "std_last")


def normalize_last(a: Tensor, eps: float = 0.0) -> Tensor:
    """(x - mean) / sqrt(var + eps) over the last axis, as one fused op.

    Same result as composing mean_last/std_last/sub/div, with one backward
    rule instead of five records; the workhorse of the modulation network.
    """
    x = a.data
    k = x.shape[-1]
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_sd = 1.0 / np.sqrt(var + eps)
    y = centered * inv_sd

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        g_mean = g.mean(axis=-1, keepdims=True)
        gy_mean = (g * y).mean(axis=-1, keepdims=True)
        return (inv_sd * (g - g_mean - y * gy_mean),)

    return _record(y, (a,), vjp, "normalize_last")


def squared_l2(a: Tensor, b: Tensor) -> Tensor:
    """Sum of squared differences over the last axis."""
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"squared_l2: {a.data.shape} vs {b.data.shape}")
    d = a.data - b.data
    out = (d * d).sum(axis=-1)

    def vjp(g):
        gd = 2.0 * g[..., None] * d
        return (
            gd if a.requires_grad else None,
            -gd if b.requires_grad else None,
        )

    return _record(out, (a, b), vjp, "squared_l2")


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Per-row cross-entropy of integer targets against the last axis.

    Uses the log-sum-exp shift for stability.  Output shape is the logits
    shape with the last axis dropped.
    """
    x = logits.data
    idx = np.asarray(targets, dtype=np.int64)
    if idx.shape != x.shape[:-1]:
        raise ShapeMismatch(
            f"cross_entropy: targets {idx.shape} vs logits {x.shape}"
        )
    v = x.shape[-1]
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        raise IndexOutOfRange(f"cross_entropy targets outside [0, {v})")
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    z = e.sum(axis=-1)
    lse = np.log(z) + m[..., 0]
    picked = np.take_along_axis(x, idx[..., None], axis=-1)[..., 0]
    out = lse - picked

    def vjp(g):
        if not logits.requires_grad:
            return (None,)
        soft = e / z[..., None]
        np.subtract.at(soft, (*np.indices(idx.shape), idx), 1.0)
        return (soft * g[..., None],)

    return _record(out, (logits,), vjp, "cross_entropy")


# --- gradient checking ----------------------------------------------------


def grad_check(
    build: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    samples: int = 32,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Compare analytic gradients of a scalar loss against central differences.

    ``build(*inputs)`` must deterministically produce a scalar loss from the
    current ``data`` of the inputs.  For each input, at least ``samples``
    coordinates (or all of them, if fewer) are probed at ``step``.  Returns
    the max over probed coordinates of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    for t in inputs:
        t.zero_grad()
    with Tape() as tape:
        loss = build(*inputs)
    tape.backward(loss)
    analytic = []
    for t in inputs:
        g = t.grad_or_zeros()
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"analytic gradient of {t.name or 'input'}")
        analytic.append(g.copy())
        t.zero_grad()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, g in zip(inputs, analytic):
        n = t.data.size
        if n <= samples:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=samples, replace=False)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            up = build(*inputs).item()
            flat[c] = orig - step
            down = build(*inputs).item()
            flat[c] = orig
            numeric = (up - down) / (2.0 * step)
            ana = gflat[c]
            err = abs(ana - numeric) / max(1e-8, abs(ana) + abs(numeric))
            worst = max(worst, err)
    return worst
