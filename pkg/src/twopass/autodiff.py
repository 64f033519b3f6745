"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tensor` wraps a numpy array.  Operations executed while a
:class:`Tape` is active (and with at least one input that requires a
gradient) are recorded as nodes; :func:`backprop` walks the tape in exact
reverse order and accumulates gradients into the leaf tensors.

Without an active tape the same functions run as plain numpy inference,
which is how decoding uses the model code.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .kernels import rnnt_lattice


class NonFiniteError(ArithmeticError):
    """Raised when a forward value or a gradient contains NaN or Inf."""


class ShapeError(ValueError):
    pass


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {where}")


class Tensor:
    """Dense float64 array with an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _check: bool = True):
        arr = np.asarray(data, dtype=np.float64)
        if _check:
            _check_finite(arr, name or "tensor construction")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the data."""
        return self.data.reshape(-1)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Node:
    __slots__ = ("inputs", "outputs", "backward", "op")

    def __init__(self, op: str, inputs: Sequence[Tensor], outputs: Sequence[Tensor],
                 backward: Callable):
        self.op = op
        self.inputs = tuple(inputs)
        self.outputs = tuple(outputs)
        self.backward = backward


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class no_grad:
    """Suspend recording inside an enclosing tape (inference, search)."""

    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()


class Tape:
    """Ordered record of primitive operations.

    Tapes are thread-local: a graph built in one thread is invisible to
    others, so independent utterances can be evaluated concurrently.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted")
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: Node) -> None:
        self.nodes.append(node)
        for out in node.outputs:
            self._produced.add(id(out))


def _record(op: str, inputs: Sequence[Tensor], outputs: Sequence[Tensor],
            backward: Callable) -> None:
    tape = active_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        return
    for out in outputs:
        out.requires_grad = True
    tape.record(Node(op, inputs, outputs, backward))


def backprop(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf on the tape.

    Returns the raw gradient map keyed by ``id(leaf)``.
    """
    if loss.size != 1:
        raise ShapeError(f"backprop needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        gouts = [grads.pop(id(o), None) for o in node.outputs]
        if all(g is None for g in gouts):
            continue
        gouts = [np.zeros_like(o.data) if g is None else g
                 for o, g in zip(node.outputs, gouts)]
        gins = node.backward(*gouts)
        for inp, g in zip(node.inputs, gins):
            if g is None or not inp.requires_grad:
                continue
            _check_finite(g, f"backward of {node.op}")
            key = id(inp)
            prev = grads.get(key)
            grads[key] = g if prev is None else prev + g
            if key not in tape._produced:
                leaves[key] = inp
    out = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        out[key] = g
    return out


# ---------------------------------------------------------------- elementwise

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    _record("add", (a, b), (out,),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)
    _record("sub", (a, b), (out,),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)
    _record("mul", (a, b), (out,),
            lambda g: (_unbroadcast(g * b.data, a.shape),
                       _unbroadcast(g * a.data, b.shape)))
    return out


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data * c)
    _record("scale", (x,), (out,), lambda g: (g * c,))
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y, _check=False)
    _record("tanh", (x,), (out,), lambda g: (g * (1.0 - y * y),))
    return out


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    out = Tensor(y, _check=False)
    _record("sigmoid", (x,), (out,), lambda g: (g * y * (1.0 - y),))
    return out


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    out = Tensor(y, name="exp")
    _record("exp", (x,), (out,), lambda g: (g * y,))
    return out


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x.data)
    out = Tensor(y, name="log")
    _record("log", (x,), (out,), lambda g: (g / x.data,))
    return out


# ------------------------------------------------------------------ reductions

def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    y = x.data.sum(axis=axis)
    out = Tensor(y)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    _record("sum", (x,), (out,), backward)
    return out


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return scale(sum(x, axis), 1.0 / n)


# -------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` where ``b`` is a 2-D matrix and ``a`` has any leading dims."""
    if b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, name="matmul")

    def backward(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    _record("matmul", (a, b), (out,), backward)
    return out


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``x @ W + b`` over the last axis of ``x``."""
    if W.ndim != 2 or x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(
            f"affine shape mismatch: x{x.shape} W{W.shape} b{b.shape}")
    out = Tensor(x.data @ W.data + b.data, name="affine")

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        return (g @ W.data.T,
                x.data.reshape(-1, x.shape[-1]).T @ g2,
                g2.sum(axis=0))

    _record("affine", (x, W, b), (out,), backward)
    return out


def einsum(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum whose operand indices all survive into the output
    or the other operand (so each gradient is another einsum)."""
    lhs, out_sub = spec.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    for s, other in ((sa, sb), (sb, sa)):
        if any(c not in out_sub and c not in other for c in s):
            raise ValueError(f"unsupported einsum {spec!r}")
    out = Tensor(np.einsum(spec, a.data, b.data), name="einsum")

    def backward(g):
        return (np.einsum(f"{out_sub},{sb}->{sa}", g, b.data),
                np.einsum(f"{out_sub},{sa}->{sb}", g, a.data))

    _record("einsum", (a, b), (out,), backward)
    return out


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul over identical leading dims: (..., n, k) @ (..., k, m)."""
    if a.ndim < 3 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"bmm: shapes {a.shape} and {b.shape} do not match")
    out = Tensor(np.matmul(a.data, b.data), name="bmm")

    def backward(g):
        return (np.matmul(g, np.swapaxes(b.data, -1, -2)),
                np.matmul(np.swapaxes(a.data, -1, -2), g))

    _record("bmm", (a, b), (out,), backward)
    return out


# ------------------------------------------------------------------- softmaxes

def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Row softmax with max-subtraction.  ``mask`` (broadcastable bool, True =
    keep) forces excluded positions to exactly zero."""
    z = x.data
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, name="softmax")

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    _record("softmax", (x,), (out,), backward)
    return out


def log_softmax_np(z: np.ndarray, axis: int = -1) -> np.ndarray:
    m = z.max(axis=axis, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    y = log_softmax_np(x.data, axis)
    out = Tensor(y, name="log_softmax")

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    _record("log_softmax", (x,), (out,), backward)
    return out


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over rows of ``-log_softmax(logits)[i, targets[i]]``."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy shape mismatch: logits{logits.shape} "
                         f"targets{targets.shape}")
    n, v = logits.shape
    if n == 0:
        raise ShapeError("cross_entropy needs at least one row")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise IndexError(f"target id out of range [0, {v})")
    logp = log_softmax_np(logits.data)
    rows = np.arange(n)
    out = Tensor(-logp[rows, targets].mean())

    def backward(g):
        p = np.exp(logp)
        p[rows, targets] -= 1.0
        return (p * (g / n),)

    _record("cross_entropy", (logits,), (out,), backward)
    return out


# ------------------------------------------------------------------ structural

def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape), _check=False)
    _record("reshape", (x,), (out,), lambda g: (g.reshape(x.shape),))
    return out


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(x.data.transpose(axes), _check=False)
    _record("transpose", (x,), (out,), lambda g: (g.transpose(inv),))
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), _check=False)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    _record("concat", tensors, (out,), backward)
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis), _check=False)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    _record("stack", tensors, (out,), backward)
    return out


def unstack(x: Tensor, axis: int = 0) -> list[Tensor]:
    """Split along ``axis`` into a list of tensors, recorded as one node."""
    parts = [Tensor(p, _check=False) for p in np.moveaxis(x.data, axis, 0)]

    def backward(*gs):
        return (np.stack(gs, axis=axis),)

    _record("unstack", (x,), parts, backward)
    return parts


def index_select(x: Tensor, index) -> Tensor:
    """Numpy basic/advanced indexing; gradients scatter-add back."""
    out = Tensor(np.array(x.data[index]), _check=False)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    _record("index", (x,), (out,), backward)
    return out


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather slices along ``axis`` (embedding lookup, row tiling)."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= x.shape[axis]):
        raise IndexError(f"take index out of range for axis of size {x.shape[axis]}")
    out = Tensor(np.take(x.data, indices, axis=axis), _check=False)

    def backward(g):
        gx = np.zeros_like(x.data)
        gm = np.moveaxis(gx, axis, 0)
        gg = np.moveaxis(g, list(range(axis, axis + indices.ndim)),
                         list(range(indices.ndim)))
        np.add.at(gm, indices, gg)
        return (gx,)

    _record("take", (x,), (out,), backward)
    return out


def pick(x: Tensor, indices) -> Tensor:
    """``out[...] = x[..., indices[...]]`` over the last axis."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.shape != x.shape[:-1]:
        raise ShapeError(f"pick index shape {indices.shape} vs {x.shape}")
    if indices.size and (indices.min() < 0 or indices.max() >= x.shape[-1]):
        raise IndexError(f"token id out of range [0, {x.shape[-1]})")
    idx = indices[..., None]
    out = Tensor(np.take_along_axis(x.data, idx, axis=-1)[..., 0], _check=False)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g[..., None], axis=-1)
        return (gx,)

    _record("pick", (x,), (out,), backward)
    return out


# ------------------------------------------------------------ fused recurrences

def lstm_cell(zx: Tensor, h: Tensor, c: Tensor, U: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step given the precomputed input term ``zx = x W + b``.

    Gate order along the last axis is input, forget, candidate, output.
    """
    d = h.shape[-1]
    if zx.shape[-1] != 4 * d or U.shape != (d, 4 * d) or c.shape != h.shape:
        raise ShapeError(f"lstm_cell shape mismatch: zx{zx.shape} h{h.shape} "
                         f"c{c.shape} U{U.shape}")
    z = zx.data + h.data @ U.data
    s = _sigmoid(z)
    i, f, o = s[..., :d], s[..., d:2 * d], s[..., 3 * d:]
    gc = np.tanh(z[..., 2 * d:3 * d])
    c_new = f * c.data + i * gc
    tc = np.tanh(c_new)
    h_new = o * tc
    out_h = Tensor(h_new, _check=False)
    out_c = Tensor(c_new)

    def backward(g_h, g_c):
        dc = g_c + g_h * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * gc * i * (1.0 - i),
            dc * c.data * f * (1.0 - f),
            dc * i * (1.0 - gc * gc),
            g_h * tc * o * (1.0 - o),
        ], axis=-1)
        dh = dz @ U.data.T
        dU = h.data.reshape(-1, d).T @ dz.reshape(-1, 4 * d)
        return dz, dh, dc * f, dU

    _record("lstm_cell", (zx, h, c, U), (out_h, out_c), backward)
    return out_h, out_c


def lstm_step(x: Tensor, state: tuple[Tensor, Tensor], W: Tensor, U: Tensor,
              b: Tensor) -> tuple[Tensor, Tensor]:
    """Standard LSTM step: ``(h', c') = LSTM(x, (h, c))``."""
    h, c = state
    return lstm_cell(affine(x, W, b), h, c, U)


def rnnt_loss_batch(log_probs: Tensor, targets: np.ndarray, t_lens: np.ndarray,
                    u_lens: np.ndarray, blank: int = 0) -> Tensor:
    """Per-utterance transducer negative log-likelihoods.

    ``log_probs`` has shape (N, T, U+1, V) and holds normalized joint
    log-probabilities; entries beyond each utterance's lengths are ignored.
    """
    lp = log_probs.data
    n, t_max, u1_max, _ = lp.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(n, -1)
    losses = np.empty(n)
    saved = []
    for k in range(n):
        T, U = int(t_lens[k]), int(u_lens[k])
        if T < 1 or T > t_max or U + 1 > u1_max:
            raise ShapeError(f"utterance {k}: T={T}, U={U} outside {lp.shape}")
        y = targets[k, :U]
        blank_lp = np.ascontiguousarray(lp[k, :T, :U + 1, blank])
        label_lp = np.ascontiguousarray(
            np.take_along_axis(lp[k, :T, :U, :], np.broadcast_to(y, (T, U))[..., None],
                               axis=-1)[..., 0])
        ll, g_blank, g_label = rnnt_lattice(blank_lp, label_lp)
        losses[k] = -ll
        saved.append((T, U, y, g_blank, g_label))
    out = Tensor(losses, name="rnnt_loss")

    def backward(g):
        gx = np.zeros_like(lp)
        for k, (T, U, y, g_blank, g_label) in enumerate(saved):
            gx[k, :T, :U + 1, blank] += g[k] * g_blank
            if U:
                tt, uu = np.meshgrid(np.arange(T), np.arange(U), indexing="ij")
                np.add.at(gx[k], (tt, uu, np.broadcast_to(y, (T, U))), g[k] * g_label)
        return (gx,)

    _record("rnnt_loss", (log_probs,), (out,), backward)
    return out


# ----------------------------------------------------------------- grad checks

def finite_diff_check(f: Callable[[], Tensor], params: Iterable[Tensor],
                      step: float = 1e-5, coords: int | None = None,
                      seed: int = 0, floor: float = 1e-7) -> float:
    """Max relative error between backprop and central differences.

    ``f`` rebuilds the scalar loss from the current parameter values.  With
    ``coords`` set, only that many seeded random coordinates per parameter
    are probed.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params = list(params)
    for p in params:
        p.data = np.ascontiguousarray(p.data)
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    backprop(tape, loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        analytic = np.zeros(p.size) if p.grad is None else p.grad.reshape(-1)
        flat = p.data.reshape(-1)
        idx = np.arange(p.size)
        if coords is not None and coords < p.size:
            idx = np.sort(rng.choice(p.size, size=coords, replace=False))
        for j in idx:
            orig = flat[j]
            flat[j] = orig + step
            up = f().item()
            flat[j] = orig - step
            down = f().item()
            flat[j] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError("objective is not finite near the probe point")
            numeric = (up - down) / (2 * step)
            a = analytic[j]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst
