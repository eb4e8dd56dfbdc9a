"""Small reverse-mode autodiff over float64 arrays.

Operations are recorded on the active :class:`Tape` (entered with ``with``)
when at least one input requires a gradient. Outside a tape, ops just compute
values, which is what evaluation code wants.

    with Tape() as tape:
        loss = ad.sum(ad.square(x @ w))
    ad.backward(loss)
    w.grad
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import linalg
from .errors import NotScalarLoss, ShapeMismatch, TapeConsumed

_tapes: list["Tape"] = []


class Tape:
    """Ordered record of the ops executed while the tape is active."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tapes.remove(self)

    def record(self, node: "Node") -> None:
        if self.consumed:
            raise TapeConsumed("cannot record onto a tape that has been backpropagated")
        self.nodes.append(node)


def active_tape() -> Tape | None:
    return _tapes[-1] if _tapes else None


class Node:
    __slots__ = ("value", "grad", "parents", "vjp", "requires_grad", "tape", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Node, ...] = ()
        self.vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.requires_grad = requires_grad
        self.tape: Tape | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Node{label}(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return negate(self)

    @property
    def T(self):
        return transpose(self)


def param(value, name: str | None = None) -> Node:
    return Node(value, requires_grad=True, name=name)


def const(value) -> Node:
    return value if isinstance(value, Node) else Node(value)


def _make(value, parents: Sequence[Node], vjp) -> Node:
    out = Node(value)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.vjp = vjp
        out.tape = tape
        tape.record(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Node, b: Node) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from exc


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Node:
    a, b = const(a), const(b)
    _broadcast_shape(a, b)
    return _make(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Node:
    a, b = const(a), const(b)
    _broadcast_shape(a, b)
    return _make(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Node:
    a, b = const(a), const(b)
    _broadcast_shape(a, b)
    return _make(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def negate(a) -> Node:
    a = const(a)
    return _make(-a.value, (a,), lambda g: (-g,))


def exp(a) -> Node:
    a = const(a)
    y = np.exp(a.value)
    return _make(y, (a,), lambda g: (g * y,))


def log(a) -> Node:
    a = const(a)
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,))


def square(a) -> Node:
    a = const(a)
    return _make(a.value**2, (a,), lambda g: (2.0 * g * a.value,))


def relu(a) -> Node:
    a = const(a)
    mask = (a.value > 0).astype(np.float64)
    return _make(a.value * mask, (a,), lambda g: (g * mask,))


def sigmoid(a) -> Node:
    a = const(a)
    y = _sigmoid(a.value)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def softplus(a) -> Node:
    """log(1 + e^a), computed without overflow."""
    a = const(a)
    y = np.logaddexp(0.0, a.value)
    return _make(y, (a,), lambda g: (g * _sigmoid(a.value),))


def clip(a, lo: float, hi: float) -> Node:
    """Clamp to ``[lo, hi]``; gradient is zero where clamped."""
    a = const(a)
    mask = ((a.value >= lo) & (a.value <= hi)).astype(np.float64)
    return _make(np.clip(a.value, lo, hi), (a,), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------- reductions


def sum(a, axis: int | None = None, keepdims: bool = False) -> Node:  # noqa: A001
    a = const(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), vjp)


def add_n(nodes: Sequence) -> Node:
    out = const(nodes[0])
    for n in nodes[1:]:
        out = add(out, n)
    return out


def mean(a, axis: int | None = None, keepdims: bool = False) -> Node:
    a = const(a)
    count = a.value.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------- structural


def matmul(a, b) -> Node:
    a, b = const(a), const(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul of {a.shape} and {b.shape}")
    return _make(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def transpose(a) -> Node:
    a = const(a)
    return _make(a.value.T.copy(), (a,), lambda g: (g.T.copy(),))


def broadcast_row(row, n: int) -> Node:
    """Tile a 1xC row into an nxC matrix."""
    row = const(row)
    if row.value.ndim != 2 or row.shape[0] != 1:
        raise ShapeMismatch(f"broadcast_row expects a 1xC row, got {row.shape}")
    return _make(
        np.repeat(row.value, n, axis=0),
        (row,),
        lambda g: (g.sum(axis=0, keepdims=True),),
    )


def slice_rows(a, start: int, stop: int) -> Node:
    a = const(a)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _make(a.value[start:stop].copy(), (a,), vjp)


def slice_cols(a, start: int, stop: int) -> Node:
    a = const(a)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _make(a.value[:, start:stop].copy(), (a,), vjp)


def concat_rows(nodes: Sequence) -> Node:
    nodes = [const(n) for n in nodes]
    cols = {n.shape[1:] for n in nodes}
    if len(cols) != 1:
        raise ShapeMismatch(f"concat_rows with mismatched trailing shapes {cols}")
    bounds = np.cumsum([0] + [n.shape[0] for n in nodes])

    def vjp(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(nodes)))

    return _make(np.concatenate([n.value for n in nodes], axis=0), nodes, vjp)


def pairwise_sq_dists(z) -> Node:
    """Matrix of squared Euclidean distances between the rows of ``z``.

    The diagonal is exactly zero.
    """
    z = const(z)
    if z.value.ndim != 2:
        raise ShapeMismatch(f"pairwise_sq_dists expects a matrix, got {z.shape}")
    diff = z.value[:, None, :] - z.value[None, :, :]
    d = np.sum(diff * diff, axis=2)

    def vjp(g):
        gs = g + g.T
        return (2.0 * (np.sum(gs, axis=1, keepdims=True) * z.value - gs @ z.value),)

    return _make(d, (z,), vjp)


def logdet_spd(a, jitter_policy: linalg.JitterPolicy = linalg.DEFAULT_JITTER) -> Node:
    """log det of a symmetric positive-definite matrix; gradient is A^{-1}.

    The input is symmetrized before factoring so that the gradient with
    respect to each entry is well defined.
    """
    a = const(a)
    if a.value.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"logdet_spd expects a square matrix, got {a.shape}")
    sym = 0.5 * (a.value + a.value.T)
    factor = linalg.cholesky(sym, jitter_policy)
    return _make(
        np.asarray(factor.log_det()),
        (a,),
        lambda g: (float(g) * factor.inverse(),),
    )


# ---------------------------------------------------------------- backward


def backward(loss: Node) -> None:
    """Accumulate d loss / d node into ``.grad`` for every node on the tape.

    Leaf gradients accumulate across calls until cleared with :func:`zero_grad`;
    a tape can only be backpropagated once.
    """
    if loss.value.size != 1:
        raise NotScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    tape = loss.tape
    if tape is None:
        raise ValueError("loss was not recorded on a tape (no input requires grad)")
    if tape.consumed:
        raise TapeConsumed("tape already backpropagated; rebuild the graph")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.tape is tape:
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
            else:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg


def zero_grad(params: Sequence[Node]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------- checking


def grad_check(f: Callable[[Node], Node], point, h: float = 1e-5) -> float:
    """Worst relative error between tape gradients and central differences.

    The denominator is ``max(|g_tape|, |g_fd|, 1e-8)``.
    """
    point = np.asarray(point, dtype=np.float64)
    x = param(point.copy())
    with Tape():
        out = f(x)
    backward(out)
    analytic = x.grad if x.grad is not None else np.zeros_like(point)
    numeric = np.empty_like(point)
    flat = point.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Node(point)).value)
        flat[i] = orig - h
        fm = float(f(Node(point)).value)
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check_params(
    loss_fn: Callable[[], Node],
    params: Sequence[Node],
    h: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Like :func:`grad_check`, for a loss closed over several parameter nodes.

    With ``max_entries`` set, a random subset of entries is checked.
    """
    zero_grad(params)
    with Tape():
        out = loss_fn()
    backward(out)
    entries = [(pi, j) for pi, p in enumerate(params) for j in range(p.value.size)]
    if max_entries is not None and len(entries) > max_entries:
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(entries), size=max_entries, replace=False)
        entries = [entries[i] for i in sorted(pick)]
    worst = 0.0
    for pi, j in entries:
        p = params[pi]
        flat = p.value.reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        fp = float(loss_fn().value)
        flat[j] = orig - h
        fm = float(loss_fn().value)
        flat[j] = orig
        numeric = (fp - fm) / (2.0 * h)
        analytic = 0.0 if p.grad is None else float(p.grad.reshape(-1)[j])
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    zero_grad(params)
    return worst
