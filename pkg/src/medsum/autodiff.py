"""Tape-based reverse-mode automatic differentiation over small dense arrays.

Every operation returns a :class:`Node` holding its value and a closure that
maps the output gradient to gradients for each parent.  :func:`backward`
walks the graph once in reverse topological order.  All arithmetic is in
float64.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, Sequence

import numpy as np

LOG_FLOOR = 1e-12


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class ContractError(ValueError):
    """A precondition on the call (not on shapes) was violated."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "name")

    def __init__(self, value, parents=(), backward_fn=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def requires_grad(self) -> bool:
        return self.name is not None or bool(self.parents)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.value.shape})"


def parameter(value, name: str) -> Node:
    """A named leaf whose gradient :func:`backward` reports.

    The array is wrapped without copying, so in-place updates to it are seen
    by the next forward pass.
    """
    return Node(value, name=name)


def constant(value) -> Node:
    return Node(value)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _check_vec(x: Node, what: str):
    if x.value.ndim != 1:
        raise DimensionError(f"{what} must be a vector, got shape {x.value.shape}")


def _make(value, parents, backward_fn) -> Node:
    # graph is only recorded when some parent needs a gradient
    live = tuple(p for p in parents if p.requires_grad)
    if not live:
        return Node(value)
    return Node(value, parents, backward_fn)


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    try:
        out = a.value + b.value
    except ValueError as exc:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from exc

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bw)


def sub(a, b) -> Node:
    return add(a, scale(b, -1.0))


def mul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    try:
        out = a.value * b.value
    except ValueError as exc:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc

    def bw(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _make(out, (a, b), bw)


def scale(a, k: float) -> Node:
    a = _as_node(a)
    return _make(a.value * k, (a,), lambda g: (g * k,))


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def tanh(a: Node) -> Node:
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Node) -> Node:
    out = _sigmoid(a.value)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def log(a: Node, floor: float = LOG_FLOOR) -> Node:
    """Natural log of ``max(a, floor)``; zero gradient below the floor."""
    clipped = np.maximum(a.value, floor)

    def bw(g):
        return (np.where(a.value > floor, g / clipped, 0.0),)

    return _make(np.log(clipped), (a,), bw)


def absolute(a: Node) -> Node:
    return _make(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def minimum(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    if a.shape != b.shape:
        raise DimensionError(f"minimum needs equal shapes, got {a.shape} and {b.shape}")
    take_a = a.value <= b.value

    def bw(g):
        return np.where(take_a, g, 0.0), np.where(take_a, 0.0, g)

    return _make(np.where(take_a, a.value, b.value), (a, b), bw)


def total(a: Node) -> Node:
    """Sum of all entries, as a scalar node."""
    return _make(np.array(a.value.sum()), (a,), lambda g: (np.full(a.shape, float(g)),))


def dot(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_vec(a, "dot operand")
    if a.shape != b.shape:
        raise DimensionError(f"dot needs equal shapes, got {a.shape} and {b.shape}")
    return _make(np.array(a.value @ b.value), (a, b), lambda g: (g * b.value, g * a.value))


def concat(parts: Sequence[Node]) -> Node:
    parts = [_as_node(p) for p in parts]
    for p in parts:
        _check_vec(p, "concat operand")
    sizes = np.cumsum([0] + [p.value.size for p in parts])
    out = np.concatenate([p.value for p in parts])

    def bw(g):
        return tuple(g[sizes[i]:sizes[i + 1]] for i in range(len(parts)))

    return _make(out, tuple(parts), bw)


def slice_(a: Node, start: int, stop: int) -> Node:
    n = a.shape[0]

    def bw(g):
        full = np.zeros(a.shape)
        full[start:stop] = g
        return (full,)

    if not 0 <= start <= stop <= n:
        raise DimensionError(f"slice [{start}:{stop}] out of range for shape {a.shape}")
    return _make(a.value[start:stop], (a,), bw)


def stack(rows: Sequence[Node]) -> Node:
    rows = list(rows)
    out = np.stack([r.value for r in rows])
    return _make(out, tuple(rows), lambda g: tuple(g[i] for i in range(len(rows))))


def reverse_rows(a: Node) -> Node:
    return _make(a.value[::-1], (a,), lambda g: (g[::-1],))


def hconcat(a: Node, b: Node) -> Node:
    """Concatenate two matrices along columns."""
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"row counts differ: {a.shape} vs {b.shape}")
    k = a.shape[1]
    out = np.concatenate([a.value, b.value], axis=1)
    return _make(out, (a, b), lambda g: (g[:, :k], g[:, k:]))


def embed(table: Node, ids: Sequence[int]) -> Node:
    """Rows of ``table`` selected by ``ids`` (an (len(ids), dim) matrix)."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise DimensionError(f"ids out of range for table of shape {table.shape}")

    def bw(g):
        full = np.zeros(table.shape)
        np.add.at(full, idx, g)
        return (full,)

    return _make(table.value[idx], (table,), bw)


def row(a: Node, i: int) -> Node:
    def bw(g):
        full = np.zeros(a.shape)
        full[i] = g
        return (full,)

    return _make(a.value[i], (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra


def affine(x, W, b) -> Node:
    """``W @ x + b``."""
    x, W, b = _as_node(x), _as_node(W), _as_node(b)
    if W.value.ndim != 2 or x.value.ndim != 1 or W.shape[1] != x.shape[0]:
        raise DimensionError(f"affine: W {W.shape} does not conform with x {x.shape}")
    if b.shape != (W.shape[0],):
        raise DimensionError(f"affine: bias {b.shape} does not conform with W {W.shape}")
    out = W.value @ x.value + b.value

    def bw(g):
        return W.value.T @ g, np.outer(g, x.value), g

    return _make(out, (x, W, b), bw)


def matvec(W, x) -> Node:
    W, x = _as_node(W), _as_node(x)
    if W.value.ndim != 2 or W.shape[1] != x.shape[0]:
        raise DimensionError(f"matvec: W {W.shape} does not conform with x {x.shape}")
    return _make(W.value @ x.value, (W, x), lambda g: (np.outer(g, x.value), W.value.T @ g))


def vecmat(x, M) -> Node:
    """``x @ M``: a weighted sum of the rows of ``M``."""
    x, M = _as_node(x), _as_node(M)
    if M.value.ndim != 2 or M.shape[0] != x.shape[0]:
        raise DimensionError(f"vecmat: x {x.shape} does not conform with M {M.shape}")
    return _make(x.value @ M.value, (x, M), lambda g: (M.value @ g, np.outer(x.value, g)))


def matmul_t(X, W) -> Node:
    """``X @ W.T`` for a batch of row vectors."""
    X, W = _as_node(X), _as_node(W)
    if X.shape[1] != W.shape[1]:
        raise DimensionError(f"matmul_t: X {X.shape} does not conform with W {W.shape}")
    return _make(X.value @ W.value.T, (X, W), lambda g: (g @ W.value, g.T @ X.value))


def outer(u, w) -> Node:
    u, w = _as_node(u), _as_node(w)
    _check_vec(u, "outer operand")
    _check_vec(w, "outer operand")
    return _make(np.outer(u.value, w.value), (u, w),
                 lambda g: (g @ w.value, u.value @ g))


# ---------------------------------------------------------------------------
# probability


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax(logits) -> Node:
    logits = _as_node(logits)
    if logits.value.ndim != 1 or logits.value.size == 0:
        raise DimensionError(f"softmax needs a non-empty vector, got shape {logits.shape}")
    p = _softmax(logits.value)

    def bw(g):
        return (p * (g - g @ p),)

    return _make(p, (logits,), bw)


def pick(a: Node, i: int) -> Node:
    """Scalar entry ``a[i]``."""
    if not 0 <= i < a.shape[0]:
        raise ContractError(f"index {i} outside range 0..{a.shape[0] - 1}")

    def bw(g):
        full = np.zeros(a.shape)
        full[i] = g
        return (full,)

    return _make(np.array(a.value[i]), (a,), bw)


# ---------------------------------------------------------------------------
# recurrent cell


def lstm_cell(x, h_prev, c_prev, W_ih, W_hh, b):
    """One LSTM step; returns ``(h, c)`` nodes.

    Gate rows are ordered input, forget, output, candidate, each ``hidden``
    rows tall.
    """
    x, h_prev, c_prev = _as_node(x), _as_node(h_prev), _as_node(c_prev)
    H = h_prev.shape[0]
    if W_ih.shape != (4 * H, x.shape[0]) or W_hh.shape != (4 * H, H) or b.shape != (4 * H,):
        raise DimensionError(
            f"lstm_cell: W_ih {W_ih.shape}, W_hh {W_hh.shape}, b {b.shape} "
            f"do not conform with x {x.shape}, h {h_prev.shape}"
        )
    if c_prev.shape != (H,):
        raise DimensionError(f"lstm_cell: c {c_prev.shape} does not match h {h_prev.shape}")
    z = W_ih.value @ x.value + W_hh.value @ h_prev.value + b.value
    i = _sigmoid(z[:H])
    f = _sigmoid(z[H:2 * H])
    o = _sigmoid(z[2 * H:3 * H])
    u = np.tanh(z[3 * H:])
    c = f * c_prev.value + i * u
    tc = np.tanh(c)
    h = o * tc
    hc = np.concatenate([h, c])

    def bw(g):
        gh, gc = g[:H], g[H:]
        gc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            gc * u * i * (1.0 - i),
            gc * c_prev.value * f * (1.0 - f),
            gh * tc * o * (1.0 - o),
            gc * i * (1.0 - u * u),
        ])
        return (W_ih.value.T @ dz, W_hh.value.T @ dz, gc * f,
                np.outer(dz, x.value), np.outer(dz, h_prev.value), dz)

    joint = _make(hc, (x, h_prev, c_prev, W_ih, W_hh, b), bw)
    return slice_(joint, 0, H), slice_(joint, H, 2 * H)


# ---------------------------------------------------------------------------
# backprop


def _topological(root: Node):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack_.append((p, False))
    return order


def backward(loss: Node) -> Dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` for every reachable named parameter."""
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topological(loss)
    grads = {id(loss): np.ones_like(loss.value)}
    out: Dict[str, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.name is not None:
            node.grad = g if node.name not in out else out[node.name] + g
            out[node.name] = node.grad
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return out


def finite_diff_check(
    f: Callable[[Dict[str, np.ndarray]], Node],
    params: Dict[str, np.ndarray],
    eps: float = 1e-4,
    analytic: Dict[str, np.ndarray] | None = None,
    names: Iterable[str] | None = None,
) -> float:
    """Max relative error between backprop and central differences of ``f``.

    ``f`` builds a scalar node from a dict of parameter arrays.  Each scalar
    entry is perturbed in place by +/-``eps`` and restored afterwards.  The
    per-entry error is ``|a - n| / max(1e-8, |a| + |n|)``.  ``analytic``
    overrides the backprop gradients (used to test the check itself).
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    if analytic is None:
        base = f(params)
        if not np.all(np.isfinite(base.value)):
            raise NumericError("objective is not finite at the base point")
        analytic = backward(base)
    worst = 0.0
    for name in (names if names is not None else sorted(params)):
        arr = params[name]
        flat = arr.reshape(-1)
        ana = np.asarray(analytic.get(name, np.zeros_like(arr))).reshape(-1)
        for k in range(flat.size):
            saved = flat[k]
            flat[k] = saved + eps
            fp = np.asarray(f(params).value).item()
            flat[k] = saved - eps
            fm = np.asarray(f(params).value).item()
            flat[k] = saved
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"objective is not finite when perturbing {name}[{k}]")
            num = (fp - fm) / (2.0 * eps)
            err = abs(ana[k] - num) / max(1e-8, abs(ana[k]) + abs(num))
            worst = max(worst, err)
    return worst
