"""Dense-tensor math with reverse-mode differentiation.

Values are plain C-order numpy arrays (float32 for training, float64 for
gradient verification); every differentiable quantity is wrapped in a
:class:`Node` that records how it was produced. Operations are pure
functions of their inputs plus an explicit RNG, so identical inputs and
seeds give bit-identical outputs. Calling :func:`backward` on a scalar
node accumulates exact reverse-mode gradients into every reachable leaf.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError

__all__ = [
    "Node",
    "constant",
    "parameter",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "add_scalar",
    "sub_scalar",
    "mul_const",
    "sum_all",
    "mean_all",
    "matmul",
    "matmul_nt",
    "linear",
    "softmax_rows",
    "layer_norm",
    "gelu",
    "dropout",
    "dilated_conv1d",
    "concat_features",
    "slice_cols",
    "take_rows",
    "column",
]

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class Node:
    """One tensor in the recorded computation graph.

    ``value`` is the forward result, ``grad`` the accumulated gradient
    (lazily allocated, same shape). ``role`` tags leaves as ``parameter``
    or ``input``; everything produced by an operation is ``intermediate``.
    """

    __slots__ = ("value", "grad", "role", "_parents", "_vjp")

    def __init__(
        self,
        value: np.ndarray,
        role: str = "intermediate",
        parents: tuple["Node", ...] = (),
        vjp: Callable[[np.ndarray], tuple] | None = None,
    ):
        self.value = value
        self.grad: np.ndarray | None = None
        self.role = role
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"Node(shape={self.value.shape}, role={self.role})"


def _asarray(value, dtype=None) -> np.ndarray:
    arr = np.asarray(value, dtype=dtype)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float32)
    return np.ascontiguousarray(arr)


def constant(value, dtype=None) -> Node:
    """Wrap an array as a non-trainable graph input."""
    return Node(_asarray(value, dtype), role="input")


def parameter(value, dtype=None) -> Node:
    """Wrap an array as a trainable leaf."""
    return Node(_asarray(value, dtype), role="parameter")


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _check_2d(x: Node, what: str) -> None:
    if x.value.ndim != 2:
        raise DimensionError(f"{what} must be 2-d, got shape {x.value.shape}")


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _topo_order(root: Node) -> list[Node]:
    """Parents-before-children ordering via iterative post-order DFS."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    ``loss`` must hold exactly one element. Repeated calls without zeroing
    add their contributions, so per-window gradients of a batch sum up
    naturally.
    """
    if loss.value.size != 1:
        raise ContractError(
            f"backward requires a scalar loss, got shape {loss.value.shape}"
        )
    order = _topo_order(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad += g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None:
                continue
            pid = id(parent)
            if pid in pending:
                pending[pid] = pending[pid] + pg
            else:
                pending[pid] = pg


# ---------------------------------------------------------------------------
# elementwise and reduction primitives
# ---------------------------------------------------------------------------


def _check_same_shape(a: Node, b: Node, op: str) -> None:
    if a.value.shape != b.value.shape:
        raise DimensionError(
            f"{op}: operand shapes {a.value.shape} and {b.value.shape} differ"
        )


def add(a: Node, b: Node) -> Node:
    _check_same_shape(a, b, "add")
    return Node(a.value + b.value, parents=(a, b), vjp=lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    _check_same_shape(a, b, "sub")
    return Node(a.value - b.value, parents=(a, b), vjp=lambda g: (g, -g))


def mul(a: Node, b: Node) -> Node:
    _check_same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return Node(av * bv, parents=(a, b), vjp=lambda g: (g * bv, g * av))


def div(a: Node, b: Node) -> Node:
    _check_same_shape(a, b, "div")
    av, bv = a.value, b.value
    out = av / bv
    return Node(out, parents=(a, b), vjp=lambda g: (g / bv, -g * out / bv))


def scale(x: Node, c: float) -> Node:
    return Node(x.value * c, parents=(x,), vjp=lambda g: (g * c,))


def add_scalar(x: Node, c: float) -> Node:
    return Node(x.value + c, parents=(x,), vjp=lambda g: (g,))


def sub_scalar(x: Node, s: Node) -> Node:
    """Broadcast-subtract a scalar node from every element of ``x``."""
    if s.value.size != 1:
        raise DimensionError(f"sub_scalar: subtrahend shape {s.value.shape} not scalar")
    out = x.value - s.value
    return Node(
        out,
        parents=(x, s),
        vjp=lambda g: (g, -np.sum(g, dtype=g.dtype).reshape(s.value.shape)),
    )


def mul_const(x: Node, c: np.ndarray) -> Node:
    """Elementwise product with a constant array (no gradient to ``c``)."""
    return Node(x.value * c, parents=(x,), vjp=lambda g: (g * c,))


def sum_all(x: Node) -> Node:
    out = np.asarray(x.value.sum(), dtype=x.value.dtype)
    return Node(out, parents=(x,), vjp=lambda g: (np.full_like(x.value, g),))


def mean_all(x: Node) -> Node:
    n = x.value.size
    out = np.asarray(x.value.sum() / n, dtype=x.value.dtype)
    return Node(out, parents=(x,), vjp=lambda g: (np.full_like(x.value, g / n),))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Node, b: Node) -> Node:
    """Standard matrix product ``a[m,k] @ b[k,n]``."""
    _check_2d(a, "matmul lhs")
    _check_2d(b, "matmul rhs")
    if a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(
            f"matmul: inner extents differ, {a.value.shape} x {b.value.shape}"
        )
    av, bv = a.value, b.value
    return Node(av @ bv, parents=(a, b), vjp=lambda g: (g @ bv.T, av.T @ g))


def matmul_nt(a: Node, b: Node) -> Node:
    """Product against a transposed right operand: ``a[m,k] @ b[n,k].T``."""
    _check_2d(a, "matmul_nt lhs")
    _check_2d(b, "matmul_nt rhs")
    if a.value.shape[1] != b.value.shape[1]:
        raise DimensionError(
            f"matmul_nt: trailing extents differ, {a.value.shape} x {b.value.shape}"
        )
    av, bv = a.value, b.value
    return Node(av @ bv.T, parents=(a, b), vjp=lambda g: (g @ bv, g.T @ av))


def linear(x: Node, w: Node, b: Node) -> Node:
    """Affine map ``x[...,din] @ w[din,dout] + b[dout]`` (2-d ``x``)."""
    _check_2d(x, "linear input")
    _check_2d(w, "linear weight")
    if x.value.shape[1] != w.value.shape[0]:
        raise DimensionError(
            f"linear: input width {x.value.shape} does not match weight {w.value.shape}"
        )
    if b.value.shape != (w.value.shape[1],):
        raise DimensionError(
            f"linear: bias shape {b.value.shape} does not match weight {w.value.shape}"
        )
    xv, wv = x.value, w.value
    out = xv @ wv + b.value
    return Node(
        out,
        parents=(x, w, b),
        vjp=lambda g: (g @ wv.T, xv.T @ g, g.sum(axis=0)),
    )


# ---------------------------------------------------------------------------
# nonlinearities and normalization
# ---------------------------------------------------------------------------


def softmax_rows(x: Node) -> Node:
    """Row-wise softmax with per-row max subtraction for stability."""
    _check_2d(x, "softmax_rows input")
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - inner),)

    return Node(out, parents=(x,), vjp=vjp)


def layer_norm(x: Node, gamma: Node, beta: Node, eps: float = 1e-5) -> Node:
    """Normalize each row to zero mean / unit population variance, then
    apply the learned affine ``gamma * xhat + beta``."""
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    d = x.value.shape[-1]
    if gamma.value.shape != (d,) or beta.value.shape != (d,):
        raise DimensionError(
            f"layer_norm: gamma {gamma.value.shape} / beta {beta.value.shape}"
            f" do not match feature width {d}"
        )
    mu = x.value.mean(axis=-1, keepdims=True)
    var = ((x.value - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.value.dtype))
    xhat = (x.value - mu) * inv
    out = xhat * gamma.value + beta.value

    def vjp(g):
        gg = g * gamma.value
        gx = inv * (
            gg
            - gg.mean(axis=-1, keepdims=True)
            - xhat * (gg * xhat).mean(axis=-1, keepdims=True)
        )
        axes = tuple(range(g.ndim - 1))
        return (gx, (g * xhat).sum(axis=axes), g.sum(axis=axes))

    return Node(out, parents=(x, gamma, beta), vjp=vjp)


def gelu(x: Node) -> Node:
    """tanh-approximation GELU: ``0.5*x*(1+tanh(sqrt(2/pi)*(x+0.044715*x^3)))``."""
    xv = x.value
    t = np.tanh(_GELU_C * (xv + _GELU_A * xv**3))
    out = 0.5 * xv * (1.0 + t)

    def vjp(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * xv**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t**2) * du),)

    return Node(out, parents=(x,), vjp=vjp)


def dropout(x: Node, p: float, training: bool, rng: np.random.Generator) -> Node:
    """Inverted dropout: zero each element with probability ``p`` and scale
    survivors by ``1/(1-p)``; identity outside training."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must satisfy 0 <= p < 1, got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.value.shape) >= p).astype(x.value.dtype)
    mask = keep / np.asarray(1.0 - p, dtype=x.value.dtype)
    return Node(x.value * mask, parents=(x,), vjp=lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# sequence operations
# ---------------------------------------------------------------------------


def dilated_conv1d(x: Node, kernel: Node, bias: Node, dilation: int = 1) -> Node:
    """Causal dilated 1-d convolution over a ``[T, Cin]`` sequence.

    The input is implicitly zero-padded on the left by ``(k-1)*dilation``
    frames, so the output keeps length ``T`` and frame ``t`` depends only on
    inputs at or before ``t``. Kernel layout is ``[k, Cin, Cout]`` with tap
    ``k-1`` aligned to the current frame.
    """
    if dilation < 1:
        raise ConfigError(f"dilation must be >= 1, got {dilation}")
    _check_2d(x, "conv input")
    if kernel.value.ndim != 3:
        raise DimensionError(f"conv kernel must be 3-d, got {kernel.value.shape}")
    k, cin, cout = kernel.value.shape
    if x.value.shape[1] != cin:
        raise DimensionError(
            f"conv: input channels {x.value.shape} do not match kernel {kernel.value.shape}"
        )
    if bias.value.shape != (cout,):
        raise DimensionError(
            f"conv: bias shape {bias.value.shape} does not match kernel {kernel.value.shape}"
        )
    xv, kv = x.value, kernel.value
    t_len = xv.shape[0]
    out = np.empty((t_len, cout), dtype=xv.dtype)
    out[:] = bias.value
    for j in range(k):
        shift = (k - 1 - j) * dilation  # tap j reads x[t - shift]
        if shift == 0:
            out += xv @ kv[j]
        elif shift < t_len:
            out[shift:] += xv[: t_len - shift] @ kv[j]

    def vjp(g):
        gx = np.zeros_like(xv)
        gk = np.zeros_like(kv)
        for j in range(k):
            shift = (k - 1 - j) * dilation
            if shift == 0:
                gk[j] = xv.T @ g
                gx += g @ kv[j].T
            elif shift < t_len:
                gk[j] = xv[: t_len - shift].T @ g[shift:]
                gx[: t_len - shift] += g[shift:] @ kv[j].T
        return (gx, gk, g.sum(axis=0))

    return Node(out, parents=(x, kernel, bias), vjp=vjp)


def concat_features(parts: Sequence[Node]) -> Node:
    """Concatenate ``[T, D_i]`` tensors along the feature axis, preserving
    part order; the gradient splits back into the original widths."""
    if not parts:
        raise DimensionError("concat_features: need at least one part")
    if len(parts) == 1:
        return parts[0]
    t_len = parts[0].value.shape[0]
    for p in parts:
        _check_2d(p, "concat_features part")
        if p.value.shape[0] != t_len:
            raise DimensionError(
                "concat_features: parts disagree on length, "
                f"{[q.value.shape for q in parts]}"
            )
    widths = [p.value.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)
    out = np.concatenate([p.value for p in parts], axis=1)

    def vjp(g):
        return tuple(g[:, offsets[i] : offsets[i + 1]].copy() for i in range(len(parts)))

    return Node(out, parents=tuple(parts), vjp=vjp)


def slice_cols(x: Node, start: int, stop: int) -> Node:
    """Column slice ``x[:, start:stop]``; gradient scatters back in place."""
    _check_2d(x, "slice_cols input")
    if not 0 <= start < stop <= x.value.shape[1]:
        raise DimensionError(
            f"slice_cols: [{start}:{stop}] out of range for shape {x.value.shape}"
        )
    out = x.value[:, start:stop].copy()

    def vjp(g):
        gx = np.zeros_like(x.value)
        gx[:, start:stop] = g
        return (gx,)

    return Node(out, parents=(x,), vjp=vjp)


def take_rows(x: Node, indices: np.ndarray) -> Node:
    """Gather rows by index (indices assumed unique, e.g. from a mask)."""
    idx = np.asarray(indices, dtype=np.intp)
    out = x.value[idx].copy()

    def vjp(g):
        gx = np.zeros_like(x.value)
        gx[idx] = g
        return (gx,)

    return Node(out, parents=(x,), vjp=vjp)


def column(x: Node, j: int) -> Node:
    """Extract column ``j`` of a ``[T, D]`` tensor as a length-``T`` vector."""
    _check_2d(x, "column input")
    if not 0 <= j < x.value.shape[1]:
        raise DimensionError(f"column {j} out of range for shape {x.value.shape}")
    out = x.value[:, j].copy()

    def vjp(g):
        gx = np.zeros_like(x.value)
        gx[:, j] = g
        return (gx,)

    return Node(out, parents=(x,), vjp=vjp)


def leaves(root: Node) -> Iterable[Node]:
    """All leaf nodes (no parents) reachable from ``root``."""
    return (n for n in _topo_order(root) if not n._parents)
