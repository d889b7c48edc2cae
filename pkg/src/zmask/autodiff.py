"""Reverse-mode differentiation over the pipeline's operator set.

Small tape-style engine on numpy arrays: every op returns a Node holding the
forward value plus vector-Jacobian closures for its parents. `backward`
walks the graph once per requested output, so per-loss gradients (needed for
normalized gradient averaging) come from repeated calls on a shared graph.

Ops are dtype-preserving: float64 leaves give a float64 graph, which the
finite-difference oracles rely on.

Subgradient conventions: d|x|/dx = 0 at 0, relu' (0) = 0, max-style
reductions route the gradient to the first maximizer in C order, and
elementwise maximum routes ties to its first argument.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from . import tensorops


class Node:
    """One tape entry: a forward value plus (parent, vjp) edges."""

    __slots__ = ("value", "parents")

    def __init__(self, value, parents: tuple = ()):
        self.value = np.asarray(value)
        self.parents = parents

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape}, dtype={self.value.dtype})"


def as_node(x) -> Node:
    """Wrap raw arrays/scalars as constant (parent-free) nodes."""
    return x if isinstance(x, Node) else Node(np.asarray(x))


def leaf(value) -> Node:
    """A differentiable input; identical to a constant, named for intent."""
    return Node(np.asarray(value))


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(output: Node, wrt: Sequence[Node]) -> list[np.ndarray]:
    """Gradients of a scalar output with respect to the given nodes.

    Raises ValueError for non-scalar outputs and RuntimeError on graph cycles.
    """
    if output.value.size != 1:
        raise ValueError(f"backward requires a scalar output, got shape {output.value.shape}")

    order: list[Node] = []
    state: dict[int, int] = {}  # 0 in-progress, 1 done
    stack: list[tuple[Node, bool]] = [(output, False)]
    while stack:
        node, processed = stack.pop()
        nid = id(node)
        if processed:
            state[nid] = 1
            order.append(node)
            continue
        if state.get(nid) == 1:
            continue
        if state.get(nid) == 0:
            raise RuntimeError("cycle detected in computation graph")
        state[nid] = 0
        stack.append((node, True))
        for parent, _ in node.parents:
            if state.get(id(parent)) != 1:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {
        id(output): np.ones_like(output.value, dtype=output.value.dtype)
    }
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in node.parents:
            contribution = vjp(g)
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + contribution
            else:
                grads[pid] = contribution

    out = []
    for node in wrt:
        g = grads.get(id(node))
        out.append(np.zeros_like(node.value) if g is None else g)
    return out


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return Node(
        a.value + b.value,
        (
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(g, b.value.shape)),
        ),
    )


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return Node(
        a.value - b.value,
        (
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(-g, b.value.shape)),
        ),
    )


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return Node(
        a.value * b.value,
        (
            (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
        ),
    )


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    inv = 1.0 / b.value
    return Node(
        a.value * inv,
        (
            (a, lambda g: _unbroadcast(g * inv, a.value.shape)),
            (b, lambda g: _unbroadcast(-g * a.value * inv * inv, b.value.shape)),
        ),
    )


def neg(a) -> Node:
    a = as_node(a)
    return Node(-a.value, ((a, lambda g: -g),))


def absolute(a) -> Node:
    a = as_node(a)
    sign = np.sign(a.value)
    return Node(np.abs(a.value), ((a, lambda g: g * sign),))


def tanh(a) -> Node:
    a = as_node(a)
    out = np.tanh(a.value)
    return Node(out, ((a, lambda g: g * (1.0 - out * out)),))


def sigmoid(a) -> Node:
    a = as_node(a)
    # clip keeps exp in range; sigmoid is saturated to working precision
    # long before |x| = 60, so values and gradients are unaffected
    v = np.clip(a.value, -60.0, 60.0)
    out = (1.0 / (1.0 + np.exp(-v))).astype(a.value.dtype, copy=False)
    return Node(out, ((a, lambda g: g * out * (1.0 - out)),))


def relu(a) -> Node:
    a = as_node(a)
    mask = a.value > 0
    return Node(np.where(mask, a.value, 0), ((a, lambda g: g * mask),))


def square(a) -> Node:
    a = as_node(a)
    return Node(a.value * a.value, ((a, lambda g: g * 2.0 * a.value),))


def sqrt(a) -> Node:
    a = as_node(a)
    out = np.sqrt(a.value)
    # Subgradient 0 at the origin, matching the |x| convention.
    safe = np.where(out > 0, out, 1.0)
    return Node(out, ((a, lambda g: g * np.where(out > 0, 0.5 / safe, 0.0)),))


def log(a) -> Node:
    a = as_node(a)
    return Node(np.log(a.value), ((a, lambda g: g / a.value),))


def maximum(a, b) -> Node:
    """Elementwise max; ties route the gradient to the first argument."""
    a, b = as_node(a), as_node(b)
    take_a = a.value >= b.value
    return Node(
        np.where(take_a, a.value, b.value),
        (
            (a, lambda g: _unbroadcast(g * take_a, a.value.shape)),
            (b, lambda g: _unbroadcast(g * ~take_a, b.value.shape)),
        ),
    )


def clip(a, lo: float, hi: float) -> Node:
    a = as_node(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return Node(np.clip(a.value, lo, hi), ((a, lambda g: g * inside),))


# ---------------------------------------------------------------------------
# reductions


def sum_all(a) -> Node:
    a = as_node(a)
    return Node(
        np.asarray(a.value.sum()),
        ((a, lambda g: np.broadcast_to(g, a.value.shape).astype(a.value.dtype, copy=False)),),
    )


def mean_all(a) -> Node:
    a = as_node(a)
    n = a.value.size
    return Node(
        np.asarray(a.value.mean()),
        (
            (
                a,
                lambda g: np.broadcast_to(g / n, a.value.shape).astype(a.value.dtype, copy=False),
            ),
        ),
    )


def sum_axis(a, axis) -> Node:
    a = as_node(a)
    axis = (axis,) if isinstance(axis, int) else tuple(axis)

    def vjp(g):
        expanded = np.expand_dims(g, axis)
        return np.broadcast_to(expanded, a.value.shape).astype(a.value.dtype, copy=False)

    return Node(a.value.sum(axis=axis), ((a, vjp),))


def mean_axis(a, axis) -> Node:
    a = as_node(a)
    axis = (axis,) if isinstance(axis, int) else tuple(axis)
    n = int(np.prod([a.value.shape[i] for i in axis]))

    def vjp(g):
        expanded = np.expand_dims(g / n, axis)
        return np.broadcast_to(expanded, a.value.shape).astype(a.value.dtype, copy=False)

    return Node(a.value.mean(axis=axis), ((a, vjp),))


def max_all(a) -> Node:
    """Max over all elements; gradient goes to the first maximizer (C order)."""
    a = as_node(a)
    flat_idx = int(np.argmax(a.value))

    def vjp(g):
        # .flat writes through regardless of the source array's memory layout
        out = np.zeros(a.value.shape, dtype=a.value.dtype)
        out.flat[flat_idx] = g
        return out

    return Node(np.asarray(a.value.ravel()[flat_idx]), ((a, vjp),))


def inf_norm(a) -> Node:
    """max |x|, differentiating through the selected element."""
    a = as_node(a)
    flat = a.value.ravel()
    flat_idx = int(np.argmax(np.abs(flat)))
    sign = np.sign(flat[flat_idx])

    def vjp(g):
        out = np.zeros(a.value.shape, dtype=a.value.dtype)
        out.flat[flat_idx] = g * sign
        return out

    return Node(np.asarray(np.abs(flat[flat_idx])), ((a, vjp),))


# ---------------------------------------------------------------------------
# spatial ops


def conv2d(x, weight, bias) -> Node:
    """Same-padding, stride-1 convolution on CHW input; odd square kernels."""
    x, weight, bias = as_node(x), as_node(weight), as_node(bias)
    cols, out = conv_forward(x.value, weight.value, bias.value)
    c_out, c_in, kh, kw = weight.value.shape
    h, w = x.value.shape[1:]

    def vjp_x(g):
        flipped = weight.value[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        _, gx = conv_forward(g, flipped, None)
        return gx

    def vjp_w(g):
        gmat = g.reshape(c_out, h * w)
        return (gmat @ cols).reshape(c_out, c_in, kh, kw)

    def vjp_b(g):
        return g.sum(axis=(1, 2))

    return Node(out, ((x, vjp_x), (weight, vjp_w), (bias, vjp_b)))


def conv_forward(x: np.ndarray, weight: np.ndarray, bias):
    c_out, c_in, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("conv2d supports odd kernel sizes only")
    c, h, w = x.shape
    if c != c_in:
        raise ValueError(f"input has {c} channels, kernel expects {c_in}")
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    s = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, (h, w, c, kh, kw), (s[1], s[2], s[0], s[1], s[2])
    )
    cols = windows.reshape(h * w, c * kh * kw)
    out = cols @ weight.reshape(c_out, -1).T
    if bias is not None:
        out = out + bias
    return cols, np.ascontiguousarray(out.T.reshape(c_out, h, w))


def avg_pool_same(a, k_h: int, k_w: int) -> Node:
    a = as_node(a)
    _, h, w = a.value.shape
    out = tensorops.avg_pool_same(a.value, k_h, k_w)
    return Node(out, ((a, lambda g: tensorops.avg_pool_same_vjp(g, h, w, k_h, k_w)),))


def resize_bilinear(a, out_h: int, out_w: int) -> Node:
    a = as_node(a)
    _, h, w = a.value.shape
    out = tensorops.resize_bilinear(a.value, out_h, out_w)
    if (out_h, out_w) == (h, w):
        return Node(out, ((a, lambda g: g),))
    wr = tensorops.bilinear_weights(h, out_h)
    wc = tensorops.bilinear_weights(w, out_w)

    def vjp(g):
        gin = np.einsum("oi,cop,pj->cij", wr, g.astype(np.float64, copy=False), wc, optimize=True)
        return gin.astype(g.dtype, copy=False)

    return Node(out, ((a, vjp),))


def crop(a, slices: tuple) -> Node:
    """Basic (non-strided) slicing; the adjoint scatters back into zeros."""
    a = as_node(a)

    def vjp(g):
        out = np.zeros_like(a.value)
        out[slices] = g
        return out

    return Node(a.value[slices], ((a, vjp),))


def paste(base: np.ndarray, patch, row: int, col: int) -> Node:
    """Overwrite a CHW region of a constant base image with a patch node."""
    patch = as_node(patch)
    _, ph, pw = patch.value.shape
    if row < 0 or col < 0 or row + ph > base.shape[1] or col + pw > base.shape[2]:
        raise ValueError("paste region out of bounds")
    out = np.array(base, dtype=patch.value.dtype)
    out[:, row : row + ph, col : col + pw] = patch.value
    return Node(out, ((patch, lambda g: g[:, row : row + ph, col : col + pw]),))


# ---------------------------------------------------------------------------
# losses


def cross_entropy(logits, labels: np.ndarray, pixel_weight: np.ndarray | None = None) -> Node:
    """Mean per-pixel cross-entropy of (N, H, W) logits against integer labels.

    With pixel_weight, the mean is weighted over pixels (weights need not be
    normalized); weight 0 drops a pixel from both value and gradient.
    """
    logits = as_node(logits)
    n, h, w = logits.value.shape
    if labels.shape != (h, w):
        raise ValueError(f"labels shape {labels.shape} does not match logits {(h, w)}")
    shifted = logits.value - logits.value.max(axis=0, keepdims=True)
    expv = np.exp(shifted)
    softmax = expv / expv.sum(axis=0, keepdims=True)
    rows, cols = np.indices((h, w))
    logp = shifted - np.log(expv.sum(axis=0, keepdims=True))
    pixel_ce = -logp[labels, rows, cols]
    if pixel_weight is None:
        value = pixel_ce.mean()
        norm = float(h * w)
        weight = None
    else:
        if pixel_weight.shape != (h, w):
            raise ValueError(f"pixel weight shape {pixel_weight.shape} != {(h, w)}")
        norm = float(pixel_weight.sum())
        if norm <= 0:
            raise ValueError("pixel weights must sum to a positive value")
        weight = pixel_weight
        value = (pixel_ce * weight).sum() / norm

    def vjp(g):
        grad = softmax.copy()
        grad[labels, rows, cols] -= 1.0
        if weight is not None:
            grad = grad * weight
        return (grad * (g / norm)).astype(logits.value.dtype, copy=False)

    return Node(np.asarray(value, dtype=logits.value.dtype), ((logits, vjp),))


def bce(pred, target) -> Node:
    """Mean binary cross-entropy; predictions clamped to [1e-7, 1 - 1e-7]."""
    pred = as_node(pred)
    target = as_node(target)
    if pred.value.shape != target.value.shape:
        raise ValueError(f"shape mismatch {pred.value.shape} vs {target.value.shape}")
    lo, hi = 1e-7, 1.0 - 1e-7
    p = np.clip(pred.value, lo, hi)
    t = target.value
    value = -(t * np.log(p) + (1.0 - t) * np.log1p(-p)).mean()
    inside = (pred.value >= lo) & (pred.value <= hi)
    n = p.size

    def vjp(g):
        grad = (p - t) / (p * (1.0 - p)) * inside
        return (grad * (g / n)).astype(pred.value.dtype, copy=False)

    return Node(np.asarray(value, dtype=pred.value.dtype), ((pred, vjp),))


def maximum_of(nodes: Iterable[Node]) -> Node:
    """Pixel-wise max over a sequence of same-shape nodes (left fold)."""
    nodes = list(nodes)
    if not nodes:
        raise ValueError("maximum_of needs at least one node")
    out = nodes[0]
    for other in nodes[1:]:
        out = maximum(out, other)
    return out
