"""Dense tensor kernels: bilinear resize and box-average pooling.

These are the two spatial primitives the whole pipeline is built on. Pooling
runs on summed-area tables so its cost is independent of the kernel size;
accumulation happens in float64 to bound cancellation error before results
are narrowed back to the input dtype.
"""

from __future__ import annotations

import numpy as np


def summed_area_table(t: np.ndarray) -> np.ndarray:
    """Per-channel cumulative-sum plane with a leading row/column of zeros.

    sat[c, i, j] is the exact float64 sum of t[c, :i, :j].
    """
    t = np.asarray(t)
    if t.ndim != 3:
        raise ValueError(f"expected rank-3 tensor, got shape {t.shape}")
    c, h, w = t.shape
    sat = np.zeros((c, h + 1, w + 1), dtype=np.float64)
    np.cumsum(t, axis=1, dtype=np.float64, out=sat[:, 1:, :w])
    np.cumsum(sat[:, 1:, :w], axis=2, out=sat[:, 1:, 1:])
    sat[:, 1:, 0] = 0.0
    return sat


def _window_bounds(size: int, kernel: int) -> tuple[np.ndarray, np.ndarray]:
    # Window for element i spans [i - k//2, i - k//2 + k), clipped to the plane.
    start = np.arange(size) - kernel // 2
    lo = np.clip(start, 0, size)
    hi = np.clip(start + kernel, 0, size)
    return lo, hi


def box_sum_same(t: np.ndarray, k_h: int, k_w: int, offset_h: int, offset_w: int) -> np.ndarray:
    """Stride-1 clipped-window box sum with an arbitrary window offset.

    Window for output (i, j) covers rows [i - offset_h, i - offset_h + k_h)
    intersected with the plane, and likewise for columns. Returns float64.
    """
    c, h, w = t.shape
    sat = summed_area_table(t)
    r0 = np.clip(np.arange(h) - offset_h, 0, h)
    r1 = np.clip(np.arange(h) - offset_h + k_h, 0, h)
    c0 = np.clip(np.arange(w) - offset_w, 0, w)
    c1 = np.clip(np.arange(w) - offset_w + k_w, 0, w)
    return (
        sat[:, r1[:, None], c1[None, :]]
        - sat[:, r0[:, None], c1[None, :]]
        - sat[:, r1[:, None], c0[None, :]]
        + sat[:, r0[:, None], c0[None, :]]
    )


def avg_pool_same(t: np.ndarray, k_h: int, k_w: int) -> np.ndarray:
    """Stride-1, same-shape average pool with border-clipped windows.

    Each output element is the mean over the k_h x k_w window centered at it
    (center offset floor(k/2) toward the upper-left for even kernels), with
    the window clipped at the borders and divided by the clipped area.
    """
    t = np.asarray(t)
    if t.ndim != 3:
        raise ValueError(f"expected rank-3 tensor, got shape {t.shape}")
    c, h, w = t.shape
    if not (1 <= k_h <= h and 1 <= k_w <= w):
        raise ValueError(f"kernel ({k_h}, {k_w}) does not fit plane ({h}, {w})")
    sums = box_sum_same(t, k_h, k_w, k_h // 2, k_w // 2)
    out = sums / pool_area_same(h, w, k_h, k_w)
    # the SAT gather leaves a transposed memory layout; normalize it
    return np.ascontiguousarray(out.astype(t.dtype, copy=False))


def pool_area_same(h: int, w: int, k_h: int, k_w: int) -> np.ndarray:
    """Clipped-window pixel counts for avg_pool_same, shape (h, w), float64."""
    r0, r1 = _window_bounds(h, k_h)
    c0, c1 = _window_bounds(w, k_w)
    return ((r1 - r0)[:, None] * (c1 - c0)[None, :]).astype(np.float64)


def avg_pool_same_vjp(grad_out: np.ndarray, h: int, w: int, k_h: int, k_w: int) -> np.ndarray:
    """Adjoint of avg_pool_same: scatter each output back over its window.

    Equals a box sum (with the complementary window offset) of grad/area.
    """
    scaled = grad_out / pool_area_same(h, w, k_h, k_w)
    return box_sum_same(scaled, k_h, k_w, k_h - 1 - k_h // 2, k_w - 1 - k_w // 2).astype(
        grad_out.dtype, copy=False
    )


def bilinear_weights(in_size: int, out_size: int, dtype=np.float64) -> np.ndarray:
    """Interpolation matrix M (out_size x in_size) for half-pixel-center resize.

    Source coordinate for output d is (d + 0.5) * in/out - 0.5 clamped to
    [0, in-1]; each row holds the two interpolation weights. Rows sum to 1.
    """
    if in_size < 1 or out_size < 1:
        raise ValueError("sizes must be >= 1")
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    i1 = np.minimum(i0 + 1, in_size - 1)
    mat = np.zeros((out_size, in_size), dtype=np.float64)
    rows = np.arange(out_size)
    np.add.at(mat, (rows, i0), 1.0 - frac)
    np.add.at(mat, (rows, i1), frac)
    return mat.astype(dtype, copy=False)


def resize_bilinear(t: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Per-channel bilinear resize of a rank-3 tensor to (out_h, out_w)."""
    t = np.asarray(t)
    if t.ndim != 3:
        raise ValueError(f"expected rank-3 tensor, got shape {t.shape}")
    c, h, w = t.shape
    if h == 0 or w == 0:
        raise ValueError(f"cannot resize zero-sized plane {t.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output dims must be >= 1, got ({out_h}, {out_w})")
    if (out_h, out_w) == (h, w):
        return t.copy()
    wr = bilinear_weights(h, out_h)
    wc = bilinear_weights(w, out_w)
    out = np.einsum("oi,cij,pj->cop", wr, t.astype(np.float64, copy=False), wc, optimize=True)
    return out.astype(t.dtype, copy=False)


def resize_nearest(t: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize (half-pixel centers); keeps binary masks binary."""
    t = np.asarray(t)
    if t.ndim == 2:
        return resize_nearest(t[None], out_h, out_w)[0]
    c, h, w = t.shape
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output dims must be >= 1, got ({out_h}, {out_w})")
    rows = np.minimum(((np.arange(out_h) + 0.5) * (h / out_h)).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * (w / out_w)).astype(np.int64), w - 1)
    return t[:, rows[:, None], cols[None, :]]
