"""Independent brute-force oracles the implementation is checked against.

Everything here is deliberately naive (explicit loops, O(k^2) windows,
pairwise counting) and must stay independent of the library code paths it
verifies.
"""

from __future__ import annotations

import math

import numpy as np


def naive_avg_pool_same(t: np.ndarray, k_h: int, k_w: int) -> np.ndarray:
    """O(k^2) sliding window with border clipping and true-area division."""
    c, h, w = t.shape
    out = np.zeros_like(t, dtype=np.float64)
    for ch in range(c):
        for i in range(h):
            r0, r1 = max(0, i - k_h // 2), min(h, i - k_h // 2 + k_h)
            for j in range(w):
                c0, c1 = max(0, j - k_w // 2), min(w, j - k_w // 2 + k_w)
                out[ch, i, j] = t[ch, r0:r1, c0:c1].astype(np.float64).mean()
    return out


def concordance_auc(scores, labels) -> float:
    """Pairwise positive-vs-negative concordance with 0.5 tie credit."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def naive_bce(pred: np.ndarray, target: np.ndarray) -> float:
    total = 0.0
    p_flat, t_flat = pred.ravel(), target.ravel()
    for p, t in zip(p_flat, t_flat):
        p = min(max(float(p), 1e-7), 1.0 - 1e-7)
        total += -(float(t) * math.log(p) + (1.0 - float(t)) * math.log(1.0 - p))
    return total / p_flat.size


def naive_smoothness(patch: np.ndarray) -> float:
    c, h, w = patch.shape
    total = 0.0
    for ch in range(c):
        for i in range(h - 1):
            for j in range(w):
                total += (float(patch[ch, i + 1, j]) - float(patch[ch, i, j])) ** 2
    for ch in range(c):
        for i in range(h):
            for j in range(w - 1):
                total += (float(patch[ch, i, j + 1]) - float(patch[ch, i, j])) ** 2
    return total


def naive_nps(patch: np.ndarray, palette: np.ndarray) -> float:
    c, h, w = patch.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            prod = 1.0
            for color in palette:
                dist = math.sqrt(sum((float(patch[ch, i, j]) - float(color[ch])) ** 2
                                     for ch in range(c)))
                prod *= dist
            total += prod
    return total / (h * w)


def naive_overactivation(z_by_layer, masks_by_layer) -> float:
    """Per layer: mean over channels of |sum of masked z|, / footprint size."""
    per_layer = []
    for z, mask in zip(z_by_layer, masks_by_layer):
        c = z.shape[0]
        count = float(np.sum(mask))
        layer_total = 0.0
        for ch in range(c):
            s = 0.0
            for i in range(z.shape[1]):
                for j in range(z.shape[2]):
                    s += float(z[ch, i, j]) * float(mask[i, j])
            layer_total += abs(s)
        per_layer.append(layer_total / (c * count))
    return sum(per_layer) / len(per_layer)


def naive_resize_bilinear(t: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Direct per-output evaluation of the half-pixel-center formula."""
    c, h, w = t.shape
    out = np.zeros((c, out_h, out_w), dtype=np.float64)
    for ch in range(c):
        for i in range(out_h):
            sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1)
            y0, ty = int(math.floor(sy)), sy - math.floor(sy)
            y1 = min(y0 + 1, h - 1)
            for j in range(out_w):
                sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1)
                x0, tx = int(math.floor(sx)), sx - math.floor(sx)
                x1 = min(x0 + 1, w - 1)
                top = (1 - tx) * float(t[ch, y0, x0]) + tx * float(t[ch, y0, x1])
                bot = (1 - tx) * float(t[ch, y1, x0]) + tx * float(t[ch, y1, x1])
                out[ch, i, j] = (1 - ty) * top + ty * bot
    return out


def central_difference(f, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Coordinate-wise central finite differences of a scalar function."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.astype(np.float64).copy()
        xm = xp.copy()
        xp[idx] += h
        xm[idx] -= h
        grad[idx] = (f(xp) - f(xm)) / (2.0 * h)
    return grad


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())
