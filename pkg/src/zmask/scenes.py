"""Procedural scenes with aligned per-pixel labels, and synthetic traces.

Each scene layers five region types onto a textured gradient background: a
block rectangle, a shaded ellipse, and two *rare* classes of small
saturated squares (cyan and magenta). Colors are class-coupled with
per-scene jitter so a small convnet can learn the task from local
appearance; the rare classes keep the mean-IoU metric sensitive to
localized class spoofing around an adversarial patch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import CalibrationProfile
from .defaults import IMAGE_DIMS, N_CLASSES
from .errors import DataError


@dataclass
class SyntheticScene:
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    labels: np.ndarray  # (H, W) int64 in [0, N_CLASSES)
    seed: int


def _uniform_color(rng, lo, hi):
    return np.array([rng.uniform(l, h) for l, h in zip(lo, hi)], dtype=np.float32)


def generate_scene(seed: int, dims: tuple[int, int] = IMAGE_DIMS) -> SyntheticScene:
    """Deterministic scene for a seed; every class appears in every scene."""
    h, w = dims
    rng = np.random.default_rng(np.random.PCG64(seed))
    image = np.zeros((3, h, w), dtype=np.float32)
    labels = np.zeros((h, w), dtype=np.int64)

    # background: bilinear gradient between two muted corner colors, with a
    # faint diagonal banding so calibration sees some texture
    tl = _uniform_color(rng, (0.40, 0.42, 0.48), (0.55, 0.58, 0.65))
    br = _uniform_color(rng, (0.50, 0.50, 0.55), (0.68, 0.66, 0.72))
    ty = np.linspace(0.0, 1.0, h, dtype=np.float32)[:, None]
    tx = np.linspace(0.0, 1.0, w, dtype=np.float32)[None, :]
    blend = (ty + tx) / 2.0
    image[:] = tl[:, None, None] * (1.0 - blend) + br[:, None, None] * blend
    yy, xx = np.mgrid[0:h, 0:w]
    period = int(rng.integers(10, 20))
    banding = 0.03 * np.sin(2.0 * np.pi * (yy + xx) / period).astype(np.float32)
    image += banding[None]

    # class 1: block rectangle, near-uniform green family
    rh = rng.integers(int(0.3 * h), int(0.6 * h))
    rw = rng.integers(int(0.25 * w), int(0.55 * w))
    r0 = rng.integers(0, h - rh)
    c0 = rng.integers(0, w - rw)
    color = _uniform_color(rng, (0.18, 0.45, 0.18), (0.35, 0.65, 0.35))
    image[:, r0 : r0 + rh, c0 : c0 + rw] = color[:, None, None]
    labels[r0 : r0 + rh, c0 : c0 + rw] = 1

    # class 2: shaded ellipse, red/brown family
    a = rng.integers(int(0.14 * h), int(0.26 * h))  # semi-axes
    b = rng.integers(int(0.10 * w), int(0.20 * w))
    cy = rng.integers(a, h - a)
    cx = rng.integers(b, w - b)
    dist = ((yy - cy) / a) ** 2 + ((xx - cx) / b) ** 2
    inside = dist <= 1.0
    color = _uniform_color(rng, (0.55, 0.24, 0.18), (0.75, 0.40, 0.32))
    shade = (1.0 - 0.25 * dist).astype(np.float32)
    for ch in range(3):
        image[ch][inside] = color[ch] * shade[inside]
    labels[inside] = 2

    # classes 3 and 4 (rare): small saturated squares, cyan then magenta,
    # drawn last so they are never occluded
    rare = (
        (3, ((0.05, 0.70, 0.72), (0.22, 0.90, 0.92))),
        (4, ((0.75, 0.08, 0.70), (0.92, 0.25, 0.88))),
    )
    feather = 4  # soft square edges: partial color mixes still read as the class
    for class_id, (lo, hi) in rare:
        for _ in range(int(rng.integers(1, 2))):
            side = int(rng.integers(max(4, int(0.08 * h)), max(5, int(0.14 * h))))
            sr = int(rng.integers(feather, h - side - feather))
            sc = int(rng.integers(feather, w - side - feather))
            color = _uniform_color(rng, lo, hi)
            dy = np.clip(np.minimum(yy - (sr - feather), (sr + side + feather - 1) - yy), 0, feather)
            dx = np.clip(np.minimum(xx - (sc - feather), (sc + side + feather - 1) - xx), 0, feather)
            alpha = (np.minimum(dy, dx) / feather).astype(np.float32)
            mix = alpha[None]
            image[:] = image * (1.0 - mix) + color[:, None, None] * mix
            # the feathered rim carries the class label too, so partial color
            # mixes read as the class rather than as background
            labels[sr - feather : sr + side + feather, sc - feather : sc + side + feather] = class_id

    noise = rng.normal(0.0, 0.01, size=image.shape).astype(np.float32)
    image = np.clip(image + noise, 0.0, 1.0)
    return SyntheticScene(image, labels, seed)


def scene_batch(seed_base: int, count: int, dims: tuple[int, int] = IMAGE_DIMS):
    return [generate_scene(seed_base + i, dims) for i in range(count)]


def class_frequencies(scenes) -> np.ndarray:
    counts = np.zeros(N_CLASSES, dtype=np.int64)
    for scene in scenes:
        counts += np.bincount(scene.labels.ravel(), minlength=N_CLASSES)
    return counts


def synth_trace(
    profile: CalibrationProfile,
    shapes: dict[str, tuple[int, int, int]],
    background_std: float,
    blob_region: tuple[int, int, int, int],
    blob_gain: float,
    seed: int = 0,
    blob_layers: tuple[str, ...] | None = None,
) -> dict[str, np.ndarray]:
    """Controlled-anomaly trace: calibrated Gaussian noise plus an additive blob.

    Each layer draws mean + background_std * std * N(0, 1) per element; layers
    in blob_layers additionally get blob_gain * std inside blob_region
    (r0, r1, c0, c1 in that layer's spatial coordinates).
    """
    rng = np.random.default_rng(np.random.PCG64(seed))
    r0, r1, c0, c1 = blob_region
    trace = {}
    for name, shape in shapes.items():
        c, h, w = shape
        if not (0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w):
            raise DataError(f"blob region {blob_region} outside plane ({h}, {w})")
        stats = profile.require(name)
        mean = stats.mean.astype(np.float32)[:, None, None]
        std = stats.std.astype(np.float32)[:, None, None]
        values = mean + background_std * std * rng.standard_normal(shape).astype(np.float32)
        if blob_layers is None or name in blob_layers:
            values[:, r0:r1, c0:c1] += blob_gain * std
        trace[name] = values
    return trace
