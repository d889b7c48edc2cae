"""Patch application with sampled appearance and placement transforms.

A transform draws brightness, contrast, additive-noise level, scale, and an
integer placement; application resizes the patch, applies contrast about
0.5 then brightness then per-pixel Gaussian noise, clamps to [0, 1], and
pastes. Identity stages (contrast 1, brightness 0, noise 0) are skipped so
an identity transform pastes the patch bit-exactly; the node path mirrors
the array path operation for operation so both produce identical images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .defaults import TRANSFORM_RANGES
from .errors import DataError
from .tensorops import resize_bilinear, resize_nearest


@dataclass(frozen=True)
class TransformSpec:
    brightness_delta: float
    contrast_factor: float
    noise_std: float
    scale_factor: float
    row: int
    col: int
    noise_seed: int

    def scaled_dims(self, patch_hw: tuple[int, int]) -> tuple[int, int]:
        h, w = patch_hw
        return max(1, round(h * self.scale_factor)), max(1, round(w * self.scale_factor))


def sample_transform(
    rng: int | np.random.Generator,
    image_hw: tuple[int, int],
    patch_hw: tuple[int, int],
) -> TransformSpec:
    """Independent uniform draws; placement resampled until the patch fits."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(np.random.PCG64(int(rng)))
    img_h, img_w = image_hw
    lo_s, hi_s = TRANSFORM_RANGES["scale_factor"]
    min_h = max(1, round(patch_hw[0] * lo_s))
    min_w = max(1, round(patch_hw[1] * lo_s))
    if min_h > img_h or min_w > img_w:
        raise DataError(f"patch {patch_hw} cannot fit image {image_hw} at minimum scale")
    brightness = rng.uniform(*TRANSFORM_RANGES["brightness_delta"])
    contrast = rng.uniform(*TRANSFORM_RANGES["contrast_factor"])
    noise_std = rng.uniform(*TRANSFORM_RANGES["noise_std"])
    while True:
        scale = rng.uniform(lo_s, hi_s)
        sh = max(1, round(patch_hw[0] * scale))
        sw = max(1, round(patch_hw[1] * scale))
        if sh <= img_h and sw <= img_w:
            break
    row = int(rng.integers(0, img_h - sh + 1))
    col = int(rng.integers(0, img_w - sw + 1))
    return TransformSpec(
        brightness_delta=float(brightness),
        contrast_factor=float(contrast),
        noise_std=float(noise_std),
        scale_factor=float(scale),
        row=row,
        col=col,
        noise_seed=int(rng.integers(0, 2**63 - 1)),
    )


def _noise_field(spec: TransformSpec, shape) -> np.ndarray:
    rng = np.random.default_rng(np.random.PCG64(spec.noise_seed))
    return (rng.standard_normal(shape) * spec.noise_std).astype(np.float32)


@dataclass
class PatchedImage:
    image: np.ndarray  # (3, H, W)
    footprint: np.ndarray  # (H, W) float32 in {0, 1}, 1 on patch pixels
    footprint_resized: np.ndarray | None  # same mask at the heatmap resolution


def apply_patch(
    image: np.ndarray,
    patch: np.ndarray,
    spec: TransformSpec,
    resize_dims: tuple[int, int] | None = None,
) -> PatchedImage:
    """Composite a [0,1] patch into an image under a sampled transform."""
    image = np.asarray(image, dtype=np.float32)
    patch = np.asarray(patch, dtype=np.float32)
    if patch.min() < 0.0 or patch.max() > 1.0:
        raise DataError("patch values must lie in [0, 1]")
    sh, sw = spec.scaled_dims(patch.shape[1:])
    _, img_h, img_w = image.shape
    if spec.row < 0 or spec.col < 0 or spec.row + sh > img_h or spec.col + sw > img_w:
        raise DataError(f"patch footprint ({sh}x{sw} at {spec.row},{spec.col}) out of bounds")
    warped = resize_bilinear(patch, sh, sw)
    if spec.contrast_factor != 1.0:
        warped = (warped - np.float32(0.5)) * np.float32(spec.contrast_factor) + np.float32(0.5)
    if spec.brightness_delta != 0.0:
        warped = warped + np.float32(spec.brightness_delta)
    if spec.noise_std != 0.0:
        warped = warped + _noise_field(spec, warped.shape)
    warped = np.clip(warped, 0.0, 1.0)
    out = image.copy()
    out[:, spec.row : spec.row + sh, spec.col : spec.col + sw] = warped
    footprint = np.zeros((img_h, img_w), dtype=np.float32)
    footprint[spec.row : spec.row + sh, spec.col : spec.col + sw] = 1.0
    resized = resize_nearest(footprint, *resize_dims) if resize_dims else None
    return PatchedImage(out, footprint, resized)


def apply_patch_node(image: np.ndarray, patch: ad.Node, spec: TransformSpec) -> ad.Node:
    """Differentiable twin of apply_patch (gradient flows to the patch only)."""
    sh, sw = spec.scaled_dims(patch.value.shape[1:])
    _, img_h, img_w = image.shape
    if spec.row < 0 or spec.col < 0 or spec.row + sh > img_h or spec.col + sw > img_w:
        raise DataError(f"patch footprint ({sh}x{sw} at {spec.row},{spec.col}) out of bounds")
    dtype = patch.value.dtype
    warped = ad.resize_bilinear(patch, sh, sw)
    if spec.contrast_factor != 1.0:
        warped = ad.add(
            ad.mul(ad.sub(warped, dtype.type(0.5)), dtype.type(spec.contrast_factor)),
            dtype.type(0.5),
        )
    if spec.brightness_delta != 0.0:
        warped = ad.add(warped, dtype.type(spec.brightness_delta))
    if spec.noise_std != 0.0:
        warped = ad.add(warped, _noise_field(spec, (patch.value.shape[0], sh, sw)).astype(dtype))
    warped = ad.clip(warped, 0.0, 1.0)
    return ad.paste(image.astype(dtype, copy=False), warped, spec.row, spec.col)


def footprint_of(spec: TransformSpec, patch_hw: tuple[int, int], image_hw: tuple[int, int]) -> np.ndarray:
    sh, sw = spec.scaled_dims(patch_hw)
    mask = np.zeros(image_hw, dtype=np.float32)
    mask[spec.row : spec.row + sh, spec.col : spec.col + sw] = 1.0
    return mask
