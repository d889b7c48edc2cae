"""Fusion and detection: soft thresholds, over-activation score, mask emission.

Two scalar-parameter soft-thresholding blocks fuse the deep and shallow
heatmaps into a soft mask in [0, 1]. The over-activation score is the
mask-weighted mean of the heatmap product; when it exceeds the detection
threshold, the soft mask hardens at 0.5 (ties masked) into the binary
defense mask, otherwise the input passes untouched.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError
from .tensorops import resize_nearest

SCORE_DENOM_FLOOR = 1e-12


@dataclass
class SoftThresholdParams:
    """Two chained 1-d linear layers: sigmoid(w2 * tanh(w1 * x + b1) + b2)."""

    w1: float = 1.0
    b1: float = 0.0
    w2: float = 1.0
    b2: float = 0.0

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"soft-threshold parameter {name} is not finite")

    def as_dict(self) -> dict[str, float]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class FusionParams:
    """The eight trainable scalars plus the detection threshold."""

    block_roi: SoftThresholdParams
    block_mask: SoftThresholdParams
    lambda0: float = 0.0
    lambda0_rule: str = "youden_j"

    def __post_init__(self):
        if not math.isfinite(self.lambda0) or self.lambda0 < 0:
            raise ConfigError(f"lambda0 must be finite and >= 0, got {self.lambda0}")

    @classmethod
    def initial(cls) -> "FusionParams":
        # Near-linear start so gradients flow through tanh/sigmoid.
        return cls(SoftThresholdParams(), SoftThresholdParams())

    def save(self, path) -> None:
        doc = {
            "block_roi": self.block_roi.as_dict(),
            "block_mask": self.block_mask.as_dict(),
            "lambda0": self.lambda0,
            "lambda0_rule": self.lambda0_rule,
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "FusionParams":
        try:
            doc = json.loads(Path(path).read_text())
            return cls(
                block_roi=SoftThresholdParams(**doc["block_roi"]),
                block_mask=SoftThresholdParams(**doc["block_mask"]),
                lambda0=float(doc["lambda0"]),
                lambda0_rule=str(doc.get("lambda0_rule", "youden_j")),
            )
        except (KeyError, TypeError, ValueError, OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: invalid fusion params: {exc}") from exc


def soft_threshold_node(x: ad.Node, p: SoftThresholdParams) -> ad.Node:
    pre = ad.add(ad.mul(x, np.asarray(p.w1, dtype=x.value.dtype)),
                 np.asarray(p.b1, dtype=x.value.dtype))
    mid = ad.tanh(pre)
    post = ad.add(ad.mul(mid, np.asarray(p.w2, dtype=x.value.dtype)),
                  np.asarray(p.b2, dtype=x.value.dtype))
    return ad.sigmoid(post)


def soft_threshold(x: np.ndarray, p: SoftThresholdParams) -> np.ndarray:
    """Elementwise sigmoid(w2 * tanh(w1 * x + b1) + b2); output in (0, 1)."""
    return soft_threshold_node(ad.as_node(np.asarray(x)), p).value


def fusion_forward_node(shallow: ad.Node, deep: ad.Node, p: FusionParams) -> ad.Node:
    roi = soft_threshold_node(deep, p.block_roi)
    return soft_threshold_node(ad.mul(roi, shallow), p.block_mask)


def fusion_forward(shallow: np.ndarray, deep: np.ndarray, p: FusionParams) -> np.ndarray:
    """Soft mask from the aggregated heatmaps: threshold(roi(deep) * shallow)."""
    shallow, deep = np.asarray(shallow), np.asarray(deep)
    if shallow.shape != deep.shape:
        raise DataError(f"heatmap shape mismatch: {shallow.shape} vs {deep.shape}")
    return fusion_forward_node(ad.as_node(shallow), ad.as_node(deep), p).value


def overactivation_score_node(shallow: ad.Node, deep: ad.Node, soft_mask: ad.Node) -> ad.Node:
    numer = ad.sum_all(ad.absolute(ad.mul(ad.mul(shallow, deep), soft_mask)))
    denom = ad.maximum(
        ad.sum_all(ad.absolute(soft_mask)),
        np.asarray(SCORE_DENOM_FLOOR, dtype=soft_mask.value.dtype),
    )
    return ad.div(numer, denom)


def overactivation_score(shallow: np.ndarray, deep: np.ndarray, soft_mask: np.ndarray) -> float:
    """L1 norm of shallow*deep*mask over L1 norm of mask; 0 for an empty mask."""
    shallow, deep, soft_mask = (np.asarray(a) for a in (shallow, deep, soft_mask))
    if not (shallow.shape == deep.shape == soft_mask.shape):
        raise DataError("heatmaps and soft mask must share a shape")
    denom = float(np.abs(soft_mask).sum())
    if denom < SCORE_DENOM_FLOOR:
        return 0.0
    return float(np.abs(shallow * deep * soft_mask).sum() / denom)


def make_mask(
    soft_mask: np.ndarray,
    score: float,
    lambda0: float,
    out_h: int,
    out_w: int,
) -> tuple[np.ndarray, bool]:
    """Binary keep-mask at the requested resolution plus the detection flag.

    Detection fires when score > lambda0; soft-mask values >= 0.5 then map to
    0 (masked). Without a detection the mask is all ones.
    """
    if out_h < 1 or out_w < 1:
        raise DataError(f"mask dims must be >= 1, got ({out_h}, {out_w})")
    flagged = score > lambda0
    if not flagged:
        return np.ones((out_h, out_w), dtype=np.float32), False
    keep = (np.asarray(soft_mask) < 0.5).astype(np.float32)
    return resize_nearest(keep, out_h, out_w), True


def apply_mask(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero out masked pixels in every channel; mask is (H, W) in {0, 1}."""
    image = np.asarray(image)
    mask = np.asarray(mask)
    if image.shape[-2:] != mask.shape:
        raise DataError(f"mask shape {mask.shape} does not match image {image.shape}")
    return (image * mask[None, :, :]).astype(image.dtype, copy=False)
