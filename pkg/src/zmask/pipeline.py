"""End-to-end defense: trace, heatmaps, fusion, flag, mask, apply."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import CalibrationProfile
from .fusion import FusionParams, apply_mask, fusion_forward, make_mask, overactivation_score
from .heatmaps import LayerSetConfig, shallow_deep_heatmaps
from .toymodel import ToySegNet, forward_trace


@dataclass
class DefenseResult:
    score: float
    flagged: bool
    soft_mask: np.ndarray  # (H_R, W_R) in (0, 1)
    keep_mask: np.ndarray  # (H, W) in {0, 1}, 1 = keep pixel
    masked_image: np.ndarray | None
    shallow: np.ndarray
    deep: np.ndarray


def defend_trace(
    trace: dict[str, np.ndarray],
    profile: CalibrationProfile,
    layer_cfg: LayerSetConfig,
    params: FusionParams,
    out_hw: tuple[int, int],
    image: np.ndarray | None = None,
) -> DefenseResult:
    """Run the fusion/detection block on an existing activation trace."""
    shallow, deep = shallow_deep_heatmaps(trace, profile, layer_cfg)
    soft_mask = fusion_forward(shallow, deep, params)
    score = overactivation_score(shallow, deep, soft_mask)
    keep, flagged = make_mask(soft_mask, score, params.lambda0, *out_hw)
    masked = apply_mask(image, keep) if image is not None else None
    return DefenseResult(score, flagged, soft_mask, keep, masked, shallow, deep)


def defend_image(
    image: np.ndarray,
    net: ToySegNet,
    profile: CalibrationProfile,
    layer_cfg: LayerSetConfig,
    params: FusionParams,
) -> DefenseResult:
    """Full pipeline on one image: forward trace first, then defend."""
    _, trace = forward_trace(net, image)
    return defend_trace(trace, profile, layer_cfg, params, image.shape[1:], image)


def score_image(
    image: np.ndarray,
    net: ToySegNet,
    profile: CalibrationProfile,
    layer_cfg: LayerSetConfig,
    params: FusionParams,
) -> float:
    """Just the over-activation score (cheaper bookkeeping for ROC sweeps)."""
    return defend_image(image, net, profile, layer_cfg, params).score
