"""Supervised fitting of the eight fusion scalars.

ADAM on mean binary cross-entropy between the soft mask and the
ground-truth patch footprint. An epoch is one deterministic in-order pass
over the dataset with one optimizer step per example; with only eight
scalars and the stated learning rate, per-example steps are what gives the
blocks enough total movement to fit within a few epochs.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import DataError, DivergenceError
from .fusion import FusionParams, SoftThresholdParams
from .optim import Adam

PARAM_KEYS = ("roi_w1", "roi_b1", "roi_w2", "roi_b2", "mask_w1", "mask_b1", "mask_w2", "mask_b2")


def bce_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7]."""
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise DataError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(ad.bce(ad.as_node(pred), ad.as_node(target)).value)


def _params_to_arrays(p: FusionParams) -> dict[str, np.ndarray]:
    values = (
        p.block_roi.w1, p.block_roi.b1, p.block_roi.w2, p.block_roi.b2,
        p.block_mask.w1, p.block_mask.b1, p.block_mask.w2, p.block_mask.b2,
    )
    return {k: np.asarray(v, dtype=np.float64) for k, v in zip(PARAM_KEYS, values)}


def _arrays_to_params(arrays: dict[str, np.ndarray], lambda0: float = 0.0) -> FusionParams:
    vals = [float(arrays[k]) for k in PARAM_KEYS]
    return FusionParams(
        block_roi=SoftThresholdParams(*vals[:4]),
        block_mask=SoftThresholdParams(*vals[4:]),
        lambda0=lambda0,
    )


def _soft_mask_graph(shallow, deep, nodes: dict[str, ad.Node]) -> ad.Node:
    roi_pre = ad.add(ad.mul(ad.as_node(deep), nodes["roi_w1"]), nodes["roi_b1"])
    roi = ad.sigmoid(ad.add(ad.mul(ad.tanh(roi_pre), nodes["roi_w2"]), nodes["roi_b2"]))
    fused = ad.mul(roi, ad.as_node(shallow))
    mask_pre = ad.add(ad.mul(fused, nodes["mask_w1"]), nodes["mask_b1"])
    return ad.sigmoid(ad.add(ad.mul(ad.tanh(mask_pre), nodes["mask_w2"]), nodes["mask_b2"]))


def train_fusion(
    dataset: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
    epochs: int = 15,
    lr: float = 0.01,
    init: FusionParams | None = None,
) -> tuple[FusionParams, list[float]]:
    """Fit the fusion blocks on (shallow, deep, footprint-mask) triples.

    Returns the trained params (detection threshold untouched) and the
    per-epoch pre-step loss trace. Raises DivergenceError naming the epoch if
    the loss goes non-finite.
    """
    if not dataset:
        raise DataError("training dataset is empty")
    params = _params_to_arrays(init if init is not None else FusionParams.initial())
    opt = Adam(lr=lr)
    trace: list[float] = []
    for epoch in range(epochs):
        total_loss = 0.0
        for shallow, deep, target in dataset:
            nodes = {k: ad.leaf(params[k]) for k in PARAM_KEYS}
            loss = ad.bce(_soft_mask_graph(shallow, deep, nodes), ad.as_node(target))
            value = float(loss.value)
            if not np.isfinite(value):
                raise DivergenceError(f"fusion training diverged at epoch {epoch}")
            total_loss += value
            grads = dict(zip(PARAM_KEYS, ad.backward(loss, [nodes[k] for k in PARAM_KEYS])))
            opt.step(params, grads)
        trace.append(total_loss / len(dataset))
    return _arrays_to_params(params), trace
