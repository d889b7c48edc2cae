"""Adversarial patch losses and optimizers.

All patches are universal: each optimizer step samples (scene, transform)
pairs, builds the mode's composite loss on each, and averages per-loss
gradients over the batch. Per-loss gradients are normalized to unit L2 norm
before the weighted average, so loss magnitudes cannot drown each other out.

Plain and mixed-objective crafting runs on a crop around the sampled
placement: with per-loss normalization the crop gradient equals the
full-image gradient exactly (the margin covers the receptive field twice,
and the mean-loss denominator cancels), at a fraction of the cost.
Defense-aware crafting differentiates through the global heatmap pipeline
and therefore runs on full images.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .calibration import DEFAULT_STD_FLOOR, CalibrationProfile
from .defaults import (
    ATTACK_EPOCHS,
    ATTACK_LR,
    EOT_SAMPLES,
    LOSS_WEIGHTS,
)
from .errors import ConfigError, DataError, DivergenceError
from .fusion import FusionParams, fusion_forward_node, overactivation_score_node
from .heatmaps import LayerSetConfig, set_heatmap_node
from .npyio import npy_read, npy_write
from .optim import Adam
from .patching import TransformSpec, apply_patch_node, sample_transform
from .tensorops import resize_nearest
from .toymodel import ToySegNet, forward_trace_node

# twice the logits receptive-field radius of the toy net; crop borders
# stay out of reach of every pixel whose loss depends on the patch
CROP_MARGIN = 12

MODES = ("plain", "beta_mixed", "adv_mask", "adv_flag")


@dataclass
class AttackConfig:
    mode: str = "plain"
    beta: float = 1.0
    alpha: float = 1.0
    patch_hw: tuple[int, int] = (24, 48)
    epochs: int = ATTACK_EPOCHS
    lr: float = ATTACK_LR
    eot_samples: int = EOT_SAMPLES
    seed: int = 0
    w_adv: float = LOSS_WEIGHTS["w_adv"]
    w_nps: float = LOSS_WEIGHTS["w_nps"]
    w_smooth: float = LOSS_WEIGHTS["w_smooth"]
    palette: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown attack mode {self.mode!r}")
        for name in ("beta", "alpha"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.w_nps > 0 and (self.palette is None or len(self.palette) == 0):
            raise ConfigError("printability weight set but no palette given")


@dataclass
class PatchArtifact:
    values: np.ndarray  # (3, h, w) float32 in [0, 1]
    provenance: dict = field(default_factory=dict)

    def save(self, stem) -> None:
        # plain string concatenation: stems may contain dots (beta values)
        stem = Path(stem)
        npy_write(self.values, stem.parent / (stem.name + ".npy"))
        (stem.parent / (stem.name + ".json")).write_text(
            json.dumps(self.provenance, indent=2, sort_keys=True) + "\n"
        )

    @classmethod
    def load(cls, stem) -> "PatchArtifact":
        stem = Path(stem)
        if stem.name.endswith(".npy"):
            stem = stem.parent / stem.name[: -len(".npy")]
        values = npy_read(stem.parent / (stem.name + ".npy"))
        prov_path = stem.parent / (stem.name + ".json")
        provenance = json.loads(prov_path.read_text()) if prov_path.exists() else {}
        return cls(values, provenance)


# ---------------------------------------------------------------------------
# loss components


def untargeted_task_loss(logits: ad.Node, labels: np.ndarray) -> ad.Node:
    """Negated mean per-pixel cross-entropy; minimizing maximizes task loss."""
    return ad.neg(ad.cross_entropy(logits, labels))


def smoothness_loss(patch: ad.Node) -> ad.Node:
    """Sum of squared forward differences over both axes, all channels."""
    down = ad.square(ad.sub(ad.crop(patch, np.s_[:, 1:, :]), ad.crop(patch, np.s_[:, :-1, :])))
    right = ad.square(ad.sub(ad.crop(patch, np.s_[:, :, 1:]), ad.crop(patch, np.s_[:, :, :-1])))
    return ad.add(ad.sum_all(down), ad.sum_all(right))


def nonprintability_score(patch: ad.Node, palette: np.ndarray) -> ad.Node:
    """Mean over pixels of the product of distances to each printable color."""
    palette = np.asarray(palette, dtype=np.float64)
    if palette.ndim != 2 or palette.shape[1] != 3 or palette.shape[0] == 0:
        raise DataError(f"palette must be (K, 3), got {palette.shape}")
    dtype = patch.value.dtype
    product = None
    for color in palette:
        diff = ad.sub(patch, color.astype(dtype)[:, None, None])
        dist = ad.sqrt(ad.sum_axis(ad.square(diff), 0))
        product = dist if product is None else ad.mul(product, dist)
    return ad.mean_all(product)


def overactivation_loss(
    trace: dict[str, ad.Node],
    profile: CalibrationProfile,
    shallow_layers: tuple[str, ...],
    footprint: np.ndarray,
    eps_std: float = DEFAULT_STD_FLOOR,
) -> ad.Node:
    """Mean absolute footprint-summed z-score per channel, averaged over layers.

    The footprint mask is nearest-resampled to each layer's spatial dims and
    each layer normalizes by its own channel count and footprint size.
    """
    per_layer = []
    for name in shallow_layers:
        node = trace[name]
        stats = profile.require(name)
        c, h, w = node.value.shape
        mask = resize_nearest(footprint, h, w).astype(node.value.dtype)
        count = float(mask.sum())
        if count == 0:
            raise DataError(f"patch footprint is empty at layer {name!r}")
        dtype = node.value.dtype
        mean = stats.mean.astype(dtype)[:, None, None]
        std = np.maximum(stats.std, eps_std).astype(dtype)[:, None, None]
        z = ad.div(ad.sub(node, mean), std)
        channel_sums = ad.sum_axis(ad.mul(z, mask), (1, 2))
        per_layer.append(ad.div(ad.sum_all(ad.absolute(channel_sums)), dtype.type(c * count)))
    total = per_layer[0]
    for node in per_layer[1:]:
        total = ad.add(total, node)
    return ad.div(total, total.value.dtype.type(len(per_layer)))


def combine_gradients(per_loss_grads: list[tuple[np.ndarray, float]]) -> np.ndarray:
    """Normalize each gradient to unit L2 norm, then take the weighted mean."""
    if not per_loss_grads:
        raise DataError("no gradients to combine")
    shape = per_loss_grads[0][0].shape
    total = np.zeros(shape, dtype=np.float64)
    for grad, weight in per_loss_grads:
        if grad.shape != shape:
            raise DataError(f"gradient shape mismatch: {grad.shape} vs {shape}")
        norm = float(np.linalg.norm(grad))
        if norm > 0:
            total += (weight / norm) * grad.astype(np.float64)
    return (total / len(per_loss_grads)).astype(per_loss_grads[0][0].dtype, copy=False)


# ---------------------------------------------------------------------------
# crafting loops


def _patch_components(cfg: AttackConfig, patch: ad.Node, scale: float):
    """The patch-only regularizers of the composite loss, with their weights."""
    components = []
    if scale * cfg.w_smooth != 0.0:
        components.append(("smooth", smoothness_loss(patch), scale * cfg.w_smooth))
    if scale * cfg.w_nps != 0.0:
        components.append(("nps", nonprintability_score(patch, cfg.palette), scale * cfg.w_nps))
    return components


def _crop_window(spec: TransformSpec, patch_hw, image_hw) -> tuple[TransformSpec, tuple]:
    sh, sw = spec.scaled_dims(patch_hw)
    h, w = image_hw
    r0 = max(0, spec.row - CROP_MARGIN)
    r1 = min(h, spec.row + sh + CROP_MARGIN)
    c0 = max(0, spec.col - CROP_MARGIN)
    c1 = min(w, spec.col + sw + CROP_MARGIN)
    local = replace(spec, row=spec.row - r0, col=spec.col - c0)
    return local, np.s_[r0:r1, c0:c1]


def _run_optimizer(cfg: AttackConfig, build_components, image_hw,
                   graph_dtype=np.float32) -> PatchArtifact:
    """Shared EOT/ADAM loop; build_components(rng, patch_node) yields the
    per-sample loss list [(name, node, weight)] for one (scene, transform)."""
    rng = np.random.default_rng(np.random.PCG64(cfg.seed))
    patch = rng.uniform(0.0, 1.0, size=(3,) + tuple(cfg.patch_hw)).astype(np.float32)
    opt = Adam(lr=cfg.lr)
    loss_history: list[dict[str, float]] = []
    for step in range(cfg.epochs):
        grad_sums: dict[str, np.ndarray] = {}
        weights: dict[str, float] = {}
        value_sums: dict[str, float] = {}
        for _ in range(cfg.eot_samples):
            patch_node = ad.leaf(patch.astype(graph_dtype, copy=False))
            for name, loss, weight in build_components(rng, patch_node):
                value = float(loss.value)
                if not np.isfinite(value):
                    raise DivergenceError(f"loss {name!r} became non-finite at step {step}")
                (grad,) = ad.backward(loss, [patch_node])
                grad_sums[name] = grad_sums.get(name, 0.0) + grad
                value_sums[name] = value_sums.get(name, 0.0) + value
                weights[name] = weight
        combined = combine_gradients(
            [(grad_sums[name] / cfg.eot_samples, weights[name]) for name in grad_sums]
        )
        opt.step({"patch": patch}, {"patch": combined.astype(np.float32, copy=False)})
        np.clip(patch, 0.0, 1.0, out=patch)
        assert patch.min() >= 0.0 and patch.max() <= 1.0
        loss_history.append({k: v / cfg.eot_samples for k, v in value_sums.items()})
    provenance = {
        "mode": cfg.mode,
        "beta": cfg.beta if cfg.mode == "beta_mixed" else None,
        "alpha": cfg.alpha if cfg.mode in ("adv_mask", "adv_flag") else None,
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "lr": cfg.lr,
        "eot_samples": cfg.eot_samples,
        "patch_hw": list(cfg.patch_hw),
        "image_hw": list(image_hw),
        "loss_weights": {"w_adv": cfg.w_adv, "w_nps": cfg.w_nps, "w_smooth": cfg.w_smooth},
        "final_losses": loss_history[-1] if loss_history else {},
        "loss_trace": loss_history,
    }
    return PatchArtifact(patch, provenance)


def craft_patch(
    net: ToySegNet,
    scenes,
    cfg: AttackConfig,
    profile: CalibrationProfile | None = None,
    shallow_layers: tuple[str, ...] | None = None,
) -> PatchArtifact:
    """Plain or mixed-objective universal patch against the toy net.

    beta_mixed weighs the over-activation loss by (1 - beta) and every
    adversarial term by beta; beta = 1 reduces exactly to the plain loss.
    """
    if not scenes:
        raise DataError("craft_patch needs at least one scene")
    if cfg.mode not in ("plain", "beta_mixed"):
        raise ConfigError(f"craft_patch does not handle mode {cfg.mode!r}")
    if cfg.mode == "beta_mixed" and (profile is None or shallow_layers is None):
        raise ConfigError("beta_mixed needs a calibration profile and shallow layer list")
    image_hw = scenes[0].image.shape[1:]
    adv_scale = cfg.beta if cfg.mode == "beta_mixed" else 1.0
    oz_weight = (1.0 - cfg.beta) if cfg.mode == "beta_mixed" else 0.0

    def build(rng, patch_node):
        scene = scenes[int(rng.integers(0, len(scenes)))]
        spec = sample_transform(rng, image_hw, cfg.patch_hw)
        local_spec, window = _crop_window(spec, cfg.patch_hw, image_hw)
        image = scene.image[(np.s_[:],) + window]
        labels = scene.labels[window]
        patched = apply_patch_node(image, patch_node, local_spec)
        logits, trace = forward_trace_node(net, patched)
        components = []
        if adv_scale * cfg.w_adv != 0.0:
            components.append(("task", untargeted_task_loss(logits, labels), adv_scale * cfg.w_adv))
        if oz_weight != 0.0:
            footprint = np.zeros(image.shape[1:], dtype=np.float32)
            sh, sw = local_spec.scaled_dims(cfg.patch_hw)
            footprint[local_spec.row : local_spec.row + sh, local_spec.col : local_spec.col + sw] = 1.0
            components.append(
                ("overactivation",
                 overactivation_loss(trace, profile, shallow_layers, footprint),
                 oz_weight)
            )
        components.extend(_patch_components(cfg, patch_node, adv_scale))
        return components

    return _run_optimizer(cfg, build, image_hw)


def craft_defense_aware(
    net: ToySegNet,
    profile: CalibrationProfile,
    layer_cfg: LayerSetConfig,
    fusion_params: FusionParams,
    scenes,
    cfg: AttackConfig,
) -> PatchArtifact:
    """Adv-Mask / Adv-Flag: gradient flows through the whole defense pipeline.

    Adv-Mask weighs -BCE(soft mask, footprint) by (1 - alpha); Adv-Flag swaps
    that term for -BCE(sigmoid(score - lambda0), 1), pushing the score under
    the detection threshold. alpha = 1 reduces to the plain adversarial loss.
    """
    if not scenes:
        raise DataError("craft_defense_aware needs at least one scene")
    if cfg.mode not in ("adv_mask", "adv_flag"):
        raise ConfigError(f"craft_defense_aware does not handle mode {cfg.mode!r}")
    image_hw = scenes[0].image.shape[1:]
    evasion_weight = 1.0 - cfg.alpha

    def build(rng, patch_node):
        scene = scenes[int(rng.integers(0, len(scenes)))]
        spec = sample_transform(rng, image_hw, cfg.patch_hw)
        patched = apply_patch_node(scene.image, patch_node, spec)
        logits, trace = forward_trace_node(net, patched)
        components = []
        if evasion_weight != 0.0:
            shallow = set_heatmap_node(
                trace, profile, layer_cfg.shallow_layers, layer_cfg.shallow_spec, layer_cfg.eps_std
            )
            deep = set_heatmap_node(
                trace, profile, layer_cfg.deep_layers, layer_cfg.deep_spec, layer_cfg.eps_std
            )
            soft_mask = fusion_forward_node(shallow, deep, fusion_params)
            if cfg.mode == "adv_mask":
                sh, sw = spec.scaled_dims(cfg.patch_hw)
                footprint = np.zeros(image_hw, dtype=np.float32)
                footprint[spec.row : spec.row + sh, spec.col : spec.col + sw] = 1.0
                target = resize_nearest(footprint, *layer_cfg.resize_dims)
                evasion = ad.neg(ad.bce(soft_mask, target))
            else:
                score = overactivation_score_node(shallow, deep, soft_mask)
                margin = ad.sigmoid(
                    ad.sub(score, np.asarray(fusion_params.lambda0, dtype=score.value.dtype))
                )
                evasion = ad.neg(ad.bce(margin, np.asarray(1.0, dtype=score.value.dtype)))
            components.append(("evasion", evasion, evasion_weight))
        if cfg.alpha * cfg.w_adv != 0.0:
            components.append(
                ("task", untargeted_task_loss(logits, scene.labels), cfg.alpha * cfg.w_adv)
            )
        components.extend(_patch_components(cfg, patch_node, cfg.alpha))
        return components

    # float64 graph: the flag objective's gradient scales with
    # 1 - sigmoid(score - threshold), which underflows in f32 once the score
    # clears the threshold by tens of units
    return _run_optimizer(cfg, build, image_hw, graph_dtype=np.float64)
