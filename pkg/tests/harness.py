"""Shared end-to-end experiment for the acceptance suite.

Builds the whole desk-scale protocol once per test session: calibration,
the mixed-objective patch sweep, fusion training with ROC threshold
selection, held-out detection/masking/recovery measurements, the
beta-monotonicity grid, and the defense-aware attacks. Tests assert against
the returned bundle. Set ZMASK_EXP_CACHE=<dir> to cache the bundle between
developer runs; the cache is keyed by a protocol version string.
"""

from __future__ import annotations

import os
import pickle
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from zmask import defaults, metrics
from zmask.attacks import AttackConfig, craft_defense_aware, craft_patch
from zmask.calibration import CalibrationProfile, calibrate
from zmask.fusion import fusion_forward, overactivation_score
from zmask.heatmaps import shallow_deep_heatmaps
from zmask.patching import apply_patch, sample_transform
from zmask.pipeline import defend_trace
from zmask.roc import roc_and_cutoff
from zmask.scenes import generate_scene
from zmask.toymodel import default_net, forward_trace, predict
from zmask.training import bce_loss, train_fusion

PROTOCOL_VERSION = "exp-v9"

CAL_SCENES = 64
TRAIN_SCENES = 32
HELDOUT_SCENES = 64
MONO_BETAS = (0.25, 0.5, 0.75, 1.0)
MONO_SEEDS = (0, 1, 2)


@dataclass
class ExperimentBundle:
    profile: CalibrationProfile
    sweep_patches: dict[float, np.ndarray]  # beta -> patch values
    fusion_params: object
    fusion_loss_trace: list[float]
    train_auc: float
    heldout_auc: float
    heldout_scores: list[float]
    heldout_labels: list[int]
    mask_iou_mean: float
    miou_clean: float
    miou_defended_clean: float
    miou_attacked: float
    miou_defended_attacked: float
    beta_mean_scores: dict[float, float]  # beta -> mean d over seeds and scenes
    beta_seed_scores: dict[tuple[float, int], float]
    advflag_evasion_rate: float
    advflag_drop: float
    beta1_drop: float
    advmask_bce: float
    beta1_bce: float
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def criterion4_runtime(self) -> float:
        keys = ("calibrate", "sweep", "fusion_data", "fusion_train", "roc", "heldout_auc")
        return sum(self.timings[k] for k in keys)


def _heatmap_pair(net, profile, layer_cfg, image):
    _, trace = forward_trace(net, image)
    return shallow_deep_heatmaps(trace, profile, layer_cfg)


def _score(shallow, deep, params) -> float:
    soft = fusion_forward(shallow, deep, params)
    return overactivation_score(shallow, deep, soft)


def build_experiment() -> ExperimentBundle:
    cache_dir = os.environ.get("ZMASK_EXP_CACHE")
    cache_path = Path(cache_dir) / f"{PROTOCOL_VERSION}.pkl" if cache_dir else None
    if cache_path and cache_path.exists():
        with open(cache_path, "rb") as fh:
            return pickle.load(fh)

    timings: dict[str, float] = {}
    net = default_net()
    layer_cfg = defaults.default_layer_config()
    patch_hw = defaults.PATCH_SIZES["L"]
    image_hw = defaults.IMAGE_DIMS

    t0 = time.perf_counter()
    cal_traces = (
        forward_trace(net, generate_scene(defaults.CALIBRATION_SEED_BASE + i).image)[1]
        for i in range(CAL_SCENES)
    )
    profile = calibrate(cal_traces, "toy-segnet-v1", "toy-clean-calibration")
    timings["calibrate"] = time.perf_counter() - t0

    attack_scenes = [
        generate_scene(defaults.ATTACK_SCENE_SEED_BASE + i) for i in range(defaults.ATTACK_SCENES)
    ]

    t0 = time.perf_counter()
    sweep_patches: dict[float, np.ndarray] = {}
    for beta in defaults.TRAIN_BETAS:
        cfg = AttackConfig(mode="beta_mixed", beta=beta, patch_hw=patch_hw, seed=0)
        art = craft_patch(net, attack_scenes, cfg, profile=profile,
                          shallow_layers=layer_cfg.shallow_layers)
        sweep_patches[beta] = art.values
    timings["sweep"] = time.perf_counter() - t0

    # fusion training set: every sweep patch applied to every training scene
    t0 = time.perf_counter()
    train_scenes = [
        generate_scene(defaults.TRAIN_SCENE_SEED_BASE + i) for i in range(TRAIN_SCENES)
    ]
    rng = np.random.default_rng(np.random.PCG64(42))
    dataset = []
    for beta in defaults.TRAIN_BETAS:
        for scene in train_scenes:
            spec = sample_transform(rng, image_hw, patch_hw)
            patched = apply_patch(scene.image, sweep_patches[beta], spec, layer_cfg.resize_dims)
            shallow, deep = _heatmap_pair(net, profile, layer_cfg, patched.image)
            dataset.append((shallow, deep, patched.footprint_resized))
    timings["fusion_data"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    params, loss_trace = train_fusion(
        dataset, epochs=defaults.FUSION_EPOCHS, lr=defaults.FUSION_LR
    )
    timings["fusion_train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    scores = [ _score(shallow, deep, params) for shallow, deep, _ in dataset ]
    labels = [1] * len(dataset)
    for scene in train_scenes:
        shallow, deep = _heatmap_pair(net, profile, layer_cfg, scene.image)
        scores.append(_score(shallow, deep, params))
        labels.append(0)
    curve, lambda0 = roc_and_cutoff(scores, labels)
    params.lambda0 = lambda0
    timings["roc"] = time.perf_counter() - t0

    # held-out detection AUC: fresh scenes, sweep patches cycled
    t0 = time.perf_counter()
    heldout = [generate_scene(defaults.HELDOUT_SEED_BASE + i) for i in range(HELDOUT_SCENES)]
    eval_rng = np.random.default_rng(np.random.PCG64(777))
    betas = list(defaults.TRAIN_BETAS)
    heldout_scores: list[float] = []
    heldout_labels: list[int] = []
    for i, scene in enumerate(heldout):
        spec = sample_transform(eval_rng, image_hw, patch_hw)
        patched = apply_patch(scene.image, sweep_patches[betas[i % len(betas)]], spec)
        shallow, deep = _heatmap_pair(net, profile, layer_cfg, patched.image)
        heldout_scores.append(_score(shallow, deep, params))
        heldout_labels.append(1)
    for scene in heldout:
        shallow, deep = _heatmap_pair(net, profile, layer_cfg, scene.image)
        heldout_scores.append(_score(shallow, deep, params))
        heldout_labels.append(0)
    heldout_curve, _ = roc_and_cutoff(heldout_scores, heldout_labels)
    timings["heldout_auc"] = time.perf_counter() - t0

    # masking and recovery on the beta = 1 patch
    t0 = time.perf_counter()
    beta1 = sweep_patches[1.0]
    mask_rng = np.random.default_rng(np.random.PCG64(888))
    mask_ious = []
    preds_clean, preds_def_clean, preds_att, preds_def_att = [], [], [], []
    label_maps, footprints = [], []
    bce_beta1 = []
    for scene in heldout:
        spec = sample_transform(mask_rng, image_hw, patch_hw)
        patched = apply_patch(scene.image, beta1, spec, layer_cfg.resize_dims)
        _, trace = forward_trace(net, patched.image)
        result = defend_trace(trace, profile, layer_cfg, params, image_hw, patched.image)
        mask_ious.append(metrics.binary_iou(1.0 - result.keep_mask, patched.footprint))
        bce_beta1.append(bce_loss(result.soft_mask, patched.footprint_resized))
        label_maps.append(scene.labels)
        footprints.append(patched.footprint)
        preds_att.append(np.argmax(forward_trace(net, patched.image)[0], axis=0))
        preds_def_att.append(predict(net, result.masked_image))
        preds_clean.append(predict(net, scene.image))
        clean_result = defend_trace(
            forward_trace(net, scene.image)[1], profile, layer_cfg, params, image_hw, scene.image
        )
        preds_def_clean.append(predict(net, clean_result.masked_image))
    n_classes = net.classes
    miou_clean = metrics.miou(preds_clean, label_maps, n_classes)
    miou_defended_clean = metrics.miou(preds_def_clean, label_maps, n_classes)
    miou_attacked = metrics.miou(preds_att, label_maps, n_classes, footprints)
    miou_defended_attacked = metrics.miou(preds_def_att, label_maps, n_classes, footprints)
    timings["masking_recovery"] = time.perf_counter() - t0

    # beta monotonicity grid: mean score per beta, averaged over craft seeds
    t0 = time.perf_counter()
    mono_scenes = heldout[:16]
    beta_seed_scores: dict[tuple[float, int], float] = {}
    for beta in MONO_BETAS:
        for seed in MONO_SEEDS:
            if seed == 0 and beta in sweep_patches:
                patch = sweep_patches[beta]
            else:
                cfg = AttackConfig(mode="beta_mixed", beta=beta, patch_hw=patch_hw, seed=seed)
                patch = craft_patch(net, attack_scenes, cfg, profile=profile,
                                    shallow_layers=layer_cfg.shallow_layers).values
            d_rng = np.random.default_rng(np.random.PCG64(1000 + seed))
            vals = []
            for scene in mono_scenes:
                spec = sample_transform(d_rng, image_hw, patch_hw)
                patched = apply_patch(scene.image, patch, spec)
                shallow, deep = _heatmap_pair(net, profile, layer_cfg, patched.image)
                vals.append(_score(shallow, deep, params))
            beta_seed_scores[(beta, seed)] = float(np.mean(vals))
    beta_mean_scores = {
        beta: float(np.mean([beta_seed_scores[(beta, s)] for s in MONO_SEEDS]))
        for beta in MONO_BETAS
    }
    timings["beta_grid"] = time.perf_counter() - t0

    # defense-aware attacks
    t0 = time.perf_counter()
    flag_cfg = AttackConfig(mode="adv_flag", alpha=0.0, patch_hw=patch_hw, seed=0)
    advflag = craft_defense_aware(net, profile, layer_cfg, params, attack_scenes, flag_cfg)
    mask_cfg = AttackConfig(mode="adv_mask", alpha=0.0, patch_hw=patch_hw, seed=0)
    advmask = craft_defense_aware(net, profile, layer_cfg, params, attack_scenes, mask_cfg)

    evade_rng = np.random.default_rng(np.random.PCG64(555))
    evaded = 0
    for scene in attack_scenes:
        spec = sample_transform(evade_rng, image_hw, patch_hw)
        patched = apply_patch(scene.image, advflag.values, spec)
        shallow, deep = _heatmap_pair(net, profile, layer_cfg, patched.image)
        if _score(shallow, deep, params) < params.lambda0:
            evaded += 1
    advflag_evasion_rate = evaded / len(attack_scenes)

    def _drop_and_bce(patch_values):
        drop_rng = np.random.default_rng(np.random.PCG64(666))
        preds, clean_preds, labs, fps, bces = [], [], [], [], []
        for scene in heldout[:32]:
            spec = sample_transform(drop_rng, image_hw, patch_hw)
            patched = apply_patch(scene.image, patch_values, spec, layer_cfg.resize_dims)
            preds.append(predict(net, patched.image))
            clean_preds.append(predict(net, scene.image))
            labs.append(scene.labels)
            fps.append(patched.footprint)
            shallow, deep = _heatmap_pair(net, profile, layer_cfg, patched.image)
            soft = fusion_forward(shallow, deep, params)
            bces.append(bce_loss(soft, patched.footprint_resized))
        clean = metrics.miou(clean_preds, labs, n_classes, fps)
        attacked = metrics.miou(preds, labs, n_classes, fps)
        return clean - attacked, float(np.mean(bces))

    advflag_drop, _ = _drop_and_bce(advflag.values)
    beta1_drop, beta1_bce = _drop_and_bce(beta1)
    _, advmask_bce = _drop_and_bce(advmask.values)
    timings["defense_aware"] = time.perf_counter() - t0

    bundle = ExperimentBundle(
        profile=profile,
        sweep_patches=sweep_patches,
        fusion_params=params,
        fusion_loss_trace=loss_trace,
        train_auc=curve.auc,
        heldout_auc=heldout_curve.auc,
        heldout_scores=heldout_scores,
        heldout_labels=heldout_labels,
        mask_iou_mean=float(np.mean(mask_ious)),
        miou_clean=miou_clean,
        miou_defended_clean=miou_defended_clean,
        miou_attacked=miou_attacked,
        miou_defended_attacked=miou_defended_attacked,
        beta_mean_scores=beta_mean_scores,
        beta_seed_scores=beta_seed_scores,
        advflag_evasion_rate=advflag_evasion_rate,
        advflag_drop=advflag_drop,
        beta1_drop=beta1_drop,
        advmask_bce=advmask_bce,
        beta1_bce=beta1_bce,
        timings=timings,
    )
    if cache_path:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        with open(cache_path, "wb") as fh:
            pickle.dump(bundle, fh)
    return bundle


if __name__ == "__main__":
    import sys

    sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
    b = build_experiment()
    print("timings:", {k: round(v, 1) for k, v in b.timings.items()})
    print("criterion-4 runtime:", round(b.criterion4_runtime, 1), "s")
    print("train AUC:", round(b.train_auc, 4), " heldout AUC:", round(b.heldout_auc, 4))
    print("lambda0:", b.fusion_params.lambda0)
    print("fusion loss:", round(b.fusion_loss_trace[0], 4), "->", round(b.fusion_loss_trace[-1], 4))
    print("mask IoU mean:", round(b.mask_iou_mean, 3))
    print("mIoU clean/def-clean:", round(b.miou_clean, 3), round(b.miou_defended_clean, 3))
    print("mIoU attacked/defended:", round(b.miou_attacked, 3), round(b.miou_defended_attacked, 3))
    print("beta grid:", {k: round(v, 4) for k, v in b.beta_mean_scores.items()})
    print("advflag evasion:", b.advflag_evasion_rate, " drops flag/beta1:",
          round(b.advflag_drop, 3), round(b.beta1_drop, 3))
    print("bce advmask/beta1:", round(b.advmask_bce, 3), round(b.beta1_bce, 3))
