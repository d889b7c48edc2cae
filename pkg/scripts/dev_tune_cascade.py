"""Grid over cascade geometries: mask coverage vs detection vs recovery."""

import pickle
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

import harness  # noqa: E402
import __main__  # noqa: E402

__main__.ExperimentBundle = harness.ExperimentBundle

from zmask import defaults, metrics  # noqa: E402
from zmask.fusion import fusion_forward, overactivation_score  # noqa: E402
from zmask.heatmaps import LayerSetConfig, PoolCascadeSpec, shallow_deep_heatmaps  # noqa: E402
from zmask.patching import apply_patch, sample_transform  # noqa: E402
from zmask.pipeline import defend_trace  # noqa: E402
from zmask.roc import roc_and_cutoff  # noqa: E402
from zmask.scenes import generate_scene  # noqa: E402
from zmask.toymodel import default_net, forward_trace, predict  # noqa: E402
from zmask.training import train_fusion  # noqa: E402

bundle = pickle.load(open("/root/.cache/zmask_exp/exp-v6.pkl", "rb"))
net = default_net()
image_hw = defaults.IMAGE_DIMS
patch_hw = (24, 48)

CONFIGS = {
    "base48": ((48, 96), ((16, 32), (8, 16), (4, 8), (2, 4)), ((16, 32), (8, 16))),
    "fat48": ((48, 96), ((16, 32), (8, 16), (6, 12), (4, 8)), ((16, 32), (8, 16))),
    "full96": ((96, 192), ((32, 64), (16, 32), (8, 16), (4, 8)), ((32, 64), (16, 32))),
    "fatfull96": ((96, 192), ((32, 64), (16, 32), (12, 24), (8, 16)), ((32, 64), (16, 32))),
}

train_scenes = [generate_scene(defaults.TRAIN_SCENE_SEED_BASE + i) for i in range(16)]
heldout = [generate_scene(defaults.HELDOUT_SEED_BASE + i) for i in range(24)]
betas = list(defaults.TRAIN_BETAS)

for name, (dims, s_kernels, d_kernels) in CONFIGS.items():
    t0 = time.perf_counter()
    layer_cfg = LayerSetConfig(
        shallow_layers=defaults.SHALLOW_LAYERS,
        deep_layers=defaults.DEEP_LAYERS,
        shallow_spec=PoolCascadeSpec(s_kernels, dims),
        deep_spec=PoolCascadeSpec(d_kernels, dims),
    )
    rng = np.random.default_rng(np.random.PCG64(42))
    dataset = []
    for beta in betas:
        for scene in train_scenes:
            spec = sample_transform(rng, image_hw, patch_hw)
            patched = apply_patch(scene.image, bundle.sweep_patches[beta], spec, dims)
            _, trace = forward_trace(net, patched.image)
            shallow, deep = shallow_deep_heatmaps(trace, bundle.profile, layer_cfg)
            dataset.append((shallow, deep, patched.footprint_resized))
    params, _ = train_fusion(dataset, epochs=15, lr=0.01)
    scores = []
    labels = []
    for shallow, deep, _ in dataset:
        soft = fusion_forward(shallow, deep, params)
        scores.append(overactivation_score(shallow, deep, soft))
        labels.append(1)
    for scene in train_scenes:
        _, trace = forward_trace(net, scene.image)
        shallow, deep = shallow_deep_heatmaps(trace, bundle.profile, layer_cfg)
        soft = fusion_forward(shallow, deep, params)
        scores.append(overactivation_score(shallow, deep, soft))
        labels.append(0)
    curve, lambda0 = roc_and_cutoff(scores, labels)
    params.lambda0 = lambda0

    rng2 = np.random.default_rng(np.random.PCG64(888))
    beta1 = bundle.sweep_patches[1.0]
    mask_ious, preds_att, preds_def, labs, fps = [], [], [], [], []
    h_scores, h_labels = [], []
    for scene in heldout:
        spec = sample_transform(rng2, image_hw, patch_hw)
        patched = apply_patch(scene.image, beta1, spec, dims)
        _, trace = forward_trace(net, patched.image)
        res = defend_trace(trace, bundle.profile, layer_cfg, params, image_hw, patched.image)
        mask_ious.append(metrics.binary_iou(1.0 - res.keep_mask, patched.footprint))
        preds_att.append(predict(net, patched.image))
        preds_def.append(predict(net, res.masked_image))
        labs.append(scene.labels)
        fps.append(patched.footprint)
        h_scores.append(res.score); h_labels.append(1)
        _, ctrace = forward_trace(net, scene.image)
        cres = defend_trace(ctrace, bundle.profile, layer_cfg, params, image_hw, scene.image)
        h_scores.append(cres.score); h_labels.append(0)
    att = metrics.miou(preds_att, labs, 5, fps)
    deff = metrics.miou(preds_def, labs, 5, fps)
    hcurve, _ = roc_and_cutoff(h_scores, h_labels)
    print("%-10s %4.0fs  maskIoU %.3f  att %.3f def %.3f (rec %+.3f)  AUC %.4f" %
          (name, time.perf_counter() - t0, float(np.mean(mask_ious)), att, deff, deff - att,
           hcurve.auc))
