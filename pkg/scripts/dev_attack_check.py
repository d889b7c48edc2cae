"""Dev harness: measure attack strength and defense behavior end to end."""

import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from zmask import defaults, metrics, toymodel
from zmask.attacks import AttackConfig, craft_patch
from zmask.patching import apply_patch, sample_transform
from zmask.scenes import generate_scene


def eval_patch(net, patch_values, seeds, rng_seed=9000):
    rng = np.random.default_rng(np.random.PCG64(rng_seed))
    preds, labels, masks = [], [], []
    clean_preds = []
    for seed in seeds:
        scene = generate_scene(seed)
        spec = sample_transform(rng, scene.image.shape[1:], patch_values.shape[1:])
        patched = apply_patch(scene.image, patch_values, spec)
        preds.append(toymodel.predict(net, patched.image))
        clean_preds.append(toymodel.predict(net, scene.image))
        labels.append(scene.labels)
        masks.append(patched.footprint)
    attacked = metrics.miou(preds, labels, net.classes, masks)
    clean = metrics.miou(clean_preds, labels, net.classes, masks)
    return clean, attacked


if __name__ == "__main__":
    net = toymodel.default_net()
    scenes = [generate_scene(defaults.ATTACK_SCENE_SEED_BASE + i) for i in range(16)]
    t0 = time.perf_counter()
    cfg = AttackConfig(mode="plain", patch_hw=(24, 48), seed=0)
    art = craft_patch(net, scenes, cfg)
    print(f"craft: {time.perf_counter() - t0:.1f}s final losses {art.provenance['final_losses']}")
    heldout = list(range(200, 232))
    clean, attacked = eval_patch(net, art.values, heldout)
    print(f"clean mIoU {clean:.3f}  attacked mIoU {attacked:.3f}  drop {clean - attacked:.3f}")
