"""Desk-scale default configuration.

The toy task runs at 96x192 (the 1:2 aspect ratio of the segmentation
setting), with heatmap cascades scaled proportionally from the full-scale
kernel schedule. Seed bases keep calibration, fusion training, held-out
evaluation, attack optimization, and network fitting on disjoint scene sets.
"""

from __future__ import annotations

from .heatmaps import LayerSetConfig, PoolCascadeSpec

IMAGE_DIMS = (96, 192)
N_CLASSES = 5

# side ratios follow the full-scale S/M/L patch-to-image proportions
PATCH_SIZES = {"S": (12, 24), "M": (16, 32), "L": (24, 48)}

RESIZE_DIMS = (96, 192)
SHALLOW_KERNELS = ((32, 64), (16, 32), (4, 8), (1, 2))
DEEP_KERNELS = ((32, 64), (16, 32))
SHALLOW_LAYERS = ("L1", "L2")
DEEP_LAYERS = ("L3", "L4")

TRANSFORM_RANGES = {
    "brightness_delta": (-0.1, 0.1),
    "contrast_factor": (0.8, 1.2),
    "noise_std": (0.0, 0.03),
    "scale_factor": (0.8, 1.2),
}

CALIBRATION_SEED_BASE = 0
TRAIN_SCENE_SEED_BASE = 100
HELDOUT_SEED_BASE = 200
ATTACK_SCENE_SEED_BASE = 300
FIT_SEED_BASE = 5000

ATTACK_EPOCHS = 50
ATTACK_LR = 0.08
EOT_SAMPLES = 4
ATTACK_SCENES = 16

FUSION_EPOCHS = 15
FUSION_LR = 0.01

TRAIN_BETAS = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
SWEEP_BETAS = tuple(round(0.1 * i, 1) for i in range(1, 11))
SWEEP_ALPHAS = tuple(round(0.1 * i, 1) for i in range(0, 11))

LOSS_WEIGHTS = {"w_adv": 1.0, "w_nps": 0.0, "w_smooth": 0.1}


def default_layer_config() -> LayerSetConfig:
    return LayerSetConfig(
        shallow_layers=SHALLOW_LAYERS,
        deep_layers=DEEP_LAYERS,
        shallow_spec=PoolCascadeSpec(SHALLOW_KERNELS, RESIZE_DIMS),
        deep_spec=PoolCascadeSpec(DEEP_KERNELS, RESIZE_DIMS),
    )
