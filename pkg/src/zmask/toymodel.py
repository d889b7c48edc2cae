"""Fixed-seed convolutional segmentation network with activation tracing.

Five 3x3 stride-1 same-padding conv layers (channel plan 3-8-16-16-8-N).
L1..L4 are followed by ReLU; L5 produces the per-pixel logits, and its trace
entry is the rectified logits so every traced layer is post-activation.

Weights ship as a golden bundle: a seeded Gaussian init lightly fitted with
a few hundred ADAM steps of cross-entropy on the procedural corpus, then
frozen. A purely random net has too little class structure for attack
losses to degrade, so the light fit is part of the artifact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .defaults import FIT_SEED_BASE, IMAGE_DIMS, N_CLASSES
from .errors import ConfigError, DataError
from .npyio import npy_read, npy_write
from .optim import Adam
from .scenes import generate_scene

LAYER_NAMES = ("L1", "L2", "L3", "L4", "L5")
CHANNEL_PLAN = (3, 8, 16, 16, 8, N_CLASSES)
DEFAULT_WEIGHTS_DIR = Path(__file__).parent / "data" / "toy_weights"


@dataclass
class ToySegNet:
    """Frozen weights keyed by layer name: (out, in, 3, 3) kernels plus biases."""

    weights: dict[str, tuple[np.ndarray, np.ndarray]]
    seed: int
    classes: int = N_CLASSES

    def layer_channels(self) -> dict[str, int]:
        return {name: self.weights[name][0].shape[0] for name in LAYER_NAMES}


def init_net(seed: int) -> ToySegNet:
    rng = np.random.default_rng(np.random.PCG64(seed))
    weights = {}
    for name, c_in, c_out in zip(LAYER_NAMES, CHANNEL_PLAN[:-1], CHANNEL_PLAN[1:]):
        scale = np.sqrt(2.0 / (c_in * 9))
        w = (rng.standard_normal((c_out, c_in, 3, 3)) * scale).astype(np.float32)
        b = np.zeros(c_out, dtype=np.float32)
        weights[name] = (w, b)
    return ToySegNet(weights, seed)


def forward_trace(net: ToySegNet, image: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Logits (N, H, W) plus all named post-activation tensors."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != CHANNEL_PLAN[0]:
        raise DataError(f"expected ({CHANNEL_PLAN[0]}, H, W) input, got {image.shape}")
    x = image
    trace: dict[str, np.ndarray] = {}
    for name in LAYER_NAMES[:-1]:
        w, b = net.weights[name]
        _, x = ad.conv_forward(x, w, b)
        x = np.maximum(x, 0)
        trace[name] = x
    w, b = net.weights[LAYER_NAMES[-1]]
    _, logits = ad.conv_forward(x, w, b)
    trace[LAYER_NAMES[-1]] = np.maximum(logits, 0)
    return logits, trace


def forward_trace_node(net: ToySegNet, image: ad.Node) -> tuple[ad.Node, dict[str, ad.Node]]:
    """Differentiable twin of forward_trace for attack graphs."""
    x = image
    trace: dict[str, ad.Node] = {}
    for name in LAYER_NAMES[:-1]:
        w, b = net.weights[name]
        x = ad.relu(ad.conv2d(x, w.astype(image.value.dtype), b.astype(image.value.dtype)))
        trace[name] = x
    w, b = net.weights[LAYER_NAMES[-1]]
    logits = ad.conv2d(x, w.astype(image.value.dtype), b.astype(image.value.dtype))
    trace[LAYER_NAMES[-1]] = ad.relu(logits)
    return logits, trace


def predict(net: ToySegNet, image: np.ndarray) -> np.ndarray:
    logits, _ = forward_trace(net, image)
    return logits.argmax(axis=0)


def fit_toy_weights(
    seed: int = 7,
    steps: int = 400,
    batch: int = 3,
    lr: float = 3e-3,
    scene_count: int = 32,
    dims: tuple[int, int] = IMAGE_DIMS,
) -> tuple[ToySegNet, list[float]]:
    """Seeded init plus a light cross-entropy fit on dedicated fitting scenes."""
    net = init_net(seed)
    scenes = [generate_scene(FIT_SEED_BASE + i, dims) for i in range(scene_count)]
    rng = np.random.default_rng(np.random.PCG64(seed + 1))
    params: dict[str, np.ndarray] = {}
    for name in LAYER_NAMES:
        w, b = net.weights[name]
        params[f"{name}.w"] = w.astype(np.float64)
        params[f"{name}.b"] = b.astype(np.float64)
    opt = Adam(lr=lr)
    history: list[float] = []
    for _ in range(steps):
        picks = rng.integers(0, scene_count, size=batch)
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        total = 0.0
        for idx in picks:
            scene = scenes[idx]
            nodes = {k: ad.leaf(v) for k, v in params.items()}
            x: ad.Node = ad.as_node(scene.image.astype(np.float64))
            for name in LAYER_NAMES[:-1]:
                x = ad.relu(ad.conv2d(x, nodes[f"{name}.w"], nodes[f"{name}.b"]))
            logits = ad.conv2d(x, nodes[f"{LAYER_NAMES[-1]}.w"], nodes[f"{LAYER_NAMES[-1]}.b"])
            loss = ad.cross_entropy(logits, scene.labels)
            total += float(loss.value)
            keys = list(params)
            for k, g in zip(keys, ad.backward(loss, [nodes[k] for k in keys])):
                grads[k] += g / batch
        history.append(total / batch)
        opt.step(params, grads)
    weights = {
        name: (params[f"{name}.w"].astype(np.float32), params[f"{name}.b"].astype(np.float32))
        for name in LAYER_NAMES
    }
    return ToySegNet(weights, seed), history


def save_weights(net: ToySegNet, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"seed": net.seed, "classes": net.classes, "layers": []}
    for name in LAYER_NAMES:
        w, b = net.weights[name]
        npy_write(w, directory / f"{name}_w.npy")
        npy_write(b, directory / f"{name}_b.npy")
        manifest["layers"].append({"name": name, "kernel": list(w.shape), "bias": list(b.shape)})
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_weights(directory) -> ToySegNet:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"{directory}: no weight manifest found")
    manifest = json.loads(manifest_path.read_text())
    weights = {}
    for entry in manifest["layers"]:
        name = entry["name"]
        w = npy_read(directory / f"{name}_w.npy")
        b = npy_read(directory / f"{name}_b.npy")
        if list(w.shape) != entry["kernel"] or list(b.shape) != entry["bias"]:
            raise ConfigError(f"{directory}: shape drift for layer {name}")
        weights[name] = (w, b)
    return ToySegNet(weights, int(manifest["seed"]), int(manifest["classes"]))


_DEFAULT_NET: ToySegNet | None = None


def default_net() -> ToySegNet:
    """The packaged golden network (loaded once per process)."""
    global _DEFAULT_NET
    if _DEFAULT_NET is None:
        _DEFAULT_NET = load_weights(DEFAULT_WEIGHTS_DIR)
    return _DEFAULT_NET
