"""Regenerate the packaged data assets (printable palette, golden toy weights).

Run from the repository root:  python3 scripts/make_assets.py
"""

import colorsys
import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from zmask import metrics, toymodel  # noqa: E402
from zmask.scenes import generate_scene  # noqa: E402

DATA = Path(__file__).resolve().parents[1] / "src" / "zmask" / "data"


def make_palette() -> None:
    """32 printable colors: an 8-hue wheel at two saturation/value pairs."""
    colors = []
    for h in range(8):
        for s, v in ((1.0, 0.9), (0.55, 0.55)):
            colors.append([round(c, 4) for c in colorsys.hsv_to_rgb(h / 8.0, s, v)])
    for g in np.linspace(0.0, 1.0, 14):
        colors.append([round(float(g), 4)] * 3)
    colors.append([1.0, 1.0, 1.0])
    colors.append([0.0, 0.0, 0.0])
    assert len(colors) == 32
    (DATA / "palette.json").write_text(json.dumps(colors, indent=1) + "\n")
    print(f"palette: {len(colors)} colors")


def make_weights(steps: int = 400) -> None:
    t0 = time.perf_counter()
    net, history = toymodel.fit_toy_weights(steps=steps)
    print(f"fit: {time.perf_counter() - t0:.1f}s, loss {history[0]:.3f} -> {history[-1]:.3f}")
    toymodel.save_weights(net, DATA / "toy_weights")

    # held-out sanity: mean IoU on scenes the fit never saw
    preds, labels = [], []
    for seed in range(200, 216):
        scene = generate_scene(seed)
        preds.append(toymodel.predict(net, scene.image))
        labels.append(scene.labels)
    clean_miou = metrics.miou(preds, labels, net.classes)
    print(f"held-out clean mIoU: {clean_miou:.3f}")

    # golden zero-input response (per-layer channel means, tolerance check)
    _, trace = toymodel.forward_trace(net, np.zeros((3,) + toymodel.IMAGE_DIMS, dtype=np.float32))
    golden = {
        name: {
            "shape": list(t.shape),
            "channel_mean": [round(float(v), 6) for v in t.mean(axis=(1, 2))],
        }
        for name, t in trace.items()
    }
    (DATA / "toy_zero_response.json").write_text(json.dumps(golden, indent=1, sort_keys=True) + "\n")
    print("golden zero response written")


if __name__ == "__main__":
    DATA.mkdir(parents=True, exist_ok=True)
    make_palette()
    make_weights()
