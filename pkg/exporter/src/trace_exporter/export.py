"""Forward-hook trace capture and interchange-format output."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

FORMAT_VERSION = 1
IMAGE_SUFFIXES = (".ppm", ".pgm", ".png", ".jpg", ".jpeg", ".bmp")


class ExportError(RuntimeError):
    pass


@dataclass
class ExportManifest:
    path: Path
    model_id: str
    layers: list[str]
    layer_shapes: dict[str, tuple[int, ...]]
    images: list[str]
    preprocessing: dict


def _preprocess(path: Path, preprocessing: dict) -> torch.Tensor:
    image = Image.open(path).convert("RGB")
    resize = preprocessing.get("resize")
    if resize:
        # PIL takes (width, height); the manifest records (height, width)
        image = image.resize((int(resize[1]), int(resize[0])), Image.BILINEAR)
    array = np.asarray(image, dtype=np.float32) / 255.0
    tensor = torch.from_numpy(array.transpose(2, 0, 1))
    mean = preprocessing.get("mean")
    std = preprocessing.get("std")
    if mean is not None:
        tensor = tensor - torch.tensor(mean, dtype=torch.float32)[:, None, None]
    if std is not None:
        tensor = tensor / torch.tensor(std, dtype=torch.float32)[:, None, None]
    return tensor.unsqueeze(0)


def _resolve_layers(model: torch.nn.Module, layer_names) -> dict[str, torch.nn.Module]:
    available = dict(model.named_modules())
    missing = [name for name in layer_names if name not in available]
    if missing:
        raise ExportError(
            f"unresolvable layer name(s) {missing}; available: "
            f"{sorted(n for n in available if n)}"
        )
    return {name: available[name] for name in layer_names}


def export_traces(
    model: torch.nn.Module,
    layer_names,
    image_dir,
    out_dir,
    model_id: str = "host-model",
    preprocessing: dict | None = None,
) -> ExportManifest:
    """Run every image through the model and write per-(image, layer) NPYs.

    Inputs are resized/normalized per `preprocessing` (recorded verbatim in
    the manifest), so every trace of a layer shares one shape; any drift is
    an error.
    """
    layer_names = list(layer_names)
    preprocessing = dict(preprocessing or {})
    out_dir = Path(out_dir)
    (out_dir / "traces").mkdir(parents=True, exist_ok=True)
    image_dir = Path(image_dir)
    images = sorted(p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)

    modules = _resolve_layers(model, layer_names)
    captured: dict[str, torch.Tensor] = {}
    hooks = []
    for name, module in modules.items():
        def hook(module, inputs, output, name=name):
            captured[name] = output
        hooks.append(module.register_forward_hook(hook))

    layer_shapes: dict[str, list[int]] = {}
    image_ids: list[str] = []
    files: dict[str, dict[str, str]] = {}
    model.eval()
    try:
        with torch.no_grad():
            for path in images:
                image_id = path.stem
                image_ids.append(image_id)
                captured.clear()
                model(_preprocess(path, preprocessing))
                files[image_id] = {}
                for name in layer_names:
                    if name not in captured:
                        raise ExportError(f"layer {name!r} produced no output for {path.name}")
                    array = captured[name].squeeze(0).detach().cpu().numpy()
                    array = np.ascontiguousarray(array, dtype=np.float32)
                    shape = list(array.shape)
                    if layer_shapes.setdefault(name, shape) != shape:
                        raise ExportError(
                            f"layer {name!r} shape drift on {path.name}: "
                            f"{shape} vs {layer_shapes[name]}"
                        )
                    rel = f"traces/{image_id}__{name}.npy"
                    np.save(out_dir / rel, array)
                    files[image_id][name] = rel
    finally:
        for hook in hooks:
            hook.remove()

    if image_ids and not layer_shapes:
        raise ExportError("no layers captured")
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_id": model_id,
        "preprocessing": preprocessing,
        "layers": [{"name": n, "shape": layer_shapes.get(n, [])} for n in layer_names
                   if n in layer_shapes or image_ids],
        "images": image_ids,
        "traces": files,
    }
    if not image_ids:
        manifest["layers"] = []
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return ExportManifest(
        path=manifest_path,
        model_id=model_id,
        layers=[e["name"] for e in manifest["layers"]],
        layer_shapes={e["name"]: tuple(e["shape"]) for e in manifest["layers"]},
        images=image_ids,
        preprocessing=preprocessing,
    )


def validate_export(manifest_path) -> None:
    """Machine-check that every listed trace file exists with its declared shape."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    doc = json.loads(manifest_path.read_text())
    root = manifest_path.parent
    shapes = {e["name"]: tuple(e["shape"]) for e in doc["layers"]}
    for image_id in doc["images"]:
        for name, shape in shapes.items():
            rel = doc["traces"].get(image_id, {}).get(name)
            if rel is None:
                raise ExportError(f"image {image_id!r} missing layer {name!r}")
            full = root / rel
            if not full.exists():
                raise ExportError(f"missing trace file {full}")
            arr = np.load(full)
            if arr.dtype != np.float32 or tuple(arr.shape) != shape:
                raise ExportError(
                    f"{full}: dtype/shape {arr.dtype}/{arr.shape} does not match manifest {shape}"
                )
