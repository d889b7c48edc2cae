"""Activation-trace interchange: one NPY per (image, layer) plus a manifest.

This is the format the host-framework exporter emits and the calibration /
heatmap side ingests; it is validated before any ingestion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .npyio import npy_read, npy_write

FORMAT_VERSION = 1


@dataclass
class TraceManifest:
    model_id: str
    preprocessing: dict
    layer_shapes: dict[str, tuple[int, ...]]  # name -> (C, H, W)
    images: list[str]
    traces: dict[str, dict[str, str]]  # image -> layer -> relative path
    root: Path

    @property
    def layers(self) -> list[str]:
        return list(self.layer_shapes)


def write_trace_dir(
    out_dir,
    model_id: str,
    preprocessing: dict,
    traces,
) -> Path:
    """Write (image_id, {layer: array}) pairs into an interchange directory."""
    out_dir = Path(out_dir)
    (out_dir / "traces").mkdir(parents=True, exist_ok=True)
    layer_shapes: dict[str, list[int]] = {}
    images: list[str] = []
    files: dict[str, dict[str, str]] = {}
    for image_id, layer_map in traces:
        images.append(image_id)
        files[image_id] = {}
        for layer, arr in layer_map.items():
            arr = np.asarray(arr, dtype=np.float32)
            shape = list(arr.shape)
            if layer_shapes.setdefault(layer, shape) != shape:
                raise DataError(
                    f"layer {layer!r} shape drift: {shape} vs {layer_shapes[layer]}"
                )
            rel = f"traces/{image_id}__{layer}.npy"
            npy_write(arr, out_dir / rel)
            files[image_id][layer] = rel
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_id": model_id,
        "preprocessing": preprocessing,
        "layers": [{"name": n, "shape": s} for n, s in layer_shapes.items()],
        "images": images,
        "traces": files,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path) -> TraceManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: unreadable manifest: {exc}") from exc
    try:
        if int(doc["format_version"]) != FORMAT_VERSION:
            raise ConfigError(f"{path}: unsupported format version {doc['format_version']}")
        layer_shapes = {e["name"]: tuple(int(d) for d in e["shape"]) for e in doc["layers"]}
        return TraceManifest(
            model_id=str(doc["model_id"]),
            preprocessing=dict(doc.get("preprocessing", {})),
            layer_shapes=layer_shapes,
            images=[str(i) for i in doc["images"]],
            traces={k: dict(v) for k, v in doc["traces"].items()},
            root=path.parent,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: invalid manifest: {exc}") from exc


def validate_manifest(manifest: TraceManifest) -> None:
    """Check every listed trace file exists and matches its declared shape."""
    for image_id in manifest.images:
        layer_files = manifest.traces.get(image_id)
        if layer_files is None:
            raise DataError(f"manifest lists image {image_id!r} without trace entries")
        for layer, shape in manifest.layer_shapes.items():
            rel = layer_files.get(layer)
            if rel is None:
                raise DataError(f"image {image_id!r} is missing layer {layer!r}")
            full = manifest.root / rel
            if not full.exists():
                raise DataError(f"trace file {full} does not exist")
            arr = npy_read(full)
            if arr.shape != shape:
                raise DataError(
                    f"{full}: shape {arr.shape} does not match manifest {shape}"
                )


def iter_traces(manifest: TraceManifest, layers=None):
    """Yield {layer: array} per image, restricted to the requested layers."""
    wanted = list(layers) if layers is not None else manifest.layers
    missing = [l for l in wanted if l not in manifest.layer_shapes]
    if missing:
        raise DataError(f"manifest has no layers {missing}; available: {manifest.layers}")
    for image_id in manifest.images:
        layer_files = manifest.traces[image_id]
        try:
            yield image_id, {l: npy_read(manifest.root / layer_files[l]) for l in wanted}
        except KeyError as exc:
            raise DataError(f"image {image_id!r} is missing layer {exc}") from exc
        except FormatError:
            raise
