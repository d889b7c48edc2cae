"""Layer-wise over-activation heatmaps.

A standardized activation tensor is resized to a common resolution, run
through a cascade of stride-1 average poolings with shrinking kernels, and
each stage is modulated by the previous stage scaled to unit peak magnitude.
The absolute values of the final stage, averaged across channels, give a
non-negative heatmap in which contiguous over-activated regions survive and
isolated spikes are suppressed.

Cascade math is expressed in autodiff nodes so defense-aware attacks can
differentiate straight through it; the plain-array entry points just unwrap
the node values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .calibration import DEFAULT_STD_FLOOR, CalibrationProfile, zscore
from .errors import ConfigError, DataError

DEFAULT_NORM_FLOOR = 1e-6


@dataclass(frozen=True)
class PoolCascadeSpec:
    """Kernel schedule and working resolution for one heatmap cascade."""

    kernels: tuple[tuple[int, int], ...]
    resize_dims: tuple[int, int]
    eps_norm: float = DEFAULT_NORM_FLOOR

    def __post_init__(self):
        if len(self.kernels) < 1:
            raise ConfigError("cascade needs at least one kernel")
        if self.eps_norm <= 0:
            raise ConfigError("eps_norm must be > 0")
        h, w = self.resize_dims
        prev = None
        for k in self.kernels:
            kh, kw = k
            if kh < 1 or kw < 1 or kh > h or kw > w:
                raise ConfigError(f"kernel {k} does not fit resize dims {self.resize_dims}")
            if prev is not None and (kh > prev[0] or kw > prev[1]):
                raise ConfigError(f"kernels must be non-increasing, got {prev} -> {k}")
            prev = k

    def to_json_dict(self) -> dict:
        return {
            "kernels": [list(k) for k in self.kernels],
            "resize_dims": list(self.resize_dims),
            "eps_norm": self.eps_norm,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "PoolCascadeSpec":
        try:
            return cls(
                kernels=tuple((int(h), int(w)) for h, w in doc["kernels"]),
                resize_dims=(int(doc["resize_dims"][0]), int(doc["resize_dims"][1])),
                eps_norm=float(doc.get("eps_norm", DEFAULT_NORM_FLOOR)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid cascade spec: {exc}") from exc


def layer_heatmap_node(z: ad.Node, spec: PoolCascadeSpec) -> ad.Node:
    """Cascade as a graph node: rank-3 z-scores in, (H, W) heatmap out."""
    h, w = spec.resize_dims
    # The per-stage inner resize always sees the same source tensor, so it is
    # hoisted out of the loop; the post-pool resize is the identity because
    # stride-1 pooling preserves the working resolution.
    resized = ad.resize_bilinear(z, h, w)
    stage = None  # stage 0 is all-ones: modulating by it is a no-op
    for kh, kw in spec.kernels:
        pooled = ad.avg_pool_same(resized, kh, kw)
        if stage is None:
            stage = pooled
        else:
            peak = ad.maximum(ad.inf_norm(stage), np.asarray(spec.eps_norm, dtype=z.value.dtype))
            stage = ad.mul(pooled, ad.div(stage, peak))
    return ad.mean_axis(ad.absolute(stage), 0)


def layer_heatmap(z: np.ndarray, spec: PoolCascadeSpec) -> np.ndarray:
    """Plain-array cascade: returns the (H_R, W_R) non-negative heatmap."""
    z = np.asarray(z)
    if z.ndim != 3:
        raise DataError(f"expected rank-3 z-score tensor, got {z.shape}")
    return layer_heatmap_node(ad.as_node(z), spec).value


def aggregate(maps: list[np.ndarray]) -> np.ndarray:
    """Pixel-wise maximum of same-shape heatmaps."""
    if not maps:
        raise DataError("cannot aggregate an empty heatmap list")
    out = np.asarray(maps[0])
    for m in maps[1:]:
        m = np.asarray(m)
        if m.shape != out.shape:
            raise DataError(f"heatmap shape mismatch: {m.shape} vs {out.shape}")
        out = np.maximum(out, m)
    return out


@dataclass(frozen=True)
class LayerSetConfig:
    """Shallow/deep layer selections with their cascade specs."""

    shallow_layers: tuple[str, ...]
    deep_layers: tuple[str, ...]
    shallow_spec: PoolCascadeSpec
    deep_spec: PoolCascadeSpec
    eps_std: float = DEFAULT_STD_FLOOR

    def __post_init__(self):
        if not self.shallow_layers or not self.deep_layers:
            raise ConfigError("shallow and deep layer lists must be non-empty")
        if self.shallow_spec.resize_dims != self.deep_spec.resize_dims:
            raise ConfigError("shallow and deep cascades must share resize dims")

    @property
    def resize_dims(self) -> tuple[int, int]:
        return self.shallow_spec.resize_dims

    def all_layers(self) -> tuple[str, ...]:
        seen = dict.fromkeys(self.shallow_layers)
        seen.update(dict.fromkeys(self.deep_layers))
        return tuple(seen)

    def to_json_dict(self) -> dict:
        return {
            "shallow": {"layers": list(self.shallow_layers), **self.shallow_spec.to_json_dict()},
            "deep": {"layers": list(self.deep_layers), **self.deep_spec.to_json_dict()},
            "eps_std": self.eps_std,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_json_dict(cls, doc: dict) -> "LayerSetConfig":
        try:
            return cls(
                shallow_layers=tuple(doc["shallow"]["layers"]),
                deep_layers=tuple(doc["deep"]["layers"]),
                shallow_spec=PoolCascadeSpec.from_json_dict(doc["shallow"]),
                deep_spec=PoolCascadeSpec.from_json_dict(doc["deep"]),
                eps_std=float(doc.get("eps_std", DEFAULT_STD_FLOOR)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid layer-set config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "LayerSetConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: cannot read layer-set config: {exc}") from exc
        return cls.from_json_dict(doc)


def set_heatmap_node(
    trace: dict[str, ad.Node],
    profile: CalibrationProfile,
    layers: tuple[str, ...],
    spec: PoolCascadeSpec,
    eps_std: float = DEFAULT_STD_FLOOR,
) -> ad.Node:
    """Aggregated heatmap node for one layer set, z-scoring each layer first."""
    maps = []
    for name in layers:
        if name not in trace:
            raise DataError(f"trace is missing layer {name!r}")
        node = trace[name]
        stats = profile.require(name)
        if node.value.shape[0] != stats.channels:
            raise DataError(
                f"layer {name!r} has {node.value.shape[0]} channels, profile has {stats.channels}"
            )
        dtype = node.value.dtype
        mean = stats.mean.astype(dtype)[:, None, None]
        std = np.maximum(stats.std, eps_std).astype(dtype)[:, None, None]
        z = ad.div(ad.sub(node, mean), std)
        maps.append(layer_heatmap_node(z, spec))
    return ad.maximum_of(maps)


def shallow_deep_heatmaps(
    trace: dict[str, np.ndarray],
    profile: CalibrationProfile,
    cfg: LayerSetConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Aggregated shallow and deep heatmaps for a plain activation trace."""
    nodes = {name: ad.as_node(np.asarray(t)) for name, t in trace.items()}
    shallow = set_heatmap_node(nodes, profile, cfg.shallow_layers, cfg.shallow_spec, cfg.eps_std)
    deep = set_heatmap_node(nodes, profile, cfg.deep_layers, cfg.deep_spec, cfg.eps_std)
    return shallow.value, deep.value


def tone_map(heatmap: np.ndarray) -> np.ndarray:
    """Linear rescale of a heatmap to [0, 1] for PGM export; flat maps go to 0."""
    heatmap = np.asarray(heatmap, dtype=np.float32)
    lo, hi = float(heatmap.min()), float(heatmap.max())
    if hi - lo < 1e-12:
        return np.zeros_like(heatmap)
    return (heatmap - lo) / (hi - lo)


def zscore_trace(
    trace: dict[str, np.ndarray],
    profile: CalibrationProfile,
    layers: tuple[str, ...],
    eps: float = DEFAULT_STD_FLOOR,
) -> dict[str, np.ndarray]:
    """Standardize the named layers of a trace against the profile."""
    return {name: zscore(trace[name], profile.require(name), eps) for name in layers}
