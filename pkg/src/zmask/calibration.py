"""Per-layer, per-channel activation statistics from clean inputs.

Statistics pool every spatial position of every calibration image into one
(mean, std) pair per channel. Accumulation uses a mergeable Chan-style
streaming scheme so partials computed by independent workers combine into
the same result as a single pass. Standard deviation is the population form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

DEFAULT_STD_FLOOR = 1e-6


@dataclass
class ChannelStats:
    """Streaming first/second moments per channel."""

    count: int
    mean: np.ndarray  # (C,) float64
    m2: np.ndarray  # (C,) float64, sum of squared deviations
    # Exact std from a loaded profile; keeps save/load/save byte-identical.
    std_exact: np.ndarray | None = None

    @classmethod
    def empty(cls, channels: int) -> "ChannelStats":
        return cls(0, np.zeros(channels), np.zeros(channels))

    @property
    def channels(self) -> int:
        return self.mean.shape[0]

    @property
    def std(self) -> np.ndarray:
        if self.std_exact is not None:
            return self.std_exact
        if self.count < 1:
            raise DataError("statistics have no samples yet")
        return np.sqrt(self.m2 / self.count)

    def accumulate(self, activation: np.ndarray) -> "ChannelStats":
        """Fold one (C, H, W) activation tensor into the running moments."""
        activation = np.asarray(activation, dtype=np.float64)
        if activation.ndim != 3 or activation.shape[0] != self.channels:
            raise DataError(
                f"activation shape {activation.shape} does not match {self.channels} channels"
            )
        n = activation.shape[1] * activation.shape[2]
        batch_mean = activation.mean(axis=(1, 2))
        batch_m2 = ((activation - batch_mean[:, None, None]) ** 2).sum(axis=(1, 2))
        return self._merge_moments(n, batch_mean, batch_m2)

    def merge(self, other: "ChannelStats") -> "ChannelStats":
        if other.channels != self.channels:
            raise DataError("cannot merge statistics with different channel counts")
        if other.count == 0:
            return ChannelStats(self.count, self.mean.copy(), self.m2.copy())
        return self._merge_moments(other.count, other.mean, other.m2)

    def _merge_moments(self, n: int, mean: np.ndarray, m2: np.ndarray) -> "ChannelStats":
        if self.count == 0:
            return ChannelStats(n, mean.copy(), m2.copy())
        total = self.count + n
        delta = mean - self.mean
        new_mean = self.mean + delta * (n / total)
        new_m2 = self.m2 + m2 + delta * delta * (self.count * n / total)
        return ChannelStats(total, new_mean, new_m2)


def zscore(activation: np.ndarray, stats: ChannelStats, eps: float = DEFAULT_STD_FLOOR) -> np.ndarray:
    """Channel-wise standardization (h - mean) / max(std, eps)."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    activation = np.asarray(activation)
    if activation.ndim != 3 or activation.shape[0] != stats.channels:
        raise DataError(
            f"activation shape {activation.shape} does not match {stats.channels} channels"
        )
    mean = stats.mean.astype(activation.dtype)[:, None, None]
    std = np.maximum(stats.std, eps).astype(activation.dtype)[:, None, None]
    return (activation - mean) / std


@dataclass
class CalibrationProfile:
    """Finalized per-layer statistics plus provenance."""

    model_id: str
    dataset_id: str
    image_count: int
    layers: dict[str, ChannelStats] = field(default_factory=dict)

    def require(self, layer: str) -> ChannelStats:
        if layer not in self.layers:
            raise ConfigError(
                f"layer {layer!r} missing from profile (has: {sorted(self.layers)})"
            )
        return self.layers[layer]

    def to_json_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "dataset_id": self.dataset_id,
            "image_count": self.image_count,
            "layers": {
                name: {
                    "mean": stats.mean.tolist(),
                    "std": stats.std.tolist(),
                    "count": stats.count,
                }
                for name, stats in self.layers.items()
            },
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "CalibrationProfile":
        try:
            doc = json.loads(Path(path).read_text())
            layers = {}
            for name, entry in doc["layers"].items():
                mean = np.asarray(entry["mean"], dtype=np.float64)
                std = np.asarray(entry["std"], dtype=np.float64)
                count = int(entry["count"])
                layers[name] = ChannelStats(count, mean, std * std * count, std_exact=std)
            return cls(doc["model_id"], doc["dataset_id"], int(doc["image_count"]), layers)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"{path}: invalid calibration profile: {exc}") from exc


def calibrate(traces, model_id: str, dataset_id: str) -> CalibrationProfile:
    """Build a profile from an iterable of {layer: activation} trace dicts."""
    layers: dict[str, ChannelStats] = {}
    count = 0
    for trace in traces:
        count += 1
        for name, activation in trace.items():
            stats = layers.get(name)
            if stats is None:
                stats = ChannelStats.empty(activation.shape[0])
            layers[name] = stats.accumulate(activation)
    if count == 0:
        raise DataError("calibration source produced no traces")
    return CalibrationProfile(model_id, dataset_id, count, layers)
