"""Binary PPM (P6) / PGM (P5) image I/O.

Images are float32 channel-first arrays with values in [0, 1]; 8-bit samples
map to v/255 on read and round(v*255) on write. Only maxval 255 is accepted.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError


def _parse_header(raw: bytes, path):
    # Header tokens may be separated by arbitrary whitespace and '#' comments.
    tokens = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(raw):
            raise FormatError(f"{path}: truncated header")
        ch = raw[pos : pos + 1]
        if ch == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(raw) and not raw[pos : pos + 1].isspace():
                pos += 1
            tokens.append(raw[start:pos])
    return tokens, pos + 1  # single whitespace byte after maxval


def image_read(path) -> np.ndarray:
    """Read a P6 (3-channel) or P5 (1-channel) image into CHW float32 in [0, 1]."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 2 or raw[:2] not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported magic {raw[:2]!r} (expect P5 or P6)")
    tokens, offset = _parse_header(raw, path)
    channels = 3 if tokens[0] == b"P6" else 1
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric header field") from exc
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} not supported (expect 255)")
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    expected = width * height * channels
    payload = raw[offset : offset + expected]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return (pixels.astype(np.float32) / 255.0).transpose(2, 0, 1)


def image_write(image: np.ndarray, path) -> None:
    """Write a CHW float array in [0, 1] as P6 (C=3) or P5 (C=1), maxval 255."""
    path = Path(path)
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise FormatError(f"{path}: image must be CHW with 1 or 3 channels, got {arr.shape}")
    channels, height, width = arr.shape
    quantized = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    magic = b"P6" if channels == 3 else b"P5"
    header = b"%s\n%d %d\n255\n" % (magic, width, height)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(quantized.transpose(1, 2, 0).tobytes())
