"""Binary PPM (P6, maxval 255) reading and writing.

Pixel values are float RGB in [0, 1]; code k maps to ``float32(k) / 255``
in both directions so a quantized image survives a round trip bit-exactly.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np


class PPMError(ValueError):
    pass


def to_codes(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def from_codes(codes: np.ndarray) -> np.ndarray:
    return codes.astype(np.float32) / np.float32(255.0)


def quantize(image: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and snap to the 8-bit grid the PPM files store."""
    return from_codes(to_codes(image))


def encode(image: np.ndarray) -> bytes:
    if image.ndim != 3 or image.shape[2] != 3:
        raise PPMError(f"expected an (H, W, 3) image, got shape {image.shape}")
    h, w = image.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + to_codes(image).tobytes()


def _header_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PPMError("truncated PPM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def decode(data: bytes, source: str = "<bytes>") -> np.ndarray:
    tokens, offset = _header_tokens(data, 4)
    if tokens[0] != b"P6":
        raise PPMError(f"{source}: not a binary PPM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PPMError(f"{source}: malformed PPM header") from None
    if maxval != 255:
        raise PPMError(f"{source}: maxval {maxval} unsupported, expected 255")
    if w < 1 or h < 1:
        raise PPMError(f"{source}: empty image {w}x{h}")
    raster = data[offset:]
    if len(raster) != w * h * 3:
        raise PPMError(f"{source}: raster holds {len(raster)} bytes, expected {w * h * 3}")
    return from_codes(np.frombuffer(raster, np.uint8).reshape(h, w, 3))


def write_ppm(path, image: np.ndarray) -> None:
    Path(path).write_bytes(encode(image))


def read_ppm(path) -> np.ndarray:
    path = Path(path)
    return decode(path.read_bytes(), source=str(path))
