"""Binary weights file (``.nblw``).

Layout, all little-endian::

    b"NBLW"  u32 version  u8 model-id  u32 layer-count
    per parameterized layer:
        u32 name-length, UTF-8 name, u8 kind (1 = conv, 2 = batchnorm)
        batchnorm only: f64 epsilon, f64 momentum
        tensors (conv: weight, bias; batchnorm: gamma, beta, running_mean,
        running_var), each as u32 ndim, ndim x u32 extents, float32 data

Model id is 1 for NBL and 2 for FastNBL; bit 0x80 marks a fused model.
"""
from __future__ import annotations

import struct
from dataclasses import replace
from pathlib import Path

import numpy as np

from .models import BATCHNORM, CONV, FASTNBL, NBL, ModelSpec, Weights, build, check_weights, expected_shapes, fuse_conv_bn

MAGIC = b"NBLW"
VERSION = 1
MODEL_IDS = {NBL: 1, FASTNBL: 2}
FUSED_BIT = 0x80
KIND_IDS = {CONV: 1, BATCHNORM: 2}
TENSOR_ORDER = {CONV: ("weight", "bias"), BATCHNORM: ("gamma", "beta", "running_mean", "running_var")}


class WeightsFormatError(ValueError):
    pass


class BadMagicError(WeightsFormatError):
    pass


class VersionMismatchError(WeightsFormatError):
    pass


class ShapeMismatchError(WeightsFormatError):
    pass


class TruncatedFileError(WeightsFormatError):
    pass


def dumps(spec: ModelSpec, weights: Weights) -> bytes:
    check_weights(spec, weights)
    model_id = MODEL_IDS[spec.kind] | (FUSED_BIT if spec.fused else 0)
    layers = spec.param_layers
    out = [MAGIC, struct.pack("<IBI", VERSION, model_id, len(layers))]
    for layer in layers:
        name = layer.name.encode("utf-8")
        out.append(struct.pack("<I", len(name)) + name + struct.pack("<B", KIND_IDS[layer.kind]))
        if layer.kind == BATCHNORM:
            out.append(struct.pack("<dd", layer.eps, layer.momentum))
        for key in TENSOR_ORDER[layer.kind]:
            arr = np.ascontiguousarray(weights[layer.name][key], dtype="<f4")
            out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            out.append(arr.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"{self.source}: truncated at byte {len(self.data)} (needed {self.pos + n})")
        chunk = self.data[self.pos: self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes, source: str = "<bytes>") -> tuple[ModelSpec, Weights]:
    r = _Reader(data, source)
    if len(data) >= 4 and data[:4] != MAGIC:
        raise BadMagicError(f"{source}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    r.take(4)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionMismatchError(f"{source}: file version {version}, this reader supports {VERSION}")
    model_id, count = r.unpack("<BI")
    kinds = {v: k for k, v in MODEL_IDS.items()}
    if model_id & ~FUSED_BIT not in kinds:
        raise WeightsFormatError(f"{source}: unknown model id {model_id}")
    spec = build(kinds[model_id & ~FUSED_BIT])
    fused = bool(model_id & FUSED_BIT)
    if fused:
        spec, _ = fuse_conv_bn(spec, _placeholder_weights(spec))
    layers = spec.param_layers
    if count != len(layers):
        raise ShapeMismatchError(f"{source}: {count} layer records, {spec.kind} expects {len(layers)}")

    weights: Weights = {}
    new_layers = {}
    for layer in layers:
        (n,) = r.unpack("<I")
        name = r.take(n).decode("utf-8")
        (kind_id,) = r.unpack("<B")
        if name != layer.name or kind_id != KIND_IDS[layer.kind]:
            raise ShapeMismatchError(f"{source}: record {name!r} (kind {kind_id}) where {layer.name!r} was expected")
        if layer.kind == BATCHNORM:
            eps, momentum = r.unpack("<dd")
            new_layers[layer.name] = replace(layer, eps=eps, momentum=momentum)
        shapes = expected_shapes(layer)
        params = {}
        for key in TENSOR_ORDER[layer.kind]:
            (ndim,) = r.unpack("<I")
            shape = r.unpack(f"<{ndim}I")
            if shape != shapes[key]:
                raise ShapeMismatchError(f"{source}: {name}.{key} has shape {shape}, expected {shapes[key]}")
            count_f = int(np.prod(shape))
            params[key] = np.frombuffer(r.take(4 * count_f), dtype="<f4").astype(np.float32).reshape(shape)
        weights[name] = params
    if r.pos != len(data):
        raise WeightsFormatError(f"{source}: {len(data) - r.pos} trailing bytes")
    if new_layers:
        spec = replace(spec, layers=tuple(new_layers.get(l.name, l) for l in spec.layers))
    return spec, weights


def _placeholder_weights(spec: ModelSpec) -> Weights:
    return {
        layer.name: {k: np.ones(s, np.float32) for k, s in expected_shapes(layer).items()}
        for layer in spec.param_layers
    }


def save_weights(spec: ModelSpec, weights: Weights, path) -> None:
    Path(path).write_bytes(dumps(spec, weights))


def load_weights(path) -> tuple[ModelSpec, Weights]:
    path = Path(path)
    return loads(path.read_bytes(), source=str(path))
