"""NBL and FastNBL as ordered layer pipelines.

A model is a :class:`ModelSpec` (layer descriptions, no numbers) plus a
weights mapping ``layer name -> {param name -> array}``.  Conv layers carry
``weight``/``bias``; batchnorm layers carry ``gamma``, ``beta``,
``running_mean`` and ``running_var`` (epsilon and momentum live on the spec).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import BatchNormState, ConvParams, ShapeError

NBL = "nbl"
FASTNBL = "fastnbl"
MODEL_KINDS = (NBL, FASTNBL)

CONV, BATCHNORM, RELU, HARDTANH, UPSAMPLE = "conv", "batchnorm", "relu", "hardtanh", "upsample2x"

Weights = dict  # layer name -> {param name -> np.ndarray}


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    conv: ConvParams | None = None
    channels: int = 0
    eps: float = 1e-5
    momentum: float = 0.1

    @property
    def has_params(self) -> bool:
        return self.kind in (CONV, BATCHNORM)


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    layers: tuple[LayerSpec, ...]
    fused: bool = False

    def __post_init__(self):
        channels = 3
        for layer in self.layers:
            if layer.kind == CONV:
                if layer.conv.in_channels != channels:
                    raise ShapeError(f"{layer.name}: expects {layer.conv.in_channels} channels, receives {channels}")
                channels = layer.conv.out_channels
            elif layer.kind == BATCHNORM and layer.channels != channels:
                raise ShapeError(f"{layer.name}: normalizes {layer.channels} channels, receives {channels}")
        if channels != 3:
            raise ShapeError(f"pipeline ends with {channels} channels, expected 3")

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    @property
    def param_layers(self) -> list[LayerSpec]:
        return [layer for layer in self.layers if layer.has_params]


def _conv_block(prefix: str, p: ConvParams) -> list[LayerSpec]:
    return [
        LayerSpec(f"{prefix}.conv", CONV, conv=p),
        LayerSpec(f"{prefix}.bn", BATCHNORM, channels=p.out_channels),
        LayerSpec(f"{prefix}.relu", RELU),
    ]


def _head() -> list[LayerSpec]:
    return [
        LayerSpec("up", UPSAMPLE),
        LayerSpec("out.conv", CONV, conv=ConvParams(32, 3, 1)),
        LayerSpec("out.hardtanh", HARDTANH),
    ]


def build_nbl() -> ModelSpec:
    return ModelSpec(
        NBL,
        tuple(
            _conv_block("enc", ConvParams(3, 64, 3, stride=2, padding=1))
            + _conv_block("dec", ConvParams(64, 32, 3, stride=1, padding=1))
            + _head()
        ),
    )


def build_fastnbl() -> ModelSpec:
    return ModelSpec(
        FASTNBL,
        tuple(
            _conv_block("enc", ConvParams(3, 32, 3, stride=2, padding=2, dilation=2))
            + _conv_block("dec", ConvParams(32, 32, 3, stride=1, padding=2, dilation=2, groups=32))
            + _head()
        ),
    )


def build(kind: str) -> ModelSpec:
    if kind == NBL:
        return build_nbl()
    if kind == FASTNBL:
        return build_fastnbl()
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def init_weights(spec: ModelSpec, seed: int = 42) -> Weights:
    """Kaiming-normal conv weights, zero biases, identity batchnorm."""
    weights: Weights = {}
    for i, layer in enumerate(spec.param_layers):
        if layer.kind == CONV:
            p = layer.conv
            fan_in = p.weight_shape[1] * p.kernel * p.kernel
            weights[layer.name] = {
                "weight": T.kaiming_init(p.weight_shape, fan_in, seed=[seed, i]),
                "bias": np.zeros(p.out_channels, np.float32),
            }
        else:
            fresh = BatchNormState.fresh(layer.channels)
            weights[layer.name] = {
                "gamma": fresh.gamma,
                "beta": fresh.beta,
                "running_mean": fresh.running_mean,
                "running_var": fresh.running_var,
            }
    return weights


def bn_state(layer: LayerSpec, params: dict) -> BatchNormState:
    return BatchNormState(
        params["gamma"], params["beta"], params["running_mean"], params["running_var"],
        eps=layer.eps, momentum=layer.momentum,
    )


def check_weights(spec: ModelSpec, weights: Weights) -> None:
    names = {layer.name for layer in spec.param_layers}
    extra = set(weights) - names
    if extra:
        raise ShapeError(f"weights contain layers not in the {spec.kind} spec: {sorted(extra)}")
    for layer in spec.param_layers:
        if layer.name not in weights:
            raise ShapeError(f"weights missing layer {layer.name!r}")
        for key, shape in expected_shapes(layer).items():
            got = weights[layer.name].get(key)
            if got is None or got.shape != shape:
                raise ShapeError(
                    f"{layer.name}.{key}: shape {None if got is None else got.shape} != expected {shape}"
                )


def expected_shapes(layer: LayerSpec) -> dict[str, tuple]:
    if layer.kind == CONV:
        return {"weight": layer.conv.weight_shape, "bias": (layer.conv.out_channels,)}
    c = (layer.channels,)
    return {"gamma": c, "beta": c, "running_mean": c, "running_var": c}


def parameter_count(spec: ModelSpec) -> int:
    """Trainable parameters (running statistics excluded)."""
    total = 0
    for layer in spec.param_layers:
        if layer.kind == CONV:
            total += int(np.prod(layer.conv.weight_shape)) + layer.conv.out_channels
        else:
            total += 2 * layer.channels
    return total


def mac_count(spec: ModelSpec, height: int = 128, width: int = 128) -> int:
    """Convolution multiply-accumulates for one image."""
    total = 0
    h, w = height, width
    for layer in spec.layers:
        if layer.kind == CONV:
            total += layer.conv.macs(h, w)
            h, w = layer.conv.output_extent(h), layer.conv.output_extent(w)
        elif layer.kind == UPSAMPLE:
            h, w = 2 * h, 2 * w
    return total


@dataclass
class Tape:
    """Per-layer saved values from a training-mode forward pass."""

    saved: list = field(default_factory=list)
    bn_states: dict = field(default_factory=dict)


def forward(spec: ModelSpec, weights: Weights, x: np.ndarray, mode: str = "infer"):
    """Run the pipeline.

    ``mode="infer"`` returns the output; ``mode="train"`` returns
    ``(output, tape)`` where ``tape.bn_states`` holds the updated running
    statistics.  Weights are never modified.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    T.check_tensor(x)
    if x.shape[1] != 3:
        raise ShapeError(f"input must have 3 channels, got {x.shape[1]}")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"input height and width must be even, got {x.shape[2:]}")
    check_weights(spec, weights)
    training = mode == "train"
    tape = Tape()
    h = x
    for layer in spec.layers:
        inp = h
        saved = None
        if layer.kind == CONV:
            p = weights[layer.name]
            h = T.conv2d_forward(h, p["weight"], p["bias"], layer.conv)
        elif layer.kind == BATCHNORM:
            h, saved, new_state = T.batchnorm_forward(h, bn_state(layer, weights[layer.name]), training)
            if training:
                tape.bn_states[layer.name] = new_state
        elif layer.kind == RELU:
            h = T.relu(h)
        elif layer.kind == HARDTANH:
            h = T.hardtanh(h)
        elif layer.kind == UPSAMPLE:
            h = T.bilinear_upsample(h)
        else:
            raise ValueError(f"unknown layer kind {layer.kind!r}")
        if training:
            tape.saved.append((inp, saved))
    return (h, tape) if training else h


def backward(spec: ModelSpec, weights: Weights, tape: Tape, grad_out: np.ndarray):
    """Gradients of a scalar loss w.r.t. every trainable parameter and the input.

    Returns ``(grads, grad_input)`` with grads keyed like the weights mapping.
    """
    grads: dict = {}
    g = grad_out
    for layer, (inp, saved) in zip(reversed(spec.layers), reversed(tape.saved)):
        if layer.kind == CONV:
            gi, gw, gb = T.conv2d_backward(inp, weights[layer.name]["weight"], layer.conv, g)
            grads[layer.name] = {"weight": gw, "bias": gb}
            g = gi
        elif layer.kind == BATCHNORM:
            g, gg, gb = T.batchnorm_backward(saved, g)
            grads[layer.name] = {"gamma": gg, "beta": gb}
        elif layer.kind == RELU:
            g = T.relu_backward(inp, g)
        elif layer.kind == HARDTANH:
            g = T.hardtanh_backward(inp, g)
        elif layer.kind == UPSAMPLE:
            g = T.bilinear_upsample_backward(g)
    return grads, g


def fuse_conv_bn(spec: ModelSpec, weights: Weights) -> tuple[ModelSpec, Weights]:
    """Fold each inference-mode batchnorm into the conv before it."""
    check_weights(spec, weights)
    layers: list[LayerSpec] = []
    fused: Weights = {}
    prev = None
    for layer in spec.layers:
        if layer.kind == BATCHNORM:
            if prev is None or prev.kind != CONV:
                raise ValueError(f"batchnorm {layer.name!r} does not follow a conv layer")
            bn = weights[layer.name]
            conv = fused[prev.name]
            scale = bn["gamma"].astype(np.float64) / np.sqrt(bn["running_var"].astype(np.float64) + layer.eps)
            w = conv["weight"].astype(np.float64) * scale[:, None, None, None]
            b = (conv["bias"].astype(np.float64) - bn["running_mean"]) * scale + bn["beta"]
            fused[prev.name] = {"weight": w.astype(np.float32), "bias": b.astype(np.float32)}
        else:
            layers.append(layer)
            if layer.kind == CONV:
                fused[layer.name] = {k: v.copy() for k, v in weights[layer.name].items()}
        prev = layer
    return ModelSpec(spec.kind, tuple(layers), fused=True), fused


def infer_image(spec: ModelSpec, weights: Weights, image: np.ndarray) -> np.ndarray:
    """(H, W, 3) image -> (H, W, 3) mask clamped to [0, 1]."""
    x = np.ascontiguousarray(image.transpose(2, 0, 1)[None], dtype=np.float32)
    y = forward(spec, weights, x, mode="infer")
    return np.clip(y[0].transpose(1, 2, 0), 0.0, 1.0)
