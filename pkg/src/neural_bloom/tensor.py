"""Dense NCHW tensor ops with hand-written backward passes.

Tensors are plain numpy arrays of shape (N, C, H, W).  Every op keeps the
dtype of its input, so the float32 training path and the float64 path used by
gradient checks share one implementation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ConvParams:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    dilation: int = 1
    groups: int = 1

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel", "stride", "dilation", "groups"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.padding < 0:
            raise ValueError(f"padding must be non-negative, got {self.padding}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError(
                f"groups={self.groups} must divide in_channels={self.in_channels} "
                f"and out_channels={self.out_channels}"
            )

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, self.kernel, self.kernel)

    def output_extent(self, size: int) -> int:
        eff = self.dilation * (self.kernel - 1) + 1
        return (size + 2 * self.padding - eff) // self.stride + 1

    def macs(self, height: int, width: int) -> int:
        """Multiply-accumulates for one image of the given input extent."""
        ho, wo = self.output_extent(height), self.output_extent(width)
        per_out = (self.in_channels // self.groups) * self.kernel * self.kernel
        return self.out_channels * ho * wo * per_out


@dataclass(frozen=True)
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        c = len(self.gamma)
        for name in ("beta", "running_mean", "running_var"):
            if len(getattr(self, name)) != c:
                raise ShapeError(f"batchnorm {name} has length {len(getattr(self, name))}, expected {c}")
        if self.eps <= 0:
            raise ValueError("batchnorm eps must be positive")
        if not 0 < self.momentum <= 1:
            raise ValueError("batchnorm momentum must lie in (0, 1]")
        if np.any(self.running_var < 0):
            raise ValueError("batchnorm running_var must be non-negative")

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32, eps: float = 1e-5, momentum: float = 0.1):
        return cls(
            gamma=np.ones(channels, dtype),
            beta=np.zeros(channels, dtype),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
            eps=eps,
            momentum=momentum,
        )

    @property
    def channels(self) -> int:
        return len(self.gamma)


@dataclass(frozen=True)
class BatchStats:
    """What batchnorm_forward saves in training mode for the backward pass."""

    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray


def check_tensor(x: np.ndarray, name: str = "input") -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (N, C, H, W), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name} has an empty extent: {x.shape}")


# -- convolution ---------------------------------------------------------------

def _check_conv(x, weight, bias, p: ConvParams):
    check_tensor(x)
    if x.shape[1] != p.in_channels:
        raise ShapeError(f"input channel extent {x.shape[1]} != in_channels {p.in_channels}")
    if weight.shape != p.weight_shape:
        raise ShapeError(f"weight shape {weight.shape} != expected {p.weight_shape}")
    if bias is not None and bias.shape != (p.out_channels,):
        raise ShapeError(f"bias length {bias.shape} != out_channels {p.out_channels}")
    ho, wo = p.output_extent(x.shape[2]), p.output_extent(x.shape[3])
    if ho < 1 or wo < 1:
        raise ShapeError(f"non-positive output extent ({ho}, {wo}) for input {x.shape[2:]} and {p}")
    return ho, wo


def _im2col(xp: np.ndarray, p: ConvParams, ho: int, wo: int) -> np.ndarray:
    """(C, Hp, Wp) padded image -> (C, k, k, ho, wo) tap stack."""
    k, s, d = p.kernel, p.stride, p.dilation
    cols = np.empty((xp.shape[0], k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, i * d: i * d + s * (ho - 1) + 1: s, j * d: j * d + s * (wo - 1) + 1: s]
    return cols


def _col2im(cols: np.ndarray, p: ConvParams, hp: int, wp: int) -> np.ndarray:
    k, s, d = p.kernel, p.stride, p.dilation
    ho, wo = cols.shape[-2:]
    out = np.zeros((cols.shape[0], hp, wp), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, i * d: i * d + s * (ho - 1) + 1: s, j * d: j * d + s * (wo - 1) + 1: s] += cols[:, i, j]
    return out


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad)))


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None, p: ConvParams) -> np.ndarray:
    ho, wo = _check_conv(x, weight, bias, p)
    n = x.shape[0]
    g = p.groups
    w = weight.reshape(g, p.out_channels // g, -1)
    out = np.empty((n, p.out_channels, ho, wo), dtype=x.dtype)
    # one sample at a time keeps the column buffer small (NBL decoder: 576 x 4096)
    for b in range(n):
        cols = _im2col(_pad(x[b], p.padding), p, ho, wo).reshape(g, -1, ho * wo)
        out[b] = np.matmul(w, cols).reshape(p.out_channels, ho, wo)
    if bias is not None:
        out += bias.astype(x.dtype)[None, :, None, None]
    return out


def _transposed_kernel(weight: np.ndarray, p: ConvParams) -> np.ndarray:
    """Kernel whose stride-1 convolution maps grad_out back onto the input."""
    g, k = p.groups, p.kernel
    w = weight.reshape(g, p.out_channels // g, p.in_channels // g, k, k)
    w = w.transpose(0, 2, 1, 3, 4)[..., ::-1, ::-1]
    return np.ascontiguousarray(w.reshape(p.in_channels, p.out_channels // g, k, k))


def conv2d_backward(x: np.ndarray, weight: np.ndarray, p: ConvParams, grad_out: np.ndarray):
    """Returns (grad_input, grad_weight, grad_bias)."""
    ho, wo = _check_conv(x, weight, None, p)
    n = x.shape[0]
    if grad_out.shape != (n, p.out_channels, ho, wo):
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {(n, p.out_channels, ho, wo)}")
    g = p.groups
    w = weight.reshape(g, p.out_channels // g, -1)
    hp, wp = x.shape[2] + 2 * p.padding, x.shape[3] + 2 * p.padding
    reach = p.dilation * (p.kernel - 1)
    # stride 1: the input gradient is itself a convolution, which avoids col2im
    as_conv = p.stride == 1 and reach >= p.padding
    if as_conv:
        tp = replace(p, in_channels=p.out_channels, out_channels=p.in_channels, padding=reach - p.padding)
        grad_in = conv2d_forward(grad_out, _transposed_kernel(weight, p), None, tp)
    else:
        wt = np.ascontiguousarray(w.transpose(0, 2, 1))
        grad_in = np.empty_like(x)
    grad_w = np.zeros_like(w)
    for b in range(n):
        cols = _im2col(_pad(x[b], p.padding), p, ho, wo).reshape(g, -1, ho * wo)
        go = grad_out[b].reshape(g, -1, ho * wo)
        grad_w += np.matmul(go, cols.transpose(0, 2, 1))
        if not as_conv:
            gcols = np.matmul(wt, go).reshape(p.in_channels, p.kernel, p.kernel, ho, wo)
            gpad = _col2im(gcols, p, hp, wp)
            grad_in[b] = gpad[:, p.padding: hp - p.padding, p.padding: wp - p.padding]
    grad_b = grad_out.sum(axis=(0, 2, 3))
    return grad_in, grad_w.reshape(weight.shape), grad_b


# -- batch normalization -------------------------------------------------------

def batchnorm_forward(x: np.ndarray, state: BatchNormState, training: bool):
    """Returns (output, batch_stats, new_state).

    In inference mode ``batch_stats`` is None and ``new_state`` is ``state``.
    Running variance is updated with the unbiased batch variance.
    """
    check_tensor(x)
    c = x.shape[1]
    if c != state.channels:
        raise ShapeError(f"input has {c} channels, batchnorm state has {state.channels}")
    dt = x.dtype
    gamma = state.gamma.astype(dt)
    beta = state.beta.astype(dt)
    if not training:
        inv_std = 1.0 / np.sqrt(state.running_var.astype(dt) + dt.type(state.eps))
        scale = gamma * inv_std
        shift = beta - state.running_mean.astype(dt) * scale
        return x * scale[None, :, None, None] + shift[None, :, None, None], None, state

    m = x.shape[0] * x.shape[2] * x.shape[3]
    if m < 2:
        raise ShapeError("training-mode batchnorm needs more than one value per channel")
    mean = x.mean(axis=(0, 2, 3))
    centered = x - mean[None, :, None, None]
    var = (centered * centered).mean(axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + dt.type(state.eps))
    xhat = centered * inv_std[None, :, None, None]
    out = xhat * gamma[None, :, None, None] + beta[None, :, None, None]

    mom = state.momentum
    sdt = state.running_mean.dtype
    new_state = replace(
        state,
        running_mean=((1 - mom) * state.running_mean + mom * mean).astype(sdt),
        running_var=((1 - mom) * state.running_var + mom * var * (m / (m - 1))).astype(sdt),
    )
    return out, BatchStats(xhat=xhat, inv_std=inv_std, gamma=gamma), new_state


def batchnorm_backward(stats: BatchStats | None, grad_out: np.ndarray):
    """Returns (grad_input, grad_gamma, grad_beta)."""
    if stats is None:
        raise ValueError("batchnorm_backward needs statistics from a training-mode forward")
    if grad_out.shape != stats.xhat.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != saved activation shape {stats.xhat.shape}")
    m = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_gamma = (grad_out * stats.xhat).sum(axis=(0, 2, 3))
    k = (stats.gamma * stats.inv_std / m)[None, :, None, None]
    grad_in = k * (m * grad_out - grad_beta[None, :, None, None] - stats.xhat * grad_gamma[None, :, None, None])
    return grad_in.astype(grad_out.dtype), grad_gamma, grad_beta


# -- activations ---------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype)


def hardtanh(x: np.ndarray) -> np.ndarray:
    return np.clip(x, -1, 1)


def hardtanh_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return np.where((x > -1) & (x < 1), grad_out, 0).astype(grad_out.dtype)


# -- bilinear x2 upsampling ----------------------------------------------------
# Half-pixel centres with edge clamping: output 2i samples input i - 1/4 and
# 2i + 1 samples i + 1/4, i.e. weights (1/4, 3/4) and (3/4, 1/4).

def _axis_slice(ndim: int, axis: int, s: slice) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


def _up_axis(x: np.ndarray, axis: int) -> np.ndarray:
    n = x.shape[axis]
    shape = list(x.shape)
    shape[axis] = 2 * n
    out = np.empty(shape, dtype=x.dtype)
    at = lambda s: _axis_slice(x.ndim, axis, s)
    even, odd = out[at(slice(0, None, 2))], out[at(slice(1, None, 2))]
    np.multiply(x, 0.75, out=even)
    np.multiply(x, 0.75, out=odd)
    # even[i] += x[max(i-1, 0)] / 4, odd[i] += x[min(i+1, n-1)] / 4
    even[at(slice(1, None))] += 0.25 * x[at(slice(0, n - 1))]
    even[at(slice(0, 1))] += 0.25 * x[at(slice(0, 1))]
    odd[at(slice(0, n - 1))] += 0.25 * x[at(slice(1, None))]
    odd[at(slice(n - 1, n))] += 0.25 * x[at(slice(n - 1, n))]
    return out


def _up_axis_backward(g: np.ndarray, axis: int) -> np.ndarray:
    n = g.shape[axis] // 2
    at = lambda s: _axis_slice(g.ndim, axis, s)
    even, odd = g[at(slice(0, None, 2))], g[at(slice(1, None, 2))]
    out = even + odd
    out *= 0.75
    out[at(slice(0, n - 1))] += 0.25 * even[at(slice(1, None))]
    out[at(slice(1, None))] += 0.25 * odd[at(slice(0, n - 1))]
    out[at(slice(0, 1))] += 0.25 * even[at(slice(0, 1))]
    out[at(slice(n - 1, n))] += 0.25 * odd[at(slice(n - 1, n))]
    return out


def bilinear_upsample(x: np.ndarray, scale: int = 2) -> np.ndarray:
    if scale != 2:
        raise ValueError("only scale factor 2 is supported")
    check_tensor(x)
    # width first: the row pass then writes whole contiguous rows of the larger array
    return _up_axis(_up_axis(x, 3), 2)


def bilinear_upsample_backward(grad_out: np.ndarray, scale: int = 2) -> np.ndarray:
    if scale != 2:
        raise ValueError("only scale factor 2 is supported")
    check_tensor(grad_out, "grad_out")
    if grad_out.shape[2] % 2 or grad_out.shape[3] % 2:
        raise ShapeError(f"grad_out spatial extent {grad_out.shape[2:]} is not a 2x upsample")
    return _up_axis_backward(_up_axis_backward(grad_out, 2), 3)


# -- initialization ------------------------------------------------------------

def kaiming_init(shape, fan_in: int, seed, dtype=np.float32) -> np.ndarray:
    """He-normal samples: zero mean, variance 2 / fan_in."""
    if fan_in <= 0:
        raise ValueError("fan_in must be positive")
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape).astype(dtype)
