"""Supervised training of the bloom networks: MSE loss, Adam, seeded shuffling."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .models import NBL, ModelSpec, Weights, build, forward, backward, init_weights
from .weights_io import save_weights

TRAINABLE = {"conv": ("weight", "bias"), "batchnorm": ("gamma", "beta")}


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    model: str = NBL
    batch_size: int = 32
    learning_rate: float = 0.0002
    epochs: int = 1500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 42
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        if self.checkpoint_every and not self.checkpoint_dir:
            raise ValueError("checkpoint_every needs a checkpoint_dir")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    elapsed: float


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target.astype(pred.dtype)
    n = diff.size
    return float(np.mean(np.square(diff, dtype=np.float64))), (2.0 / n) * diff


def trainable_keys(spec: ModelSpec) -> list[tuple[str, str]]:
    return [(layer.name, k) for layer in spec.param_layers for k in TRAINABLE[layer.kind]]


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update over flat ``{key: array}`` mappings.

    Pure: returns new parameter and state objects, inputs are left untouched.
    """
    t = state.step + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_params, m_out, v_out = {}, {}, {}
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {key} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(key, np.zeros_like(p))
        v = state.v.get(key, np.zeros_like(p))
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_params[key] = (p - step).astype(p.dtype)
        m_out[key], v_out[key] = m.astype(p.dtype), v.astype(p.dtype)
    return new_params, AdamState(m_out, v_out, t)


def _to_nchw(images: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(images.transpose(0, 3, 1, 2), dtype=np.float32)


def evaluate_loss(spec: ModelSpec, weights: Weights, inputs: np.ndarray, targets: np.ndarray,
                  batch_size: int = 32) -> float:
    """Mean MSE of raw inference-mode outputs against targets (NHWC arrays)."""
    total = 0.0
    for start in range(0, len(inputs), batch_size):
        y = forward(spec, weights, _to_nchw(inputs[start:start + batch_size]), mode="infer")
        t = _to_nchw(targets[start:start + batch_size])
        total += float(np.sum(np.square(y - t, dtype=np.float64)))
    return total / (inputs.size)


def format_history(history: list[EpochRecord]) -> str:
    lines = ["# epoch train_mse val_mse"]
    lines += [f"{r.epoch} {r.train_mse:.8g} {r.val_mse:.8g}" for r in history]
    return "\n".join(lines) + "\n"


def write_checkpoint(spec: ModelSpec, weights: Weights, history: list[EpochRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_weights(spec, weights, path)
    path.with_suffix(".history.txt").write_text(format_history(history))


def train(config: TrainConfig, train_ds, val_ds=None, weights: Weights | None = None,
          log: Callable[[EpochRecord], None] | None = None) -> tuple[Weights, list[EpochRecord]]:
    """Train ``config.model`` on a PairedDataset, return final weights and history.

    The returned weights carry the accumulated running batchnorm statistics, so
    they are ready for inference-mode forward passes and fusion.
    """
    n = len(train_ds)
    if n == 0:
        raise ValueError("training set is empty")
    if config.batch_size > n:
        raise ValueError(f"batch_size {config.batch_size} exceeds training set size {n}")
    spec = build(config.model)
    weights = init_weights(spec, config.seed) if weights is None else {
        name: {k: v.copy() for k, v in entry.items()} for name, entry in weights.items()
    }
    keys = trainable_keys(spec)
    x_all = _to_nchw(train_ds.inputs)
    t_all = _to_nchw(train_ds.targets)
    rng = np.random.default_rng(config.seed)
    state = AdamState()
    history: list[EpochRecord] = []
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        sq_sum = 0.0
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            y, tape = forward(spec, weights, x_all[idx], mode="train")
            loss, grad = mse_loss(y, t_all[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss} at epoch {epoch}, batch {b}")
            sq_sum += loss * len(idx)
            grads, _ = backward(spec, weights, tape, grad)
            params = {key: weights[key[0]][key[1]] for key in keys}
            flat = {key: grads[key[0]][key[1]] for key in keys}
            params, state = adam_step(params, flat, state, config.learning_rate,
                                      config.beta1, config.beta2, config.eps)
            for (name, k), value in params.items():
                weights[name][k] = value
            for name, bn in tape.bn_states.items():
                weights[name]["running_mean"] = bn.running_mean
                weights[name]["running_var"] = bn.running_var
        val = evaluate_loss(spec, weights, val_ds.inputs, val_ds.targets) if val_ds is not None and len(val_ds) else math.nan
        record = EpochRecord(epoch, sq_sum / n, val, time.perf_counter() - start)
        history.append(record)
        if log is not None:
            log(record)
        if config.checkpoint_every and epoch % config.checkpoint_every == 0:
            write_checkpoint(spec, weights, history, Path(config.checkpoint_dir) / f"epoch_{epoch:04d}.nblw")
    return weights, history
