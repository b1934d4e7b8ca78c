"""Mask quality (per-image MSE) and latency benchmarking with trimmed repetitions."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .ppm import quantize

PERCENTILES = (1, 5, 25, 50, 75, 95, 99)
ROWS = tuple(f"p{p:02d}" for p in PERCENTILES) + ("average",)

Producer = Callable[[np.ndarray], np.ndarray]


class BenchError(RuntimeError):
    pass


def percentile(values, p: float) -> float:
    """Nearest rank: element ceil(p/100 * n) - 1 of the sorted values, clamped."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("percentile of an empty sample")
    if not 0 <= p <= 100:
        raise ValueError(f"p must lie in [0, 100], got {p}")
    k = math.ceil(p / 100.0 * v.size) - 1
    return float(v[min(max(k, 0), v.size - 1)])


@dataclass(frozen=True)
class EvalReport:
    method: str
    dataset: str
    per_image: np.ndarray
    paths: tuple[str, ...] = ()

    @property
    def average(self) -> float:
        return float(np.mean(self.per_image))

    @property
    def p99(self) -> float:
        return percentile(self.per_image, 99)

    @property
    def p50(self) -> float:
        return percentile(self.per_image, 50)

    def worst(self, count: int = 5) -> list[tuple[str, float]]:
        order = np.argsort(self.per_image, kind="stable")[::-1][:count]
        return [(self.paths[i] if self.paths else str(i), float(self.per_image[i])) for i in order]


def eval_mse(producer: Producer, dataset, method: str = "", dataset_id: str | None = None) -> EvalReport:
    """Per-image MSE of producer masks against the stored 8-bit targets.

    Masks are snapped to the same 8-bit grid as the targets before comparison,
    so a producer that reproduces the target pipeline scores exactly zero.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    root = str(dataset.root) if dataset_id is None and dataset.root is not None else (dataset_id or "")
    mse = np.empty(n)
    for i in range(n):
        mask = np.asarray(producer(dataset.inputs[i]))
        target = dataset.targets[i]
        if mask.shape != target.shape:
            raise ValueError(f"{dataset.paths[i]}: producer returned {mask.shape}, target is {target.shape}")
        d = quantize(mask).astype(np.float64) - target
        mse[i] = np.mean(d * d)
    return EvalReport(method, root, mse, tuple(dataset.paths))


@dataclass(frozen=True)
class BenchStats:
    """Latency summary in ms: nearest-rank percentiles and the average.

    Built from per-image trimmed means with ``from_samples``; summaries taken
    from elsewhere (published tables) can be passed in directly.
    """

    method: str
    percentiles: dict  # {1: ms, 5: ms, ...}
    average: float
    per_image: np.ndarray | None = None
    samples_per_image: int = 0

    @classmethod
    def from_samples(cls, method: str, per_image, samples_per_image: int = 0) -> "BenchStats":
        v = np.asarray(per_image, dtype=np.float64)
        if v.size == 0:
            raise ValueError("no per-image latencies")
        return cls(method, {p: percentile(v, p) for p in PERCENTILES}, float(v.mean()), v, samples_per_image)

    def renamed(self, method: str) -> "BenchStats":
        return replace(self, method=method)

    def row(self, name: str) -> float:
        return self.average if name == "average" else self.percentiles[int(name[1:])]

    def rows(self) -> dict[str, float]:
        return {name: self.row(name) for name in ROWS}

    @property
    def is_consistent(self) -> bool:
        """Percentiles non-decreasing in p and the average inside [p01, p99]."""
        ps = [self.percentiles[p] for p in PERCENTILES]
        return all(a <= b for a, b in zip(ps, ps[1:])) and ps[0] <= self.average <= ps[-1]


def trimmed_mean(samples: Sequence[float], trim: float) -> tuple[float, int]:
    """Mean after dropping ceil(trim * n) values from each tail; returns (mean, kept)."""
    s = np.sort(np.asarray(samples, dtype=np.float64))
    drop = math.ceil(trim * len(s) - 1e-9)
    kept = s[drop: len(s) - drop]
    if kept.size == 0:
        raise ValueError(f"trim {trim} leaves no samples out of {len(s)}")
    return float(kept.mean()), int(kept.size)


def bench(producer: Producer, images: Sequence[np.ndarray], reps: int = 50, trim: float = 0.02,
          warmup: int = 5, method: str = "", ids: Sequence[str] | None = None,
          clock: Callable[[], float] = time.perf_counter) -> BenchStats:
    """Time ``producer`` on each image: warmup calls, then ``reps`` timed calls.

    Per image the ceil(trim * reps) fastest and slowest runs are dropped and the
    rest averaged; percentiles are taken across the per-image values.
    """
    if reps < 3:
        raise ValueError("reps must be >= 3")
    if not 0 <= trim < 0.5:
        raise ValueError("trim must lie in [0, 0.5)")
    if len(images) == 0:
        raise ValueError("no images to benchmark")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(images))]
    per_image = np.empty(len(images))
    kept = 0
    times = np.empty(reps)
    for i, img in enumerate(images):
        try:
            for _ in range(warmup):
                producer(img)
            for r in range(reps):
                t0 = clock()
                producer(img)
                times[r] = clock() - t0
        except Exception as exc:
            raise BenchError(f"{method or 'producer'} failed on image {ids[i]}: {exc}") from exc
        per_image[i], kept = trimmed_mean(times * 1e3, trim)
    return BenchStats.from_samples(method, per_image, kept)


def speedups(stats: Sequence[BenchStats]) -> list[tuple[str, str, float]]:
    """(fastest, other, percent) for the fastest method against every other one."""
    if len(stats) < 2:
        return []
    best = min(stats, key=lambda s: s.average)
    return [(best.method, s.method, (s.average - best.average) / s.average * 100.0)
            for s in stats if s is not best]


def _table(columns: list[str], rows: list[tuple[str, list[str]]]) -> list[str]:
    widths = [max(len("metric"), *(len(name) for name, _ in rows))]
    for j, col in enumerate(columns):
        widths.append(max(len(col), *(len(cells[j]) for _, cells in rows)))
    fmt = lambda cells: "  ".join([cells[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(cells[1:], widths[1:])])
    lines = [fmt(["metric"] + columns)]
    lines.append("-" * len(lines[0]))
    lines += [fmt([name] + cells) for name, cells in rows]
    return lines


def render_report(entries: Sequence[tuple[str, BenchStats | EvalReport]]) -> str:
    """Aligned text tables: latency rows p01..p99 + average (ms), then MSE rows."""
    if not entries:
        raise ValueError("nothing to report")
    bench_entries = [(m, s) for m, s in entries if isinstance(s, BenchStats)]
    eval_entries = [(m, s) for m, s in entries if isinstance(s, EvalReport)]
    lines: list[str] = []
    if bench_entries:
        lines.append("latency (ms)")
        rows = [(name, [f"{s.row(name):.5f}" for _, s in bench_entries]) for name in ROWS]
        lines += _table([m for m, _ in bench_entries], rows)
        named = [s.renamed(m) for m, s in bench_entries]
        for a, b, pct in speedups(named):
            lines.append(f"{a} vs {b}: {pct:.1f}%")
    if eval_entries:
        if lines:
            lines.append("")
        lines.append("mse")
        rows = [
            ("average", [f"{r.average:.8f}" for _, r in eval_entries]),
            ("p99", [f"{r.p99:.8f}" for _, r in eval_entries]),
        ]
        lines += _table([m for m, _ in eval_entries], rows)
    return "\n".join(lines) + "\n"


def render_records(entries: Sequence[tuple[str, BenchStats | EvalReport]]) -> str:
    """Machine-readable companion: one ``key=value`` record per line."""
    out = []
    for method, s in entries:
        if isinstance(s, BenchStats):
            fields = {"kind": "latency", "method": method,
                      "images": 0 if s.per_image is None else len(s.per_image),
                      "samples_per_image": s.samples_per_image}
            fields.update({name: f"{v:.8g}" for name, v in s.rows().items()})
        else:
            fields = {"kind": "mse", "method": method, "images": len(s.per_image),
                      "average_mse": f"{s.average:.8g}", "p99_mse": f"{s.p99:.8g}"}
        out.append(" ".join(f"{k}={v}" for k, v in fields.items()))
    named = [s.renamed(m) for m, s in entries if isinstance(s, BenchStats)]
    for a, b, pct in speedups(named):
        out.append(f"kind=speedup method={a} baseline={b} percent={pct:.1f}")
    return "\n".join(out) + "\n"
