"""Procedural viewport scenes with bright emitters, and the paired dataset on disk.

A scene lives on a 2x2-unit canvas.  The camera pans (and zooms) along a
short path inside it and each frame is a 128x128 view.  Targets are the
classic bloom mask of the quantized frame, so training and evaluation share
one ground truth.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .bloom import BloomParams, bloom_mask, luminance
from .ppm import PPMError, decode, encode, quantize

FRAME = 128
CANVAS = 2.0
SHAPES = ("disk", "rectangle", "line")
MANIFEST = "manifest.txt"
MANIFEST_TAG = "# neural-bloom dataset v1"


@dataclass(frozen=True)
class Emitter:
    shape: str
    center: tuple[float, float]
    size: tuple[float, float]  # disk: (radius, -); rectangle: half extents; line: (half length, thickness)
    angle: float
    color: tuple[float, float, float]
    softness: float

    @property
    def peak_luminance(self) -> float:
        return float(luminance(np.minimum(self.color, 1.0)))


@dataclass(frozen=True)
class Occluder:
    shape: str
    center: tuple[float, float]
    size: tuple[float, float]
    angle: float
    shade: float


@dataclass(frozen=True)
class Background:
    top: tuple[float, float, float]
    bottom: tuple[float, float, float]
    noise: float
    noise_grid: tuple  # rows of a coarse value-noise lattice spanning the canvas


@dataclass(frozen=True)
class CameraPath:
    start: tuple[float, float]
    end: tuple[float, float]
    zoom: tuple[float, float]
    wobble: float = 0.0

    def at(self, t: float) -> tuple[float, float, float]:
        """(center x, center y, view width) at path parameter t."""
        sx, sy = self.start
        ex, ey = self.end
        dx, dy = ex - sx, ey - sy
        norm = math.hypot(dx, dy) or 1.0
        off = self.wobble * math.sin(2 * math.pi * t)
        cx = sx + t * dx - off * dy / norm
        cy = sy + t * dy + off * dx / norm
        zoom = self.zoom[0] + t * (self.zoom[1] - self.zoom[0])
        return cx, cy, 1.0 / zoom


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    background: Background
    emitters: tuple[Emitter, ...]
    occluders: tuple[Occluder, ...] = ()
    camera: CameraPath = field(default_factory=lambda: CameraPath((1.0, 1.0), (1.0, 1.0), (1.0, 1.0)))


@dataclass
class PairedSample:
    input: np.ndarray
    target: np.ndarray


def _bright_color(rng) -> tuple[float, float, float]:
    # HDR colour whose displayed (clipped) luminance clears the 0.9 threshold
    while True:
        hue = rng.uniform(0.55, 1.0, 3)
        hue[rng.integers(3)] = 1.0
        color = hue * rng.uniform(1.0, 2.0)
        if luminance(np.minimum(color, 1.0)) > 0.92:
            return tuple(float(c) for c in color)


def _dim_color(rng) -> tuple[float, float, float]:
    c = rng.uniform(0.2, 1.0, 3)
    gain = rng.uniform(0.3, 0.8) / float(luminance(c))
    return tuple(float(v) for v in np.minimum(c * gain, 1.0))


def _shape_size(rng, shape):
    if shape == "disk":
        return (float(rng.uniform(0.02, 0.12)), 0.0)
    if shape == "rectangle":
        return (float(rng.uniform(0.02, 0.15)), float(rng.uniform(0.02, 0.15)))
    return (float(rng.uniform(0.1, 0.3)), float(rng.uniform(0.01, 0.03)))


def generate_scene(seed: int) -> SceneSpec:
    rng = np.random.default_rng(seed)
    top = rng.uniform(0.05, 0.45, 3)
    bottom = rng.uniform(0.02, 0.35, 3)
    background = Background(
        top=tuple(map(float, top)),
        bottom=tuple(map(float, bottom)),
        noise=float(rng.uniform(0.02, 0.08)),
        noise_grid=tuple(tuple(map(float, row)) for row in rng.uniform(-1, 1, (9, 9))),
    )
    # view width <= 1/0.8 = 1.25, centers within [0.7, 1.3] keep the view on the canvas
    camera = CameraPath(
        start=tuple(map(float, rng.uniform(0.72, 1.28, 2))),
        end=tuple(map(float, rng.uniform(0.72, 1.28, 2))),
        zoom=tuple(map(float, rng.uniform(0.8, 1.25, 2))),
        wobble=float(rng.uniform(0.0, 0.02)),
    )
    emitters = []
    for i in range(int(rng.integers(1, 7))):
        shape = SHAPES[int(rng.integers(3))]
        # the first emitter is bright and sits near the camera path, so it is in view
        bright = i == 0 or rng.random() < 0.6
        if i == 0:
            cx, cy, _ = camera.at(float(rng.uniform(0.2, 0.8)))
            center = (cx + float(rng.uniform(-0.25, 0.25)), cy + float(rng.uniform(-0.25, 0.25)))
        else:
            center = tuple(map(float, rng.uniform(0.5, 1.5, 2)))
        emitters.append(
            Emitter(
                shape=shape,
                center=center,
                size=_shape_size(rng, shape),
                angle=float(rng.uniform(0, math.pi)),
                color=_bright_color(rng) if bright else _dim_color(rng),
                softness=float(rng.uniform(0.004, 0.03)),
            )
        )
    occluders = []
    for _ in range(int(rng.integers(0, 4))):
        shape = SHAPES[int(rng.integers(2))]
        occluders.append(
            Occluder(
                shape=shape,
                center=tuple(map(float, rng.uniform(0.3, 1.7, 2))),
                size=_shape_size(rng, shape),
                angle=float(rng.uniform(0, math.pi)),
                shade=float(rng.uniform(0.01, 0.15)),
            )
        )
    return SceneSpec(seed=seed, background=background, emitters=tuple(emitters), occluders=tuple(occluders), camera=camera)


def _signed_distance(shape, center, size, angle, x, y):
    px, py = x - center[0], y - center[1]
    if shape == "disk":
        return np.hypot(px, py) - size[0]
    c, s = math.cos(angle), math.sin(angle)
    u, v = c * px + s * py, -s * px + c * py
    if shape == "rectangle":
        qx, qy = np.abs(u) - size[0], np.abs(v) - size[1]
        outside = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0))
        return outside + np.minimum(np.maximum(qx, qy), 0)
    if shape == "line":
        along = np.clip(u, -size[0], size[0])
        return np.hypot(u - along, v) - size[1] / 2
    raise ValueError(f"unknown shape {shape!r}")


def _coverage(shape, center, size, angle, softness, x, y):
    d = _signed_distance(shape, center, size, angle, x, y)
    return np.clip(0.5 - d / softness, 0.0, 1.0)[..., None]


def _value_noise(grid, x, y):
    g = np.asarray(grid)
    n = g.shape[0] - 1
    gx = np.clip(x / CANVAS * n, 0, n - 1e-9)
    gy = np.clip(y / CANVAS * n, 0, n - 1e-9)
    ix, iy = gx.astype(int), gy.astype(int)
    fx, fy = gx - ix, gy - iy
    fx, fy = fx * fx * (3 - 2 * fx), fy * fy * (3 - 2 * fy)
    top = g[iy, ix] * (1 - fx) + g[iy, ix + 1] * fx
    bot = g[iy + 1, ix] * (1 - fx) + g[iy + 1, ix + 1] * fx
    return top * (1 - fy) + bot * fy


def render_frame(scene: SceneSpec, t: float, size: int = FRAME) -> np.ndarray:
    """Render the view at path parameter t as an (size, size, 3) float32 image in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"path parameter t={t} outside [0, 1]")
    cx, cy, width = scene.camera.at(t)
    u = (np.arange(size) + 0.5) / size - 0.5
    x = cx + u[None, :] * width
    y = cy + u[:, None] * width
    x, y = np.broadcast_arrays(x, y)

    bg = scene.background
    ramp = np.clip(y / CANVAS, 0, 1)[..., None]
    img = np.asarray(bg.top) * (1 - ramp) + np.asarray(bg.bottom) * ramp
    img = img + bg.noise * _value_noise(bg.noise_grid, x, y)[..., None]
    for e in scene.emitters:
        a = _coverage(e.shape, e.center, e.size, e.angle, e.softness, x, y)
        img = img * (1 - a) + np.asarray(e.color) * a
    for o in scene.occluders:
        a = _coverage(o.shape, o.center, o.size, o.angle, 0.01, x, y)
        img = img * (1 - a) + o.shade * a
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def make_pair(frame: np.ndarray, params: BloomParams) -> PairedSample:
    """Quantize the frame and derive its quantized bloom target."""
    inp = quantize(frame)
    return PairedSample(input=inp, target=quantize(bloom_mask(inp, params)))


def encode_pair(sample: PairedSample) -> bytes:
    if sample.input.shape != (FRAME, FRAME, 3) or sample.target.shape != (FRAME, FRAME, 3):
        raise ValueError(
            f"pair halves must both be {FRAME}x{FRAME}x3, got {sample.input.shape} and {sample.target.shape}"
        )
    return encode(np.concatenate([sample.input, sample.target], axis=1))


def write_pair(sample: PairedSample, path) -> None:
    """Store as one 256x128 PPM: input in the left half, mask in the right."""
    Path(path).write_bytes(encode_pair(sample))


def decode_pair(data: bytes, source: str = "<bytes>") -> PairedSample:
    img = decode(data, source)
    if img.shape != (FRAME, 2 * FRAME, 3):
        raise PPMError(f"{source}: paired image must be {2 * FRAME}x{FRAME}, got {img.shape[1]}x{img.shape[0]}")
    return PairedSample(input=img[:, :FRAME].copy(), target=img[:, FRAME:].copy())


def read_pair(path) -> PairedSample:
    path = Path(path)
    return decode_pair(path.read_bytes(), str(path))


def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


@dataclass
class Manifest:
    seed: int
    scenes: int
    frames: int
    params: BloomParams
    paths: list[str]

    def dumps(self) -> str:
        lines = [MANIFEST_TAG, f"seed={self.seed}", f"scenes={self.scenes}", f"frames={self.frames}"]
        lines += [f"{k}={v!r}" for k, v in asdict(self.params).items()]
        lines.append("")
        lines += self.paths
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, source: str = MANIFEST) -> "Manifest":
        lines = text.splitlines()
        if not lines or lines[0] != MANIFEST_TAG:
            raise ValueError(f"{source}: not a dataset manifest")
        try:
            blank = lines.index("")
        except ValueError:
            raise ValueError(f"{source}: manifest has no path section") from None
        header = dict(line.split("=", 1) for line in lines[1:blank])
        kinds = {f.name: f.type for f in fields(BloomParams)}
        params = BloomParams(
            **{k: (int(header[k]) if kinds[k] in (int, "int") else float(header[k])) for k in kinds if k in header}
        )
        return cls(
            seed=int(header["seed"]),
            scenes=int(header["scenes"]),
            frames=int(header["frames"]),
            params=params,
            paths=[p for p in lines[blank + 1:] if p],
        )


def build_dataset(
    num_scenes: int,
    frames_per_scene: int,
    params: BloomParams,
    out_dir,
    seed: int = 42,
    overwrite: bool = False,
) -> Manifest:
    if num_scenes < 1 or frames_per_scene < 1:
        raise ValueError("need at least one scene and one frame")
    out = Path(out_dir)
    manifest_path = out / MANIFEST
    if manifest_path.exists() and not overwrite:
        raise FileExistsError(f"{manifest_path} already exists; pass overwrite to replace it")
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in range(num_scenes):
        scene = generate_scene(scene_seed(seed, s))
        (out / f"scene_{s:03d}").mkdir(exist_ok=True)
        for f in range(frames_per_scene):
            t = f / (frames_per_scene - 1) if frames_per_scene > 1 else 0.0
            rel = f"scene_{s:03d}/frame_{f:04d}.ppm"
            write_pair(make_pair(render_frame(scene, t), params), out / rel)
            paths.append(rel)
    manifest = Manifest(seed=seed, scenes=num_scenes, frames=frames_per_scene, params=params, paths=paths)
    manifest_path.write_text(manifest.dumps())
    return manifest


@dataclass
class PairedDataset:
    """All pairs of a dataset directory as (M, 128, 128, 3) float32 arrays."""

    inputs: np.ndarray
    targets: np.ndarray
    scene_ids: np.ndarray
    paths: list[str]
    params: BloomParams
    root: Path | None = None

    def __len__(self) -> int:
        return len(self.paths)

    def subset(self, index) -> "PairedDataset":
        index = np.asarray(index, dtype=int)
        return PairedDataset(
            self.inputs[index], self.targets[index], self.scene_ids[index],
            [self.paths[i] for i in index], self.params, self.root,
        )

    def split(self, val_fraction: float = 0.1, scene: int | None = None) -> tuple["PairedDataset", "PairedDataset"]:
        """Train/validation split.

        Several scenes split by scene (the last ones go to validation).  A single
        scene, or ``scene=k``, holds out the tail of the camera path instead.
        """
        idx = np.arange(len(self))
        if scene is not None:
            idx = idx[self.scene_ids == scene]
            if len(idx) == 0:
                raise ValueError(f"dataset has no scene {scene}")
        scenes = np.unique(self.scene_ids[idx])
        if len(scenes) > 1:
            n_val = max(1, int(round(val_fraction * len(scenes))))
            val_scenes = scenes[len(scenes) - n_val:]
            is_val = np.isin(self.scene_ids[idx], val_scenes)
            return self.subset(idx[~is_val]), self.subset(idx[is_val])
        n_val = int(round(val_fraction * len(idx)))
        if len(idx) - n_val < 1:
            raise ValueError("split leaves no training pairs")
        return self.subset(idx[: len(idx) - n_val]), self.subset(idx[len(idx) - n_val:])


def load_dataset(root) -> PairedDataset:
    root = Path(root)
    manifest_path = root / MANIFEST
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {root}")
    manifest = Manifest.loads(manifest_path.read_text(), str(manifest_path))
    if not manifest.paths:
        raise ValueError(f"{manifest_path} lists no pairs")
    n = len(manifest.paths)
    inputs = np.empty((n, FRAME, FRAME, 3), np.float32)
    targets = np.empty_like(inputs)
    for i, rel in enumerate(manifest.paths):
        pair = read_pair(root / rel)
        inputs[i], targets[i] = pair.input, pair.target
    scene_ids = np.array([int(p.split("/")[0].split("_")[1]) for p in manifest.paths])
    return PairedDataset(inputs, targets, scene_ids, list(manifest.paths), manifest.params, root)

