import hashlib

import numpy as np
import pytest

from neural_bloom.bloom import BloomParams, bloom_mask, luminance
from neural_bloom.ppm import PPMError, decode, encode, quantize, read_ppm, write_ppm
from neural_bloom.scenes import (
    Background,
    CameraPath,
    Emitter,
    PairedSample,
    SceneSpec,
    build_dataset,
    generate_scene,
    load_dataset,
    make_pair,
    read_pair,
    render_frame,
    scene_seed,
    write_pair,
)


class TestPPM:
    def test_round_trip_quantized(self, tmp_path):
        img = quantize(np.random.default_rng(0).random((5, 7, 3)))
        write_ppm(tmp_path / "a.ppm", img)
        back = read_ppm(tmp_path / "a.ppm")
        assert back.dtype == np.float32 and back.tobytes() == img.tobytes()

    def test_header(self):
        data = encode(np.zeros((2, 3, 3)))
        assert data.startswith(b"P6\n3 2\n255\n") and len(data) == 11 + 18

    def test_comments_and_whitespace(self):
        raster = bytes(range(12))
        img = decode(b"P6 # comment\n2\t2\n# another\n255\n" + raster)
        assert img.shape == (2, 2, 3) and img[0, 0, 1] == np.float32(1) / np.float32(255)

    @pytest.mark.parametrize(
        "data",
        [b"P5\n1 1\n255\n\x00", b"P6\n2 2\n255\n\x00\x00", b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00", b"P6\n1"],
        ids=["magic", "short-raster", "maxval", "truncated-header"],
    )
    def test_malformed(self, data):
        with pytest.raises(PPMError):
            decode(data)

    def test_quantize_idempotent(self):
        img = np.random.default_rng(1).random((4, 4, 3)) * 1.4 - 0.2
        q = quantize(img)
        assert q.min() >= 0 and q.max() <= 1
        assert quantize(q).tobytes() == q.tobytes()


class TestGenerateScene:
    def test_deterministic(self):
        assert generate_scene(123) == generate_scene(123)

    def test_emitter_count_varies(self):
        counts = {len(generate_scene(s).emitters) for s in range(100)}
        assert counts <= set(range(1, 7)) and len(counts) > 1

    @pytest.mark.parametrize("seed", range(50))
    def test_bright_emitter_present(self, seed):
        assert any(e.peak_luminance > 0.9 for e in generate_scene(seed).emitters)

    def test_view_stays_on_canvas(self):
        for s in range(50):
            cam = generate_scene(s).camera
            for t in np.linspace(0, 1, 11):
                cx, cy, w = cam.at(t)
                assert w / 2 <= cx <= 2 - w / 2 and w / 2 <= cy <= 2 - w / 2


class TestRenderFrame:
    def test_range_and_shape(self):
        img = render_frame(generate_scene(3), 0.4)
        assert img.shape == (128, 128, 3) and img.dtype == np.float32
        assert img.min() >= 0 and img.max() <= 1

    def test_path_moves(self):
        sc = generate_scene(4)
        assert np.abs(render_frame(sc, 0.0) - render_frame(sc, 1.0)).max() > 0.01

    def test_deterministic(self):
        sc = generate_scene(5)
        assert render_frame(sc, 0.3).tobytes() == render_frame(sc, 0.3).tobytes()

    def test_centered_disk_peak(self):
        sc = SceneSpec(
            seed=0,
            background=Background((0.1, 0.1, 0.1), (0.2, 0.2, 0.2), 0.0, ((0.0, 0.0), (0.0, 0.0))),
            emitters=(Emitter("disk", (1.0, 1.0), (0.05, 0.0), 0.0, (1.0, 1.0, 1.0), 0.1),),
            camera=CameraPath((1.0, 1.0), (1.0, 1.0), (1.0, 1.0)),
        )
        lum = luminance(render_frame(sc, 0.0))
        peak = np.unravel_index(np.argmax(lum), lum.shape)
        assert peak in {(63, 63), (63, 64), (64, 63), (64, 64)}

    def test_t_out_of_range(self):
        with pytest.raises(ValueError):
            render_frame(generate_scene(0), 1.5)

    @pytest.mark.parametrize("seed", range(10))
    def test_scene_spans_threshold(self, seed):
        sc = generate_scene(scene_seed(42, seed))
        lum = np.stack([luminance(render_frame(sc, t)) for t in np.linspace(0, 1, 6)])
        assert (lum > 0.9).any() and (lum <= 0.9).any()


class TestPairs:
    def test_round_trip(self, tmp_path):
        pair = make_pair(render_frame(generate_scene(1), 0.5), BloomParams())
        write_pair(pair, tmp_path / "p.ppm")
        back = read_pair(tmp_path / "p.ppm")
        assert back.input.tobytes() == pair.input.tobytes()
        assert back.target.tobytes() == pair.target.tobytes()

    def test_extent_on_disk(self, tmp_path):
        pair = make_pair(render_frame(generate_scene(1), 0.5), BloomParams())
        write_pair(pair, tmp_path / "p.ppm")
        assert read_ppm(tmp_path / "p.ppm").shape == (128, 256, 3)

    def test_left_input_right_mask(self, tmp_path):
        pair = make_pair(render_frame(generate_scene(2), 0.0), BloomParams())
        write_pair(pair, tmp_path / "p.ppm")
        img = read_ppm(tmp_path / "p.ppm")
        assert img[:, :128].tobytes() == pair.input.tobytes()

    def test_single_frame_file_rejected(self, tmp_path):
        write_ppm(tmp_path / "s.ppm", np.zeros((128, 128, 3)))
        with pytest.raises(PPMError):
            read_pair(tmp_path / "s.ppm")

    def test_wrong_extent_rejected_on_write(self, tmp_path):
        with pytest.raises(ValueError):
            write_pair(PairedSample(np.zeros((64, 64, 3)), np.zeros((64, 64, 3))), tmp_path / "x.ppm")

    def test_target_is_bloom_of_input(self):
        pair = make_pair(render_frame(generate_scene(6), 0.2), BloomParams())
        assert pair.target.tobytes() == quantize(bloom_mask(pair.input)).tobytes()


def _tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


class TestDataset:
    def test_counts_and_manifest(self, tmp_path):
        m = build_dataset(2, 4, BloomParams(), tmp_path / "d", seed=7)
        assert len(m.paths) == 8
        text = (tmp_path / "d" / "manifest.txt").read_text()
        assert "seed=7" in text and "threshold=0.9" in text and "scene_001/frame_0003.ppm" in text
        ds = load_dataset(tmp_path / "d")
        assert len(ds) == 8 and ds.params == BloomParams()
        assert ds.scene_ids.tolist() == [0] * 4 + [1] * 4

    def test_deterministic_bytes(self, tmp_path):
        build_dataset(2, 3, BloomParams(), tmp_path / "a", seed=11)
        build_dataset(2, 3, BloomParams(), tmp_path / "b", seed=11)
        assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")
        build_dataset(2, 3, BloomParams(), tmp_path / "c", seed=12)
        assert _tree_digest(tmp_path / "a") != _tree_digest(tmp_path / "c")

    def test_refuses_existing_manifest(self, tmp_path):
        build_dataset(1, 1, BloomParams(), tmp_path / "d")
        with pytest.raises(FileExistsError):
            build_dataset(1, 1, BloomParams(), tmp_path / "d")
        build_dataset(1, 2, BloomParams(), tmp_path / "d", overwrite=True)
        assert len(load_dataset(tmp_path / "d")) == 2

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            build_dataset(1, 1, BloomParams(), blocker / "sub")

    def test_targets_match_bloom_oracle(self, tmp_path):
        params = BloomParams(scatter=0.7)
        build_dataset(4, 8, params, tmp_path / "d", seed=3)
        ds = load_dataset(tmp_path / "d")
        assert ds.params == params
        for i in range(len(ds)):
            assert ds.targets[i].tobytes() == quantize(bloom_mask(ds.inputs[i], params)).tobytes()

    def test_split_by_scene(self, tmp_path):
        build_dataset(10, 2, BloomParams(), tmp_path / "d")
        train, val = load_dataset(tmp_path / "d").split()
        assert set(val.scene_ids) == {9} and 9 not in set(train.scene_ids)
        assert len(train) == 18 and len(val) == 2

    def test_split_single_scene_holds_out_path_tail(self, tmp_path):
        build_dataset(2, 10, BloomParams(), tmp_path / "d")
        train, val = load_dataset(tmp_path / "d").split(scene=1)
        assert set(train.scene_ids) == set(val.scene_ids) == {1}
        assert train.paths[-1] == "scene_001/frame_0008.ppm" and val.paths == ["scene_001/frame_0009.ppm"]

    def test_missing_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "nope")
