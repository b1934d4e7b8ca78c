import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neural_bloom.bloom import BloomParams, bloom_mask
from neural_bloom.evaluation import (
    PERCENTILES,
    ROWS,
    BenchError,
    BenchStats,
    bench,
    eval_mse,
    percentile,
    render_records,
    render_report,
    speedups,
    trimmed_mean,
)
from neural_bloom.scenes import build_dataset, load_dataset

# Published latency table (ms): FastNBL, NBL, classic bloom
TABLE2 = {
    "FastNBL": ([0.11677, 0.11741, 0.12054, 0.12361, 0.12546, 0.13017, 0.13985], 0.12352),
    "NBL": ([0.13277, 0.13387, 0.13735, 0.14011, 0.14268, 0.14882, 0.15896], 0.14053),
    "Unity3D Bloom": ([0.13610, 0.16129, 0.14319, 0.17317, 0.17555, 0.17831, 0.18020], 0.17253),
}


def table2_stats():
    return [(m, BenchStats(m, dict(zip(PERCENTILES, ps)), avg)) for m, (ps, avg) in TABLE2.items()]


def sort_index_oracle(values, p):
    s = sorted(values)
    k = math.ceil(p * len(s) / 100) - 1
    return s[min(max(k, 0), len(s) - 1)]


class TestPercentile:
    def test_examples(self):
        assert percentile([1, 2, 3], 50) == 2
        assert percentile([5, 1, 9], 100) == 9
        assert percentile([5, 1, 9], 0) == 1

    @pytest.mark.parametrize("positions", [(0, 1), (100, 201), (17, 150)])
    def test_tens_among_ones(self, positions):
        # 202 values: rank ceil(0.99 * 202) = 200 is still a one; the tens are ranks 201-202
        v = np.ones(202)
        v[list(positions)] = 10
        assert percentile(v, 99) == 1
        assert percentile(v, 99.5) == 10
        # with 98 ones the second-largest value is rank 99 of 100
        w = np.ones(100)
        w[[positions[0] % 100, 99 - positions[0] % 50]] = 10
        assert percentile(w, 99) == 10

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=300))
    @settings(max_examples=100, deadline=None)
    def test_matches_oracle(self, values):
        for p in PERCENTILES:
            assert percentile(values, p) == sort_index_oracle(values, p)

    @pytest.mark.parametrize("n", [1, 2, 99, 100, 101, 1000, 10000])
    def test_matches_oracle_lengths(self, n):
        v = np.random.default_rng(n).standard_normal(n).tolist()
        for p in PERCENTILES:
            assert percentile(v, p) == sort_index_oracle(v, p)

    def test_errors(self):
        with pytest.raises(ValueError):
            percentile([], 50)
        with pytest.raises(ValueError):
            percentile([1], 101)


class TestTrim:
    def test_reps50_keeps_48(self):
        mean, kept = trimmed_mean(np.arange(50.0), 0.02)
        assert kept == 48 and mean == pytest.approx(np.arange(1.0, 49.0).mean())

    def test_zero_trim_plain_mean(self):
        v = np.random.default_rng(0).random(17)
        mean, kept = trimmed_mean(v, 0.0)
        assert kept == 17 and mean == pytest.approx(v.mean())

    def test_outliers_dropped(self):
        v = np.full(50, 2.0)
        v[3], v[40] = 1000.0, -1000.0
        assert trimmed_mean(v, 0.02) == (2.0, 48)


class FakeClock:
    """Each producer call advances time by the next scripted latency (s)."""

    def __init__(self, latencies):
        self.t = 0.0
        self.lat = iter(latencies)

    def __call__(self):
        return self.t

    def producer(self, img):
        self.t += next(self.lat)
        return img


class TestBench:
    def test_exactly_48_samples(self):
        r = np.random.default_rng(1)
        lat = r.random(2 * 55) * 1e-3
        clk = FakeClock(lat)
        stats = bench(clk.producer, [np.zeros(1), np.zeros(1)], clock=clk)
        assert stats.samples_per_image == 48
        for i in range(2):
            timed = np.sort(lat[i * 55 + 5:(i + 1) * 55]) * 1e3
            assert stats.per_image[i] == pytest.approx(timed[1:-1].mean())

    def test_sleep_producer(self):
        d = 0.004
        stats = bench(lambda img: time.sleep(d), [None] * 3, reps=10, warmup=1)
        assert stats.average == pytest.approx(d * 1e3, rel=0.2)
        assert stats.percentiles[99] - stats.percentiles[1] < 0.5 * d * 1e3

    def test_warmup_untimed(self):
        clk = FakeClock([10.0] * 5 + [0.001] * 50)
        stats = bench(clk.producer, [0], clock=clk)
        assert stats.average == pytest.approx(1.0)

    def test_failure_names_image(self):
        def flaky(img):
            if img == "b":
                raise RuntimeError("boom")
        with pytest.raises(BenchError, match="image frame_b"):
            bench(flaky, ["a", "b"], reps=3, warmup=0, ids=["frame_a", "frame_b"])

    @pytest.mark.parametrize("kwargs", [dict(reps=2), dict(trim=0.5), dict(trim=-0.1)])
    def test_preconditions(self, kwargs):
        with pytest.raises(ValueError):
            bench(lambda x: x, [0], **kwargs)

    def test_stats_consistent(self):
        s = BenchStats.from_samples("x", np.random.default_rng(2).lognormal(size=500))
        assert s.is_consistent
        vals = [s.percentiles[p] for p in PERCENTILES]
        assert vals == sorted(vals)


class TestReport:
    def test_table2_speedups(self):
        text = render_report(table2_stats())
        assert "FastNBL vs Unity3D Bloom: 28.4%" in text
        assert "FastNBL vs NBL: 12.1%" in text

    def test_rows_and_format(self):
        lines = render_report(table2_stats()).splitlines()
        labels = [l.split()[0] for l in lines[3:11]]
        assert labels == list(ROWS)
        assert "0.12352" in lines[10] and "0.17253" in lines[10]
        assert len({len(l) for l in lines[1:11]}) == 1  # aligned

    def test_table2_anomaly_flagged(self):
        stats = dict(table2_stats())
        assert stats["FastNBL"].is_consistent and stats["NBL"].is_consistent
        assert not stats["Unity3D Bloom"].is_consistent  # p05 > p25 in the published table

    def test_single_method(self):
        text = render_report(table2_stats()[:1])
        assert " vs " not in text and "FastNBL" in text

    def test_identical(self):
        s = BenchStats.from_samples("a", [1.0, 2.0, 3.0])
        assert [round(p, 6) for *_, p in speedups([s, s.renamed("b")])] == [0.0]
        assert "a vs b: 0.0%" in render_report([("a", s), ("b", s)])

    def test_records(self):
        text = render_records(table2_stats())
        first = dict(kv.split("=") for kv in text.splitlines()[0].split())
        assert first["method"] == "FastNBL" and float(first["average"]) == 0.12352
        assert "kind=speedup method=FastNBL baseline=Unity3D percent" not in text
        assert any(l.endswith("percent=28.4") for l in text.splitlines())

    def test_empty(self):
        with pytest.raises(ValueError):
            render_report([])


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("eval") / "d"
    build_dataset(2, 4, BloomParams(), root, seed=9)
    return load_dataset(root)


class TestEvalMSE:
    def test_oracle_identity(self, small_dataset):
        rep = eval_mse(lambda img: bloom_mask(img, small_dataset.params), small_dataset, "classic")
        assert rep.average == 0.0 and rep.p99 == 0.0

    def test_black_is_mean_square(self, small_dataset):
        rep = eval_mse(np.zeros_like, small_dataset)
        expect = np.mean(np.square(small_dataset.targets.astype(np.float64)), axis=(1, 2, 3))
        np.testing.assert_allclose(rep.per_image, expect, rtol=1e-12)
        assert rep.average == pytest.approx(expect.mean(), rel=1e-12)

    def test_order_statistics(self, small_dataset):
        rep = eval_mse(lambda img: 0.5 * img, small_dataset)
        assert rep.p99 >= rep.p50 and (rep.per_image >= 0).all()
        assert rep.worst(1)[0][1] == rep.per_image.max()

    def test_extent_mismatch_names_file(self, small_dataset):
        with pytest.raises(ValueError, match="scene_000/frame_0000.ppm"):
            eval_mse(lambda img: img[:64], small_dataset)

    def test_report_section(self, small_dataset):
        rep = eval_mse(np.zeros_like, small_dataset)
        text = render_report([("black", rep)])
        assert "mse" in text and "p99" in text and "average" in text
