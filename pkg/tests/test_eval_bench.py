import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edenvfi import ContractError, DimensionError, build_model
from edenvfi.bench import CSV_HEADER, benchmark
from edenvfi.checks import TINY_CHECK_CONFIG
from edenvfi.imageio import ImageFormatError, find_quadruplets, load_quadruplet, read_image, write_image
from edenvfi.metrics import psnr

rng = np.random.default_rng


class TestPsnr:
    def test_constant_difference(self):
        a = np.full((3, 8, 8), 0.5)
        assert abs(psnr(a, a + 0.1) - 20.0) <= 1e-9

    def test_identical_is_inf(self):
        a = rng(0).random((3, 4, 4))
        assert psnr(a, a) == math.inf

    def test_black_white(self):
        assert psnr(np.zeros((3, 2, 2)), np.ones((3, 2, 2))) == 0.0

    def test_inputs_are_clamped(self):
        a = np.full((3, 2, 2), 0.5)
        assert psnr(a + 2.0, np.ones((3, 2, 2))) == math.inf

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_symmetric(self, seed):
        a, b = rng(seed).random((2, 3, 5, 5))
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            psnr(np.zeros((3, 2, 2)), np.zeros((3, 2, 3)))


def write_quadruplet(directory, h=8, w=8, seed=0, suffix=".png"):
    directory.mkdir(parents=True, exist_ok=True)
    imgs = rng(seed).integers(0, 256, (5, 3, h, w)) / 255.0
    for name, img in zip(["in0", "in1", "in2", "in3", "gt"], imgs):
        write_image(directory / f"{name}{suffix}", img)
    return imgs


class TestImages:
    def test_ppm_full_scale_is_one(self, tmp_path):
        path = tmp_path / "w.ppm"
        path.write_bytes(b"P6\n2 1\n255\n" + bytes([255] * 6))
        img = read_image(path)
        assert img.shape == (3, 1, 2) and np.all(img == 1.0)

    @pytest.mark.parametrize("suffix", [".ppm", ".png"])
    def test_round_trip_bit_exact(self, tmp_path, suffix):
        img = rng(1).integers(0, 256, (3, 5, 7)) / 255.0
        write_image(tmp_path / f"a{suffix}", img)
        first = read_image(tmp_path / f"a{suffix}")
        write_image(tmp_path / f"b{suffix}", first)
        second = read_image(tmp_path / f"b{suffix}")
        assert np.array_equal(first, second)
        assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()
        assert np.abs(first - img).max() <= 1e-7

    def test_unsupported_extension(self, tmp_path):
        with pytest.raises(ValueError):
            write_image(tmp_path / "x.jpg", np.zeros((3, 2, 2)))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="nope.png"):
            read_image(tmp_path / "nope.png")


class TestQuadruplets:
    def test_load(self, tmp_path):
        imgs = write_quadruplet(tmp_path / "q", suffix=".ppm")
        rec = load_quadruplet(tmp_path / "q")
        assert len(rec.frames) == 4 and rec.gt.shape == (3, 8, 8)
        assert np.abs(rec.frames[2] - imgs[2]).max() <= 1e-7

    def test_missing_gt(self, tmp_path):
        write_quadruplet(tmp_path / "q")
        (tmp_path / "q" / "gt.png").unlink()
        with pytest.raises(FileNotFoundError, match="gt.png not found"):
            load_quadruplet(tmp_path / "q")

    def test_mismatched_size(self, tmp_path):
        write_quadruplet(tmp_path / "q")
        write_image(tmp_path / "q" / "in1.png", np.zeros((3, 4, 8)))
        with pytest.raises(ImageFormatError, match="in1.png"):
            load_quadruplet(tmp_path / "q")

    def test_find(self, tmp_path):
        for name in ("b", "a"):
            write_quadruplet(tmp_path / name)
        (tmp_path / "empty").mkdir()
        assert [p.name for p in find_quadruplets(tmp_path)] == ["a", "b"]
        assert find_quadruplets(tmp_path / "a") == [tmp_path / "a"]
        with pytest.raises(FileNotFoundError):
            find_quadruplets(tmp_path / "missing")


@pytest.fixture(scope="module")
def model():
    return build_model(TINY_CHECK_CONFIG, seed=0)


class TestBenchmark:
    def test_requires_three_runs(self, model):
        with pytest.raises(ContractError):
            benchmark(model, 32, 32, runs=2)

    def test_warm_up_excluded(self, model):
        calls = []

        def hook(frames):
            calls.append(frames[0].shape)
            return model.predict(frames)

        report = benchmark(model, 48, 32, runs=3, forward=hook)
        assert len(calls) == 4 and calls[0] == (3, 32, 48)
        assert len(report.samples) == 3 and report.mean_s > 0 and report.std_s >= 0

    def test_memory_grows_with_size(self, model):
        small = benchmark(model, 32, 32, runs=3).peak_bytes
        large = benchmark(model, 96, 64, runs=3).peak_bytes
        assert 0 < small < large

    def test_report_formats(self, model):
        r = benchmark(model, 32, 32, runs=3)
        assert "32x32" in r.text()
        assert len(r.csv().split(",")) == len(CSV_HEADER.split(","))
