import struct
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edenvfi import ConfigError, DimensionError, ModelConfig, Tensor, WeightsFormatError, build_model, count_parameters
from edenvfi.checks import GRAD_CHECKS, TINY_CHECK_CONFIG
from edenvfi.weights import load_weights, save_weights

from oracles import model_count

rng = np.random.default_rng


def frames(h, w, seed=0, dtype=np.float32):
    return [f.astype(dtype) for f in rng(seed).random((4, 3, h, w))]


@pytest.fixture(scope="module")
def tiny():
    return build_model(TINY_CHECK_CONFIG, seed=1)


class TestCounts:
    @pytest.mark.parametrize("depths,use_pvt,use_cnn", [
        ((9, 12), True, True), ((3, 4), True, True), ((0, 0), True, True),
        ((9, 12), False, True), ((9, 12), True, False),
    ])
    def test_matches_closed_form(self, depths, use_pvt, use_cnn):
        cfg = ModelConfig(pvt_depths=depths, use_pvt=use_pvt, use_cnn=use_cnn)
        assert count_parameters(build_model(cfg)) == model_count(depths, use_pvt, use_cnn)

    def test_frozen_figures(self):
        assert model_count((9, 12)) == 27_060_759
        assert model_count((3, 4)) == 10_434_071
        assert model_count((9, 12), use_pvt=False) == 2_074_711

    def test_count_increases_with_depth(self):
        assert model_count((1, 1)) < model_count((2, 1)) < model_count((2, 2))


class TestConfig:
    def test_text_round_trip(self):
        cfg = ModelConfig(pvt_depths=(3, 4), use_cnn=False, leaky_slope=0.2)
        assert ModelConfig.from_text(cfg.to_text()) == cfg

    @pytest.mark.parametrize("kwargs", [
        {"use_pvt": False, "use_cnn": False},
        {"input_frames": 2},
        {"kernel_size": 4},
        {"cnn_channels": (32, 64, 96)},
        {"num_heads": (3, 2)},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            ModelConfig(**kwargs).validate()

    @pytest.mark.parametrize("text", ["nonsense", "bogus = 1", "use_pvt = maybe", "pvt_depths = a,b"])
    def test_bad_text(self, text):
        with pytest.raises(ConfigError):
            ModelConfig.from_text(text)

    def test_pad_multiple(self):
        assert ModelConfig().pad_multiple == 64
        assert ModelConfig(use_pvt=False).pad_multiple == 16
        assert TINY_CHECK_CONFIG.pad_multiple == 16


class TestForward:
    @settings(max_examples=6, deadline=None)
    @given(st.integers(32, 70), st.integers(32, 70))
    def test_output_matches_input_size(self, tiny, h, w):
        assert tiny.predict(frames(h, w)).shape == (3, h, w)

    def test_odd_sizes(self, tiny):
        out = tiny.forward([Tensor(f) for f in frames(33, 47)])
        assert out.shape == (3, 33, 47)

    def test_predict_is_clamped(self, tiny):
        out = tiny.predict(frames(32, 32))
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_deterministic(self):
        a = build_model(TINY_CHECK_CONFIG, seed=5).predict(frames(32, 48))
        b = build_model(TINY_CHECK_CONFIG, seed=5).predict(frames(32, 48))
        assert np.array_equal(a, b)

    def test_predict_matches_forward(self):
        model = build_model(TINY_CHECK_CONFIG, seed=2, dtype=np.float64)
        fr = frames(40, 56, dtype=np.float64)
        ref = model.forward([Tensor(f) for f in fr]).data
        assert np.abs(model.predict(fr, clamp=False) - ref).max() <= 1e-10

    @pytest.mark.parametrize("use_pvt,use_cnn", [(False, True), (True, False)])
    def test_ablations_run(self, use_pvt, use_cnn):
        cfg = replace(TINY_CHECK_CONFIG, use_pvt=use_pvt, use_cnn=use_cnn)
        assert build_model(cfg).predict(frames(32, 32)).shape == (3, 32, 32)

    def test_wrong_frame_count(self, tiny):
        with pytest.raises(DimensionError):
            tiny.predict(frames(32, 32)[:3])

    def test_mismatched_frames(self, tiny):
        fr = frames(32, 32)
        fr[2] = fr[2][:, :16]
        with pytest.raises(DimensionError):
            tiny.predict(fr)

    def test_gradients(self):
        assert GRAD_CHECKS["model"]() <= 1e-4


class TestWeights:
    def test_round_trip_bit_exact(self, tmp_path, tiny):
        path = tmp_path / "w.bin"
        save_weights(tiny, path)
        loaded = load_weights(path)
        assert loaded.cfg == tiny.cfg
        for (n1, p1), (n2, p2) in zip(tiny.named_parameters(), loaded.named_parameters()):
            assert n1 == n2 and np.array_equal(p1.data, p2.data)
        assert np.array_equal(tiny.predict(frames(32, 32)), loaded.predict(frames(32, 32)))

    def test_bad_magic(self, tmp_path, tiny):
        path = tmp_path / "w.bin"
        save_weights(tiny, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(WeightsFormatError, match="magic"):
            load_weights(path)

    def test_version(self, tmp_path, tiny):
        path = tmp_path / "w.bin"
        save_weights(tiny, path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", 9)
        path.write_bytes(bytes(raw))
        with pytest.raises(WeightsFormatError, match="version"):
            load_weights(path)

    def test_truncated(self, tmp_path, tiny):
        path = tmp_path / "w.bin"
        save_weights(tiny, path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(WeightsFormatError, match="truncated"):
            load_weights(path)

    def test_config_disagrees_with_entries(self, tmp_path, tiny):
        path = tmp_path / "w.bin"
        save_weights(tiny, path)
        raw = path.read_bytes()
        n = struct.unpack("<I", raw[8:12])[0]
        cfg = raw[12:12 + n].decode().replace("pvt_depths = 1,1", "pvt_depths = 0,0").encode()
        path.write_bytes(raw[:8] + struct.pack("<I", len(cfg)) + cfg + raw[12 + n:])
        with pytest.raises(WeightsFormatError, match="not a parameter"):
            load_weights(path)

    def test_missing_entries(self, tmp_path, tiny):
        path = tmp_path / "w.bin"
        save_weights(tiny, path)
        raw = path.read_bytes()
        n = struct.unpack("<I", raw[8:12])[0]
        path.write_bytes(raw[:12 + n])
        with pytest.raises(WeightsFormatError, match="missing"):
            load_weights(path)
