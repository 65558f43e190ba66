import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edenvfi import DimensionError, SynthesisMaps, Tensor, blend_baseline, edsc_apply, no_grad
from edenvfi.checks import GRAD_CHECKS, maps_from_arrays, random_edsc_inputs
from edenvfi.synthesis import SynthesisBlock, SynthesisHead

from oracles import edsc_naive

F64 = np.float64
rng = np.random.default_rng


def apply(d):
    return edsc_apply([Tensor(f) for f in d["frames"]], maps_from_arrays(d)).data


def oracle(d):
    return edsc_naive(d["frames"], d["k_h"], d["k_v"], d["off_x"], d["off_y"], d["mask"], d["bias"])


def identity_maps(h, w, frames=4, n=5, active=1):
    d = {k: np.zeros(s) for k, s in (("k_h", (frames, n, h, w)), ("k_v", (frames, n, h, w)),
                                      ("off_x", (frames, n * n, h, w)), ("off_y", (frames, n * n, h, w)),
                                      ("bias", (3, h, w)))}
    d["mask"] = np.ones((frames, n * n, h, w))
    d["k_h"][active, n // 2] = 1
    d["k_v"][active, n // 2] = 1
    return d


class TestEdscOracle:
    def test_fifty_random_instances(self):
        r = rng(0)
        worst = 0.0
        for _ in range(50):
            h, w = int(r.integers(1, 9)), int(r.integers(1, 9))
            d = random_edsc_inputs(r, frames=int(r.integers(1, 5)), h=h, w=w, max_offset=3.0)
            worst = max(worst, np.abs(apply(d) - oracle(d)).max())
        assert worst <= 1e-10

    def test_identity_configuration_reproduces_frame(self):
        frames = rng(1).random((4, 3, 7, 9))
        d = identity_maps(7, 9)
        d["frames"] = frames
        assert np.abs(apply(d) - frames[1]).max() <= 1e-6

    def test_zero_kernels_give_bias(self):
        d = random_edsc_inputs(rng(2))
        d["k_h"][...] = 0
        assert np.array_equal(apply(d), d["bias"])

    def test_uniform_kernel_on_constant_frame(self):
        d = identity_maps(6, 6)
        d["k_h"][...] = 0
        d["k_v"][...] = 0
        d["k_h"][2] = d["k_v"][2] = 0.2
        d["frames"] = rng(3).random((4, 3, 6, 6))
        d["frames"][2] = 0.37
        assert np.allclose(apply(d), 0.37, atol=1e-12)
        assert np.allclose(oracle(d), 0.37, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 2**31))
    def test_affine_in_frames(self, a, b, seed):
        r = rng(seed)
        d = random_edsc_inputs(r, h=5, w=4)
        f, g = d["frames"], r.random(d["frames"].shape)
        mix = apply({**d, "frames": a * f + b * g})
        rhs = a * apply(d) + b * apply({**d, "frames": g}) - (a + b - 1) * d["bias"]
        assert np.abs(mix - rhs).max() <= 1e-10

    def test_frame_permutation_symmetry(self):
        d = random_edsc_inputs(rng(4), h=5, w=6)
        perm = [2, 0, 3, 1]
        permuted = {k: (v[perm] if k != "bias" else v) for k, v in d.items()}
        assert np.abs(apply(d) - apply(permuted)).max() <= 1e-12

    def test_shape_errors(self):
        d = random_edsc_inputs(rng(5), h=4, w=4)
        maps = maps_from_arrays(d)
        maps.off_x[0] = Tensor(np.zeros((24, 4, 4)))
        with pytest.raises(DimensionError, match="off_x"):
            edsc_apply([Tensor(f) for f in d["frames"]], maps)
        with pytest.raises(DimensionError):
            edsc_apply([Tensor(f) for f in d["frames"][:3]], maps_from_arrays(d))

    def test_gradients(self):
        assert GRAD_CHECKS["edsc"]() <= 1e-4


class TestBlend:
    def test_equal_frames(self):
        f = rng(0).random((3, 4, 4))
        other = rng(1).random((3, 4, 4))
        assert np.array_equal(blend_baseline([other, f, f, other]), f)

    def test_zero_one(self):
        z, o = np.zeros((3, 2, 2)), np.ones((3, 2, 2))
        assert np.all(blend_baseline([z, z, o, o]) == 0.5)

    def test_elementwise_oracle(self):
        frames = [rng(i).random((3, 5, 5)) for i in range(4)]
        assert np.array_equal(blend_baseline(frames), (frames[1] + frames[2]) / 2)

    def test_needs_four(self):
        with pytest.raises(DimensionError):
            blend_baseline([np.zeros((3, 2, 2))] * 3)


class TestHeads:
    def test_map_shapes_and_mask_range(self):
        block = SynthesisBlock(cin=8, rng=rng(0), dtype=F64)
        maps = block.generate_maps(Tensor(rng(1).standard_normal((8, 16, 16))))
        assert isinstance(maps, SynthesisMaps) and maps.kernel_size == 5
        for group, ch in ((maps.k_h, 5), (maps.k_v, 5), (maps.off_x, 25), (maps.off_y, 25), (maps.mask, 25)):
            assert len(group) == 4 and all(t.shape == (ch, 64, 64) for t in group)
        assert maps.bias.shape == (3, 64, 64)
        m = np.stack([t.data for t in maps.mask])
        assert np.all((m > 0) & (m < 1))

    def test_zero_final_weights(self):
        block = SynthesisBlock(cin=8, rng=rng(0), dtype=F64)
        for head in (*block.off_x, *block.off_y, *block.mask):
            head.conv2.weight.data[...] = 0
        maps = block.generate_maps(Tensor(rng(1).standard_normal((8, 4, 4))))
        assert all(not t.data.any() for t in (*maps.off_x, *maps.off_y))
        assert all(np.all(t.data == 0.5) for t in maps.mask)

    @pytest.mark.parametrize("cout,squash", [(5, False), (25, True), (3, False)])
    @pytest.mark.parametrize("band", [10**9, 4096])
    def test_banded_inference_equals_taped_forward(self, cout, squash, band):
        head = SynthesisHead(6, cout, squash=squash, rng=rng(2), dtype=F64)
        phi = rng(3).standard_normal((6, 5, 7))
        with no_grad():
            ref = head(Tensor(phi)).data
        assert np.abs(head.infer(phi, band) - ref).max() <= 1e-12

    def test_block_inference_equals_forward(self):
        block = SynthesisBlock(cin=6, rng=rng(4), dtype=F64)
        phi = rng(5).standard_normal((6, 3, 4))
        frames = rng(6).random((4, 3, 12, 16))
        with no_grad():
            ref = block(Tensor(phi), [Tensor(f) for f in frames]).data
        assert np.abs(block.infer(phi, frames) - ref).max() <= 1e-10


def test_initial_block_is_frame_average_for_flat_features():
    block = SynthesisBlock(cin=6, rng=rng(7), dtype=F64)
    frames = rng(8).random((4, 3, 8, 8))
    with no_grad():
        out = block(Tensor(np.zeros((6, 2, 2))), [Tensor(f) for f in frames]).data
    assert np.abs(out - frames.mean(axis=0)).max() <= 1e-12
