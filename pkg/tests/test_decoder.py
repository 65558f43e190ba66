import itertools

import numpy as np
import pytest

from edenvfi import DimensionError, Tensor
from edenvfi.checks import GRAD_CHECKS
from edenvfi.decoder import Decoder, UpsampleBlock, fuse_level
from edenvfi.encoders import CnnEncoderState, PvtFeatures
from edenvfi.gradcheck import grad_check
from edenvfi.tensor import tensor_sum

F64 = np.float64
rng = np.random.default_rng


class TestFuse:
    def test_additive_identity(self):
        g = rng(0).random((4, 3, 3))
        z = np.zeros_like(g)
        assert np.array_equal(fuse_level(Tensor(z), Tensor(z), Tensor(g)).data, g)

    def test_three_equal(self):
        t = rng(1).random((2, 2, 2))
        assert np.allclose(fuse_level(Tensor(t), Tensor(t), Tensor(t)).data, 3 * t)

    def test_elementwise_oracle_and_symmetry(self):
        a, b, c = (rng(i).random((3, 4, 5)) for i in range(3))
        ref = a + b + c
        for perm in itertools.permutations([a, b, c]):
            assert np.allclose(fuse_level(*(Tensor(p) for p in perm)).data, ref, atol=1e-15)

    @pytest.mark.parametrize("which,name", [(1, "pvt"), (2, "decoder")])
    def test_mismatch_names_source(self, which, name):
        parts = [Tensor(np.ones((4, 2, 2))) for _ in range(3)]
        parts[which] = Tensor(np.ones((4, 3, 2)))
        with pytest.raises(DimensionError, match=name):
            fuse_level(*parts)

    def test_gradients(self):
        assert GRAD_CHECKS["fuse_level"]() <= 1e-4


class TestUpsample:
    def test_shapes(self):
        assert UpsampleBlock(128, 128, rng=rng(0))(Tensor(np.ones((128, 4, 4), np.float32))).shape == (128, 8, 8)
        assert UpsampleBlock(128, 64, rng=rng(0))(Tensor(np.ones((128, 8, 8), np.float32))).shape == (64, 16, 16)

    def test_zero_input_zero_output(self):
        assert not UpsampleBlock(8, 4, rng=rng(0), dtype=F64)(Tensor(np.zeros((8, 3, 3)))).data.any()


def features(h, w, c64=64, c128=128, seed=0):
    r = rng(seed)
    mk = lambda c, s: Tensor(r.standard_normal((c, h // s, w // s)))  # noqa: E731
    cnn = CnnEncoderState(None, mk(c64, 4), mk(c128, 8), mk(c128, 16))
    pvt = PvtFeatures(mk(c64, 4), mk(c128, 8))
    return cnn, pvt


class TestDecoder:
    def test_shapes(self):
        dec = Decoder(rng=rng(0), dtype=F64)
        cnn, pvt = features(64, 64)
        phi128, phi64 = dec.levels(cnn.rho, cnn, pvt)
        assert phi128.shape == (128, 8, 8) and phi64.shape == (64, 16, 16)
        assert np.array_equal(dec(cnn.rho, cnn, pvt).data, phi64.data)

    def test_zero_weights_pass_skip_features(self):
        dec = Decoder(rng=rng(0), dtype=F64)
        for _, p in dec.named_parameters():
            p.data[...] = 0
        cnn, pvt = features(32, 48)
        assert np.allclose(dec(cnn.rho, cnn, pvt).data, cnn.level64.data + pvt.beta64.data)

    def test_zero_pvt_branch_keeps_shapes(self):
        dec = Decoder(rng=rng(0), dtype=F64)
        cnn, pvt = features(32, 32)
        zero = PvtFeatures(Tensor(np.zeros(pvt.beta64.shape)), Tensor(np.zeros(pvt.beta128.shape)))
        assert dec(cnn.rho, cnn, zero).shape == (64, 8, 8)

    def test_mismatched_skip(self):
        dec = Decoder(rng=rng(0), dtype=F64)
        cnn, pvt = features(32, 32)
        bad = PvtFeatures(pvt.beta64, Tensor(np.zeros((128, 3, 3))))
        with pytest.raises(DimensionError, match="pvt"):
            dec(cnn.rho, cnn, bad)

    def test_gradient_wrt_rho(self):
        dec = Decoder(rng=rng(1), dtype=F64)
        cnn, pvt = features(32, 32, seed=2)

        def f(rho):
            return tensor_sum(dec(rho, cnn, pvt))

        assert grad_check(f, rng(3).standard_normal((128, 2, 2))) <= 1e-4
