import numpy as np
import pytest

from pycat4 import tensor as T
from pycat4.fusion import FeaturePyramid
from pycat4.temporal import (MASK_FILL, SpatialEncoder, TemporalEncoder,
                             TemporalFusion)
from pycat4.tensor import (ContractError, Tensor, backward, finite_diff_grad,
                           grad_of, new_tape)


def rel_err(a, b):
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return np.abs(np.asarray(a) - np.asarray(b)).max(initial=0.0) / denom


def make_pyramid(rng, batch=2, width=3, gwidth=5):
    levels = [Tensor(rng.normal(size=(batch, width, s, s))) for s in (2, 4, 8)]
    return FeaturePyramid(levels=levels,
                          global_vec=Tensor(rng.normal(size=(batch, gwidth))))


class TestSpatialEncoder:
    def test_shape_preserved(self):
        rng = np.random.default_rng(0)
        enc = SpatialEncoder(4, 8, rng)
        out = enc(Tensor(rng.normal(size=(2, 4, 8))))
        assert out.shape == (2, 4, 8)

    def test_zero_projections_identity(self):
        rng = np.random.default_rng(1)
        enc = SpatialEncoder(4, 8, rng)
        for blk in enc.blocks:
            blk.attn.proj.weight.data[:] = 0.0
            blk.attn.proj.bias.data[:] = 0.0
            blk.mlp.fc2.weight.data[:] = 0.0
            blk.mlp.fc2.bias.data[:] = 0.0
        x = rng.normal(size=(2, 4, 8))
        np.testing.assert_array_equal(enc(Tensor(x)).data, x)

    def test_grad_matches_fd(self):
        rng = np.random.default_rng(2)
        enc = SpatialEncoder(3, 4, rng, depth=1)

        def f(xt):
            return (enc(xt) ** 2.0).mean()

        xt = Tensor(rng.normal(size=(1, 3, 4)), requires_grad=True)
        with new_tape():
            g = grad_of(backward(f(xt)), xt).data
        assert rel_err(g, finite_diff_grad(f, xt)) < 1e-4


class TestTemporalEncoder:
    def test_masked_softmax_weight_negligible(self):
        # direct computation with the mask magnitude used by the encoder
        rng = np.random.default_rng(3)
        scores = rng.normal(0.0, 10.0, size=(5, 5))
        mask = np.zeros((5, 5))
        mask[:, [1, 3]] = MASK_FILL
        att = T.softmax(Tensor(scores + mask), axis=-1).data
        assert att[:, [1, 3]].max() < 1e-8

    def test_padding_frames_do_not_leak(self):
        rng = np.random.default_rng(4)
        enc = TemporalEncoder(6, rng, t_max=5)
        frames = rng.normal(size=(2, 4, 6))
        valid = np.array([False, True, False, True])
        out1 = enc(Tensor(frames), valid).data
        frames2 = frames.copy()
        frames2[:, 0] += 1e3
        frames2[:, 2] -= 1e3
        out2 = enc(Tensor(frames2), valid).data
        # outputs at valid rows must be unaffected by padding content
        assert np.abs(out1[:, [1, 3]] - out2[:, [1, 3]]).max() < 1e-9

    def test_window_length_contract(self):
        rng = np.random.default_rng(5)
        enc = TemporalEncoder(4, rng, t_max=3)
        with pytest.raises(ContractError):
            enc(Tensor(np.zeros((1, 4, 4))), np.ones(4, dtype=bool))
        with pytest.raises(ContractError):
            enc(Tensor(np.zeros((1, 2, 4))), np.zeros(2, dtype=bool))

    def test_single_frame_window_works(self):
        rng = np.random.default_rng(6)
        enc = TemporalEncoder(4, rng, t_max=9)
        out = enc(Tensor(rng.normal(size=(2, 1, 4))), np.array([True]))
        assert out.shape == (2, 1, 4)
        assert np.isfinite(out.data).all()

    def test_grad_matches_fd(self):
        rng = np.random.default_rng(7)
        enc = TemporalEncoder(4, rng, t_max=4, depth=1)
        valid = np.array([True, False, True])

        def f(xt):
            return (enc(xt, valid) ** 2.0).mean()

        xt = Tensor(rng.normal(size=(1, 3, 4)), requires_grad=True)
        with new_tape():
            g = grad_of(backward(f(xt)), xt).data
        assert rel_err(g, finite_diff_grad(f, xt)) < 1e-4


class TestTemporalFusion:
    def test_single_frame_bypass_exact(self):
        rng = np.random.default_rng(8)
        tf = TemporalFusion(3, 5, rng, dim=8)
        pyr = make_pyramid(np.random.default_rng(9))
        fused = tf([pyr])
        assert (fused.global_vec.data == pyr.global_vec.data).all()
        for a, b in zip(fused.levels, pyr.levels):
            assert a is b

    def test_fresh_model_bypass_for_any_window(self):
        rng = np.random.default_rng(10)
        tf = TemporalFusion(3, 5, rng, dim=8)
        r2 = np.random.default_rng(11)
        pyrs = [make_pyramid(r2) for _ in range(4)]
        fused = tf(pyrs)
        assert (fused.global_vec.data == pyrs[-1].global_vec.data).all()

    def test_past_frame_order_matters_after_init(self):
        rng = np.random.default_rng(12)
        tf = TemporalFusion(3, 5, rng, dim=8)
        tf.out_proj.weight.data = np.random.default_rng(13).normal(size=(8, 5))
        r2 = np.random.default_rng(14)
        pyrs = [make_pyramid(r2) for _ in range(4)]
        out_a = tf(pyrs).global_vec.data
        swapped = [pyrs[1], pyrs[0], pyrs[2], pyrs[3]]
        out_b = tf(swapped).global_vec.data
        assert np.abs(out_a - out_b).max() > 1e-6

    def test_padding_content_invisible(self):
        rng = np.random.default_rng(15)
        tf = TemporalFusion(3, 5, rng, dim=8)
        tf.out_proj.weight.data = np.random.default_rng(16).normal(size=(8, 5))
        r2 = np.random.default_rng(17)
        pyrs = [make_pyramid(r2) for _ in range(3)]
        valid = np.array([False, True, True])
        out_a = tf(pyrs, valid).global_vec.data
        noisy = make_pyramid(np.random.default_rng(99))
        noisy.global_vec.data *= 1e6
        out_b = tf([noisy] + pyrs[1:], valid).global_vec.data
        assert np.abs(out_a - out_b).max() < 1e-9

    def test_repeated_current_frame_is_valid_input(self):
        rng = np.random.default_rng(18)
        tf = TemporalFusion(3, 5, rng, dim=8)
        tf.out_proj.weight.data = np.random.default_rng(19).normal(size=(8, 5))
        pyr = make_pyramid(np.random.default_rng(20))
        fused = tf([pyr] * 5)
        assert np.isfinite(fused.global_vec.data).all()
        assert fused.global_vec.shape == pyr.global_vec.shape

    def test_current_frame_must_be_valid(self):
        rng = np.random.default_rng(21)
        tf = TemporalFusion(3, 5, rng, dim=8)
        pyrs = [make_pyramid(np.random.default_rng(22)) for _ in range(2)]
        with pytest.raises(ContractError):
            tf(pyrs, np.array([True, False]))

    def test_gradient_flows_to_past_frames(self):
        rng = np.random.default_rng(23)
        tf = TemporalFusion(3, 5, rng, dim=8)
        tf.out_proj.weight.data = np.random.default_rng(24).normal(size=(8, 5))
        r2 = np.random.default_rng(25)
        past = make_pyramid(r2)
        past.global_vec.requires_grad = True
        cur = make_pyramid(r2)
        with new_tape():
            fused = tf([past, cur])
            g = grad_of(backward((fused.global_vec ** 2.0).sum()), past.global_vec)
        assert np.abs(g.data).max() > 0
