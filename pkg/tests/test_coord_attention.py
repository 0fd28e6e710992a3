import numpy as np
import pytest

from pycat4.coord_attention import CoordAttention, directional_pool
from pycat4.tensor import (DimensionError, Tensor, backward, finite_diff_grad,
                           grad_of, new_tape)


def rel_err(a, b):
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return np.abs(np.asarray(a) - np.asarray(b)).max(initial=0.0) / denom


class TestDirectionalPool:
    def test_matches_bruteforce_means(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 3, 5, 7))
        ph, pw = directional_pool(Tensor(x))
        want_h = np.zeros((2, 3, 5, 1))
        want_w = np.zeros((2, 3, 1, 7))
        for b in range(2):
            for c in range(3):
                for i in range(5):
                    want_h[b, c, i, 0] = x[b, c, i, :].sum() / 7
                for j in range(7):
                    want_w[b, c, 0, j] = x[b, c, :, j].sum() / 5
        np.testing.assert_allclose(ph.data, want_h, rtol=1e-13)
        np.testing.assert_allclose(pw.data, want_w, rtol=1e-13)

    def test_constant_map(self):
        ph, pw = directional_pool(Tensor(np.full((1, 2, 3, 4), 2.5)))
        np.testing.assert_allclose(ph.data, 2.5)
        np.testing.assert_allclose(pw.data, 2.5)

    def test_single_pixel(self):
        x = np.array(3.25).reshape(1, 1, 1, 1)
        ph, pw = directional_pool(Tensor(x))
        np.testing.assert_array_equal(ph.data, x)
        np.testing.assert_array_equal(pw.data, x)


class TestCoordAttention:
    def test_fresh_block_quarters_input(self):
        rng = np.random.default_rng(1)
        ca = CoordAttention(16, rng, reduction=8)
        x = rng.normal(size=(2, 16, 6, 6))
        np.testing.assert_allclose(ca(Tensor(x)).data, 0.25 * x, rtol=1e-12)

    def test_shape_preserved(self):
        rng = np.random.default_rng(2)
        ca = CoordAttention(64, rng)
        for p in ca.parameters():
            p.data = rng.normal(size=p.shape) * 0.1
        x = rng.normal(size=(2, 64, 14, 14))
        assert ca(Tensor(x)).shape == (2, 64, 14, 14)

    def test_gates_bounded_means_output_bounded_by_input(self):
        rng = np.random.default_rng(3)
        ca = CoordAttention(8, rng, reduction=4)
        for p in ca.parameters():
            p.data = rng.normal(size=p.shape)
        x = rng.normal(size=(1, 8, 4, 4))
        out = ca(Tensor(x)).data
        assert (np.abs(out) < np.abs(x) + 1e-12).all()
        assert (np.sign(out) == np.sign(x))[np.abs(x) > 1e-9].all()

    def test_spatially_constant_input_gives_constant_output(self):
        rng = np.random.default_rng(4)
        ca = CoordAttention(8, rng, reduction=2)
        for p in ca.parameters():
            p.data = rng.normal(size=p.shape)
        x = np.broadcast_to(rng.normal(size=(1, 8, 1, 1)), (1, 8, 5, 5)).copy()
        out = ca(Tensor(x)).data
        np.testing.assert_allclose(out, np.broadcast_to(out[:, :, :1, :1], out.shape),
                                   rtol=1e-12)

    def test_reduction_must_divide(self):
        with pytest.raises(DimensionError):
            CoordAttention(10, np.random.default_rng(0), reduction=4)

    def test_grad_matches_fd(self):
        rng = np.random.default_rng(5)
        ca = CoordAttention(4, rng, reduction=2)
        for p in ca.parameters():
            p.data = rng.normal(size=p.shape) * 0.5

        def f(xt):
            return (ca(xt) ** 2.0).sum()

        xt = Tensor(rng.normal(size=(1, 4, 3, 3)), requires_grad=True)
        with new_tape():
            g = grad_of(backward(f(xt)), xt).data
        assert rel_err(g, finite_diff_grad(f, xt)) < 1e-5
