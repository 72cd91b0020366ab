"""Tensor core: forward examples, gradient rules, tape semantics."""

import numpy as np
import pytest

from tamperscope import autodiff as ad
from tamperscope.autodiff import Tensor, backward, grad_check
from tamperscope.errors import ContractError, DimensionError


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[3.0, 4.0], [5.0, 6.0]])
        assert np.array_equal(ad.matmul(a, b).data, [[3.0, 4.0], [5.0, 6.0]])

    def test_hand_computed(self):
        # oracle: element [i][j] = sum_k a[i][k] * b[k][j], expanded by hand
        a = [[1.0, 2.0], [3.0, 4.0]]
        b = [[5.0, 6.0], [7.0, 8.0]]
        expected = [
            [1 * 5 + 2 * 7, 1 * 6 + 2 * 8],
            [3 * 5 + 4 * 7, 3 * 6 + 4 * 8],
        ]
        assert expected == [[19, 22], [43, 50]]
        assert np.array_equal(ad.matmul(Tensor(a), Tensor(b)).data, expected)

    def test_zero_case(self):
        out = ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.arange(6.0).reshape(3, 2)))
        assert np.array_equal(out.data, np.zeros((2, 2)))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))

    def test_gradient_rule(self):
        a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        b = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
        backward(ad.tsum(ad.matmul(a, b)))
        g = np.ones((2, 4))
        assert np.allclose(a.grad, g @ b.data.T)
        assert np.allclose(b.grad, a.data.T @ g)


class TestConv2d:
    def test_scalar_kernel(self):
        x = Tensor(np.ones((1, 3, 3)))
        k = Tensor(np.full((1, 1, 1, 1), 2.0))
        assert np.array_equal(ad.conv2d(x, k).data, np.full((1, 3, 3), 2.0))

    def test_hand_computed_sliding_window(self):
        x = Tensor(np.arange(1.0, 10.0).reshape(1, 3, 3))
        k = Tensor(np.ones((1, 1, 2, 2)))
        # oracle: sliding 2x2 window sums of [[1..9]]
        expected = [[1 + 2 + 4 + 5, 2 + 3 + 5 + 6], [4 + 5 + 7 + 8, 5 + 6 + 8 + 9]]
        assert expected == [[12, 16], [24, 28]]
        assert np.array_equal(ad.conv2d(x, k).data, [expected])

    def test_zero_kernel(self):
        x = Tensor(np.random.default_rng(0).normal(size=(2, 4, 4)))
        k = Tensor(np.zeros((3, 2, 3, 3)))
        assert np.array_equal(ad.conv2d(x, k, padding=1).data, np.zeros((3, 4, 4)))

    def test_kernel_too_large(self):
        with pytest.raises(DimensionError):
            ad.conv2d(Tensor(np.zeros((1, 3, 3))), Tensor(np.zeros((1, 1, 5, 5))))

    def test_stride_and_padding_shapes(self):
        x = Tensor(np.zeros((1, 5, 5)))
        out = ad.conv2d(x, Tensor(np.zeros((2, 1, 3, 3))), stride=2, padding=1)
        assert out.shape == (2, 3, 3)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 5, 6))
        k = rng.normal(size=(3, 2, 3, 2))
        stride, pad = 2, 1
        out = ad.conv2d(Tensor(x), Tensor(k), stride=stride, padding=pad).data
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
        oh = (5 + 2 * pad - 3) // stride + 1
        ow = (6 + 2 * pad - 2) // stride + 1
        expected = np.zeros((3, oh, ow))
        for co in range(3):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[:, i * stride : i * stride + 3, j * stride : j * stride + 2]
                    expected[co, i, j] = np.sum(patch * k[co])
        assert np.allclose(out, expected, atol=1e-12)


class TestCoordConv:
    def test_coordinate_planes_3x3(self):
        coords = ad.coordinate_channels(3, 3)
        assert np.array_equal(coords[0], [[-1, 0, 1]] * 3)
        assert np.array_equal(coords[1].T, [[-1, 0, 1]] * 3)

    def test_degenerate_axis(self):
        coords = ad.coordinate_channels(1, 4)
        assert np.array_equal(coords[1], np.full((1, 4), -1.0))
        coords = ad.coordinate_channels(4, 1)
        assert np.array_equal(coords[0], np.full((4, 1), -1.0))

    def test_picks_out_x_plane(self):
        # kernel zero on the image channels, 1x1 unit weight on the x channel
        x = Tensor(np.random.default_rng(1).normal(size=(2, 4, 5)))
        k = np.zeros((1, 4, 1, 1))
        k[0, 2, 0, 0] = 1.0  # channel layout: image channels, then x, then y
        out = ad.coordconv2d(x, Tensor(k))
        assert np.allclose(out.data[0], ad.coordinate_channels(4, 5)[0])

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ad.coordconv2d(Tensor(np.zeros((3, 4, 4))), Tensor(np.zeros((1, 3, 1, 1))))


class TestElementwise:
    def test_softmax_constant_vector(self):
        for n in (1, 3, 7):
            out = ad.softmax(Tensor(np.full(n, 2.5)))
            assert np.allclose(out.data, np.full(n, 1.0 / n), atol=1e-15)

    def test_softmax_sums_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            x = rng.normal(scale=rng.uniform(0.1, 50), size=(4, 6))
            s = ad.softmax(Tensor(x), axis=-1).data.sum(axis=-1)
            assert np.all(np.abs(s - 1.0) <= 1e-12)

    def test_log_clamped_boundary(self):
        out = ad.log_clamped(Tensor([0.0]))
        assert np.allclose(out.data, np.log(1e-7))
        assert np.allclose(ad.log_clamped(Tensor([5.0])).data, 0.0)

    def test_sigmoid_extremes_finite(self):
        out = ad.sigmoid(Tensor([-1000.0, 0.0, 1000.0]))
        assert np.all(np.isfinite(out.data))
        assert np.allclose(out.data[1], 0.5)

    def test_gelu_known_points(self):
        assert ad.gelu(Tensor([0.0])).data[0] == 0.0
        assert ad.gelu(Tensor([10.0])).data[0] == pytest.approx(10.0, abs=1e-6)

    def test_purity_bit_identical(self):
        x = np.random.default_rng(5).normal(size=(3, 4))
        for op in (lambda t: ad.softmax(t), lambda t: ad.gelu(t), lambda t: ad.sigmoid(t)):
            first = op(Tensor(x.copy())).data
            second = op(Tensor(x.copy())).data
            assert np.array_equal(first, second)


class TestBackward:
    def test_identity_chain(self):
        x = Tensor([3.0], requires_grad=True)
        y = ad.reshape(ad.reshape(x, (1, 1)), (1,))
        backward(ad.tsum(y))
        assert np.array_equal(x.grad, [1.0])

    def test_elementwise_square(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward(ad.tsum(x * x))
        assert np.array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_fanout_sums_path_gradients(self):
        x = Tensor([1.0, -2.0], requires_grad=True)
        y = ad.tsum(x * x) + ad.tsum(x * 3.0)  # dy/dx = 2x + 3
        backward(y)
        assert np.allclose(x.grad, 2 * x.data + 3.0)

    def test_non_scalar_root_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            backward(x * 2.0)

    def test_grad_accumulates_across_sweeps(self):
        x = Tensor([2.0], requires_grad=True)
        y = ad.tsum(x * x)
        backward(y)
        backward(y)
        assert np.allclose(x.grad, [8.0])  # 4.0 twice


class TestGradCheck:
    def test_sum_is_exact(self):
        err = grad_check(lambda t: ad.tsum(t), np.random.default_rng(0).normal(size=(3, 3)))
        assert err < 1e-9

    def test_composite_graph(self):
        weight = Tensor(np.random.default_rng(1).normal(size=(4, 4)))

        def f(t):
            h = ad.gelu(ad.matmul(t, weight))
            return ad.tsum(ad.softmax(h, axis=-1) * h)

        assert grad_check(f, np.random.default_rng(2).normal(size=(3, 4))) < 1e-4

    @pytest.mark.parametrize(
        "name,fn,sampler",
        [
            ("add", lambda t: ad.tsum(t + t * 0.5), lambda r: r.normal(size=(2, 3))),
            ("mul", lambda t: ad.tsum(t * t), lambda r: r.normal(size=(2, 3))),
            ("div", lambda t: ad.tsum(1.0 / (t * t + 2.0)), lambda r: r.normal(size=(2, 3))),
            ("softmax", lambda t: ad.tsum(ad.softmax(t, axis=-1) * ad.softmax(t, axis=-1)), lambda r: r.normal(size=(2, 4))),
            ("sigmoid", lambda t: ad.tsum(ad.sigmoid(t) * 1.7), lambda r: r.normal(size=(5,))),
            ("gelu", lambda t: ad.tsum(ad.gelu(t)), lambda r: r.normal(size=(5,))),
            ("sqrt", lambda t: ad.tsum(ad.sqrt(t * t + 1.0)), lambda r: r.normal(size=(4,))),
            ("log_clamped", lambda t: ad.tsum(ad.log_clamped(t)), lambda r: r.uniform(0.05, 0.95, size=(6,))),
            ("mean", lambda t: ad.tmean(t * t), lambda r: r.normal(size=(3, 3))),
            ("transpose", lambda t: ad.tsum(ad.transpose(t, (1, 0)) * 2.0), lambda r: r.normal(size=(2, 4))),
            ("narrow", lambda t: ad.tsum(ad.narrow(t, 0, 1, 2) * ad.narrow(t, 0, 0, 2)), lambda r: r.normal(size=(4, 3))),
            ("concat", lambda t: ad.tsum(ad.concat([t, t * 2.0], axis=0) * 1.5), lambda r: r.normal(size=(2, 2))),
        ],
    )
    def test_each_op(self, name, fn, sampler):
        rng = np.random.default_rng(hash(name) % 2**32)
        for _ in range(10):
            assert grad_check(fn, sampler(rng)) < 1e-4

    def test_conv_ops(self):
        rng = np.random.default_rng(9)
        kernel = Tensor(rng.normal(size=(2, 1, 3, 3)))

        def f(t):
            return ad.tsum(ad.conv2d(t, kernel, stride=2, padding=1) * 0.5)

        assert grad_check(f, rng.normal(size=(1, 5, 5))) < 1e-4

        ck = Tensor(rng.normal(size=(2, 3, 3, 3)))

        def g(t):
            return ad.tsum(ad.coordconv2d(t, ck, stride=1, padding=1) * 0.3)

        assert grad_check(g, rng.normal(size=(1, 4, 4))) < 1e-4

    def test_kernel_gradient(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(2, 4, 4)))

        def f(t):
            return ad.tsum(ad.conv2d(x, ad.reshape(t, (2, 2, 2, 2))))

        assert grad_check(f, rng.normal(size=(2, 2, 2, 2))) < 1e-4

    def test_embedding_gradient(self):
        rng = np.random.default_rng(12)
        ids = [0, 2, 2, 1]

        def f(t):
            return ad.tsum(ad.embedding(t, ids) * 1.3)

        assert grad_check(f, rng.normal(size=(3, 4))) < 1e-4
