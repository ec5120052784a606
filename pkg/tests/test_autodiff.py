"""Tape tensor correctness: forward values, gradients, training loop."""

import numpy as np
import pytest

from geoedit.autodiff import (
    Adam,
    Module,
    Rng,
    Tensor,
    add_bias,
    add_channel_bias,
    backward,
    concat,
    conv2d,
    gather_tokens,
    load_checkpoint,
    matmul,
    mse,
    permute,
    relu,
    reshape,
    save_checkpoint,
    scale,
    scale_tokens,
    scatter_tokens,
    sigmoid,
    softmax_rows,
    tanh,
    tmean,
    tsum,
    uniform_init,
    upsample2,
)
from geoedit.errors import CheckpointFormatError, ContractError, DimensionError

from .gradcheck import check_gradients


class TestForwardValues:
    def test_softmax_known_row(self):
        # exp([1,2,3]) normalized, computed with mpmath at 50 digits
        out = softmax_rows(Tensor([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(
            out.data, [0.09003057317038046, 0.24472847105479767, 0.6652409557748219],
            rtol=1e-14,
        )

    def test_softmax_rows_sum_to_one(self):
        rng = Rng(7)
        x = Tensor(rng.normal((4, 9)) * 30.0)
        out = softmax_rows(x)
        np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(4), atol=1e-12)

    def test_softmax_shift_invariance(self):
        x = np.array([[500.0, 501.0, 499.0]])
        out = softmax_rows(Tensor(x))
        ref = softmax_rows(Tensor(x - 500.0))
        np.testing.assert_allclose(out.data, ref.data, rtol=1e-14)
        assert np.all(np.isfinite(out.data))

    def test_matmul_small(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[1.0], [1.0]])
        np.testing.assert_array_equal(matmul(a, b).data, [[3.0], [7.0]])

    def test_matmul_shape_error_names_both(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_mse_value_and_grad(self):
        x = Tensor([2.0], requires_grad=True)
        loss = mse(x, Tensor([0.0]))
        assert loss.item() == 4.0
        backward(loss)
        np.testing.assert_allclose(x.grad, [4.0])

    def test_backward_rejects_nonscalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ContractError, match="scalar"):
            backward(scale(x, 2.0))

    def test_grad_accumulates_across_backward_calls(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        for _ in range(2):
            backward(tsum(scale(x, 3.0)))
        np.testing.assert_allclose(x.grad, [6.0, 6.0])
        x.zero_grad()
        backward(tsum(scale(x, 3.0)))
        np.testing.assert_allclose(x.grad, [3.0, 3.0])

    def test_diamond_graph_grad(self):
        # y = x*x + x*x: both paths must contribute
        x = Tensor([3.0], requires_grad=True)
        y = x * x
        backward(tsum(y + y))
        np.testing.assert_allclose(x.grad, [12.0])

    def test_value_arrays_read_only(self):
        x = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            x.data[0] = 5.0

    def test_upsample2_forward(self):
        x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2))
        out = upsample2(x)
        np.testing.assert_array_equal(
            out.data[0, 0],
            [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]],
        )

    def test_gather_scatter_roundtrip(self):
        rng = Rng(3)
        x = Tensor(rng.normal((2, 5, 4)))
        idx = np.array([[0, 2, 4], [1, 2, 3]])
        rows = gather_tokens(x, idx)
        back_full = scatter_tokens(rows, idx, 5)
        for b in range(2):
            for j, i in enumerate(idx[b]):
                np.testing.assert_array_equal(back_full.data[b, i], x.data[b, idx[b, j]])
        kept = set(idx[0])
        for i in range(5):
            if i not in kept:
                np.testing.assert_array_equal(back_full.data[0, i], np.zeros(4))


class TestGradients:
    def test_matmul_fd(self):
        rng = Rng(11)
        a = Tensor(rng.normal((5, 7)), requires_grad=True)
        b = Tensor(rng.normal((7, 3)), requires_grad=True)
        check_gradients(lambda: tsum(matmul(a, b)), [a, b], tol=1e-6)

    def test_batched_matmul_fd(self):
        rng = Rng(12)
        a = Tensor(rng.normal((2, 4, 3)), requires_grad=True)
        b = Tensor(rng.normal((2, 3, 5)), requires_grad=True)
        check_gradients(lambda: tsum(matmul(a, b)), [a, b], tol=1e-6)

    def test_batched_by_shared_matmul_fd(self):
        rng = Rng(13)
        a = Tensor(rng.normal((2, 4, 3)), requires_grad=True)
        w = Tensor(rng.normal((3, 6)), requires_grad=True)
        check_gradients(lambda: tsum(matmul(a, w)), [a, w], tol=1e-6)

    def test_softmax_fd(self):
        rng = Rng(14)
        x = Tensor(rng.normal((3, 5)), requires_grad=True)
        t = Tensor(rng.normal((3, 5)))
        check_gradients(lambda: mse(softmax_rows(x), t), [x], tol=1e-6)

    def test_elementwise_chain_fd(self):
        rng = Rng(15)
        x = Tensor(rng.normal((4, 4)), requires_grad=True)
        check_gradients(
            lambda: tmean(tanh(x) * sigmoid(x) + relu(x)), [x], tol=1e-6
        )

    def test_add_bias_fd(self):
        rng = Rng(16)
        x = Tensor(rng.normal((2, 3, 4, 4)), requires_grad=True)
        b = Tensor(rng.normal(3), requires_grad=True)
        check_gradients(lambda: tsum(tanh(add_bias(x, b, axis=1))), [x, b], tol=1e-6)

    def test_add_channel_bias_fd(self):
        rng = Rng(35)
        x = Tensor(rng.normal((2, 3, 4, 4)), requires_grad=True)
        b = Tensor(rng.normal((2, 3)), requires_grad=True)
        check_gradients(lambda: tsum(tanh(add_channel_bias(x, b))), [x, b], tol=1e-6)

    def test_add_channel_bias_shape_mismatch(self):
        with pytest.raises(DimensionError):
            add_channel_bias(Tensor(np.zeros((2, 3, 4, 4))), Tensor(np.zeros((2, 4))))

    def test_reshape_permute_concat_fd(self):
        rng = Rng(17)
        x = Tensor(rng.normal((2, 3, 4)), requires_grad=True)
        y = Tensor(rng.normal((2, 3, 4)), requires_grad=True)

        def loss():
            p = permute(x, (0, 2, 1))
            r = reshape(p, (2, 12))
            q = reshape(permute(y, (0, 2, 1)), (2, 12))
            return tmean(concat([r, q], axis=1) * concat([q, r], axis=1))

        check_gradients(loss, [x, y], tol=1e-6)

    def test_gather_scatter_gate_fd(self):
        rng = Rng(18)
        x = Tensor(rng.normal((2, 6, 3)), requires_grad=True)
        s = Tensor(rng.uniform(0.1, 0.9, (2, 6)), requires_grad=True)
        idx = np.array([[0, 3, 5], [1, 2, 4]])

        def loss():
            gated = scale_tokens(x, s)
            rows = gather_tokens(gated, idx)
            return tsum(tanh(scatter_tokens(rows, idx, 6)))

        check_gradients(loss, [x, s], tol=1e-6)

    def test_conv2d_fd(self):
        rng = Rng(19)
        x = Tensor(rng.normal((2, 3, 6, 6)), requires_grad=True)
        w = Tensor(rng.normal((4, 3, 3, 3)) * 0.3, requires_grad=True)
        b = Tensor(rng.normal(4), requires_grad=True)
        check_gradients(
            lambda: tmean(tanh(conv2d(x, w, b, stride=1, padding=1))),
            [x, w, b],
            tol=1e-6,
        )

    def test_conv2d_strided_fd(self):
        rng = Rng(20)
        x = Tensor(rng.normal((1, 2, 8, 8)), requires_grad=True)
        w = Tensor(rng.normal((3, 2, 3, 3)) * 0.3, requires_grad=True)
        check_gradients(
            lambda: tsum(conv2d(x, w, stride=2, padding=1)), [x, w], tol=1e-6
        )

    def test_upsample2_fd(self):
        rng = Rng(21)
        x = Tensor(rng.normal((1, 2, 3, 3)), requires_grad=True)
        t = Tensor(rng.normal((1, 2, 6, 6)))
        check_gradients(lambda: mse(upsample2(x), t), [x], tol=1e-6)

    def test_three_layer_mlp_fd(self):
        rng = Rng(22)
        ws = [
            Tensor(uniform_init(rng.child(i), fan, (fan, out)), requires_grad=True)
            for i, (fan, out) in enumerate([(6, 8), (8, 8), (8, 2)])
        ]
        x = Tensor(rng.normal((5, 6)))
        t = Tensor(rng.normal((5, 2)))

        def loss():
            h = x
            for w in ws[:-1]:
                h = tanh(matmul(h, w))
            return mse(matmul(h, ws[-1]), t)

        worst = check_gradients(loss, ws, tol=1e-4)
        assert worst < 1e-4


class TestOptimizer:
    def test_adam_quadratic_converges(self):
        x = Tensor([5.0, -3.0], requires_grad=True)
        target = Tensor([1.0, 2.0])
        opt = Adam([x], lr=0.1)
        for _ in range(200):
            opt.zero_grad()
            loss = mse(x, target)
            backward(loss)
            opt.step()
        assert mse(x, target).item() < 1e-4

    def test_adam_requires_some_gradient(self):
        x = Tensor([1.0], requires_grad=True)
        opt = Adam([x])
        with pytest.raises(ContractError, match="gradient"):
            opt.step()

    def test_adam_zero_grad_leaves_param_unchanged(self):
        x = Tensor([1.0], requires_grad=True)
        y = Tensor([2.0], requires_grad=True)
        opt = Adam([x, y], lr=0.5)
        backward(mse(y, Tensor([0.0])))
        before = x.numpy()
        opt.step()
        np.testing.assert_array_equal(x.data, before)
        assert y.data[0] != 2.0


class TestModule:
    def test_duplicate_param_name_rejected(self):
        m = Module()
        m.add_param("w", np.zeros(2))
        with pytest.raises(ContractError, match="duplicate"):
            m.add_param("w", np.zeros(2))

    def test_nested_names_qualified(self):
        inner = Module()
        inner.add_param("w", np.zeros(2))
        outer = Module()
        outer.add_param("b", np.zeros(1))
        outer.block = inner
        names = [n for n, _ in outer.parameters()]
        assert names == ["b", "block.w"]

    def test_state_dict_roundtrip_and_mismatch(self):
        m = Module()
        m.add_param("w", np.arange(4.0))
        state = m.state_dict()
        m.load_state_dict(state)
        with pytest.raises(ContractError, match="mismatch"):
            m.load_state_dict({"other": np.zeros(1)})


class TestRng:
    def test_same_seed_same_stream(self):
        a = Rng(42).normal((3, 3))
        b = Rng(42).normal((3, 3))
        np.testing.assert_array_equal(a, b)

    def test_children_independent_and_reproducible(self):
        root = Rng(9)
        c0 = root.child(0).normal(5)
        c1 = root.child(1).normal(5)
        assert not np.array_equal(c0, c1)
        np.testing.assert_array_equal(c0, Rng(9).child(0).normal(5))

    def test_child_unaffected_by_parent_draws(self):
        r1 = Rng(5)
        r1.normal(100)
        r2 = Rng(5)
        np.testing.assert_array_equal(r1.child(3).normal(4), r2.child(3).normal(4))


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = Rng(33)
        tensors = {
            "layer.w": rng.normal((3, 4)),
            "layer.b": rng.normal(4).astype(np.float32),
            "scalarish": np.array([1e-300]),
        }
        path = tmp_path / "model.remd"
        save_checkpoint(path, tensors)
        loaded = load_checkpoint(path)
        assert list(loaded) == list(tensors)
        for name in tensors:
            assert loaded[name].dtype == tensors[name].dtype
            np.testing.assert_array_equal(loaded[name], tensors[name])

    def test_rejects_unknown_version(self, tmp_path):
        path = tmp_path / "bad.remd"
        save_checkpoint(path, {"x": np.zeros(2)})
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointFormatError, match="version"):
            load_checkpoint(path)

    def test_rejects_bad_magic_and_truncation(self, tmp_path):
        path = tmp_path / "bad2.remd"
        path.write_bytes(b"NOPE" + b"\x00" * 8)
        with pytest.raises(CheckpointFormatError, match="magic"):
            load_checkpoint(path)
        save_checkpoint(path, {"x": np.arange(10.0)})
        good = path.read_bytes()
        path.write_bytes(good[: len(good) - 4])
        with pytest.raises(CheckpointFormatError, match="truncated"):
            load_checkpoint(path)
