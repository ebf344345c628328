"""Tensor engine, optimizer, gradient checker, and checkpoint format."""

import math

import numpy as np
import pytest

from segsum.numerics import (
    Adam,
    Parameter,
    Tensor,
    TensorError,
    bce_with_logits,
    concat,
    cross_entropy_label_smoothed,
    dropout,
    gather_rows,
    gelu,
    grad_check,
    layer_norm,
    linear,
    load_checkpoint,
    matmul,
    merge_heads,
    no_grad,
    relu,
    save_checkpoint,
    softmax_masked,
    split_heads,
    tensor_sum,
)


class TestBackwardAgainstFiniteDifferences:
    """Every op's adjoint must match central differences (float64)."""

    def _check(self, make_loss, params, tol=1e-6):
        report = grad_check(params, make_loss, h=1e-6, tolerance=tol)
        assert report.max_rel_error < tol, report.summary_lines()

    def test_matmul_sum(self):
        rng = np.random.default_rng(0)
        a = Parameter("a", rng.normal(size=(3, 4)))
        b = Parameter("b", rng.normal(size=(4, 2)))
        self._check(lambda: tensor_sum(matmul(a, b)), [a, b])

    def test_matmul_gradient_is_ones_times_bt(self):
        """d sum(A @ B) / dA = ones @ B^T, checked against the closed form."""
        rng = np.random.default_rng(1)
        a = Parameter("a", rng.normal(size=(5, 3)))
        b = Parameter("b", rng.normal(size=(3, 4)))
        loss = tensor_sum(matmul(a, b))
        loss.backward()
        expected = np.ones((5, 4)) @ b.data.T
        np.testing.assert_allclose(a.grad, expected, atol=1e-12)

    def test_elementwise_and_shapes(self):
        rng = np.random.default_rng(2)
        a = Parameter("a", rng.normal(size=(2, 3)))
        b = Parameter("b", rng.normal(size=(3,)))
        w = rng.normal(size=(2, 3))

        def loss():
            h = (a + b) * a - b
            return tensor_sum(h * Tensor(w))

        self._check(loss, [a, b])

    def test_linear_fused(self):
        rng = np.random.default_rng(3)
        x = Parameter("x", rng.normal(size=(4, 3)))
        w = Parameter("w", rng.normal(size=(3, 5)))
        bias = Parameter("bias", rng.normal(size=(5,)))
        mix = rng.normal(size=(4, 5))
        self._check(lambda: tensor_sum(linear(x, w, bias) * Tensor(mix)), [x, w, bias])

    def test_nonlinearities(self):
        rng = np.random.default_rng(4)
        a = Parameter("a", rng.normal(size=(3, 4)))
        mix = rng.normal(size=(3, 4))
        self._check(lambda: tensor_sum(gelu(a) * Tensor(mix)), [a])
        self._check(lambda: tensor_sum(relu(a + 0.1) * Tensor(mix)), [a], tol=1e-5)

    def test_layer_norm(self):
        rng = np.random.default_rng(5)
        a = Parameter("a", rng.normal(size=(4, 6)))
        g = Parameter("g", rng.normal(size=(6,)))
        b = Parameter("b", rng.normal(size=(6,)))
        mix = rng.normal(size=(4, 6))
        self._check(lambda: tensor_sum(layer_norm(a, g, b) * Tensor(mix)), [a, g, b])

    def test_layer_norm_constant_row_is_zero_before_affine(self):
        g = Parameter("g", np.ones(5))
        b = Parameter("b", np.zeros(5))
        out = layer_norm(Tensor(np.full((2, 5), 3.7)), g, b)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_softmax_masked_and_gather(self):
        rng = np.random.default_rng(6)
        a = Parameter("a", rng.normal(size=(3, 5)))
        mask = np.array([[1, 1, 0, 1, 0], [1, 1, 1, 1, 1], [0, 1, 0, 0, 0]])
        mix = rng.normal(size=(3, 5))
        self._check(lambda: tensor_sum(softmax_masked(a, mask) * Tensor(mix)), [a])
        table = Parameter("table", rng.normal(size=(7, 4)))
        idx = np.array([0, 3, 3, 6])
        mix2 = rng.normal(size=(4, 4))
        self._check(lambda: tensor_sum(gather_rows(table, idx) * Tensor(mix2)), [table])

    def test_split_merge_concat(self):
        rng = np.random.default_rng(7)
        a = Parameter("a", rng.normal(size=(5, 6)))
        b = Parameter("b", rng.normal(size=(2, 6)))
        mix = rng.normal(size=(2, 7, 3))

        def loss():
            stacked = concat([a, b], axis=0)
            return tensor_sum(split_heads(stacked, 2) * Tensor(mix))

        self._check(loss, [a, b])
        mix2 = rng.normal(size=(5, 6))
        self._check(lambda: tensor_sum(merge_heads(split_heads(a, 3)) * Tensor(mix2)), [a])

    def test_losses(self):
        rng = np.random.default_rng(8)
        logits = Parameter("logits", rng.normal(size=(6, 9)))
        targets = np.array([1, 0, 8, -1, 4, 2])
        self._check(
            lambda: cross_entropy_label_smoothed(logits, targets, 0.1, ignore_id=-1),
            [logits],
        )
        z = Parameter("z", rng.normal(size=(7,)))
        labels = (rng.random(7) > 0.5).astype(float)
        self._check(lambda: bce_with_logits(z, labels), [z])

    def test_random_op_chains(self):
        """A few deeper random compositions, shapes <= 8 per axis."""
        rng = np.random.default_rng(9)
        for trial in range(5):
            n, m, k = rng.integers(2, 8, size=3)
            a = Parameter("a", rng.normal(size=(int(n), int(m))))
            w1 = Parameter("w1", rng.normal(size=(int(m), int(k))))
            g = Parameter("g", rng.normal(size=(int(k),)))
            b = Parameter("b", rng.normal(size=(int(k),)))
            mask = (rng.random((int(n), int(k))) > 0.3).astype(float)
            mix = rng.normal(size=(int(n), int(k)))

            def loss():
                h = layer_norm(gelu(linear(a, w1)), g, b)
                return tensor_sum(softmax_masked(h, mask) * Tensor(mix))

            # 1e-3 is the contract; near-zero gradients hit finite
            # difference noise well before the adjoints are wrong
            self._check(loss, [a, w1, g, b], tol=1e-3)


class TestSoftmaxMasked:
    def test_uniform_over_unmasked(self):
        p = softmax_masked(Tensor(np.zeros(3)), np.array([1, 1, 0]))
        np.testing.assert_array_equal(p.data, [0.5, 0.5, 0.0])

    def test_closed_form(self):
        p = softmax_masked(Tensor(np.array([0.0, math.log(2)])), np.array([1, 1]))
        np.testing.assert_allclose(p.data, [1 / 3, 2 / 3], atol=1e-12)

    def test_all_zero_mask_falls_back_to_full_softmax(self):
        z = np.array([1.0, -0.5, 3.0])
        masked = softmax_masked(Tensor(z), np.zeros(3))
        full = softmax_masked(Tensor(z), None)
        np.testing.assert_array_equal(masked.data, full.data)

    def test_masked_positions_exactly_zero_and_rows_normalized(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            z = rng.normal(size=(4, 6)) * 5
            mask = rng.random((4, 6)) > 0.4
            p = softmax_masked(Tensor(z), mask).data
            assert np.all(p >= 0) and np.all(p <= 1)
            np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)
            live_rows = mask.any(axis=-1)
            assert np.all(p[live_rows][~mask[live_rows]] == 0.0)

    def test_backward_never_touches_masked_positions(self):
        rng = np.random.default_rng(11)
        logits = Parameter("l", rng.normal(size=(3, 5)))
        mask = np.array([[1, 0, 1, 0, 1], [1, 1, 1, 1, 1], [0, 0, 1, 0, 0]])
        out = softmax_masked(logits, mask)
        tensor_sum(out * Tensor(rng.normal(size=(3, 5)))).backward()
        assert np.all(logits.grad[mask == 0] == 0.0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(TensorError, match="mask shape"):
            softmax_masked(Tensor(np.zeros((2, 3))), np.ones((2, 4)))


class TestCrossEntropyLabelSmoothed:
    def test_peaked_logits_zero_loss(self):
        logits = np.full((3, 5), -50.0)
        logits[np.arange(3), [1, 2, 4]] = 50.0
        loss = cross_entropy_label_smoothed(Tensor(logits), [1, 2, 4], 0.0)
        assert loss.item() < 1e-6

    def test_uniform_logits_log_vocab(self):
        loss = cross_entropy_label_smoothed(Tensor(np.zeros((2, 4))), [0, 3], 0.0)
        np.testing.assert_allclose(loss.item(), math.log(4), atol=1e-12)

    def test_smoothed_matches_hand_formula(self):
        """Independent evaluation of the smoothed loss: 1-eps on the gold
        id, eps/(V-1) spread over the rest."""
        z = [0.5, -0.2, 0.1, 0.9, -0.5, 0.3, 0.0, -1.0]
        target, eps = 3, 0.1
        denom = sum(math.exp(v) for v in z)
        logp = [v - math.log(denom) for v in z]
        expected = -(1 - eps) * logp[target] - (eps / 7) * sum(
            lp for i, lp in enumerate(logp) if i != target
        )
        loss = cross_entropy_label_smoothed(Tensor(np.array([z])), [target], eps)
        np.testing.assert_allclose(loss.item(), expected, atol=1e-12)

    def test_ignored_positions_contribute_nothing(self):
        rng = np.random.default_rng(12)
        z = rng.normal(size=(4, 6))
        full = cross_entropy_label_smoothed(Tensor(z[:2]), [1, 2], 0.1)
        padded = cross_entropy_label_smoothed(Tensor(z), [1, 2, 0, 0], 0.1, ignore_id=0)
        np.testing.assert_allclose(full.item(), padded.item(), atol=1e-12)

    def test_empty_non_ignored_rejected(self):
        with pytest.raises(TensorError, match="non-ignored"):
            cross_entropy_label_smoothed(Tensor(np.zeros((2, 4))), [0, 0], 0.1, ignore_id=0)


class TestOps:
    def test_shape_errors_name_op_and_shapes(self):
        with pytest.raises(TensorError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
        with pytest.raises(TensorError, match="add"):
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros((4,)))

    def test_diamond_graph_accumulates(self):
        x = Parameter("x", np.array([[2.0]]))
        y = tensor_sum(x + x)
        y.backward()
        np.testing.assert_array_equal(x.grad, [[2.0]])

    def test_no_grad_blocks_graph(self):
        x = Parameter("x", np.ones((2, 2)))
        with no_grad():
            y = tensor_sum(x * x)
        assert y._backward_fn is None and not y.requires_grad

    def test_dropout_zero_rate_is_identity(self):
        x = Tensor(np.ones((3, 3)))
        assert dropout(x, 0.0, np.random.default_rng(0)) is x

    def test_dropout_scales_kept_values(self):
        rng = np.random.default_rng(13)
        x = Tensor(np.ones((50, 50)))
        out = dropout(x, 0.25, rng).data
        assert set(np.unique(out)) <= {0.0, 1.0 / 0.75}


class TestAdam:
    def test_zero_gradients_leave_parameters_unchanged(self):
        p = Parameter("p", np.array([1.0, -2.0]))
        opt = Adam([p], lr=0.1)
        p.grad = np.zeros(2)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_first_step_moves_by_learning_rate(self):
        """Bias correction makes step one ~ lr for unit gradient."""
        p = Parameter("p", np.array([1.0]))
        opt = Adam([p], lr=0.1)
        p.grad = np.array([1.0])
        opt.step()
        np.testing.assert_allclose(1.0 - p.data[0], 0.1, atol=1e-7)

    def test_deterministic(self):
        def run():
            p = Parameter("p", np.array([0.3, -0.7]))
            opt = Adam([p], lr=0.01)
            for t in range(5):
                p.grad = np.array([0.1 * t, -0.2])
                opt.step()
            return p.data.copy()

        np.testing.assert_array_equal(run(), run())


class TestGradCheck:
    def test_linear_model_is_exact(self):
        rng = np.random.default_rng(14)
        w = Parameter("w", rng.normal(size=(3, 4)))
        x = Tensor(rng.normal(size=(2, 3)))
        report = grad_check([w], lambda: tensor_sum(matmul(x, w)), h=1e-6)
        assert report.max_rel_error < 1e-8

    def test_unused_parameter_reports_zero_error(self):
        w = Parameter("w", np.ones((2, 2)))
        unused = Parameter("unused", np.ones((3,)))
        report = grad_check([w, unused], lambda: tensor_sum(w * w), h=1e-6)
        by_name = {p.name: p for p in report.per_param}
        assert by_name["unused"].max_rel_error == 0.0

    def test_non_finite_loss_rejected(self):
        w = Parameter("w", np.array([[1.0]]))
        with pytest.raises(TensorError, match="non-finite"):
            grad_check([w], lambda: Tensor(np.array(np.inf)), h=1e-6)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(15)
        path = str(tmp_path / "model.ckpt")
        tensors = [
            ("a", rng.normal(size=(3, 4)).astype(np.float32)),
            ("b", rng.normal(size=(7,)).astype(np.float64)),
        ]
        config = {"model": {"d_model": 4}, "note": "x"}
        save_checkpoint(path, config, tensors)
        config2, loaded = load_checkpoint(path)
        assert config2 == config
        for name, arr in tensors:
            np.testing.assert_array_equal(loaded[name], arr)
            assert loaded[name].dtype == arr.dtype

    def test_resave_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(16)
        a = str(tmp_path / "a.ckpt")
        b = str(tmp_path / "b.ckpt")
        tensors = [("w", rng.normal(size=(5, 5)).astype(np.float32))]
        save_checkpoint(a, {"k": 1}, tensors)
        save_checkpoint(b, {"k": 1}, tensors)
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
        from segsum.numerics import CheckpointError

        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(str(path))
