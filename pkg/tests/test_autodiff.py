"""Reverse-mode autodiff: op semantics, finite-difference checks, Adam."""

import numpy as np
import pytest

from coopbeam.autodiff import (
    DiffTensor,
    ParamBlock,
    add,
    check_gradients,
    cross_entropy_with_logits,
    layer_norm,
    matmul,
    mul,
    sigmoid,
    softmax,
    sum_,
    tensor,
)
from coopbeam.errors import DivergedError
from coopbeam.optim import Adam

from op_suite import op_cases, run_case
from oracles import ref_adam

CASES = op_cases()


class TestForwardSemantics:
    def test_softmax_uniform_on_equal_logits(self):
        out = softmax(tensor(np.zeros((2, 4))))
        np.testing.assert_allclose(out.data, 0.25, atol=1e-15)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        out = softmax(tensor(rng.standard_normal((5, 7))))
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_layer_norm_standardizes(self):
        rng = np.random.default_rng(1)
        x = tensor(rng.standard_normal((4, 16)) * 10 + 2)
        g = tensor(np.ones(16))
        b = tensor(np.zeros(16))
        out = layer_norm(x, g, b, eps=1e-5).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-6)

    def test_sigmoid_symmetric(self):
        x = tensor(np.linspace(-20, 20, 11))
        s = sigmoid(x).data
        np.testing.assert_allclose(s + sigmoid(tensor(-x.data)).data, 1.0, atol=1e-12)

    def test_python_operators_match_ops(self):
        a = tensor(np.asarray([[1.0, 2.0]]), requires_grad=True)
        b = tensor(np.asarray([[3.0, 4.0]]))
        np.testing.assert_array_equal((a + b).data, add(a, b).data)
        np.testing.assert_array_equal((a * b).data, mul(a, b).data)
        np.testing.assert_array_equal((a @ tensor(np.eye(2))).data, a.data)

    def test_grad_accumulates_across_uses(self):
        a = tensor(np.asarray([2.0]), requires_grad=True)
        loss = sum_(add(mul(a, a), a))  # a^2 + a -> grad 2a + 1 = 5
        loss.backward()
        np.testing.assert_allclose(a.grad, [5.0], atol=1e-12)

    def test_detach_blocks_gradient(self):
        a = tensor(np.asarray([3.0]), requires_grad=True)
        loss = sum_(mul(a.detach(), a))
        loss.backward()
        np.testing.assert_allclose(a.grad, [3.0], atol=1e-12)

    def test_deep_chain_backward_is_iterative(self):
        a = tensor(np.asarray([0.1]), requires_grad=True)
        x = a
        for _ in range(3000):
            x = add(x, a)
        sum_(x).backward()  # must not hit the recursion limit
        np.testing.assert_allclose(a.grad, [3001.0], atol=1e-9)

    def test_cross_entropy_validates_labels(self):
        logits = tensor(np.zeros((2, 4)), requires_grad=True)
        with pytest.raises(ValueError, match="labels"):
            cross_entropy_with_logits(logits, np.asarray([0, 4]))


class TestGradientChecks:
    @pytest.mark.parametrize("name,build", CASES, ids=[n for n, _ in CASES])
    def test_op_matches_finite_differences(self, name, build):
        report = run_case(name, build)
        assert report.max_rel_err <= 1e-3, (
            f"{name}: rel err {report.max_rel_err:.2e} at "
            f"{report.worst_block}[{report.worst_index}]"
        )

    def test_linear_graph_is_exact_to_roundoff(self):
        # matmul + add has zero curvature, so central differences agree to
        # floating-point precision rather than the generic 1e-3 bound.
        rng = np.random.default_rng(4)
        a = ParamBlock("a", DiffTensor(rng.standard_normal((3, 4)), requires_grad=True))
        b = ParamBlock("b", DiffTensor(rng.standard_normal((4, 2)), requires_grad=True))
        proj = rng.standard_normal((3, 2))

        def loss_fn():
            return sum_(mul(matmul(a.tensor, b.tensor), DiffTensor(proj)))

        report = check_gradients(loss_fn, [a, b])
        assert report.max_rel_err <= 1e-8

    def test_frozen_blocks_are_skipped(self):
        rng = np.random.default_rng(5)
        a = ParamBlock("a", DiffTensor(rng.standard_normal(4), requires_grad=True))
        frozen = ParamBlock(
            "frozen", DiffTensor(rng.standard_normal(4), requires_grad=True), trainable=False
        )

        def loss_fn():
            return sum_(mul(a.tensor, frozen.tensor))

        report = check_gradients(loss_fn, [a, frozen])
        assert "frozen" not in report.per_block
        assert report.max_rel_err <= 1e-8


class TestAdam:
    def test_first_step_size_is_learning_rate(self):
        w = ParamBlock("w", DiffTensor(np.asarray([1.0]), requires_grad=True))
        opt = Adam([w], lr=1e-3)
        w.tensor.grad = np.asarray([1.0])
        opt.step()
        assert w.tensor.data[0] == pytest.approx(1.0 - 1e-3, abs=1e-9)

    def test_zero_gradient_leaves_weight_unchanged(self):
        w = ParamBlock("w", DiffTensor(np.asarray([1.5]), requires_grad=True))
        opt = Adam([w], lr=1e-3)
        w.tensor.grad = np.asarray([0.0])
        opt.step()
        assert w.tensor.data[0] == 1.5

    def test_missing_gradient_treated_as_zero(self):
        w = ParamBlock("w", DiffTensor(np.asarray([2.0]), requires_grad=True))
        Adam([w], lr=1e-3).step()
        assert w.tensor.data[0] == 2.0

    def test_frozen_block_never_moves(self):
        w = ParamBlock("w", DiffTensor(np.asarray([1.0]), requires_grad=True), trainable=False)
        opt = Adam([w], lr=0.1)
        w.tensor.grad = np.asarray([5.0])
        opt.step()
        assert w.tensor.data[0] == 1.0

    def test_multi_step_matches_reference(self):
        rng = np.random.default_rng(6)
        w0 = rng.standard_normal(5)
        grads = [rng.standard_normal(5) for _ in range(7)]
        w = ParamBlock("w", DiffTensor(w0.copy(), requires_grad=True))
        opt = Adam([w], lr=0.01)
        for g in grads:
            opt.zero_grad()
            w.tensor.grad = g.copy()
            opt.step()
        np.testing.assert_allclose(w.tensor.data, ref_adam(w0, grads, lr=0.01), atol=1e-12)

    def test_zero_grad_clears_accumulators(self):
        w = ParamBlock("w", DiffTensor(np.asarray([1.0]), requires_grad=True))
        opt = Adam([w], lr=1e-3)
        w.tensor.grad = np.asarray([1.0])
        opt.zero_grad()
        assert w.tensor.grad is None

    def test_diverged_weights_raise(self):
        w = ParamBlock("w", DiffTensor(np.asarray([1.0]), requires_grad=True))
        opt = Adam([w], lr=1e-3)
        w.tensor.grad = np.asarray([np.nan])
        with pytest.raises(DivergedError):
            opt.step()
