"""Tensor engine: forward values against hand arithmetic and oracles, gradients
against central finite differences, and the optimizer contracts."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relmux import tensor as T
from relmux.gradcheck import finite_diff_check
from relmux.optim import AdamW
from relmux.oracles import oracle_adamw_step, oracle_cross_entropy
from relmux.params import ParamRegistry
from relmux.tensor import NEG_INF, ShapeError, Tensor


class TestMatmul:
    def test_identity(self, rng):
        a = Tensor(rng.normal(size=(2, 2)))
        out = T.matmul(Tensor(np.eye(2)), a)
        assert np.array_equal(out.data, a.data)

    def test_hand_arithmetic(self):
        out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[0.0], [1.0]]))
        assert np.array_equal(out.data, [[2.0], [4.0]])

    def test_gradient_vs_finite_differences(self, rng):
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        report = finite_diff_check(lambda: T.tsum(T.matmul(a, b)), {"a": a, "b": b}, max_coords=12)
        assert report.max_rel_error < 1e-6

    def test_shape_mismatch_names_both_shapes(self, rng):
        with pytest.raises(ShapeError, match=r"\(3, 4\).*\(3, 2\)"):
            T.matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 2))))


class TestSoftmaxRows:
    def test_symmetry(self):
        out = T.softmax_rows(Tensor([2.0, 2.0, 2.0]))
        assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_analytic_ln2(self):
        out = T.softmax_rows(Tensor([0.0, math.log(2.0)]))
        assert np.allclose(out.data, [1 / 3, 2 / 3], atol=1e-15)

    def test_stabilized_no_overflow(self):
        out = T.softmax_rows(Tensor([1000.0, 0.0]))
        assert np.isfinite(out.data).all()
        assert out.data[0] == pytest.approx(1.0)
        assert out.data[1] == pytest.approx(0.0, abs=1e-300)

    def test_nan_input_rejected(self):
        with pytest.raises(ValueError, match="NaN"):
            T.softmax_rows(Tensor([np.nan, 0.0]))

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
    def test_rows_sum_to_one(self, values):
        out = T.softmax_rows(Tensor(values))
        assert abs(out.data.sum() - 1.0) < 1e-12

    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=6), st.randoms())
    def test_permutation_equivariance(self, values, pyrandom):
        perm = list(range(len(values)))
        pyrandom.shuffle(perm)
        direct = T.softmax_rows(Tensor([values[i] for i in perm])).data
        unshuffled = T.softmax_rows(Tensor(values)).data[perm]
        assert np.allclose(direct, unshuffled, atol=1e-12)

    def test_gradient(self, rng):
        x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 5)))
        report = finite_diff_check(lambda: T.tsum(T.mul(T.softmax_rows(x), w)), {"x": x})
        assert report.max_rel_error < 1e-6


class TestLayerNorm:
    def test_constant_row_is_zeroed(self):
        x = Tensor([[3.0, 3.0, 3.0, 3.0]])
        out = T.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
        assert np.allclose(out.data, 0.0, atol=1e-12)

    def test_two_point_row(self):
        out = T.layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
        assert np.allclose(out.data, [[1.0, -1.0]], atol=1e-4)

    def test_single_feature_rejected(self):
        with pytest.raises(ShapeError):
            T.layer_norm(Tensor([[1.0]]), Tensor(np.ones(1)), Tensor(np.zeros(1)))

    def test_gradient_vs_finite_differences(self, rng):
        x = Tensor(rng.normal(size=(2, 8)), requires_grad=True)
        gain = Tensor(rng.normal(size=8), requires_grad=True)
        bias = Tensor(rng.normal(size=8), requires_grad=True)
        w = Tensor(rng.normal(size=(2, 8)))
        report = finite_diff_check(
            lambda: T.tsum(T.mul(T.layer_norm(x, gain, bias), w)),
            {"x": x, "gain": gain, "bias": bias},
            max_coords=16,
        )
        assert report.max_rel_error < 1e-6


class TestActivations:
    def test_relu_values(self):
        assert np.array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_relu_subgradient_zero_at_zero(self):
        x = Tensor([0.0], requires_grad=True)
        T.tsum(T.relu(x)).backward()
        assert x.grad[0] == 0.0

    def test_tanh_zero(self):
        assert T.tanh(Tensor([0.0])).data[0] == 0.0

    def test_tanh_gradient_high_precision(self):
        x = Tensor([0.5], requires_grad=True)
        report = finite_diff_check(lambda: T.tsum(T.tanh(x)), {"x": x}, step=1e-6)
        assert report.max_rel_error < 1e-8


class TestCrossEntropy:
    def test_dominant_logit_loss_near_zero(self):
        logits = Tensor([50.0, 0.0, 0.0])
        assert T.cross_entropy(logits, 0).item() < 1e-12

    def test_uniform_36_classes(self):
        loss = T.cross_entropy(Tensor(np.zeros(36)), 7)
        assert loss.item() == pytest.approx(math.log(36.0), abs=1e-12)
        assert loss.item() == pytest.approx(3.5835, abs=5e-4)

    def test_against_direct_formula_oracle(self):
        logits = np.array([1.0, 2.0, 3.0])
        loss = T.cross_entropy(Tensor(logits), 0)
        assert loss.item() == pytest.approx(oracle_cross_entropy(logits, 0), abs=1e-14)

    def test_gradient_is_softmax_minus_onehot(self):
        logits = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        T.cross_entropy(logits, 0).backward()
        p = np.exp([1.0, 2.0, 3.0]) / np.exp([1.0, 2.0, 3.0]).sum()
        expected = p - np.array([1.0, 0.0, 0.0])
        assert np.allclose(logits.grad, expected, atol=1e-14)

    def test_additive_mask_excludes_classes(self):
        logits = Tensor([1.0, 2.0, 3.0])
        mask = np.array([0.0, NEG_INF, 0.0])
        loss = T.cross_entropy(logits, 0, mask)
        want = -math.log(math.exp(1.0) / (math.exp(1.0) + math.exp(3.0)))
        assert loss.item() == pytest.approx(want, abs=1e-12)

    def test_masked_gold_rejected(self):
        with pytest.raises(ValueError, match="masked"):
            T.cross_entropy(Tensor([1.0, 2.0]), 1, np.array([0.0, NEG_INF]))

    def test_gold_out_of_range(self):
        with pytest.raises(IndexError):
            T.cross_entropy(Tensor([1.0, 2.0]), 5)


class TestPlumbingOps:
    def test_composite_gradients(self, rng):
        table = Tensor(rng.normal(size=(5, 3)), requires_grad=True)

        def f():
            rows = T.gather_rows(table, [0, 2, 2, 4])
            h = T.relu(T.tanh(rows))
            c = T.concat([h, h], axis=1)
            n = T.narrow(c, 1, 1, 3)
            r = T.repeat_rows(T.narrow(n, 0, 0, 1), 3)
            return T.tsum(T.mul(r, r))

        report = finite_diff_check(f, {"table": table}, max_coords=15)
        assert report.max_rel_error < 1e-6

    def test_backward_requires_scalar(self, rng):
        x = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        with pytest.raises(ShapeError):
            T.matmul(x, x).backward()

    def test_gradient_accumulation_is_deterministic(self, rng):
        x = Tensor(rng.normal(size=(2, 2)), requires_grad=True)

        def loss():
            y = T.matmul(x, x)
            return T.tsum(T.add_n([y, T.neg(y), T.mul(y, 2.0)]))

        loss().backward()
        g1 = x.grad.copy()
        x.grad = None
        loss().backward()
        assert np.array_equal(g1, x.grad)


class TestAdamW:
    def _registry(self, value: float) -> ParamRegistry:
        reg = ParamRegistry()
        reg.add("p", np.array([value]))
        return reg

    def test_decay_only_step(self):
        reg = self._registry(2.0)
        opt = AdamW(reg, lr=0.1, weight_decay=0.5)
        reg["p"].grad = np.zeros(1)
        opt.step()
        assert reg["p"].data[0] == pytest.approx(2.0 * (1.0 - 0.1 * 0.5), abs=1e-15)

    def test_frozen_param_bitwise_unchanged(self):
        reg = ParamRegistry()
        reg.add("w", np.array([1.0, -2.0]))
        reg.add("frozen", np.array([0.5, 0.25]))
        reg.freeze(["frozen"])
        before = reg["frozen"].data.copy()
        opt = AdamW(reg, lr=0.1, weight_decay=0.5)
        reg["w"].grad = np.array([1.0, 1.0])
        reg["frozen"].grad = np.array([10.0, 10.0])  # even with a gradient present
        opt.step()
        assert np.array_equal(reg["frozen"].data, before)
        assert not np.array_equal(reg["w"].data, [1.0, -2.0])

    def test_moment_buffers_only_for_unfrozen(self):
        reg = ParamRegistry()
        reg.add("a", np.zeros(2))
        reg.add("b", np.zeros(2))
        reg.freeze(["b"])
        opt = AdamW(reg)
        assert set(opt.m) == {"a"}
        assert set(opt.v) == {"a"}

    def test_single_step_matches_hand_rolled_oracle(self):
        reg = self._registry(1.0)
        lr, wd, b1, b2, eps = 1e-2, 0.1, 0.9, 0.999, 1e-8
        opt = AdamW(reg, lr=lr, weight_decay=wd, beta1=b1, beta2=b2, eps=eps)
        reg["p"].grad = np.array([0.5])
        opt.step()
        want = oracle_adamw_step(1.0, 0.5, lr, wd, b1, b2, eps)
        assert reg["p"].data[0] == pytest.approx(want, abs=1e-15)

    def test_missing_grad_raises(self):
        reg = self._registry(1.0)
        opt = AdamW(reg)
        with pytest.raises(ValueError, match="missing gradient"):
            opt.step()

    def test_two_identical_runs_bitwise_equal(self, rng):
        def run():
            r = np.random.default_rng(7)
            reg = ParamRegistry()
            reg.add("w", r.normal(size=(4, 4)))
            opt = AdamW(reg, lr=3e-3)
            data = r.normal(size=(4, 4))
            for _ in range(20):
                opt.zero_grad()
                loss = T.tsum(T.mul(T.matmul(reg["w"], Tensor(data)), T.matmul(reg["w"], Tensor(data))))
                loss.backward()
                opt.step()
            return reg["w"].data.copy()

        assert np.array_equal(run(), run())


class TestFiniteDiffCheck:
    def test_square_function(self):
        x = Tensor([3.0], requires_grad=True)
        report = finite_diff_check(lambda: T.tsum(T.mul(x, x)), {"x": x})
        assert x.grad[0] == pytest.approx(6.0, abs=1e-9)
        assert report.max_rel_error < 1e-7
