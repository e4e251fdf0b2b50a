import numpy as np
import pytest

import scanplace.autodiff as ad
from scanplace.autodiff import Tensor
from scanplace.errors import ContractError, ShapeError

from _oracles import brute_softmax, numeric_gradient


def t(values, grad=True):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=grad)


class TestForwardValues:
    def test_add_sub_mul_div(self):
        a, b = t([1.0, 2.0]), t([3.0, 5.0])
        np.testing.assert_array_equal((a + b).data, [4.0, 7.0])
        np.testing.assert_array_equal((a - b).data, [-2.0, -3.0])
        np.testing.assert_array_equal((a * b).data, [3.0, 10.0])
        np.testing.assert_array_equal((b / a).data, [3.0, 2.5])

    def test_scalar_broadcast(self):
        a = t([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal((a + 1.0).data, [[2, 3], [4, 5]])
        np.testing.assert_array_equal((2.0 * a).data, [[2, 4], [6, 8]])
        np.testing.assert_array_equal((1.0 / a).data, 1.0 / a.data)

    def test_nonscalar_broadcast_rejected(self):
        a = t(np.ones((2, 3)))
        b = t(np.ones(3))
        with pytest.raises(ShapeError):
            ad.add(a, b)

    def test_matmul(self, rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        np.testing.assert_allclose(ad.matmul(t(a), t(b)).data, a @ b)

    def test_softmax_matches_oracle(self, rng):
        x = rng.normal(size=(4, 6))
        got = ad.softmax_along_axis(t(x), axis=1).data
        np.testing.assert_allclose(got, brute_softmax(x, axis=1), atol=1e-12)
        assert np.allclose(got.sum(axis=1), 1.0)

    def test_logsumexp_stable_at_large_values(self):
        x = t([[1000.0, 1000.0, 1000.0]])
        out = ad.logsumexp_along_axis(x, axis=1)
        np.testing.assert_allclose(out.data, [1000.0 + np.log(3.0)])

    def test_max_ties_pick_lowest_index(self):
        x = t([[2.0, 5.0, 5.0]])
        out = ad.max_along_axis(x, axis=1)
        ad.backward(ad.sum(out))
        np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0]])

    def test_nonfinite_input_rejected(self):
        with pytest.raises(ContractError):
            Tensor(np.array([1.0, np.inf]))

    def test_log_of_nonpositive_rejected(self):
        with pytest.raises(ContractError):
            ad.log(t([0.0, 1.0]))

    def test_l2_normalize_zero_rejected(self):
        with pytest.raises(ContractError):
            ad.l2_normalize(t([0.0, 0.0]))

    def test_gather_rows(self):
        a = t([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        out = ad.gather_rows(a, [2, 0, 2])
        np.testing.assert_array_equal(out.data, [[5, 6], [1, 2], [5, 6]])
        ad.backward(ad.sum(out))
        # row 2 gathered twice accumulates gradient 2
        np.testing.assert_array_equal(a.grad, [[1, 1], [0, 0], [2, 2]])


class TestGradcheckPerOp:
    """Central-difference checks over random inputs for every primitive."""

    CASES = {
        "add": lambda x: ad.sum(ad.add(x, 2.0 * x)),
        "sub": lambda x: ad.sum(ad.sub(x, ad.mul(x, x))),
        "mul": lambda x: ad.sum(ad.mul(x, x)),
        "div": lambda x: ad.sum(ad.div(x, ad.add(ad.mul(x, x), 2.0))),
        "neg": lambda x: ad.sum(ad.neg(ad.mul(x, x))),
        "scalar_pow": lambda x: ad.sum(ad.scalar_pow(ad.add(ad.mul(x, x), 1.0), 1.7)),
        "exp": lambda x: ad.sum(ad.exp(ad.mul(x, 0.5))),
        "log": lambda x: ad.sum(ad.log(ad.add(ad.mul(x, x), 1.0))),
        "tanh": lambda x: ad.sum(ad.tanh(x)),
        "sin": lambda x: ad.sum(ad.sin(ad.mul(x, 2.0))),
        "sigmoid": lambda x: ad.sum(ad.sigmoid(x)),
        "maximum": lambda x: ad.sum(ad.maximum(x, 0.1)),
        "transpose": lambda x: ad.sum(ad.mul(ad.transpose(x), ad.transpose(x))),
        "reshape": lambda x: ad.sum(ad.mul(ad.reshape(x, (-1,)), 3.0)),
        "sum_axis0": lambda x: ad.sum(ad.mul(ad.sum(x, axis=0), ad.sum(x, axis=0))),
        "sum_axis1": lambda x: ad.sum(ad.exp(ad.sum(x, axis=1))),
        "mean_all": lambda x: ad.mul(ad.mean(x), ad.mean(x)),
        "mean_axis": lambda x: ad.sum(ad.mul(ad.mean(x, axis=1), 2.0)),
        "softmax": lambda x: ad.sum(ad.mul(ad.softmax_along_axis(x, axis=1),
                                           ad.softmax_along_axis(x, axis=1))),
        "logsumexp": lambda x: ad.sum(ad.logsumexp_along_axis(x, axis=1)),
        "max_axis": lambda x: ad.sum(ad.max_along_axis(x, axis=1)),
        "tile_rows": lambda x: ad.sum(ad.exp(ad.tile_rows(ad.mean(x, axis=0), 4))),
        "tile_cols": lambda x: ad.sum(ad.exp(ad.tile_cols(ad.mean(x, axis=1), 5))),
        "concat": lambda x: ad.sum(ad.mul(ad.concat([x, ad.mul(x, 2.0)], axis=0), 1.5)),
        "gather": lambda x: ad.sum(ad.mul(ad.gather_rows(x, [1, 1, 0]), 2.0)),
        "slice_cols": lambda x: ad.sum(ad.exp(ad.slice_cols(x, 1, 3))),
        "matmul": lambda x: ad.sum(ad.matmul(x, ad.transpose(x))),
    }

    @pytest.mark.parametrize("name", sorted(CASES))
    def test_op(self, name):
        fn = self.CASES[name]
        for seed in range(3):
            rng = np.random.default_rng(seed)
            x = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
            report = ad.gradcheck(fn, x)
            assert report.passed, f"{name} seed {seed}: {report.failures[:3]}"

    def test_l2_normalize_grad(self):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            x = Tensor(rng.normal(size=7) + 2.0, requires_grad=True)
            report = ad.gradcheck(
                lambda v: ad.sum(ad.mul(ad.l2_normalize(v), np.arange(7.0))), x)
            assert report.passed

    def test_multi_input_graph(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 3)), requires_grad=True)

        def f(a, b):
            return ad.sum(ad.tanh(ad.matmul(a, b)))

        report = ad.gradcheck(f, [a, b])
        assert report.passed

    def test_gradcheck_catches_wrong_gradient(self):
        # a deliberately broken composite: forward sqrt via pow(0.5) but
        # gradient computed through a detached-style constant path
        x = Tensor(np.abs(np.random.default_rng(1).normal(size=4)) + 1.0,
                   requires_grad=True)

        def broken(v):
            # detach trick: data as plain constant kills the true path
            const = Tensor(v.data * v.data)
            return ad.sum(ad.add(const, ad.mul(v, 1e-8)))

        report = ad.gradcheck(broken, x)
        assert not report.passed


class TestBackwardSemantics:
    def test_grad_accumulates_within_one_backward(self):
        x = t([3.0])
        y = ad.add(ad.mul(x, x), ad.mul(x, 4.0))   # x^2 + 4x, dy/dx = 2x+4 = 10
        ad.backward(ad.sum(y))
        np.testing.assert_allclose(x.grad, [10.0])

    def test_fresh_zero_grads_per_backward(self):
        x = t([2.0])
        for _ in range(3):
            y = ad.mul(x, x)
            ad.backward(ad.sum(y))
            # each backward starts from zero, never accumulates across calls
            np.testing.assert_allclose(x.grad, [4.0])

    def test_separate_graphs_have_separate_tapes(self):
        x = t([1.0, 2.0])
        y1 = ad.sum(ad.mul(x, 2.0))
        y2 = ad.sum(ad.mul(x, 3.0))
        ad.backward(y1)
        np.testing.assert_allclose(x.grad, [2.0, 2.0])
        ad.backward(y2)
        np.testing.assert_allclose(x.grad, [3.0, 3.0])

    def test_shared_subexpression_merges_tapes(self):
        x = t([1.5])
        shared = ad.mul(x, x)
        y = ad.add(ad.exp(shared), ad.log(shared))
        ad.backward(ad.sum(y))
        v = 1.5 * 1.5
        want = (np.exp(v) + 1.0 / v) * 2.0 * 1.5
        np.testing.assert_allclose(x.grad, [want])

    def test_backward_needs_scalar(self):
        x = t([[1.0, 2.0]])
        with pytest.raises(ShapeError):
            ad.backward(ad.mul(x, 2.0))

    def test_no_grad_leaves_untouched(self):
        x = Tensor(np.ones(3), requires_grad=False)
        y = t(np.ones(3))
        out = ad.sum(ad.mul(x, y))
        ad.backward(out)
        assert x.grad is None
        np.testing.assert_allclose(y.grad, [1.0, 1.0, 1.0])

    def test_matches_independent_numeric_gradient(self, rng):
        # same function evaluated by raw-numpy central differences
        w = rng.normal(size=(3, 3))

        def np_fn(flat):
            m = flat.reshape(3, 3)
            h = np.tanh(m @ w)
            return float(np.sum(h * h))

        x0 = rng.normal(size=(3, 3))
        xt = Tensor(x0, requires_grad=True)
        out = ad.sum(ad.mul(ad.tanh(ad.matmul(xt, Tensor(w))),
                            ad.tanh(ad.matmul(xt, Tensor(w)))))
        ad.backward(out)
        want = numeric_gradient(np_fn, x0.reshape(-1)).reshape(3, 3)
        np.testing.assert_allclose(xt.grad, want, rtol=1e-6, atol=1e-8)


class TestTensorHygiene:
    def test_copies_readonly_input(self):
        arr = np.ones(4)
        arr.setflags(write=False)
        tt = Tensor(arr, requires_grad=True)
        tt.data[0] = 5.0   # must not raise: tensor owns a writable copy
        assert arr[0] == 1.0

    def test_float64_enforced(self):
        tt = Tensor(np.array([1, 2, 3], dtype=np.int32))
        assert tt.data.dtype == np.float64

    def test_scalar_item(self):
        assert ad.sum(t([1.0, 2.0])).item() == 3.0
