import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from objrf.tape import (
    Tensor,
    concat,
    grad_check,
    load_checkpoint,
    no_grad,
    save_checkpoint,
    tensor,
)


def t64(arr, grad=True):
    return tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad, dtype=np.float64)


class TestElementwise:
    def test_sigmoid_at_zero(self):
        x = t64([0.0])
        y = x.sigmoid()
        y.backward()
        assert y.data[0] == pytest.approx(0.5)
        assert x.grad[0] == pytest.approx(0.25)

    def test_softplus_at_zero(self):
        x = t64([0.0])
        y = x.softplus()
        y.backward()
        assert y.data[0] == pytest.approx(math.log(2.0))
        assert x.grad[0] == pytest.approx(0.5)

    def test_exp_gradient_vs_central_difference(self):
        x = t64([1.0])
        err = grad_check(lambda t: t.exp().sum(), x, eps=1e-5)
        assert err < 1e-8

    def test_log_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            t64([0.0]).log()
        with pytest.raises(ValueError):
            t64([-1.0]).log()

    def test_div_rejects_zero(self):
        with pytest.raises(ZeroDivisionError):
            t64([1.0]) / t64([0.0])

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            t64(np.ones((2, 3))) + t64(np.ones((2, 4)))

    def test_broadcast_trailing_dims(self):
        a = t64(np.ones((4, 3)))
        b = t64(np.array([1.0, 2.0, 3.0]))
        out = (a * b).sum()
        out.backward()
        np.testing.assert_allclose(b.grad, [4.0, 4.0, 4.0])
        np.testing.assert_allclose(a.grad, np.tile([1.0, 2.0, 3.0], (4, 1)))

    @pytest.mark.parametrize(
        "fn",
        [
            lambda t: (t.exp()).sum(),
            lambda t: (t * t.sin() + t.cos()).sum(),
            lambda t: t.softplus().sum(),
            lambda t: t.sigmoid().sum(),
            lambda t: t.relu().sum(),
            lambda t: (t * 2.5 - 1.0).clamp(-0.5, 0.5).sum(),
            lambda t: ((t + 3.1).log()).sum(),
            lambda t: ((t * t) + 1e-3).sqrt().sum(),
            lambda t: (-t).sum(),
            lambda t: (t / 2.0 + 2.0 / (t + 3.0)).sum(),
        ],
    )
    def test_gradcheck_every_op(self, fn):
        rng = np.random.default_rng(7)
        x = t64(rng.uniform(-1.0, 1.0, size=(3, 4)))
        assert grad_check(fn, x) < 1e-4


class TestMatmul:
    def test_identity(self):
        v = np.arange(12, dtype=np.float64).reshape(3, 4)
        out = t64(np.eye(3)) @ t64(v)
        np.testing.assert_array_equal(out.data, v)

    def test_one_by_one_is_scalar_mul(self):
        out = t64([[3.0]]) @ t64([[4.0]])
        assert out.data[0, 0] == 12.0

    def test_gradcheck_random(self):
        rng = np.random.default_rng(0)
        a = t64(rng.normal(size=(4, 5)))
        b = tensor(rng.normal(size=(5, 3)), dtype=np.float64)
        err = grad_check(lambda t: ((t @ b) * (t @ b)).sum(), a)
        assert err < 1e-6

    def test_inner_dim_mismatch(self):
        with pytest.raises(ValueError):
            t64(np.ones((2, 3))) @ t64(np.ones((4, 2)))


class TestReductions:
    def test_mean_value(self):
        assert t64([1.0, 2.0, 3.0]).mean().item() == pytest.approx(2.0)

    def test_sum_gradient_is_ones(self):
        x = t64(np.arange(6, dtype=np.float64).reshape(2, 3))
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_max_gradient_one_hot_at_first_argmax(self):
        x = t64([1.0, 5.0, 5.0, 2.0])
        x.max().backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0, 0.0])

    def test_max_axis_tie_break_lowest_index(self):
        x = t64([[2.0, 2.0], [0.0, 1.0]])
        x.max(axis=1).sum().backward()
        np.testing.assert_array_equal(x.grad, [[1.0, 0.0], [0.0, 1.0]])

    def test_empty_axis_errors(self):
        with pytest.raises(ValueError):
            t64(np.ones((0, 2))).max(axis=0)
        with pytest.raises(ValueError):
            t64(np.ones((2, 0))).mean(axis=1)

    def test_gradcheck_mean_max_cumsum(self):
        rng = np.random.default_rng(5)
        x = t64(rng.normal(size=(3, 5)))
        assert grad_check(lambda t: t.mean(axis=0).sum(), x) < 1e-4
        assert grad_check(lambda t: t.max(axis=1).sum(), x) < 1e-4
        assert grad_check(lambda t: (t.cumsum(axis=1) * t.cumsum(axis=0)).sum(), x) < 1e-4


class TestStructuralOps:
    def test_reshape_concat_getitem_gradcheck(self):
        rng = np.random.default_rng(11)
        x = t64(rng.normal(size=(4, 6)))

        def fn(t):
            a = t.reshape(2, 12)
            b = concat([a, a * 2.0], axis=0)
            return (b[1:3, 2:7] * b[0:2, 0:5]).sum()

        assert grad_check(fn, x) < 1e-4

    def test_broadcast_to_gradcheck(self):
        x = t64(np.random.default_rng(3).normal(size=(1, 4)))
        assert grad_check(lambda t: (t.broadcast_to((5, 4)) * 1.5).sum(), x) < 1e-4

    def test_unfold2d_gradcheck(self):
        x = t64(np.random.default_rng(4).normal(size=(2, 6, 6)))
        w = tensor(np.random.default_rng(5).normal(size=(3, 2 * 9)), dtype=np.float64)
        assert grad_check(lambda t: (w @ t.unfold2d(3, 3, stride=2, pad=1)).sum(), x) < 1e-4


class TestGradCheckContract:
    def test_quadratic_is_near_exact(self):
        x = t64([3.0])
        assert grad_check(lambda t: (t * t).sum(), x, eps=1e-5) < 1e-9

    def test_constant_function_zero_error(self):
        x = t64([1.0, 2.0])
        c = tensor(np.array([5.0]), dtype=np.float64)
        assert grad_check(lambda t: (t * 0.0).sum() + c.sum(), x) == 0.0

    def test_requires_float64(self):
        x = tensor(np.zeros(2, dtype=np.float32), requires_grad=True)
        with pytest.raises(ValueError):
            grad_check(lambda t: (t * t).sum(), x)


class TestTapeSemantics:
    def test_backward_linearity(self):
        rng = np.random.default_rng(2)
        v = rng.normal(size=(3, 3))
        x1 = t64(v)
        (x1.exp().sum() + (x1 * x1).sum()).backward()
        x2 = t64(v)
        x2.exp().sum().backward()
        g_exp = x2.grad.copy()
        x3 = t64(v)
        (x3 * x3).sum().backward()
        np.testing.assert_allclose(x1.grad, g_exp + x3.grad, rtol=1e-12)

    def test_forward_backward_deterministic(self):
        rng = np.random.default_rng(9)
        v = rng.normal(size=(8, 8))
        w = rng.normal(size=(8, 8))

        def run():
            x = t64(v)
            y = ((x @ tensor(w, dtype=np.float64)).relu().softplus()).sum()
            y.backward()
            return y.data.copy(), x.grad.copy()

        y1, g1 = run()
        y2, g2 = run()
        np.testing.assert_array_equal(y1, y2)
        np.testing.assert_array_equal(g1, g2)

    def test_no_grad_suppresses_graph(self):
        x = t64([1.0, 2.0])
        with no_grad():
            y = (x * x).sum()
        assert y._parents == ()
        assert not y.requires_grad

    @given(st.integers(min_value=1, max_value=4), st.integers(min_value=1, max_value=4))
    @settings(max_examples=20, deadline=None)
    def test_add_backward_matches_fd_property(self, n, m):
        rng = np.random.default_rng(n * 7 + m)
        x = t64(rng.normal(size=(n, m)))
        b = tensor(rng.normal(size=(m,)), dtype=np.float64)
        assert grad_check(lambda t: ((t + b) * (t + b)).sum(), x) < 1e-4


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {
            "encoder.w": rng.normal(size=(4, 3)).astype(np.float32),
            "shape_dec.b": rng.normal(size=(7,)),
            "scalar": np.array(3.5),
        }
        path = tmp_path / "ckpt.orfc"
        save_checkpoint(path, tensors)
        loaded = load_checkpoint(path)
        assert set(loaded) == set(tensors)
        for k in tensors:
            np.testing.assert_array_equal(loaded[k], tensors[k])
            assert loaded[k].dtype == tensors[k].dtype

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.orfc"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "ok.orfc"
        save_checkpoint(p, {"x": np.ones(10)})
        data = p.read_bytes()
        p.write_bytes(data[:-8])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(p)
