import numpy as np
import pytest

from duotrack import autodiff as ad
from duotrack.autodiff import Tensor


def param(data):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def finite_diff(fn, x: np.ndarray, step=1e-6) -> np.ndarray:
    """Central differences of scalar fn w.r.t. every entry of x (in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = fn()
        flat[i] = orig - step
        down = fn()
        flat[i] = orig
        gf[i] = (up - down) / (2 * step)
    return g


def check_grad(build_loss, tensors, tol=1e-4):
    loss = build_loss()
    ad.backward(loss)
    for t in tensors:
        def f(t=t):
            with ad.no_grad():
                return build_loss().item()
        fd = finite_diff(f, t.data)
        got = t.grad if t.grad is not None else np.zeros_like(t.data)
        denom = np.maximum(np.maximum(np.abs(fd), np.abs(got)), 1e-6)
        assert np.max(np.abs(fd - got) / denom) < tol


class TestMatmul:
    def test_identity(self):
        x = np.arange(6, dtype=float).reshape(2, 3)
        out = ad.matmul(Tensor(np.eye(2)), Tensor(x))
        assert np.array_equal(out.data, x)

    def test_1x1_is_scalar_product(self):
        out = ad.matmul(Tensor([[3.0]]), Tensor([[4.0]]))
        assert out.data[0, 0] == 12.0

    def test_against_triple_loop(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        expected = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for k in range(4):
                    expected[i, j] += a[i, k] * b[k, j]
        out = ad.matmul(Tensor(a), Tensor(b))
        assert np.allclose(out.data, expected, atol=1e-12)

    def test_shape_mismatch_message(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradients(self):
        rng = np.random.default_rng(1)
        a = param(rng.normal(size=(3, 4)))
        b = param(rng.normal(size=(4, 2)))
        check_grad(lambda: ad.sum_all(ad.mul(ad.matmul(a, b), ad.matmul(a, b))), [a, b])


class TestSoftmax:
    def test_single_element(self):
        out = ad.softmax_lastdim(Tensor([[5.0]]))
        assert out.data[0, 0] == pytest.approx(1.0)

    def test_symmetric_pair(self):
        out = ad.softmax_lastdim(Tensor([[0.0, 0.0]]))
        assert np.allclose(out.data, [[0.5, 0.5]])

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        out = ad.softmax_lastdim(Tensor(rng.normal(size=(7, 9)) * 30))
        assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)
        assert (out.data >= 0).all()

    def test_gradient(self):
        rng = np.random.default_rng(3)
        x = param(rng.normal(size=(4, 5)))
        w = rng.normal(size=(4, 5))
        check_grad(lambda: ad.sum_all(ad.mul(ad.softmax_lastdim(x), Tensor(w))), [x])


class TestLayerNorm:
    def test_constant_vector_zero(self):
        g = Tensor(np.ones(4))
        b = Tensor(np.zeros(4))
        out = ad.layernorm(Tensor([[3.0, 3.0, 3.0, 3.0]]), g, b)
        assert np.allclose(out.data, 0.0, atol=1e-6)

    def test_two_point(self):
        g = Tensor(np.ones(2))
        b = Tensor(np.zeros(2))
        out = ad.layernorm(Tensor([[1.0, -1.0]]), g, b)
        sigma = np.sqrt(1.0 + 1e-5)
        assert np.allclose(out.data, [[1.0 / sigma, -1.0 / sigma]], atol=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(4)
        x = param(rng.normal(size=(3, 8)))
        g = param(rng.normal(size=8))
        b = param(rng.normal(size=8))
        w = rng.normal(size=(3, 8))
        check_grad(lambda: ad.sum_all(ad.mul(ad.layernorm(x, g, b), Tensor(w))),
                   [x, g, b])


class TestGatherInterp:
    def test_integer_positions_identity(self):
        rng = np.random.default_rng(5)
        e = rng.normal(size=(6, 3))
        idx = np.broadcast_to(np.arange(6, dtype=float)[:, None], (6, 3)).copy()
        out = ad.gather_interp(Tensor(e), Tensor(idx))
        assert np.allclose(out.data, e, atol=1e-15)

    def test_midpoint(self):
        e = Tensor([[0.0], [2.0]])
        out = ad.gather_interp(e, Tensor([[0.5], [0.5]]))
        assert np.allclose(out.data, 1.0)

    def test_gradient_both_args(self):
        rng = np.random.default_rng(6)
        e = param(rng.normal(size=(5, 4)))
        # generic non-integer positions, away from kinks and clamp edges
        idx = param(rng.uniform(0.2, 3.8, size=(5, 4)))
        idx.data = np.where(np.abs(idx.data - np.round(idx.data)) < 0.05,
                            idx.data + 0.1, idx.data)
        w = rng.normal(size=(5, 4))
        check_grad(lambda: ad.sum_all(ad.mul(ad.gather_interp(e, idx), Tensor(w))),
                   [e, idx])


class TestElementwise:
    def test_gelu_sigmoid_grad(self):
        rng = np.random.default_rng(7)
        x = param(rng.normal(size=(4, 6)))
        check_grad(lambda: ad.sum_all(ad.gelu(x)), [x])
        y = param(rng.normal(size=(4, 6)))
        check_grad(lambda: ad.sum_all(ad.sigmoid(y)), [y])

    def test_clamp_grad_zero_outside(self):
        x = param(np.array([[-2.0, 0.5, 3.0]]))
        out = ad.sum_all(ad.clamp(x, 0.0, 1.0))
        ad.backward(out)
        assert np.array_equal(x.grad, [[0.0, 1.0, 0.0]])


class TestBackward:
    def test_sum_grad_is_ones(self):
        p = param(np.arange(6, dtype=float).reshape(2, 3))
        ad.backward(ad.sum_all(p))
        assert np.array_equal(p.grad, np.ones((2, 3)))

    def test_half_sum_squares_grad_is_input(self):
        p = param(np.array([[1.0, -2.0, 3.0]]))
        ad.backward(ad.scale(ad.sum_all(ad.mul(p, p)), 0.5))
        assert np.allclose(p.grad, p.data)

    def test_accumulates_across_calls(self):
        p = param(np.ones((2, 2)))
        ad.backward(ad.sum_all(p))
        ad.backward(ad.sum_all(p))
        assert np.array_equal(p.grad, 2 * np.ones((2, 2)))

    def test_non_scalar_rejected(self):
        p = param(np.ones((2, 2)))
        with pytest.raises(ValueError):
            ad.backward(ad.mul(p, p))

    def test_no_grad_records_nothing(self):
        p = param(np.ones((2, 2)))
        with ad.no_grad():
            out = ad.sum_all(ad.mul(p, p))
        assert out._backward is None and not out.requires_grad


class TestSmoothL1:
    def test_zero_at_target(self):
        pred = Tensor(np.array([[0.1, 0.2, 0.3, 0.4]]))
        assert ad.smooth_l1(pred, pred.data.copy()).item() == 0.0

    def test_pointwise_values(self):
        pred = Tensor(np.array([[0.5]]))
        assert ad.smooth_l1(pred, np.array([[0.0]])).item() == pytest.approx(0.125)
        pred = Tensor(np.array([[2.0]]))
        assert ad.smooth_l1(pred, np.array([[0.0]])).item() == pytest.approx(1.5)

    def test_branch_continuity_at_one(self):
        lo = ad.smooth_l1(Tensor([[1.0 - 1e-9]]), np.array([[0.0]])).item()
        hi = ad.smooth_l1(Tensor([[1.0 + 1e-9]]), np.array([[0.0]])).item()
        assert lo == pytest.approx(0.5, abs=1e-8)
        assert hi == pytest.approx(0.5, abs=1e-8)

    def test_gradient(self):
        rng = np.random.default_rng(8)
        pred = param(rng.normal(size=(6, 4)) * 2)
        # keep residuals away from the |x| = 1 kink
        target = pred.data - np.where(rng.random((6, 4)) < 0.5, 0.4, 1.7)
        check_grad(lambda: ad.smooth_l1(pred, target), [pred])


def test_determinism_same_seed_bit_identical():
    def run():
        rng = np.random.default_rng(42)
        a = param(rng.normal(size=(4, 4)))
        b = param(rng.normal(size=(4, 4)))
        out = ad.softmax_lastdim(ad.matmul(ad.gelu(a), b))
        loss = ad.sum_all(out)
        ad.backward(loss)
        return loss.item(), a.grad.copy()
    l1, g1 = run()
    l2, g2 = run()
    assert l1 == l2
    assert np.array_equal(g1, g2)
