"""Compiled and numpy kernel backends implement one semantics contract."""

import numpy as np
import numpy.testing as npt
import pytest

from thicknet import backend

HAVE_COMPILED = "compiled" in backend.available_backends()

pytestmark = pytest.mark.skipif(
    not HAVE_COMPILED, reason="compiled kernel extension not built"
)


@pytest.fixture(scope="module")
def kernels():
    return backend.get_kernels("python"), backend.get_kernels("compiled")


def test_active_backend_is_valid():
    assert backend.backend_name in ("python", "compiled")


class TestElementwise:
    def test_sigmoid_tanh_relu(self, kernels):
        kp, kc = kernels
        rng = np.random.default_rng(0)
        x = rng.standard_normal((7, 11)) * 5
        npt.assert_allclose(kc.sigmoid(x), kp.sigmoid(x), rtol=1e-15)
        npt.assert_allclose(kc.tanh(x), kp.tanh(x), rtol=1e-15)
        npt.assert_array_equal(kc.relu(x), kp.relu(x))

    def test_extreme_inputs(self, kernels):
        kp, kc = kernels
        x = np.array([[-1e4, -50.0, 0.0, 50.0, 1e4]])
        npt.assert_allclose(kc.sigmoid(x), kp.sigmoid(x), atol=1e-300)
        assert np.isfinite(kc.sigmoid(x)).all()

    def test_gradients(self, kernels):
        kp, kc = kernels
        rng = np.random.default_rng(1)
        g = rng.standard_normal((5, 6))
        x = rng.standard_normal((5, 6))
        y = kp.sigmoid(x)
        npt.assert_allclose(kc.sigmoid_grad(g, y), kp.sigmoid_grad(g, y), rtol=1e-15)
        t = kp.tanh(x)
        npt.assert_allclose(kc.tanh_grad(g, t), kp.tanh_grad(g, t), rtol=1e-15)
        npt.assert_array_equal(kc.relu_grad(g, x), kp.relu_grad(g, x))


class TestReductions:
    def test_max_reduce_identical_incl_ties(self, kernels):
        kp, kc = kernels
        rng = np.random.default_rng(2)
        y3 = rng.standard_normal((6, 4, 9))
        y3[:, 1, :] = y3[:, 3, :]  # force ties between slots 1 and 3
        out_p, idx_p = kp.max_reduce(y3)
        out_c, idx_c = kc.max_reduce(y3)
        npt.assert_array_equal(out_p, out_c)
        npt.assert_array_equal(idx_p, idx_c)

    def test_scatter_gather_mean(self, kernels):
        kp, kc = kernels
        rng = np.random.default_rng(3)
        y3 = rng.standard_normal((5, 3, 7))
        idx = rng.integers(0, 3, size=(5, 7), dtype=np.int64)
        npt.assert_array_equal(kp.gather_reduce(y3, idx), kc.gather_reduce(y3, idx))
        g = rng.standard_normal((5, 7))
        npt.assert_array_equal(
            kp.scatter_reduce_grad(g, idx, 3), kc.scatter_reduce_grad(g, idx, 3)
        )
        npt.assert_allclose(kp.mean_reduce(y3), kc.mean_reduce(y3), rtol=1e-15)
        npt.assert_allclose(kp.mean_reduce_grad(g, 3), kc.mean_reduce_grad(g, 3), rtol=1e-15)


class TestBatchNorm:
    def test_train_forward(self, kernels):
        kp, kc = kernels
        rng = np.random.default_rng(4)
        x = rng.standard_normal((16, 8)) * 3 + 1
        xh_p, m_p, s_p = kp.bn_train(x, 1e-5)
        xh_c, m_c, s_c = kc.bn_train(x, 1e-5)
        npt.assert_allclose(xh_c, xh_p, atol=1e-12)
        npt.assert_allclose(m_c, m_p, rtol=1e-14)
        npt.assert_allclose(s_c, s_p, rtol=1e-12)

    def test_train_backward(self, kernels):
        kp, kc = kernels
        rng = np.random.default_rng(5)
        x = rng.standard_normal((12, 6))
        g = rng.standard_normal((12, 6))
        xh, _, inv = kp.bn_train(x, 1e-5)
        npt.assert_allclose(kc.bn_train_grad(g, xh, inv), kp.bn_train_grad(g, xh, inv),
                            atol=1e-13)

    def test_eval(self, kernels):
        kp, kc = kernels
        rng = np.random.default_rng(6)
        x = rng.standard_normal((9, 4))
        mean = rng.standard_normal(4)
        var = rng.random(4) + 0.1
        npt.assert_allclose(kc.bn_eval(x, mean, var, 1e-5), kp.bn_eval(x, mean, var, 1e-5),
                            rtol=1e-14)

    def test_affine(self, kernels):
        kp, kc = kernels
        rng = np.random.default_rng(7)
        x = rng.standard_normal((9, 4))
        g = rng.standard_normal((9, 4))
        scale = rng.uniform(0.1, 2.0, 4)
        shift = rng.standard_normal(4)
        npt.assert_allclose(kc.affine_cols(x, scale, shift),
                            kp.affine_cols(x, scale, shift), rtol=1e-15)
        for a, b in zip(kc.affine_cols_grad(g, x, scale), kp.affine_cols_grad(g, x, scale)):
            npt.assert_allclose(a, b, rtol=1e-13)


class TestAdam:
    def test_update_matches(self, kernels):
        kp, kc = kernels
        rng = np.random.default_rng(7)

        def run(k):
            p = rng_state["p"].copy()
            m = np.zeros_like(p)
            v = np.zeros_like(p)
            for t in range(1, 6):
                k.adam_update(p, rng_state["g"][t - 1], m, v,
                              2e-3, 0.9, 0.999, 1e-8,
                              1 - 0.9 ** t, 1 - 0.999 ** t)
            return p

        rng_state = {
            "p": rng.standard_normal(40),
            "g": [rng.standard_normal(40) for _ in range(5)],
        }
        npt.assert_allclose(run(kc), run(kp), rtol=1e-14)


class TestDeterminism:
    def test_each_backend_bit_stable(self, kernels):
        for k in kernels:
            rng = np.random.default_rng(8)
            x = rng.standard_normal((10, 10))
            assert np.array_equal(k.sigmoid(x), k.sigmoid(x))
            y3 = rng.standard_normal((4, 3, 5))
            a = k.max_reduce(y3)
            b = k.max_reduce(y3)
            assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
