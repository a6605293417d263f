import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sram import autodiff as ad
from sram.autodiff import ParamStore, Tensor, backward, finite_diff_check
from sram.errors import NumericError, ShapeError


class TestTensor:
    def test_shape_and_data(self):
        t = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert t.shape == (2, 2)
        assert t.data.dtype == np.float64

    def test_rejects_nan(self):
        with pytest.raises(NumericError):
            Tensor([1.0, float("nan")])

    def test_rejects_inf(self):
        with pytest.raises(NumericError):
            Tensor([[float("inf")]])

    def test_item_requires_scalar(self):
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]).item()


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = ad.matmul(Tensor(a), Tensor(np.eye(2)))
        assert np.array_equal(out.data, a)

    def test_hand_multiplied(self):
        out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
        assert np.array_equal(out.data, [[17.0], [39.0]])

    def test_zero_matrix(self):
        out = ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.ones((3, 4))))
        assert np.array_equal(out.data, np.zeros((2, 4)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_batched_matches_per_frame(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(4, 3, 5))
        b = rng.normal(size=(4, 5, 2))
        out = ad.matmul(Tensor(a), Tensor(b)).data
        for i in range(4):
            assert np.allclose(out[i], a[i] @ b[i])


class TestRelu:
    def test_definition(self):
        out = ad.relu(Tensor([-1.0, 0.0, 2.0]))
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])

    def test_all_negative(self):
        out = ad.relu(Tensor([-3.0, -0.5]))
        assert np.array_equal(out.data, [0.0, 0.0])

    def test_all_positive_unchanged(self):
        x = np.array([0.5, 1.5])
        assert np.array_equal(ad.relu(Tensor(x)).data, x)

    def test_subgradient_at_zero_is_zero(self):
        store = ParamStore()
        store.add("x", [0.0, 1.0])
        grads = backward(ad.sum_all(ad.relu(store["x"])), store)
        assert np.array_equal(grads["x"].data, [0.0, 1.0])


class TestSoftmaxRows:
    def test_two_logit_row(self):
        # e^1 / (e^1 + e^0) computed independently
        expected = math.exp(1.0) / (math.exp(1.0) + 1.0)
        out = ad.softmax_rows(Tensor([[1.0, 0.0]]))
        assert out.data[0, 0] == pytest.approx(expected, abs=1e-12)
        assert out.data[0, 1] == pytest.approx(1.0 - expected, abs=1e-12)
        assert out.data[0, 0] == pytest.approx(0.73106, abs=1e-5)

    def test_constant_row_is_uniform(self):
        out = ad.softmax_rows(Tensor([[3.0, 3.0, 3.0]]))
        assert np.allclose(out.data, 1.0 / 3.0, atol=1e-15)

    def test_extreme_logits_do_not_overflow(self):
        out = ad.softmax_rows(Tensor([[1000.0, 0.0]]))
        assert np.all(np.isfinite(out.data))
        assert out.data[0, 0] == pytest.approx(1.0)
        assert out.data[0, 1] == pytest.approx(0.0, abs=1e-300)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 8))
    @settings(max_examples=60, deadline=None)
    def test_rows_sum_to_one(self, seed, m, n):
        rows = np.random.default_rng(seed).uniform(-50.0, 50.0, (m, n))
        out = ad.softmax_rows(Tensor(rows)).data
        assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(out > 0.0) and np.all(out < 1.0 + 1e-15)


class TestMse:
    def test_equal_inputs(self):
        assert ad.mse(Tensor([1.0, 2.0]), Tensor([1.0, 2.0])).item() == 0.0

    def test_hand_value(self):
        out = ad.mse(Tensor([0.5, 0.5]), Tensor([0.3, 0.1]))
        assert out.item() == pytest.approx(0.2, abs=1e-12)

    def test_unit_distance(self):
        assert ad.mse(Tensor([1.0, 0.0]), Tensor([0.0, 0.0])).item() == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.mse(Tensor([1.0]), Tensor([1.0, 2.0]))


class TestBackward:
    def test_sum_gradient_is_ones(self):
        store = ParamStore()
        store.add("w", np.arange(4.0).reshape(2, 2))
        grads = backward(ad.sum_all(store["w"]), store)
        assert np.array_equal(grads["w"].data, np.ones((2, 2)))

    def test_half_squared_norm_gradient_is_w(self):
        store = ParamStore()
        w = store.add("w", [[1.0, -2.0], [0.5, 3.0]])
        loss = ad.mul(ad.mse(w, np.zeros((2, 2))), 0.5)
        grads = backward(loss, store)
        assert np.allclose(grads["w"].data, w.data)

    def test_off_path_parameter_gets_zeros(self):
        store = ParamStore()
        store.add("used", [1.0])
        store.add("unused", [[1.0, 2.0]])
        grads = backward(ad.sum_all(store["used"]), store)
        assert np.array_equal(grads["unused"].data, np.zeros((1, 2)))

    def test_non_scalar_loss_rejected(self):
        store = ParamStore()
        store.add("w", [1.0, 2.0])
        with pytest.raises(ShapeError):
            backward(ad.relu(store["w"]), store)

    def test_deterministic_bitwise(self):
        def run():
            store = ParamStore()
            rng = np.random.default_rng(11)
            store.add("w1", rng.normal(size=(4, 4)))
            store.add("w2", rng.normal(size=(4, 3)))
            x = Tensor(rng.normal(size=(5, 4)))
            h = ad.relu(ad.matmul(x, store["w1"]))
            loss = ad.mse(ad.matmul(h, store["w2"]), np.ones((5, 3)))
            return backward(loss, store)

        a, b = run(), run()
        for name in ("w1", "w2"):
            assert a[name].data.tobytes() == b[name].data.tobytes()

    def test_reused_parameter_accumulates(self):
        store = ParamStore()
        w = store.add("w", [[2.0]])
        loss = ad.sum_all(ad.mul(w, w))  # w^2
        grads = backward(loss, store)
        assert grads["w"].data[0, 0] == pytest.approx(4.0)


class TestFiniteDiffCheck:
    def test_quadratic_is_exact(self):
        store = ParamStore()
        store.add("w", np.random.default_rng(0).normal(size=(3, 3)))
        err = finite_diff_check(lambda p: ad.mse(p["w"], np.ones((3, 3))), store)
        assert err < 1e-9

    def test_three_layer_composition(self):
        rng = np.random.default_rng(1)
        store = ParamStore()
        store.add("w1", rng.normal(0, 0.5, (4, 6)))
        store.add("w2", rng.normal(0, 0.5, (6, 6)))
        store.add("w3", rng.normal(0, 0.5, (6, 2)))
        x = Tensor(rng.normal(size=(3, 4)))

        def f(p):
            h = ad.relu(ad.matmul(x, p["w1"]))
            h = ad.softmax_rows(ad.matmul(h, p["w2"]))
            return ad.mse(ad.matmul(h, p["w3"]), np.ones((3, 2)))

        assert finite_diff_check(f, store) < 1e-4

    def test_restores_parameters(self):
        store = ParamStore()
        original = np.array([[1.0, 2.0]])
        store.add("w", original)
        finite_diff_check(lambda p: ad.sum_all(p["w"]), store)
        assert np.array_equal(store["w"].data, original)


class TestFusedOps:
    """Fused tape nodes must agree with finite differences."""

    def _store(self):
        rng = np.random.default_rng(5)
        store = ParamStore()
        store.add("ga", rng.uniform(0.0, 1.0, (4, 4)))
        store.add("gp", rng.uniform(0.0, 1.0, (4, 4)))
        store.add("x", rng.normal(0.0, 1.0, (4, 3)))
        store.add("wa", rng.normal(0.0, 0.5, (3, 5)))
        store.add("wp", rng.normal(0.0, 0.5, (3, 5)))
        store.add("ba", rng.normal(0.0, 0.1, 5))
        store.add("bp", rng.normal(0.0, 0.1, 5))
        return store

    def test_dual_graph_affine(self):
        store = self._store()

        def f(p):
            out = ad.dual_graph_affine(p["ga"], p["gp"], p["x"], p["wa"], p["wp"],
                                       p["ba"], p["bp"], activation=True)
            return ad.mse(out, np.ones((4, 5)))

        assert finite_diff_check(f, store) < 1e-6

    def test_dual_graph_affine_linear_head(self):
        store = self._store()

        def f(p):
            out = ad.dual_graph_affine(p["ga"], p["gp"], p["x"], p["wa"], p["wp"],
                                       p["ba"], p["bp"], activation=False)
            return ad.mse(out, np.ones((4, 5)))

        assert finite_diff_check(f, store) < 1e-6

    def test_temporal_conv3(self):
        rng = np.random.default_rng(6)
        store = ParamStore()
        store.add("s", rng.normal(0.0, 1.0, (5, 3, 4)))
        store.add("k", rng.normal(0.0, 0.4, (3, 4, 4)))
        store.add("b", rng.normal(0.0, 0.1, 4))

        def f(p):
            return ad.mse(ad.temporal_conv3(p["s"], p["k"], p["b"]), np.ones((5, 3, 4)))

        assert finite_diff_check(f, store) < 1e-6

    def test_temporal_conv3_single_frame_pads_with_zeros(self):
        kernel = np.zeros((3, 2, 2))
        kernel[1] = np.eye(2)  # center tap only
        s = np.array([[[1.0, -2.0]]])
        out = ad.temporal_conv3(Tensor(s), Tensor(kernel), Tensor(np.zeros(2)))
        assert out.shape == (1, 1, 2)
        assert np.array_equal(out.data, [[[1.0, 0.0]]])

    def test_temporal_conv3_batched_matches_loop(self):
        rng = np.random.default_rng(7)
        s = rng.normal(size=(3, 6, 2, 4))
        k = rng.normal(size=(3, 4, 4))
        b = rng.normal(size=4)
        batched = ad.temporal_conv3(Tensor(s), Tensor(k), Tensor(b)).data
        for i in range(3):
            single = ad.temporal_conv3(Tensor(s[i]), Tensor(k), Tensor(b)).data
            assert np.allclose(batched[i], single, atol=1e-12)

    def test_pairwise_dist_values(self):
        b = Tensor([[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]])
        d = ad.pairwise_dist(b).data
        assert d[0, 1] == pytest.approx(3.0)
        assert d[0, 2] == pytest.approx(4.0)
        assert d[1, 2] == pytest.approx(5.0)
        assert np.array_equal(np.diag(d), np.zeros(3))

    def test_amax_routes_gradient_to_first_max(self):
        store = ParamStore()
        store.add("a", [[1.0, 5.0], [5.0, 2.0], [5.0, 5.0]])
        grads = backward(ad.sum_all(ad.amax(store["a"], axis=0)), store)
        assert np.array_equal(grads["a"].data, [[0.0, 1.0], [1.0, 0.0], [0.0, 0.0]])

    def test_col_max(self):
        out = ad.col_max(Tensor([[1.0, 5.0], [3.0, 2.0]]))
        assert np.array_equal(out.data, [[3.0, 5.0]])

    def test_stack_and_concat_roundtrip_gradients(self):
        store = ParamStore()
        store.add("a", [[1.0, 2.0]])
        store.add("b", [[3.0, 4.0]])
        stacked = ad.stack0([store["a"], store["b"]])
        grads = backward(ad.sum_all(stacked), store)
        assert np.array_equal(grads["a"].data, [[1.0, 1.0]])
        catted = ad.concat0([store["a"], store["b"]])
        grads = backward(ad.sum_all(ad.mul(catted, 2.0)), store)
        assert np.array_equal(grads["b"].data, [[2.0, 2.0]])


class TestParamStore:
    def test_lexicographic_iteration(self):
        store = ParamStore()
        store.add("zeta", [1.0])
        store.add("alpha", [2.0])
        store.add("mid", [3.0])
        assert store.names() == ["alpha", "mid", "zeta"]

    def test_duplicate_name_rejected(self):
        store = ParamStore()
        store.add("w", [1.0])
        with pytest.raises(ShapeError):
            store.add("w", [2.0])

    def test_shape_frozen_after_creation(self):
        store = ParamStore()
        store.add("w", [1.0, 2.0])
        with pytest.raises(ShapeError):
            store.set_value("w", [1.0, 2.0, 3.0])

    def test_subset_shares_backing(self):
        store = ParamStore()
        store.add("enc.w", [1.0])
        store.add("d2.w", [2.0])
        view = store.subset("enc.")
        assert view.names() == ["enc.w"]
        view.set_value("enc.w", [9.0])
        assert store["enc.w"].data[0] == 9.0

    def test_digest_changes_with_values(self):
        store = ParamStore()
        store.add("w", [1.0])
        before = store.digest()
        store.set_value("w", [2.0])
        assert store.digest() != before


class TestNoGrad:
    def test_disables_taping(self):
        store = ParamStore()
        store.add("w", [[1.0]])
        with ad.no_grad():
            out = ad.relu(store["w"])
        assert out.parents == ()
        assert not out.requires

    def test_nested_restores(self):
        with ad.no_grad():
            with ad.no_grad():
                pass
            assert not ad._grad_enabled
        assert ad._grad_enabled
