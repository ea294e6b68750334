import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stockcnn.baselines import (
    LassoConfig,
    LinearModel,
    fit_lasso,
    lasso_objective,
    lasso_path,
    power_iteration,
    predict_linear,
    soft_threshold,
)


class TestSoftThreshold:
    @pytest.mark.parametrize("x, t, want", [(3.0, 1.0, 2.0), (-3.0, 1.0, -2.0), (0.5, 1.0, 0.0), (-1.0, 1.0, 0.0)])
    def test_closed_form(self, x, t, want):
        assert soft_threshold(x, t) == want

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-1e3, 1e3), st.floats(0, 1e3))
    def test_is_prox_of_abs(self, x, t):
        # S(x, t) minimizes (z - x)^2 / 2 + t |z|
        z = float(soft_threshold(x, t))
        f = lambda v: 0.5 * (v - x) ** 2 + t * abs(v)
        for d in (1e-3, -1e-3):
            assert f(z) <= f(z + d) + 1e-9


def test_power_iteration():
    a = np.random.default_rng(0).standard_normal((20, 6))
    gram = a.T @ a
    assert power_iteration(gram, 200) == pytest.approx(np.linalg.eigvalsh(gram)[-1], rel=1e-9)
    assert power_iteration(np.zeros((3, 3))) == 0.0


class TestLassoPath:
    def test_interpolates_determined_system(self):
        w, b, _ = lasso_path(np.array([[1.0], [3.0]]), np.array([2.0, 6.0]), lam=0.0)
        assert w[0] == pytest.approx(2.0, abs=1e-6) and b == pytest.approx(0.0, abs=1e-6)

    def test_matches_least_squares(self):
        rng = np.random.default_rng(1)
        x = rng.random((40, 5))
        y = x @ [1.0, -2.0, 0.5, 0.0, 3.0] + 0.7 + 0.01 * rng.standard_normal(40)
        w, b, _ = lasso_path(x, y, lam=0.0, config=LassoConfig(tol=1e-15, max_iter=200_000))
        coef, *_ = np.linalg.lstsq(np.c_[x, np.ones(40)], y, rcond=None)
        np.testing.assert_allclose(np.r_[w, b], coef, atol=1e-6)

    def test_huge_lambda_zeroes_everything(self):
        rng = np.random.default_rng(2)
        x, y = rng.random((30, 4)), rng.standard_normal(30)
        w, b, _ = lasso_path(x, y, lam=1e6)
        assert np.all(w == 0.0)
        assert b == pytest.approx(y.mean(), rel=1e-12)

    def test_objective_non_increasing(self):
        rng = np.random.default_rng(3)
        x = rng.random((60, 30))
        y = x[:, :3] @ [2.0, -1.0, 1.0] + 0.1 * rng.standard_normal(60)
        for lam in (0.0, 0.001, 0.05):
            _, _, hist = lasso_path(x, y, lam)
            assert len(hist) > 2
            assert all(b <= a for a, b in zip(hist, hist[1:]))

    def test_kkt_at_solution(self):
        rng = np.random.default_rng(4)
        x = rng.random((80, 10))
        y = x @ rng.standard_normal(10) + rng.standard_normal(80)
        lam = 0.02
        w, b, _ = lasso_path(x, y, lam, LassoConfig(tol=1e-14, max_iter=100_000))
        grad = x.T @ (x @ w + b - y) / len(y)
        active = w != 0
        np.testing.assert_allclose(grad[active], -lam * np.sign(w[active]), atol=1e-6)
        assert np.all(np.abs(grad[~active]) <= lam + 1e-6)
        assert lasso_objective(x, y, w, b, lam) <= lasso_objective(x, y, np.zeros(10), y.mean(), lam)

    def test_sparsity_monotone_in_lambda(self):
        rng = np.random.default_rng(5)
        x = rng.random((50, 20))
        y = x[:, :5] @ [3.0, -2.0, 1.5, 1.0, -0.5] + 0.2 * rng.standard_normal(50)
        cfg = LassoConfig(tol=1e-12, max_iter=50_000)
        nnz = [np.count_nonzero(lasso_path(x, y, lam, cfg)[0]) for lam in (1e-4, 1e-3, 1e-2, 0.05, 0.2, 1.0)]
        assert all(b <= a for a, b in zip(nnz, nnz[1:]))
        assert nnz[-1] == 0 and nnz[0] > 5


class TestLinearModel:
    def test_bias_only_predicts_buy(self):
        m = LinearModel(np.zeros((3, 225)), [1.0, 0.0, 0.0], 0.0)
        imgs = np.random.default_rng(6).random((10, 15, 15))
        assert m.predict(imgs).tolist() == [0] * 10
        assert predict_linear(m, imgs[0]) == 0

    def test_constant_bias_shift(self):
        rng = np.random.default_rng(7)
        w, b = rng.standard_normal((3, 225)), rng.standard_normal(3)
        imgs = rng.random((20, 15, 15))
        assert np.array_equal(LinearModel(w, b, 0.0).predict(imgs), LinearModel(w, b + 5.0, 0.0).predict(imgs))

    def test_tie_goes_low(self):
        assert LinearModel(np.zeros((3, 4)), [0.5, 0.5, 0.5], 0.0).predict(np.ones(4)) == 0

    def test_separable_toy(self):
        rng = np.random.default_rng(8)
        x = rng.random((60, 15, 15)) * 0.2
        y = np.repeat([0, 1], 30)
        x[y == 1, 0, 0] += 0.8
        m = fit_lasso((x, y), lam=0.0)
        assert np.array_equal(m.predict(x), y)

    def test_fit_shapes_and_empty(self):
        rng = np.random.default_rng(9)
        m = fit_lasso((rng.random((12, 15, 15)), rng.integers(0, 3, 12)))
        assert m.weights.shape == (3, 225) and m.biases.shape == (3,) and m.lam == 0.01
        with pytest.raises(ValueError):
            fit_lasso((np.empty((0, 15, 15)), np.empty(0, dtype=int)))
        with pytest.raises(ValueError):
            LinearModel(np.zeros((3, 2)), np.zeros(3), -1.0)

    def test_checkpoint_roundtrip(self, tmp_path):
        rng = np.random.default_rng(10)
        m = LinearModel(rng.standard_normal((3, 225)), rng.standard_normal(3), 0.03)
        m.save(tmp_path / "l.npz")
        back = LinearModel.load(tmp_path / "l.npz")
        assert back.weights.tobytes() == m.weights.tobytes()
        assert back.biases.tobytes() == m.biases.tobytes() and back.lam == 0.03
