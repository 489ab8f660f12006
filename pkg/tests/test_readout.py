import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stvo_esn.errors import DimensionMismatch
from stvo_esn.readout import (GramAccumulator, ReadoutWeights, classify, predict, pseudoinverse, solve_gram,
                              train_readout)


def random_matrix(rng, rows, cols, rank=None):
    if rank is None:
        return rng.normal(size=(rows, cols))
    return rng.normal(size=(rows, rank)) @ rng.normal(size=(rank, cols))


def penrose_residuals(a, p):
    return (np.linalg.norm(a @ p @ a - a), np.linalg.norm(p @ a @ p - p),
            np.linalg.norm((a @ p).T - a @ p), np.linalg.norm((p @ a).T - p @ a))


def gauss_solve(a, b):
    """Plain Gaussian elimination with partial pivoting; b may have several columns."""
    a = [list(map(float, row)) for row in a]
    b = [list(map(float, row)) for row in b]
    n = len(a)
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(a[r][col]))
        a[col], a[piv] = a[piv], a[col]
        b[col], b[piv] = b[piv], b[col]
        for r in range(col + 1, n):
            f = a[r][col] / a[col][col]
            a[r] = [x - f * y for x, y in zip(a[r], a[col])]
            b[r] = [x - f * y for x, y in zip(b[r], b[col])]
    x = [[0.0] * len(b[0]) for _ in range(n)]
    for r in reversed(range(n)):
        for c in range(len(b[0])):
            x[r][c] = (b[r][c] - sum(a[r][k] * x[k][c] for k in range(r + 1, n))) / a[r][r]
    return np.array(x)


def test_pinv_identity():
    np.testing.assert_allclose(pseudoinverse(np.eye(4)), np.eye(4), atol=1e-15)


def test_pinv_rank_deficient_diagonal():
    np.testing.assert_allclose(pseudoinverse(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))


def test_pinv_random_5x8():
    a = np.random.default_rng(0).normal(size=(5, 8))
    p = pseudoinverse(a)
    assert max(penrose_residuals(a, p)) < 1e-8 * np.linalg.norm(a)


@pytest.mark.parametrize("shape, rank", [((12, 5), None), ((5, 12), None), ((10, 10), 4), ((7, 20), 3),
                                         ((30, 6), 2), ((1, 9), None), ((9, 1), None)])
def test_pinv_penrose_shapes(shape, rank):
    rng = np.random.default_rng(hash((shape, rank)) % 2**32)
    for _ in range(5):
        a = random_matrix(rng, *shape, rank)
        p = pseudoinverse(a)
        assert max(penrose_residuals(a, p)) < 1e-8 * np.linalg.norm(a)


def test_pinv_zero_matrix():
    np.testing.assert_array_equal(pseudoinverse(np.zeros((3, 2))), np.zeros((2, 3)))


def test_train_identity_states():
    t = np.random.default_rng(1).normal(size=(3, 4))
    w = train_readout(np.eye(4), t)
    np.testing.assert_allclose(w.w_out, t, atol=1e-12)


def test_train_square_invertible():
    rng = np.random.default_rng(2)
    s, t = rng.normal(size=(6, 6)), rng.normal(size=(2, 6))
    w = train_readout(s, t)
    np.testing.assert_allclose(w.w_out @ s, t, atol=1e-10)


def test_train_against_gaussian_elimination():
    s = np.array([[1.0, 2.0, 0.5, -1.0, 3.0],
                  [0.0, 1.0, 4.0, 2.0, -2.0],
                  [2.0, -1.0, 1.0, 0.0, 1.0]])
    t = np.array([[1, 0, 1, 0, 0], [0, 1, 0, 1, 1]], dtype=float)
    # W = T S^T (S S^T)^-1  <=>  (S S^T) W^T = S T^T
    oracle = gauss_solve(s @ s.T, s @ t.T).T
    for method in ("svd", "gram"):
        np.testing.assert_allclose(train_readout(s, t, method=method).w_out, oracle, atol=1e-12)


def test_gram_and_svd_agree_on_tall_problem():
    rng = np.random.default_rng(3)
    s, t = rng.normal(size=(20, 400)), rng.normal(size=(4, 400))
    np.testing.assert_allclose(train_readout(s, t, method="gram").w_out, train_readout(s, t, method="svd").w_out,
                               atol=1e-10)


def test_gram_handles_rank_deficiency():
    rng = np.random.default_rng(4)
    s = random_matrix(rng, 30, 200, rank=8)
    t = rng.normal(size=(3, 200))
    np.testing.assert_allclose(train_readout(s, t, method="gram").w_out @ s, t @ pseudoinverse(s) @ s, atol=1e-8)


def test_streaming_accumulator_matches_batch():
    rng = np.random.default_rng(5)
    s, t = rng.normal(size=(15, 300)), rng.normal(size=(3, 300))
    acc = GramAccumulator(15, 3)
    for lo in range(0, 300, 70):
        acc.add(s[:, lo:lo + 70], t[:, lo:lo + 70])
    assert acc.n_samples == 300
    np.testing.assert_allclose(acc.solve().w_out, train_readout(s, t, method="svd").w_out, atol=1e-10)


def test_ridge_formula_and_continuity():
    rng = np.random.default_rng(6)
    s, t = rng.normal(size=(8, 50)), rng.normal(size=(2, 50))
    lam = 0.7
    expected = t @ s.T @ np.linalg.inv(s @ s.T + lam * np.eye(8))
    w = train_readout(s, t, lam)
    np.testing.assert_allclose(w.w_out, expected, atol=1e-12)
    assert w.ridge_lambda == lam
    w0 = train_readout(s, t).w_out
    gaps = [np.linalg.norm(train_readout(s, t, lam).w_out - w0) for lam in (1e-1, 1e-3, 1e-5, 1e-7)]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-6


def test_train_validation():
    with pytest.raises(DimensionMismatch):
        train_readout(np.ones((3, 4)), np.ones((2, 5)))
    with pytest.raises(ValueError):
        train_readout(np.eye(3), np.eye(3), ridge_lambda=-1)


def test_weights_must_be_finite():
    with pytest.raises(Exception):
        ReadoutWeights(np.array([[np.nan]]))


def test_predict():
    w = ReadoutWeights(np.eye(3))
    s = np.array([0.2, -1.0, 4.0])
    np.testing.assert_array_equal(predict(w, s), s)
    np.testing.assert_array_equal(predict(ReadoutWeights(np.ones((2, 3))), np.zeros(3)), np.zeros(2))
    w2 = ReadoutWeights(np.array([[1.0, 2.0], [3.0, -1.0]]))
    np.testing.assert_allclose(predict(w2, [2.0, 0.5]), [3.0, 5.5])
    with pytest.raises(DimensionMismatch):
        predict(w, np.zeros(4))


def test_classify():
    assert classify([0.1, 0.9, 0.3]) == 1
    assert classify([0.5, 0.5]) == 0
    for k in range(5):
        assert classify(np.eye(5)[k]) == k
    np.testing.assert_array_equal(classify(np.array([[0.1, 2.0], [0.3, 1.0]])), [1, 0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-200, 200), min_size=1, max_size=12))
def test_classify_invariant_under_increasing_maps(y):
    # quarter-step grid keeps ties exact and distinct values distinct after the maps
    y = np.array(y) / 4.0
    k = classify(y)
    assert classify(np.exp(y / 10)) == k
    assert classify(y ** 3 + 2 * y) == k


@pytest.mark.parametrize("seed", range(5))
def test_linear_saturation_theorem(seed):
    """Identity reservoir with n_theta >= n_f reproduces regression on x'."""
    rng = np.random.default_rng(seed)
    n_f, n_train, n_test, n_classes = 6, 200, 80, 4
    xp_train = rng.normal(size=(n_f, n_train))
    xp_test = rng.normal(size=(n_f, n_test))
    t = np.eye(n_classes)[:, rng.integers(0, n_classes, n_train)]
    baseline = classify(t @ pseudoinverse(xp_train) @ xp_test)
    for n_theta in (n_f, 15, 60):
        for k in (0.01, 1.0, 250.0):
            m = rng.uniform(-1, 1, size=(n_theta, n_f))
            s_train, s_test = k * m @ xp_train, k * m @ xp_test
            w = train_readout(s_train, t)
            np.testing.assert_array_equal(classify(predict(w, s_test)), baseline)


def test_solve_gram_rejects_negative_lambda():
    with pytest.raises(ValueError):
        solve_gram(np.eye(2), np.eye(2), -1.0)
