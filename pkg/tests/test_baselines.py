from __future__ import annotations

import logging

import numpy as np
import pytest

from src.data.windows import WindowBatch, make_windows
from src.errors import BaselineError
from src.models.baselines import (
    PcaState,
    ae_fit,
    ae_score,
    fit_baseline,
    knn_fit,
    knn_score,
    pca_fit,
    pca_reconstruct,
    pca_score,
    var_fit,
    var_forecast,
    var_forecast_batch,
    window_rows,
)
from src.tasks.scoring import fit_threshold
from src.utils.config import BaselineSection


def test_pca_line_has_zero_error():
    t = np.linspace(-1.0, 1.0, 20)
    X = np.stack([t, 2 * t, -t], axis=1)
    state = pca_fit(X, n_components=1)
    np.testing.assert_allclose(pca_score(state, X), 0.0, atol=1e-20)


def test_pca_full_rank_reconstructs(rng):
    X = rng.normal(size=(30, 4))
    state = pca_fit(X, n_components=4)
    np.testing.assert_allclose(pca_reconstruct(state, X), X, atol=1e-10)


def test_pca_matches_covariance_eigenvectors(rng):
    X = rng.normal(size=(5, 3)) * np.array([3.0, 1.0, 0.2])
    state = pca_fit(X, n_components=2)
    cov = np.cov(X, rowvar=False)
    evals, evecs = np.linalg.eigh(cov)
    top = evecs[:, ::-1][:, :2].T
    for got, want in zip(state.components, top):
        assert abs(float(np.dot(got, want))) == pytest.approx(1.0, abs=1e-8)
        assert got[np.argmax(np.abs(got))] > 0


def test_pca_score_examples():
    state = PcaState(mean=np.zeros(3), components=np.array([[1.0, 0.0, 0.0]]), explained_variance_ratio=np.array([1.0]))
    assert pca_score(state, np.array([2.0, 0.0, 0.0])) == 0.0
    assert pca_score(state, np.array([0.0, 1.0, 0.0])) == 1.0


def test_pca_error_shrinks_with_components(rng):
    X = rng.normal(size=(40, 5)) @ rng.normal(size=(5, 5))
    totals = [pca_score(pca_fit(X, n_components=m), X).sum() for m in range(1, 6)]
    assert all(b <= a + 1e-9 for a, b in zip(totals, totals[1:]))


def test_pca_variance_rule_picks_enough_axes(rng):
    X = rng.normal(size=(100, 4)) * np.array([10.0, 1.0, 0.1, 0.1])
    state = pca_fit(X, variance=0.95)
    assert state.n_components == 1 or state.explained_variance_ratio.sum() >= 0.95
    assert state.explained_variance_ratio[: state.n_components - 1].sum() < 0.95


def test_pca_degenerate_input_rejected():
    with pytest.raises(BaselineError):
        pca_fit(np.ones((5, 3)))
    with pytest.raises(BaselineError):
        pca_fit(np.eye(3), n_components=4)


def test_knn_examples():
    assert knn_score(np.array([[1.0]]), np.array([1.0]), k=1) == 0.0
    assert knn_score(np.array([[0.0], [10.0]]), np.array([1.0]), k=2) == pytest.approx(10.0)


def test_knn_matches_exhaustive_search(rng):
    for _ in range(20):
        train = rng.normal(size=(int(rng.integers(5, 40)), 3))
        queries = rng.normal(size=(7, 3))
        k = int(rng.integers(1, len(train) + 1))
        got = knn_score(train, queries, k=k)
        for q, value in zip(queries, got):
            dists = sorted(float(np.sqrt(np.sum((row - q) ** 2))) for row in train)
            assert value == pytest.approx(sum(dists[:k]), rel=1e-10)


def test_knn_ignores_training_order(rng):
    train = rng.normal(size=(50, 4))
    queries = rng.normal(size=(10, 4))
    a = knn_score(train, queries, k=5)
    b = knn_score(train[rng.permutation(50)], queries, k=5)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_knn_threads_and_chunks_agree(rng):
    state = knn_fit(rng.normal(size=(60, 3)), k=4)
    queries = rng.normal(size=(53, 3))
    serial = knn_score(state, queries)
    threaded = knn_score(state, queries, threads=4, chunk_size=8)
    np.testing.assert_array_equal(serial, threaded)


def test_knn_k_out_of_range():
    with pytest.raises(BaselineError):
        knn_fit(np.zeros((3, 2)), k=4)
    with pytest.raises(BaselineError):
        knn_fit(np.zeros((3, 2)), k=0)
    with pytest.raises(BaselineError):
        knn_score(np.zeros((3, 2)), np.zeros((3, 2)), k=3, leave_one_out=True)


def test_knn_leave_one_out_skips_own_row(rng):
    train = rng.normal(size=(30, 3))
    got = knn_score(train, train, k=4, leave_one_out=True)
    for i, q in enumerate(train):
        dists = sorted(float(np.sqrt(np.sum((row - q) ** 2))) for j, row in enumerate(train) if j != i)
        assert got[i] == pytest.approx(sum(dists[:4]), rel=1e-10)


def test_knn_threshold_flags_about_rate_on_iid_data():
    gen = np.random.default_rng(11)
    train = gen.normal(size=(2000, 25))
    test = gen.normal(size=(2000, 25))
    state = knn_fit(train, k=5)
    tau = fit_threshold(knn_score(state, train, leave_one_out=True), 0.05)
    flagged = float(np.mean(knn_score(state, test) > tau))
    assert 0.02 <= flagged <= 0.09


def test_knn_baseline_scores_training_windows_without_self_match(sinusoid_dataset):
    windows = make_windows(sinusoid_dataset, w=5)
    model = fit_baseline("knn", windows, BaselineSection(knn_k=3))
    fit_scores = model.score(windows, training=True)
    assert np.all(fit_scores > 0)
    assert np.all(fit_scores >= model.score(windows))


def test_ae_fits_and_separates_outliers(rng):
    latent = rng.normal(size=(400, 2))
    X = latent @ rng.normal(size=(2, 8))
    state = ae_fit(X, bottleneck=2, epochs=40, lr=5e-3, batch_size=32, seed=0)
    assert state.losses[-1] < 0.5 * state.losses[0]
    inside = ae_score(state, X[:50]).mean()
    outside = ae_score(state, X[:50] + 10.0 * X.std()).mean()
    assert outside > inside


def test_ae_is_seeded(rng):
    X = rng.normal(size=(40, 6))
    a = ae_fit(X, epochs=2, seed=3)
    b = ae_fit(X, epochs=2, seed=3)
    for name in a.weights:
        np.testing.assert_array_equal(a.weights[name], b.weights[name])
    assert a.bottleneck == 2


def test_ae_bottleneck_must_compress(rng):
    with pytest.raises(BaselineError):
        ae_fit(rng.normal(size=(10, 4)), bottleneck=4, epochs=1)


def test_var_recovers_ar1_coefficient():
    gen = np.random.default_rng(0)
    x = np.zeros(5000)
    for t in range(1, 5000):
        x[t] = 0.5 * x[t - 1] + gen.normal(scale=0.1)
    state = var_fit(x[:, None], p=1)
    assert state.coefs[0, 0, 0] == pytest.approx(0.5, abs=0.05)


def test_var_recovers_exact_ar1_series():
    x = 3.0 * 0.5 ** np.arange(30)
    state = var_fit(x[:, None], p=1)
    assert state.ridge == 0.0
    assert state.coefs[0, 0, 0] == pytest.approx(0.5, abs=1e-8)
    assert state.intercept[0] == pytest.approx(0.0, abs=1e-8)
    assert var_forecast(state, x[None, :5])[0] == pytest.approx(x[5], abs=1e-8)


def test_var_on_white_noise_has_small_coefficients():
    gen = np.random.default_rng(1)
    state = var_fit(gen.normal(size=(2000, 2)), p=2)
    assert np.all(np.abs(state.coefs) < 0.1)


def test_var_matches_normal_equations(rng):
    series = rng.normal(size=(50, 2))
    state = var_fit(series, p=1)
    Z = np.hstack([np.ones((49, 1)), series[:-1]])
    B = np.linalg.solve(Z.T @ Z, Z.T @ series[1:])
    np.testing.assert_allclose(state.intercept, B[0], atol=1e-8)
    np.testing.assert_allclose(state.coefs[0], B[1:].T, atol=1e-8)
    assert state.ridge == 0.0


def test_var_batch_forecast_matches_single(rng):
    state = var_fit(rng.normal(size=(80, 3)), p=2)
    histories = rng.normal(size=(6, 3, 5))
    batch = var_forecast_batch(state, histories)
    for b in range(6):
        np.testing.assert_allclose(batch[b], var_forecast(state, histories[b]), atol=1e-12)


def test_var_needs_enough_rows(rng):
    with pytest.raises(BaselineError):
        var_fit(rng.normal(size=(5, 2)), p=2)


def test_var_singular_design_falls_back_to_ridge(rng, caplog):
    series = np.column_stack([rng.normal(size=60), np.full(60, 3.0)])
    with caplog.at_level(logging.WARNING):
        state = var_fit(series, p=1)
    assert state.ridge == pytest.approx(1e-6)
    assert "ridge" in caplog.text


def test_window_rows_end_at_target():
    inputs = np.arange(10.0).reshape(1, 2, 5)
    batch = WindowBatch(inputs=inputs, targets=np.array([[100.0, 200.0]]), target_times=np.array([5]))
    np.testing.assert_array_equal(window_rows(batch)[0], [1, 2, 3, 4, 100, 6, 7, 8, 9, 200])


@pytest.mark.parametrize("kind", ["pca", "knn", "ae", "var"])
def test_fit_baseline_kinds(sinusoid_dataset, kind):
    windows = make_windows(sinusoid_dataset, w=5)
    cfg = BaselineSection(ae_epochs=2, knn_k=3)
    model = fit_baseline(kind, windows, cfg, seed=0)
    if model.is_forecaster:
        assert model.forecast(windows).shape == (len(windows), 3)
        with pytest.raises(BaselineError):
            model.score(windows)
    else:
        scores = model.score(windows)
        assert scores.shape == (len(windows),)
        assert np.all(scores >= 0)


def test_unknown_baseline_rejected(sinusoid_dataset):
    with pytest.raises(BaselineError):
        fit_baseline("lstm", make_windows(sinusoid_dataset), BaselineSection())
