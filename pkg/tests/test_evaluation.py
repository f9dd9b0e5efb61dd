from __future__ import annotations

import json

import numpy as np
import pytest

from src.errors import EvaluationError
from src.tasks.evaluation import MetricsSummary, forecast_metrics, make_report, prf1


def test_prf1_example():
    m = prf1([1, 1, 0, 0], [1, 0, 1, 0])
    assert (m.precision, m.recall, m.f1) == (0.5, 0.5, 0.5)
    assert m.counts == {"tp": 1, "fp": 1, "fn": 1, "tn": 1}


def test_prf1_all_zero_predictions():
    m = prf1([0, 0, 0], [1, 1, 0])
    assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)
    assert m.fn == 2


def test_prf1_perfect():
    m = prf1([0, 1, 1], [0, 1, 1])
    assert m.f1 == 1.0


def test_prf1_length_mismatch():
    with pytest.raises(EvaluationError):
        prf1([0, 1], [0, 1, 1])


def test_prf1_ignores_order(rng):
    pred = (rng.random(200) < 0.3).astype(int)
    truth = (rng.random(200) < 0.3).astype(int)
    perm = rng.permutation(200)
    assert prf1(pred, truth) == prf1(pred[perm], truth[perm])


def test_forecast_metrics_example():
    mse, mae = forecast_metrics(np.array([0.0, 0.0]), np.array([2.0, -2.0]))
    assert (mse, mae) == (4.0, 2.0)


def test_forecast_metrics_match_loop(rng):
    pred = rng.normal(size=(20, 3))
    truth = rng.normal(size=(20, 3))
    mse, mae = forecast_metrics(pred, truth)
    diffs = [pred[t, i] - truth[t, i] for t in range(20) for i in range(3)]
    assert mse == pytest.approx(sum(d * d for d in diffs) / 60, rel=1e-12)
    assert mae == pytest.approx(sum(abs(d) for d in diffs) / 60, rel=1e-12)


def test_forecast_metrics_shape_mismatch():
    with pytest.raises(EvaluationError):
        forecast_metrics(np.zeros(3), np.zeros(4))


def test_make_report(tmp_path):
    runs = [("glue", prf1([1, 0], [1, 0]).with_forecast(0.1, 0.2)), ("pca", prf1([1, 1], [1, 0]))]
    json_path, text_path = make_report(runs, tmp_path, config_hash="abc123")
    payload = json.loads(json_path.read_text(encoding="utf-8"))
    assert payload["config_hash"] == "abc123"
    assert [r["model"] for r in payload["runs"]] == ["glue", "pca"]
    assert payload["runs"][0]["mse"] == 0.1
    assert payload["runs"][1]["mse"] is None
    text = text_path.read_text(encoding="utf-8")
    assert "glue" in text and "pca" in text and "F1" in text


def test_make_report_needs_runs(tmp_path):
    with pytest.raises(EvaluationError):
        make_report([], tmp_path)


def test_summary_round_trips_to_dict():
    m = MetricsSummary(1.0, 0.5, 2 / 3, 1, 0, 1, 3)
    assert m.to_dict()["tn"] == 3
    assert m.with_forecast(1.0, 1.0).mae == 1.0


def test_prf1_from_counts():
    predicted = [1] * 6 + [1] * 4 + [0] * 3 + [0] * 7
    truth = [1] * 6 + [0] * 4 + [1] * 3 + [0] * 7
    m = prf1(predicted, truth)
    assert m.precision == pytest.approx(0.6)
    assert m.recall == pytest.approx(2 / 3)
    assert m.f1 == pytest.approx(0.631578947, abs=1e-9)
    assert m.tp + m.fp + m.fn + m.tn == 20


def test_equal_magnitude_errors_give_mse_equal_mae_squared(rng):
    truth = rng.normal(size=(10, 4))
    pred = truth + 0.5 * rng.choice([-1.0, 1.0], size=(10, 4))
    mse, mae = forecast_metrics(pred, truth)
    assert mse == pytest.approx(mae ** 2, rel=1e-12)
    assert forecast_metrics(truth, truth) == (0.0, 0.0)
