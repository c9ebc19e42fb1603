import json

import numpy as np
import pandas as pd
import pytest

from conftest import linear_model
from istr.data_models import ReverseTrigger
from istr.detect.scan import LeadMatrix, ScanResult
from istr.errors import ArgumentError, DimensionError
from istr.metrics import (
    MetricBundle, PairMetrics, StageTimer, apd, band_overlap, curve_gap, detection_acc_tpr, dumps, fir,
    mask_overlap, mutation_curves, read_json, save_comparison, save_curves, speed_gap, write_json,
)


def test_detection_scores_single_backdoor():
    truth = [(m, 8) for m in range(10) if m != 8]
    score = detection_acc_tpr([(0, 8), (1, 8), (2, 8), (3, 8), (4, 5)], truth, 10)
    assert score.class_tpr == pytest.approx(5 / 9)
    assert score.pair_tpr == pytest.approx(4 / 9)
    assert score.class_acc == pytest.approx(6 / 10)
    assert score.pair_acc == pytest.approx(5 / 10)


def test_detection_scores_without_ground_truth():
    score = detection_acc_tpr([(2, 3)], [], 5)
    assert score.class_tpr is None and score.pair_tpr is None
    assert score.class_acc == pytest.approx(0.8)


def test_apd_and_fir():
    a = np.zeros((1, 2, 2))
    b = np.full((1, 2, 2), 0.25)
    assert apd(a, b) == pytest.approx(0.25)
    assert apd(a, a) == 0.0
    with pytest.raises(DimensionError):
        apd(a, np.zeros((1, 3, 3)))
    model = linear_model(np.eye(2))
    images = np.array([[[[0.6, 0.4]]], [[[0.9, 0.1]]]], dtype=np.float32)
    assert fir(model, np.array([[[-0.3, 0.3]]]), images, 1) == 0.5
    assert fir(model, np.zeros((1, 1, 2)), images, 1) == 0.0
    with pytest.raises(ArgumentError):
        fir(model, np.zeros((1, 1, 2)), images[:0], 1)


def test_fir_stamps_a_reverse_trigger_itself():
    model = linear_model(np.eye(2))
    images = np.array([[[[0.6, 0.4]]], [[[0.9, 0.1]]]], dtype=np.float32)
    blend = ReverseTrigger(0, 1, mask=np.array([[[0.0, 1.0]]]), pattern=np.ones((1, 1, 2)), method="l1")
    assert fir(model, blend, images, 1) == 1.0
    assert fir(model, ReverseTrigger(0, 1, delta=np.array([[[-0.3, 0.3]]])), images, 1) == 0.5


def test_overlap_measures():
    scores = np.zeros((1, 10, 10))
    scores[0, :2, :5] = 1.0
    support = np.zeros((1, 10, 10), dtype=bool)
    support[0, :2, :5] = True
    assert mask_overlap(scores, support) == 1.0
    assert mask_overlap(-scores, support) == 0.0
    assert band_overlap(support, support) == 1.0
    assert band_overlap(np.zeros_like(support), support) == 0.0


def _scan():
    lead = LeadMatrix(np.array([[0, 2], [0, 0]]), np.array([2, 2]))
    return ScanResult(lead, np.arange(4), np.array([0, 0, 1, 1]), np.array([1, 3, 0, 0]),
                      np.array([1, 1, -1, -1]), np.zeros((4, 1, 1, 2), dtype=np.float32), budget=4, step_size=0.1)


def test_mutation_curves_are_cumulative():
    curves = mutation_curves(_scan())
    assert list(curves.columns) == ["epoch", "class", "rate"]
    zero = curves[curves["class"] == 0]["rate"].tolist()
    assert zero == [0.5, 0.5, 1.0, 1.0]
    assert curves[curves["class"] == 1]["rate"].eq(0.0).all()
    assert curve_gap(curves, [0]) == pytest.approx(1.0)
    assert curve_gap(curves, [0], epoch=1) == pytest.approx(0.5)
    assert curve_gap(curves, []) is None
    assert speed_gap(curves, [0]) == pytest.approx(0.75)
    assert speed_gap(curves, [0, 1]) is None


def test_save_curves_writes_csv(tmp_path):
    path = save_curves(mutation_curves(_scan()), tmp_path / "curves" / "steps.csv")
    frame = pd.read_csv(path)
    assert len(frame) == 8


def test_json_is_deterministic(tmp_path):
    payload = {"b": np.float32(0.1), "a": [np.int64(3), (1, 2)], "c": np.array([0.5, 1 / 3])}
    text = dumps(payload)
    assert text == dumps(dict(reversed(list(payload.items()))))
    assert list(json.loads(text)) == ["a", "b", "c"]
    assert json.loads(text)["c"][1] == round(1 / 3, 10)
    path = write_json(payload, tmp_path / "r.json")
    assert read_json(path)["a"] == [3, [1, 2]]


def test_pair_metrics_validation():
    with pytest.raises(ValueError):
        PairMetrics(0, 1, fir=1.5)
    with pytest.raises(ValueError):
        PairMetrics(0, 1, apd=-0.1)


def test_metric_bundle_shape():
    bundle = MetricBundle(attack={"name": "badnets"}, pairs=[PairMetrics(0, 8, apd=0.01, fir=0.99)])
    payload = bundle.to_json()
    assert payload["inversion"][0]["fir"] == 0.99
    assert set(payload) >= {"attack", "detection", "detection_score", "masks", "repair", "curve_gap"}


def test_timer_table_and_csv(tmp_path):
    timer = StageTimer()
    with timer.stage("detect", samples=10):
        pass
    with timer.stage("report"):
        pass
    table = timer.timing_table()
    assert table["stage"].tolist() == ["detect", "report"]
    assert np.isnan(table["seconds_per_sample"].iloc[1])
    path = timer.save(tmp_path / "timing.csv")
    timer.save(path)
    assert len(pd.read_csv(path)) == 4


def test_comparison_html(tmp_path):
    path = save_comparison([np.zeros((1, 4, 4)), np.ones((1, 4, 4))], ["original", "reverse"],
                           tmp_path / "cmp.html", "pair 0 -> 8")
    text = path.read_text()
    assert "<html>" in text and "original" in text
