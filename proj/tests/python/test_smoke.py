"""Smoke tests for the python bindings over the C++ core."""

import json
import math

import pytest

import acuity


def test_label_shift_cases():
    assert acuity.label_shift(rass=0, cam="negative", gcs=15) == "normal"
    assert acuity.label_shift(rass=1, cam="positive", gcs=14) == "delirium"
    assert acuity.label_shift(rass=-5, gcs=3) == "coma"
    assert acuity.label_shift(rass=-3, gcs=12) == "delirium"
    assert acuity.label_shift(rass=-3, gcs=6) == "coma"
    assert acuity.label_shift(gcs=8) == "coma"
    assert acuity.label_shift() == "excluded"
    assert acuity.label_shift(rass=0, cam="negative", gcs=15, died=True) == "dead"


def test_carry_forward_horizon():
    scores = [(0.0, "rass", 2.0)]
    assert acuity.carry_forward(scores, "rass", 660.0) == 2.0
    assert acuity.carry_forward(scores, "rass", 720.0) == 2.0
    assert acuity.carry_forward(scores, "rass", 780.0) is None


def test_build_mask():
    full = acuity.build_mask(4, "full")
    assert all(all(row) for row in full)
    swg = acuity.build_mask(5, "sliding_window_global", window=1, global_count=0)
    for i in range(5):
        for j in range(5):
            assert swg[i][j] == (abs(i - j) <= 1)


def test_metrics():
    assert acuity.roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert acuity.pr_auc([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(5.0 / 6.0)
    t = acuity.threshold_metrics([0.2, 0.6, 0.7, 0.4], [0, 1, 1, 0], 0.5)
    assert t["sensitivity"] == 1.0 and t["specificity"] == 1.0
    thr = acuity.select_threshold([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert thr == pytest.approx(0.5)
    point, low, high = acuity.bootstrap_auroc(
        [0.2, 0.3, 0.7, 0.8, 0.6, 0.1], [0, 0, 1, 1, 1, 0], iterations=10, seed=3
    )
    assert low <= point <= high


def test_single_class_auc_raises():
    with pytest.raises(acuity.DataError):
        acuity.roc_auc([0.5, 0.6], [1, 1])


def test_forward_probs_deterministic():
    window = [(0.1, 0, 0.5), (0.6, 2, -1.0)]
    statics = [0.3, -0.2]
    a = acuity.forward_probs(window, statics, vocab_size=4, seed=7)
    b = acuity.forward_probs(window, statics, vocab_size=4, seed=7)
    assert a == b
    assert math.isclose(sum(a), 1.0, abs_tol=1e-6)
    c = acuity.forward_probs(window, statics, vocab_size=4, seed=8)
    assert a != c


def test_pipeline_roundtrip(tmp_path):
    raw = tmp_path / "raw"
    bundle = tmp_path / "bundle"
    acuity.synth({"patients": "40", "seed": "5"}, str(raw))
    assert (raw / "events.csv").exists()
    acuity.prepare(str(raw), str(bundle), tabular=True)
    assert (bundle / "bundle.json").exists()
    report_path = tmp_path / "report.json"
    acuity.evaluate(str(bundle), str(report_path), mode="logistic", folds=5, bootstrap=2, seed=9)
    report = json.loads(report_path.read_text())
    assert report["task"] == "brain_acuity"
    assert len(report["metrics"]["mean"]["auroc"]["values"]) == 10
