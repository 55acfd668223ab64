import json

import numpy as np
import pytest

from polymix import metrics
from polymix.errors import PolymixError


def _random_batch(rng, n, c, quantize=True):
    """Random batch; quantized scores force plenty of ties."""
    if quantize:
        scores = rng.integers(0, 21, size=(n, c)) * 0.05
    else:
        scores = rng.uniform(0, 1, size=(n, c))
    labels = rng.integers(0, 2, size=(n, c)).astype(float)
    return metrics.EvalBatch(np.round(scores, 6), labels)


# ---------------------------------------------------------------------------
# batch validation

def test_eval_batch_validation():
    b = metrics.EvalBatch(np.full((3, 2), 0.5), np.zeros((3, 2)))
    assert b.n_samples == 3 and b.n_classes == 2
    with pytest.raises(PolymixError, match="equal 2-D"):
        metrics.EvalBatch(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(PolymixError, match="equal 2-D"):
        metrics.EvalBatch(np.zeros(3), np.zeros(3))
    with pytest.raises(PolymixError, match="empty"):
        metrics.EvalBatch(np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(PolymixError, match="finite"):
        metrics.EvalBatch(np.full((1, 2), 1.5), np.zeros((1, 2)))
    with pytest.raises(PolymixError, match="finite"):
        metrics.EvalBatch(np.array([[np.nan, 0.5]]), np.zeros((1, 2)))
    with pytest.raises(PolymixError, match="binary"):
        metrics.EvalBatch(np.full((1, 2), 0.5), np.full((1, 2), 0.25))


def test_threshold_range_is_open():
    b = _random_batch(np.random.default_rng(0), 4, 3)
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(PolymixError, match="threshold"):
            metrics.hamming_accuracy(b, bad)
        with pytest.raises(PolymixError, match="threshold"):
            metrics.f1_macro(b, bad)


# ---------------------------------------------------------------------------
# accuracy

def test_hamming_accuracy_matches_cell_loop():
    rng = np.random.default_rng(1)
    for _ in range(20):
        b = _random_batch(rng, int(rng.integers(1, 12)), int(rng.integers(1, 6)))
        hits = 0
        for i in range(b.n_samples):
            for j in range(b.n_classes):
                hits += (b.scores[i, j] >= 0.5) == (b.labels[i, j] == 1)
        want = hits / (b.n_samples * b.n_classes)
        assert abs(metrics.hamming_accuracy(b) - want) < 1e-15


def test_boundary_score_counts_as_positive():
    b = metrics.EvalBatch(np.array([[0.5]]), np.array([[1.0]]))
    assert metrics.hamming_accuracy(b, 0.5) == 1.0


def test_mean_per_label_accuracy_equals_hamming():
    rng = np.random.default_rng(2)
    for _ in range(50):
        b = _random_batch(rng, int(rng.integers(1, 20)), int(rng.integers(1, 8)),
                          quantize=bool(rng.integers(0, 2)))
        per = metrics.per_label_accuracy(b)
        assert per.shape == (b.n_classes,)
        assert abs(float(np.mean(per)) - metrics.hamming_accuracy(b)) < 1e-12


# ---------------------------------------------------------------------------
# ROC-AUC against a literal pair-counting oracle

def _auc_oracle(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def test_auc_known_case():
    b = metrics.EvalBatch(np.array([[0.1], [0.4], [0.35], [0.8]]),
                          np.array([[0.0], [0.0], [1.0], [1.0]]))
    aucs, skipped = metrics.roc_auc_per_class(b)
    assert aucs[0] == 0.75
    assert skipped == []
    assert metrics.roc_auc_macro(b) == 0.75


def test_auc_equals_pair_count_oracle_exactly():
    rng = np.random.default_rng(3)
    done = 0
    while done < 30:
        b = _random_batch(rng, int(rng.integers(2, 17)), int(rng.integers(1, 5)))
        aucs, skipped = metrics.roc_auc_per_class(b)
        for c in range(b.n_classes):
            if c in skipped:
                assert np.isnan(aucs[c])
                continue
            want = _auc_oracle(b.scores[:, c], b.labels[:, c])
            assert aucs[c] == want  # exact, including midrank tie halves
            done += 1


def test_auc_tie_heavy_case():
    # all scores equal -> every pair tied -> 0.5 exactly
    b = metrics.EvalBatch(np.full((6, 1), 0.3),
                          np.array([[1.0], [0.0], [1.0], [0.0], [0.0], [1.0]]))
    assert metrics.roc_auc_macro(b) == 0.5


def test_auc_macro_skips_one_sided_classes():
    scores = np.array([[0.9, 0.2], [0.1, 0.7], [0.8, 0.4]])
    labels = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])  # class 1 all-neg
    b = metrics.EvalBatch(scores, labels)
    aucs, skipped = metrics.roc_auc_per_class(b)
    assert skipped == [1]
    assert np.isnan(aucs[1])
    assert metrics.roc_auc_macro(b) == aucs[0]


def test_auc_macro_raises_when_nothing_evaluable():
    b = metrics.EvalBatch(np.full((3, 2), 0.5), np.ones((3, 2)))
    with pytest.raises(PolymixError, match="positive and negative"):
        metrics.roc_auc_macro(b)


def test_auc_micro_pools_cells():
    rng = np.random.default_rng(4)
    for _ in range(10):
        b = _random_batch(rng, 8, 3)
        if 0 < np.sum(b.labels) < b.labels.size:
            got = metrics.roc_auc_macro(b, micro=True)
            want = _auc_oracle(b.scores.reshape(-1), b.labels.reshape(-1))
            assert got == want


def test_auc_micro_raises_on_one_sided_pool():
    b = metrics.EvalBatch(np.full((2, 2), 0.5), np.zeros((2, 2)))
    with pytest.raises(PolymixError, match="micro"):
        metrics.roc_auc_macro(b, micro=True)


# ---------------------------------------------------------------------------
# F1

def _f1_oracle(scores, labels, threshold):
    f1s = []
    for c in range(labels.shape[1]):
        if not np.any(labels[:, c] == 1):
            continue
        pred = scores[:, c] >= threshold
        act = labels[:, c] == 1
        tp = np.sum(pred & act)
        fp = np.sum(pred & ~act)
        fn = np.sum(~pred & act)
        f1s.append(2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0)
    return float(np.mean(f1s))


def test_f1_macro_matches_naive_oracle():
    rng = np.random.default_rng(5)
    for _ in range(25):
        b = _random_batch(rng, int(rng.integers(2, 14)), int(rng.integers(1, 6)))
        if not np.any(b.labels == 1):
            continue
        want = _f1_oracle(b.scores, b.labels, 0.5)
        assert abs(metrics.f1_macro(b) - want) < 1e-12


def test_f1_excludes_absent_classes():
    scores = np.array([[0.9, 0.9], [0.8, 0.9]])
    labels = np.array([[1.0, 0.0], [1.0, 0.0]])
    b = metrics.EvalBatch(scores, labels)
    # class 1 has no positives: macro F1 is class 0 alone, which is perfect
    assert metrics.f1_macro(b) == 1.0


def test_f1_raises_without_positives():
    b = metrics.EvalBatch(np.full((2, 2), 0.5), np.zeros((2, 2)))
    with pytest.raises(PolymixError, match="positive"):
        metrics.f1_macro(b)


def test_perfect_predictions_score_one():
    labels = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0]])
    b = metrics.EvalBatch(np.where(labels == 1, 0.95, 0.05), labels)
    assert metrics.hamming_accuracy(b) == 1.0
    assert metrics.f1_macro(b) == 1.0
    assert metrics.roc_auc_macro(b) == 1.0


# ---------------------------------------------------------------------------
# sweep, csv, report

def test_default_grid():
    g = metrics.DEFAULT_THRESHOLD_GRID
    assert len(g) == 19
    assert g[0] == 0.05 and g[-1] == 0.95
    assert all(b - a > 0 for a, b in zip(g, g[1:]))


def test_threshold_sweep_order_and_values():
    b = _random_batch(np.random.default_rng(6), 10, 4)
    grid = [0.2, 0.5, 0.8]
    curve = metrics.threshold_sweep(b, grid)
    assert [t for t, _ in curve] == grid
    for t, acc in curve:
        assert acc == metrics.hamming_accuracy(b, t)
    with pytest.raises(PolymixError, match="empty"):
        metrics.threshold_sweep(b, [])


def test_write_threshold_csv_format(tmp_path):
    path = tmp_path / "curve.csv"
    metrics.write_threshold_csv([(0.05, 0.5), (0.125, 1.0 / 3.0)], path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "threshold,accuracy"
    assert lines[1] == "0.05,0.5"
    assert lines[2] == f"0.125,{1.0 / 3.0:.10g}"


def test_metrics_report_validation_and_json():
    rep = metrics.MetricsReport(accuracy=0.9, roc_auc=0.8, f1=0.7,
                                per_label_accuracy=[0.9, 0.9],
                                threshold_curve=[(0.5, 0.9)])
    data = json.loads(rep.to_json())
    assert data["accuracy"] == 0.9
    assert data["threshold_curve"] == [[0.5, 0.9]]
    assert data["threshold"] == 0.5
    assert data["skipped_auc_classes"] == []
    assert "Hamming" in data["notes"]
    with pytest.raises(PolymixError, match="roc_auc"):
        metrics.MetricsReport(accuracy=0.9, roc_auc=1.2, f1=0.7,
                              per_label_accuracy=[], threshold_curve=[])


def test_evaluate_batch_is_consistent_with_parts():
    b = _random_batch(np.random.default_rng(7), 12, 4)
    rep = metrics.evaluate_batch(b, threshold=0.4, grid=[0.3, 0.6])
    assert rep.accuracy == metrics.hamming_accuracy(b, 0.4)
    assert rep.roc_auc == metrics.roc_auc_macro(b)
    assert rep.f1 == metrics.f1_macro(b, 0.4)
    assert rep.per_label_accuracy == [
        float(v) for v in metrics.per_label_accuracy(b, 0.4)]
    assert rep.threshold_curve == metrics.threshold_sweep(b, [0.3, 0.6])
    assert rep.threshold == 0.4
    rep2 = metrics.evaluate_batch(b)
    assert len(rep2.threshold_curve) == 19
