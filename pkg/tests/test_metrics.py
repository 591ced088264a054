import numpy as np
import pytest

from psdlab.errors import ShapeError, UndefinedMetricError
from psdlab.metrics import auc, confusion, evaluate, mean_defined, pearson, r_squared


def brute_force_auc(scores, truth) -> float:
    pos, neg = scores[truth], scores[~truth]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (pos.size * neg.size)


def test_confusion_counts():
    report = confusion([True, True, False, False, True], [True, False, False, True, True])
    assert (report.tp, report.fp, report.tn, report.fn) == (2, 1, 1, 1)
    assert report.tpr == pytest.approx(2 / 3)
    assert report.fpr == pytest.approx(0.5)
    assert report.f1 == pytest.approx(4 / 6)
    assert report.total == 5


def test_confusion_undefined_rates_are_none():
    report = confusion([False, False], [False, False])
    assert report.tpr is None and report.f1 is None
    assert report.fpr == 0.0


def test_confusion_shape_mismatch():
    with pytest.raises(ShapeError):
        confusion([True], [True, False])


@pytest.mark.parametrize("seed", range(100))
def test_auc_matches_pairwise_count(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 40))
    # Coarse scores so ties actually happen
    scores = rng.integers(0, 6, size=n).astype(float)
    truth = rng.random(n) < 0.4
    truth[0], truth[1] = True, False
    assert auc(scores, truth) == pytest.approx(brute_force_auc(scores, truth), abs=1e-12)


def test_auc_extremes():
    truth = np.array([False, False, True, True])
    assert auc([0.1, 0.2, 0.8, 0.9], truth) == 1.0
    assert auc([0.9, 0.8, 0.2, 0.1], truth) == 0.0
    assert auc([1.0, 1.0, 1.0, 1.0], truth) == 0.5


@pytest.mark.parametrize("truth", [[True, True], [False, False]])
def test_auc_needs_both_classes(truth):
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], truth)


def test_evaluate_without_positives():
    report = evaluate([False, True], [0.1, 0.9], [False, False])
    assert report.auc is None and report.tpr is None
    assert report.fpr == 0.5


def test_evaluate_includes_auc():
    report = evaluate([False, True], [0.1, 0.9], [False, True])
    assert report.auc == 1.0
    assert report.to_dict()["tp"] == 1


class TestPearson:

    def test_perfect_lines(self):
        x = np.arange(5.0)
        assert pearson(x, 3 * x + 1) == pytest.approx(1.0)
        assert pearson(x, -x) == pytest.approx(-1.0)
        assert r_squared(x, -2 * x) == pytest.approx(1.0)

    def test_known_value(self):
        assert pearson([1.0, 2.0, 3.0], [1.0, 3.0, 2.0]) == pytest.approx(0.5)

    def test_zero_variance(self):
        with pytest.raises(UndefinedMetricError):
            pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_too_short(self):
        with pytest.raises(UndefinedMetricError):
            pearson([1.0], [2.0])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            pearson([1.0, 2.0], [1.0, 2.0, 3.0])


def test_mean_defined_skips_none():
    assert mean_defined([0.5, None, 1.0]) == (0.75, 1)
    assert mean_defined([None, None]) == (None, 2)
