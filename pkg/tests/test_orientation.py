"""Orientation scoring, circular smoothing, and the linear classifiers."""
import numpy as np
import pytest

from reidkit.core import DegenerateLabelsError, DimensionMismatchError
from reidkit.orientation import (
    accuracy_adjacent,
    accuracy_same,
    fit_orientation_classifier,
    margins_from_features,
    predict_from_features,
    predict_from_scores,
    raw_scores_from_features,
    smooth_scores,
)


class TestSmoothing:
    def test_one_hot_spreads_to_neighbors(self):
        psi = np.zeros(8)
        psi[0] = 1.0  # label 1
        out = smooth_scores(psi)
        expected = np.array([0.5, 0.25, 0, 0, 0, 0, 0, 0.25])
        assert np.allclose(out, expected)

    def test_wraparound_at_label_eight(self):
        psi = np.zeros(8)
        psi[7] = 1.0
        out = smooth_scores(psi)
        expected = np.array([0.25, 0, 0, 0, 0, 0, 0.25, 0.5])
        assert np.allclose(out, expected)

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        psi = rng.uniform(size=8)
        assert np.allclose(smooth_scores(psi, (0.0, 1.0, 0.0)), psi)

    def test_total_mass_scales_with_kernel_sum(self):
        rng = np.random.default_rng(1)
        psi = rng.uniform(size=8)
        out = smooth_scores(psi, (0.25, 0.5, 0.25))
        assert np.isclose(out.sum(), psi.sum())
        half = smooth_scores(psi, (0.1, 0.2, 0.1))
        assert np.isclose(half.sum(), 0.4 * psi.sum())

    def test_shape_and_kernel_validation(self):
        with pytest.raises(DimensionMismatchError):
            smooth_scores(np.zeros(7))
        with pytest.raises(ValueError):
            smooth_scores(np.zeros(8), (0.5, 0.5))

    def test_argmax_prefers_lowest_label_on_ties(self):
        psi = np.full(8, 0.3)
        assert predict_from_scores(psi) == 1
        psi = np.zeros(8)
        psi[[2, 6]] = 1.0  # labels 3 and 7 tie after smoothing
        assert predict_from_scores(psi) == 3


def ring_clusters(rng, per_class=60, dim=24, spread=0.25):
    """8 Gaussian blobs on a circle embedded in a higher dimension."""
    feats, labels = [], []
    for cls in range(1, 9):
        ang = (cls - 1) * np.pi / 4
        center = np.zeros(dim)
        center[0], center[1] = np.cos(ang), np.sin(ang)
        feats.append(center + spread * rng.normal(size=(per_class, dim)))
        labels += [cls] * per_class
    return np.vstack(feats), np.array(labels)


class TestClassifier:
    def test_separable_data_fits_perfectly(self):
        rng = np.random.default_rng(5)
        feats, labels = ring_clusters(rng, per_class=40, spread=0.1)
        clf = fit_orientation_classifier(feats, labels, seed=1, epochs=30)
        preds = [predict_from_features(clf, f) for f in feats]
        assert accuracy_same(labels, preds) == 1.0

    def test_noisy_data_within_one_step(self):
        rng = np.random.default_rng(6)
        feats, labels = ring_clusters(rng, per_class=50, spread=0.25)
        clf = fit_orientation_classifier(feats, labels, seed=2, epochs=40)
        preds = [predict_from_features(clf, f) for f in feats]
        assert accuracy_same(labels, preds) > 0.8
        assert accuracy_adjacent(labels, preds) > 0.97
        assert accuracy_adjacent(labels, preds) >= accuracy_same(labels, preds)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(7)
        feats, labels = ring_clusters(rng, per_class=20)
        a = fit_orientation_classifier(feats, labels, seed=3, epochs=10)
        b = fit_orientation_classifier(feats, labels, seed=3, epochs=10)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.calib_scale, b.calib_scale)

    def test_scores_live_in_unit_interval(self):
        rng = np.random.default_rng(8)
        feats, labels = ring_clusters(rng, per_class=20)
        clf = fit_orientation_classifier(feats, labels, seed=4, epochs=10)
        scores = raw_scores_from_features(clf, feats[::7])
        assert scores.shape == (len(feats[::7]), 8)
        assert (scores > 0).all() and (scores < 1).all()

    def test_missing_class_is_an_error(self):
        rng = np.random.default_rng(9)
        feats, labels = ring_clusters(rng, per_class=10)
        keep = labels != 5
        with pytest.raises(DegenerateLabelsError, match="5"):
            fit_orientation_classifier(feats[keep], labels[keep], seed=0, epochs=2)

    def test_label_and_shape_validation(self):
        feats = np.zeros((4, 3))
        with pytest.raises(ValueError):
            fit_orientation_classifier(feats, [1, 2, 3, 9], seed=0)
        with pytest.raises(DimensionMismatchError):
            fit_orientation_classifier(np.zeros((4, 3)), [1, 2, 3], seed=0)

    def test_margin_feature_width_checked(self):
        rng = np.random.default_rng(10)
        feats, labels = ring_clusters(rng, per_class=10, dim=6)
        clf = fit_orientation_classifier(feats, labels, seed=0, epochs=2)
        with pytest.raises(DimensionMismatchError):
            margins_from_features(clf, np.zeros(5))

    def test_zero_margin_with_identity_calibration_scores_half(self):
        rng = np.random.default_rng(11)
        feats, labels = ring_clusters(rng, per_class=10, dim=6)
        clf = fit_orientation_classifier(feats, labels, seed=0, epochs=2)
        clf.calib_scale = np.ones(8)
        clf.calib_offset = np.zeros(8)
        x = np.zeros(6)
        clf.biases = np.zeros(8)
        scores = raw_scores_from_features(clf, x)
        assert np.allclose(scores, 0.5)
