"""Reconstruction scoring and detection precision curves."""

import numpy as np
import pytest

from parcelmix.data_model import ColumnDescriptor, FeatureMatrix
from parcelmix.imputers import ImputationResult, impute_mean
from parcelmix.metrics import (DEFAULT_RATIOS, Scores, precision_curve,
                               reconstruction_scores)


def result_from(values, observed_mask, columns=None):
    """Wrap a hand-built completed matrix as an imputation result."""
    values = np.asarray(values, dtype=float)
    observed_mask = np.asarray(observed_mask, dtype=bool)
    if columns is None:
        columns = tuple(ColumnDescriptor("S2", "NDVI", "median", j)
                        for j in range(values.shape[1]))
    m = FeatureMatrix(values=values,
                      observed_mask=np.ones_like(observed_mask),
                      columns=columns,
                      row_ids=tuple(f"r{i}" for i in range(values.shape[0])))
    return ImputationResult(completed=m, imputed_mask=~observed_mask,
                            method="test", diagnostics={})


class TestPrecisionCurve:
    def test_hand_example(self):
        curve = precision_curve(np.array([0.9, 0.8, 0.1]),
                                np.array([True, False, True]),
                                ratios=(1 / 3, 2 / 3, 1.0))
        assert curve.precisions[0] == 1.0
        assert curve.precisions[1] == 0.5
        assert curve.precisions[2] == pytest.approx(2 / 3, abs=1e-12)
        assert curve.auc == pytest.approx(4 / 9, abs=1e-12)

    def test_flag_count_is_ceiling_of_ratio(self):
        scores = np.arange(10, 0, -1, dtype=float)
        labels = np.zeros(10, dtype=bool)
        labels[:2] = True
        curve = precision_curve(scores, labels, ratios=(0.2, 0.25, 0.3))
        # 0.2 * 10 flags exactly 2, 0.25 and 0.3 both flag 3, and the
        # float product 0.3 * 10 = 2.999... must not round down to 2
        assert curve.precisions == (1.0, 2 / 3, 2 / 3)

    def test_ties_resolved_by_original_order(self):
        scores = np.full(4, 0.5)
        first = precision_curve(scores, np.array([True, False, False, False]),
                                ratios=(0.25,))
        second = precision_curve(scores, np.array([False, True, False, True]),
                                 ratios=(0.25,))
        assert first.precisions == (1.0,)
        assert second.precisions == (0.0,)

    def test_single_ratio_has_zero_area(self):
        curve = precision_curve(np.array([1.0, 0.0]), np.array([True, False]),
                                ratios=(0.5,))
        assert curve.auc == 0.0

    def test_default_ratios_cover_two_to_forty_percent(self):
        assert len(DEFAULT_RATIOS) == 20
        assert DEFAULT_RATIOS[0] == pytest.approx(0.02)
        assert DEFAULT_RATIOS[-1] == pytest.approx(0.40)
        assert all(b > a for a, b in zip(DEFAULT_RATIOS, DEFAULT_RATIOS[1:]))

    def test_perfect_detector_area_spans_the_grid(self):
        scores = np.arange(10, 0, -1, dtype=float)
        labels = np.zeros(10, dtype=bool)
        labels[:4] = True
        curve = precision_curve(scores, labels)
        assert curve.precisions == (1.0,) * 20
        assert curve.auc == pytest.approx(DEFAULT_RATIOS[-1] - DEFAULT_RATIOS[0],
                                          abs=1e-12)

    def test_validation(self):
        good_scores = np.array([0.1, 0.9])
        good_labels = np.array([True, False])
        with pytest.raises(ValueError, match="positive"):
            precision_curve(good_scores, np.array([False, False]))
        with pytest.raises(ValueError, match="no scores"):
            precision_curve(np.array([]), np.array([], dtype=bool))
        with pytest.raises(ValueError, match="same length"):
            precision_curve(good_scores, np.array([True]))
        with pytest.raises(ValueError, match="no ratios"):
            precision_curve(good_scores, good_labels, ratios=())
        with pytest.raises(ValueError, match="lie in"):
            precision_curve(good_scores, good_labels, ratios=(0.0, 0.5))
        with pytest.raises(ValueError, match="lie in"):
            precision_curve(good_scores, good_labels, ratios=(0.5, 1.5))
        with pytest.raises(ValueError, match="increasing"):
            precision_curve(good_scores, good_labels, ratios=(0.5, 0.5))


class TestReconstructionScores:
    def test_hand_example_all_slices(self):
        columns = (ColumnDescriptor("S2", "NDVI", "median", 0),
                   ColumnDescriptor("S2", "NDVI", "IQR", 1))
        # rows 0 and 1 were observed, row 2 was filled in; column 0 spans
        # [1, 3] so its scaled errors shrink by 2, column 1 is already [0, 1]
        values = np.array([
            [1.0, 0.0],
            [3.0, 1.0],
            [2.5, 0.6],
        ])
        observed = np.array([
            [True, True],
            [True, True],
            [False, False],
        ])
        result = result_from(values, observed, columns)
        truth = ((2, 0, 2.0), (2, 1, 0.8))
        scores = reconstruction_scores(truth, result)

        assert scores.overall_scaled.n == 2
        assert scores.overall_scaled.mae == pytest.approx(0.225, abs=1e-12)
        assert scores.overall_scaled.rmse == pytest.approx(
            np.sqrt((0.25 ** 2 + 0.2 ** 2) / 2), abs=1e-12)

        # natural units per (sensor, indicator, statistic)
        assert scores.per_group[("S2", "NDVI", "median")].mae == pytest.approx(0.5, abs=1e-12)
        assert scores.per_group[("S2", "NDVI", "IQR")].mae == pytest.approx(0.2, abs=1e-12)

        assert scores.per_acquisition[("S2", 0)].mae == pytest.approx(0.25, abs=1e-12)
        assert scores.per_acquisition[("S2", 1)].mae == pytest.approx(0.2, abs=1e-12)
        assert scores.per_statistic_scaled["median"].mae == pytest.approx(0.25, abs=1e-12)
        assert scores.per_statistic_scaled["IQR"].mae == pytest.approx(0.2, abs=1e-12)

    def test_empty_truth(self):
        result = result_from(np.zeros((2, 1)), np.ones((2, 1), dtype=bool))
        scores = reconstruction_scores((), result)
        assert scores.overall_scaled == Scores(mae=0.0, rmse=0.0,
                                               r2=scores.overall_scaled.r2, n=0)
        assert np.isnan(scores.overall_scaled.r2)
        assert scores.per_group == {}
        assert scores.per_acquisition == {}

    def test_single_entry_has_undefined_r2(self):
        values = np.array([[0.0], [1.0], [0.4]])
        observed = np.array([[True], [True], [False]])
        scores = reconstruction_scores(((2, 0, 0.5),),
                                       result_from(values, observed))
        assert scores.overall_scaled.mae == pytest.approx(0.1, abs=1e-12)
        assert np.isnan(scores.overall_scaled.r2)

    def test_column_mean_prediction_scores_zero_r2(self):
        # truth values placed symmetrically around the observed mean, so
        # predicting the mean explains none of the truth variance
        values = np.array([
            [0.1, 0.0],
            [0.5, 1.0],
            [np.nan, 0.2],
            [np.nan, 0.8],
        ])
        m = FeatureMatrix(values=values, observed_mask=~np.isnan(values),
                          columns=(ColumnDescriptor("S2", "NDVI", "median", 0),
                                   ColumnDescriptor("S2", "NDVI", "median", 1)),
                          row_ids=("a", "b", "c", "d"))
        result = impute_mean(m)
        scores = reconstruction_scores(((2, 0, 0.2), (3, 0, 0.4)), result)
        assert scores.overall_scaled.r2 == pytest.approx(0.0, abs=1e-12)
        assert scores.overall_scaled.mae == pytest.approx(0.25, abs=1e-12)

    def test_truth_must_point_at_imputed_entries(self):
        values = np.array([[1.0, 0.0], [3.0, 1.0], [2.5, 0.6]])
        observed = np.array([[True, True], [True, True], [False, True]])
        result = result_from(values, observed)
        with pytest.raises(ValueError, match="was not imputed"):
            reconstruction_scores(((2, 1, 0.8),), result)

    def test_truth_outside_matrix_rejected(self):
        values = np.array([[1.0], [3.0], [2.5]])
        observed = np.array([[True], [True], [False]])
        result = result_from(values, observed)
        with pytest.raises(ValueError, match="outside"):
            reconstruction_scores(((5, 0, 1.0),), result)
        with pytest.raises(ValueError, match="outside"):
            reconstruction_scores(((2, -1, 1.0),), result)

    def test_unobserved_column_scales_identically(self):
        # a column never observed during imputation falls back to the
        # identity scaling, so scaled and natural errors agree
        values = np.array([[0.5, 2.0], [0.5, 6.0], [0.5, 4.0]])
        observed = np.array([[True, False], [True, False], [True, False]])
        result = result_from(values, observed)
        scores = reconstruction_scores(((0, 1, 2.5), (1, 1, 5.0), (2, 1, 4.5)),
                                       result)
        assert scores.overall_scaled.mae == pytest.approx(
            (0.5 + 1.0 + 0.5) / 3, abs=1e-12)
