"""Matrix container, grid layout, text round trip and scaling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parcelmix.data_model import (ColumnDescriptor, FeatureMatrix,
                                  RaggedGridError, apply_scaling,
                                  column_counts, dumps_matrix, fit_scaling,
                                  invert_scaling, load_matrix, loads_matrix,
                                  save_matrix)


def _col(sensor, indicator, statistic, acq, date=None):
    return ColumnDescriptor(sensor=sensor, indicator=indicator,
                            statistic=statistic, acquisition_index=acq,
                            acquisition_date=date)


def _toy_matrix():
    columns = (
        _col("S2", "NDVI", "median", 0, "2017-10-01"),
        _col("S2", "NDVI", "IQR", 0, "2017-10-01"),
        _col("S2", "NDVI", "median", 1, "2017-11-01"),
        _col("S2", "NDVI", "IQR", 1, "2017-11-01"),
        _col("S1", "VV", "median", 0),
    )
    values = np.array([
        [0.2, 0.05, 0.4, 0.03, -11.0],
        [0.3, np.nan, 0.5, 0.02, -10.5],
        [np.nan, 0.04, 0.6, np.nan, -12.25],
    ])
    mask = ~np.isnan(values)
    return FeatureMatrix(values=values, observed_mask=mask,
                         columns=columns, row_ids=("a", "b", "c"))


class TestColumnDescriptor:
    def test_label_round_trip(self):
        col = _col("S2", "NDWI_GREEN", "IQR", 7, "2018-03-14")
        assert col.label() == "S2:NDWI_GREEN:IQR:7:2018-03-14"
        assert ColumnDescriptor.from_label(col.label()) == col

    def test_label_without_date(self):
        col = _col("S1", "VV", "median", 2)
        assert col.label() == "S1:VV:median:2"
        assert ColumnDescriptor.from_label(col.label()) == col

    def test_radar_iqr_rejected(self):
        with pytest.raises(ValueError):
            _col("S1", "VV", "IQR", 0)

    def test_unknown_sensor_rejected(self):
        with pytest.raises(ValueError):
            _col("S3", "NDVI", "median", 0)

    def test_bad_label_rejected(self):
        with pytest.raises(ValueError):
            ColumnDescriptor.from_label("S2:NDVI:median")


class TestFeatureMatrix:
    def test_masked_positions_hold_nan(self):
        m = _toy_matrix()
        assert np.isnan(m.values[1, 1]) and np.isnan(m.values[2, 0])
        assert m.values[0, 0] == 0.2

    def test_arrays_are_frozen(self):
        m = _toy_matrix()
        with pytest.raises(ValueError):
            m.values[0, 0] = 9.0
        with pytest.raises(ValueError):
            m.observed_mask[0, 0] = False

    def test_all_missing_row_names_the_row(self):
        values = np.array([[1.0, 2.0], [np.nan, np.nan]])
        columns = (_col("S2", "NDVI", "median", 0),
                   _col("S2", "NDVI", "IQR", 0))
        with pytest.raises(ValueError, match="'r2'"):
            FeatureMatrix(values=values, observed_mask=~np.isnan(values),
                          columns=columns, row_ids=("r1", "r2"))

    def test_nonfinite_observed_rejected(self):
        values = np.array([[1.0, np.inf]])
        columns = (_col("S2", "NDVI", "median", 0),
                   _col("S2", "NDVI", "IQR", 0))
        with pytest.raises(ValueError, match="finite"):
            FeatureMatrix(values=values, observed_mask=np.ones((1, 2), bool),
                          columns=columns, row_ids=("r",))

    def test_duplicate_columns_rejected(self):
        col = _col("S2", "NDVI", "median", 0)
        with pytest.raises(ValueError, match="duplicate"):
            FeatureMatrix(values=np.ones((1, 2)),
                          observed_mask=np.ones((1, 2), bool),
                          columns=(col, col), row_ids=("r",))

    def test_duplicate_row_ids_rejected(self):
        columns = (_col("S2", "NDVI", "median", 0),)
        with pytest.raises(ValueError, match="duplicate"):
            FeatureMatrix(values=np.ones((2, 1)),
                          observed_mask=np.ones((2, 1), bool),
                          columns=columns, row_ids=("r", "r"))

    def test_column_indices_filters(self):
        m = _toy_matrix()
        assert m.column_indices(sensor="S1").tolist() == [4]
        assert m.column_indices(sensor="S2", statistic="IQR").tolist() == [1, 3]
        assert m.column_indices(sensor="S2", acquisition_index=1).tolist() == [2, 3]
        assert m.acquisitions("S2") == (0, 1)

    def test_select_columns_and_rows(self):
        m = _toy_matrix()
        sub = m.select_columns([4, 0])
        assert sub.columns[0].sensor == "S1"
        assert sub.values[0, 1] == 0.2
        rows = m.select_rows([2, 0])
        assert rows.row_ids == ("c", "a")
        assert rows.values[1, 0] == 0.2

    def test_column_counts_full_grid(self):
        m = _toy_matrix()
        counts = column_counts(m)
        assert counts.n2_images == 2
        assert counts.n2_features == 1
        assert counts.n2_stats == 2
        assert counts.n1_images == 1
        assert counts.n_columns == m.n_columns == 5

    def test_column_counts_ragged_grid(self):
        m = _toy_matrix().select_columns([0, 1, 2, 4])
        with pytest.raises(RaggedGridError):
            column_counts(m)


class TestTextRoundTrip:
    def test_round_trip_exact(self, tmp_path):
        m = _toy_matrix()
        path = tmp_path / "m.csv"
        save_matrix(m, path)
        back = load_matrix(path)
        assert back.row_ids == m.row_ids
        assert back.columns == m.columns
        assert np.array_equal(back.observed_mask, m.observed_mask)
        assert np.array_equal(back.values, m.values, equal_nan=True)

    def test_missing_cells_are_empty(self):
        text = dumps_matrix(_toy_matrix())
        line = text.splitlines()[2]
        assert line.startswith("b,0.3,,")

    def test_bad_header_rejected(self):
        with pytest.raises(ValueError, match="parcel_id"):
            loads_matrix("id,S2:NDVI:median:0\nr,0.5\n")

    def test_bad_value_names_position(self):
        text = ("parcel_id,S2:NDVI:median:0\n"
                "r,oops\n")
        with pytest.raises(ValueError, match="oops"):
            loads_matrix(text)

    def test_ragged_line_rejected(self):
        text = ("parcel_id,S2:NDVI:median:0,S2:NDVI:IQR:0\n"
                "r,0.5\n")
        with pytest.raises(ValueError):
            loads_matrix(text)

    @settings(max_examples=40, deadline=None)
    @given(st.data())
    def test_round_trip_property(self, data):
        n = data.draw(st.integers(1, 6), label="rows")
        d = data.draw(st.integers(1, 5), label="cols")
        finite = st.floats(allow_nan=False, allow_infinity=False,
                           min_value=-1e6, max_value=1e6)
        values = np.array(
            data.draw(st.lists(st.lists(finite, min_size=d, max_size=d),
                               min_size=n, max_size=n)))
        mask = np.array(
            data.draw(st.lists(st.lists(st.booleans(), min_size=d, max_size=d),
                               min_size=n, max_size=n)))
        mask[:, 0] = True  # keep every row at least partly observed
        columns = tuple(_col("S2", "NDVI", "median", j) for j in range(d))
        m = FeatureMatrix(values=values, observed_mask=mask, columns=columns,
                          row_ids=tuple(f"r{i}" for i in range(n)))
        back = loads_matrix(dumps_matrix(m))
        assert np.array_equal(back.values, m.values, equal_nan=True)
        assert np.array_equal(back.observed_mask, m.observed_mask)


class TestScaling:
    def test_scale_unscale_round_trip(self):
        m = _toy_matrix()
        t = fit_scaling(m)
        scaled = apply_scaling(m, t)
        obs = scaled.values[scaled.observed_mask]
        assert obs.min() >= 0.0 and obs.max() <= 1.0
        back = invert_scaling(scaled, t)
        assert np.allclose(back.values[m.observed_mask],
                           m.values[m.observed_mask], atol=1e-12)

    def test_zero_span_column_maps_to_half(self):
        columns = (_col("S2", "NDVI", "median", 0),
                   _col("S2", "NDVI", "IQR", 0))
        values = np.array([[0.7, 0.1], [0.7, 0.4]])
        m = FeatureMatrix(values=values, observed_mask=np.ones((2, 2), bool),
                          columns=columns, row_ids=("a", "b"))
        t = fit_scaling(m)
        scaled = apply_scaling(m, t)
        assert scaled.values[0, 0] == 0.5 and scaled.values[1, 0] == 0.5
        back = invert_scaling(scaled, t)
        assert back.values[0, 0] == back.values[1, 0] == 0.7

    def test_underobserved_column_rejected(self):
        columns = (_col("S2", "NDVI", "median", 0),
                   _col("S2", "NDVI", "IQR", 0))
        values = np.array([[0.7, 0.1], [np.nan, 0.4]])
        m = FeatureMatrix(values=values, observed_mask=~np.isnan(values),
                          columns=columns, row_ids=("a", "b"))
        with pytest.raises(ValueError, match="NDVI:median"):
            fit_scaling(m)
