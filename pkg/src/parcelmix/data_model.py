"""Feature matrices of parcel-level satellite statistics.

A matrix holds one row per parcel and one column per
(sensor, indicator, statistic, acquisition) combination.  Optical
acquisitions can be missing for some parcels; radar acquisitions are
always complete.  Missing entries are stored as NaN and tracked by an
explicit boolean mask so that no computation can silently consume them.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

SENSORS = ("S1", "S2")
STATISTICS = ("median", "IQR")


class DataFormatError(ValueError):
    """Raised when a delimited matrix file violates the format contract."""


class RaggedGridError(ValueError):
    """Raised when a matrix does not cover a full acquisition grid per sensor."""


@dataclass(frozen=True, slots=True)
class ColumnDescriptor:
    """Identity of one matrix column.

    The text form is colon-joined: ``SENSOR:INDICATOR:STAT:ACQ[:DATE]``,
    for example ``S2:NDVI:median:3`` or ``S1:VV:median:0:2017-11-02``.
    """

    sensor: str
    indicator: str
    statistic: str
    acquisition_index: int
    acquisition_date: str | None = None

    def __post_init__(self) -> None:
        if self.sensor not in SENSORS:
            raise ValueError(f"unknown sensor {self.sensor!r}")
        if self.statistic not in STATISTICS:
            raise ValueError(f"unknown statistic {self.statistic!r}")
        if self.sensor == "S1" and self.statistic == "IQR":
            raise ValueError("IQR statistics are not defined for S1 columns")
        if not self.indicator or ":" in self.indicator:
            raise ValueError(f"bad indicator name {self.indicator!r}")
        if self.acquisition_index < 0:
            raise ValueError("acquisition_index must be non-negative")

    def label(self) -> str:
        parts = [self.sensor, self.indicator, self.statistic, str(self.acquisition_index)]
        if self.acquisition_date is not None:
            parts.append(self.acquisition_date)
        return ":".join(parts)

    @classmethod
    def from_label(cls, text: str) -> "ColumnDescriptor":
        parts = text.split(":")
        if len(parts) not in (4, 5):
            raise DataFormatError(f"malformed column header {text!r}")
        sensor, indicator, statistic, acq = parts[:4]
        try:
            acq_index = int(acq)
        except ValueError:
            raise DataFormatError(f"malformed acquisition index in {text!r}") from None
        date = parts[4] if len(parts) == 5 else None
        try:
            return cls(sensor, indicator, statistic, acq_index, date)
        except ValueError as exc:
            raise DataFormatError(f"bad column header {text!r}: {exc}") from None


def _frozen_array(values, dtype) -> np.ndarray:
    out = np.array(values, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class FeatureMatrix:
    """Immutable parcel-by-feature matrix with an explicit observation mask.

    Invariants enforced at construction: shapes agree, column descriptors
    are unique, every row has at least one observed entry, observed values
    are finite, and masked positions hold NaN.
    """

    values: np.ndarray
    observed_mask: np.ndarray
    columns: tuple[ColumnDescriptor, ...]
    row_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        mask = np.array(self.observed_mask, dtype=bool)
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2 or mask.shape != vals.shape:
            raise ValueError("values and observed_mask must be matching 2-d arrays")
        n, d = vals.shape
        columns = tuple(self.columns)
        row_ids = tuple(str(r) for r in self.row_ids)
        if len(columns) != d:
            raise ValueError(f"{len(columns)} column descriptors for {d} columns")
        if len(row_ids) != n:
            raise ValueError(f"{len(row_ids)} row ids for {n} rows")
        if len(set(columns)) != d:
            raise ValueError("duplicate column descriptors")
        if len(set(row_ids)) != n:
            raise ValueError("duplicate row ids")
        row_observed = mask.any(axis=1)
        if not row_observed.all():
            bad = row_ids[int(np.flatnonzero(~row_observed)[0])]
            raise ValueError(f"row {bad!r} has no observed features")
        if not np.isfinite(vals[mask]).all():
            raise ValueError("observed entries must be finite")
        vals[~mask] = np.nan
        object.__setattr__(self, "values", _frozen_array(vals, float))
        object.__setattr__(self, "observed_mask", _frozen_array(mask, bool))
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "row_ids", row_ids)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]

    def column_indices(self, sensor=None, indicator=None, statistic=None,
                       acquisition_index=None) -> np.ndarray:
        """Indices of columns matching every given criterion, in matrix order."""
        keep = []
        for j, col in enumerate(self.columns):
            if sensor is not None and col.sensor != sensor:
                continue
            if indicator is not None and col.indicator != indicator:
                continue
            if statistic is not None and col.statistic != statistic:
                continue
            if acquisition_index is not None and col.acquisition_index != acquisition_index:
                continue
            keep.append(j)
        return np.array(keep, dtype=int)

    def acquisitions(self, sensor: str) -> tuple[int, ...]:
        return tuple(sorted({c.acquisition_index for c in self.columns if c.sensor == sensor}))

    def select_columns(self, indices) -> "FeatureMatrix":
        idx = np.asarray(indices, dtype=int)
        return FeatureMatrix(
            values=self.values[:, idx],
            observed_mask=self.observed_mask[:, idx],
            columns=tuple(self.columns[j] for j in idx),
            row_ids=self.row_ids,
        )

    def select_rows(self, indices) -> "FeatureMatrix":
        idx = np.asarray(indices, dtype=int)
        return FeatureMatrix(
            values=self.values[idx],
            observed_mask=self.observed_mask[idx],
            columns=self.columns,
            row_ids=tuple(self.row_ids[i] for i in idx),
        )

    def with_values(self, values: np.ndarray, observed_mask: np.ndarray) -> "FeatureMatrix":
        """New matrix with the same rows and columns but different content."""
        return FeatureMatrix(values=values, observed_mask=observed_mask,
                             columns=self.columns, row_ids=self.row_ids)


@dataclass(frozen=True)
class ColumnCounts:
    """Per-sensor layout summary of a full acquisition grid."""

    n1_images: int
    n1_features: int
    n1_stats: int
    n2_images: int
    n2_features: int
    n2_stats: int

    @property
    def n_columns(self) -> int:
        return (self.n1_images * self.n1_features * self.n1_stats
                + self.n2_images * self.n2_features * self.n2_stats)


def column_counts(m: FeatureMatrix) -> ColumnCounts:
    """Derive per-sensor image/feature/statistic counts and check the grid.

    Every (indicator, statistic) pair of a sensor must appear at every
    acquisition of that sensor, otherwise the layout is ragged.
    """
    result = {}
    for sensor in SENSORS:
        cols = [c for c in m.columns if c.sensor == sensor]
        acqs = sorted({c.acquisition_index for c in cols})
        indicators = sorted({c.indicator for c in cols})
        stats = sorted({c.statistic for c in cols})
        expected = {(a, i, s) for a in acqs for i in indicators for s in stats}
        got = {(c.acquisition_index, c.indicator, c.statistic) for c in cols}
        if got != expected:
            missing = sorted(expected - got)[:3]
            raise RaggedGridError(
                f"{sensor} columns do not form a full acquisition grid; "
                f"first missing combinations: {missing}")
        result[sensor] = (len(acqs), len(indicators), len(stats))
    n1, n2 = result["S1"], result["S2"]
    return ColumnCounts(n1_images=n1[0], n1_features=n1[1], n1_stats=n1[2],
                        n2_images=n2[0], n2_features=n2[1], n2_stats=n2[2])


# ---------------------------------------------------------------------------
# delimited text round trip

def save_matrix(m: FeatureMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(dumps_matrix(m))


def load_matrix(path) -> FeatureMatrix:
    with open(path, "r", newline="") as fh:
        return loads_matrix(fh.read())


def dumps_matrix(m: FeatureMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["parcel_id"] + [c.label() for c in m.columns])
    for i, row_id in enumerate(m.row_ids):
        cells = [row_id]
        for j in range(m.n_columns):
            if m.observed_mask[i, j]:
                cells.append(repr(float(m.values[i, j])))
            else:
                cells.append("")
        writer.writerow(cells)
    return buf.getvalue()


def loads_matrix(text: str) -> FeatureMatrix:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DataFormatError("empty input")
    header = rows[0]
    if not header or header[0] != "parcel_id":
        raise DataFormatError("first header cell must be 'parcel_id'")
    columns = tuple(ColumnDescriptor.from_label(cell) for cell in header[1:])
    d = len(columns)
    if d == 0:
        raise DataFormatError("no feature columns")
    row_ids = []
    values = np.full((len(rows) - 1, d), np.nan)
    mask = np.zeros((len(rows) - 1, d), dtype=bool)
    for i, row in enumerate(rows[1:]):
        if len(row) != d + 1:
            raise DataFormatError(
                f"row {i + 2} has {len(row)} cells, expected {d + 1}")
        row_ids.append(row[0])
        for j, cell in enumerate(row[1:]):
            if cell == "":
                continue
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DataFormatError(
                    f"non-numeric cell {cell!r} for row {row[0]!r}, "
                    f"column {columns[j].label()!r}") from None
            mask[i, j] = True
    all_missing = ~mask.any(axis=1)
    if all_missing.any():
        bad = row_ids[int(np.flatnonzero(all_missing)[0])]
        raise DataFormatError(f"row {bad!r} has all features missing")
    try:
        return FeatureMatrix(values=values, observed_mask=mask,
                             columns=columns, row_ids=tuple(row_ids))
    except ValueError as exc:
        raise DataFormatError(str(exc)) from None


# ---------------------------------------------------------------------------
# per-column min/max scaling fitted on observed entries only

@dataclass(frozen=True)
class ScalingTransform:
    """Per-column affine map onto [0, 1] fitted on observed entries.

    Columns with zero observed span are flagged and map to the midpoint
    0.5; inverting such a column reproduces the constant.
    """

    minimum: np.ndarray
    maximum: np.ndarray
    zero_span: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        mn = _frozen_array(self.minimum, float)
        mx = _frozen_array(self.maximum, float)
        if mn.shape != mx.shape or mn.ndim != 1:
            raise ValueError("minimum and maximum must be matching 1-d arrays")
        if np.any(mx < mn):
            raise ValueError("maximum must not be below minimum")
        object.__setattr__(self, "minimum", mn)
        object.__setattr__(self, "maximum", mx)
        object.__setattr__(self, "zero_span", _frozen_array(mx == mn, bool))

    @property
    def span(self) -> np.ndarray:
        return np.where(self.zero_span, 1.0, self.maximum - self.minimum)

    def scale(self, values: np.ndarray) -> np.ndarray:
        """Map natural-scale values (full-width rows) into [0, 1] coordinates."""
        scaled = (values - self.minimum) / self.span
        return np.where(self.zero_span, 0.5, scaled)

    def unscale(self, scaled: np.ndarray) -> np.ndarray:
        out = scaled * self.span + self.minimum
        return np.where(self.zero_span, self.minimum, out)


def fit_scaling(m: FeatureMatrix) -> ScalingTransform:
    counts = m.observed_mask.sum(axis=0)
    if np.any(counts < 2):
        j = int(np.flatnonzero(counts < 2)[0])
        raise ValueError(
            f"column {m.columns[j].label()!r} has fewer than 2 observed values")
    with np.errstate(invalid="ignore"):
        mn = np.nanmin(np.where(m.observed_mask, m.values, np.nan), axis=0)
        mx = np.nanmax(np.where(m.observed_mask, m.values, np.nan), axis=0)
    return ScalingTransform(minimum=mn, maximum=mx)


def apply_scaling(m: FeatureMatrix, t: ScalingTransform) -> FeatureMatrix:
    if t.minimum.shape[0] != m.n_columns:
        raise ValueError("transform width does not match matrix")
    scaled = t.scale(np.where(m.observed_mask, m.values, 0.0))
    scaled = np.where(m.observed_mask, scaled, np.nan)
    return m.with_values(scaled, m.observed_mask)


def invert_scaling(m: FeatureMatrix, t: ScalingTransform) -> FeatureMatrix:
    if t.minimum.shape[0] != m.n_columns:
        raise ValueError("transform width does not match matrix")
    natural = t.unscale(np.where(m.observed_mask, m.values, 0.0))
    natural = np.where(m.observed_mask, natural, np.nan)
    return m.with_values(natural, m.observed_mask)
