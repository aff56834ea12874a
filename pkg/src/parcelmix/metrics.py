"""Reconstruction scores and anomaly-detection precision curves."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .data_model import FeatureMatrix
from .imputers import ImputationResult

DEFAULT_RATIOS = tuple(np.round(np.arange(1, 21) * 0.02, 2))


@dataclass(frozen=True)
class Scores:
    """Error summary over one set of reconstructed entries."""

    mae: float
    rmse: float
    r2: float
    n: int


def _score_values(truth: np.ndarray, predicted: np.ndarray) -> Scores:
    if truth.size == 0:
        return Scores(mae=0.0, rmse=0.0, r2=float("nan"), n=0)
    err = predicted - truth
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    sst = float(np.sum((truth - truth.mean()) ** 2))
    ssr = float(np.sum(err * err))
    r2 = 1.0 - ssr / sst if sst > 0 else float("nan")
    return Scores(mae=mae, rmse=rmse, r2=r2, n=int(truth.size))


@dataclass(frozen=True)
class ReconstructionScores:
    """Scores sliced several ways.

    ``overall_scaled``, ``per_acquisition`` and ``per_statistic_scaled``
    are computed on a [0, 1] rescaling fitted to the entries that were
    observed during imputation; ``per_group`` stays in natural units and
    is keyed by (sensor, indicator, statistic).
    """

    overall_scaled: Scores
    per_group: dict
    per_acquisition: dict
    per_statistic_scaled: dict


def reconstruction_scores(truth: tuple, result: ImputationResult) -> ReconstructionScores:
    """Compare held-out values against an imputation result.

    ``truth`` holds (row_index, column_index, value) triples; every triple
    must point at an entry the imputer actually filled in.
    """
    m: FeatureMatrix = result.completed
    if len(truth) == 0:
        empty = _score_values(np.empty(0), np.empty(0))
        return ReconstructionScores(empty, {}, {}, {})
    rows = np.array([t[0] for t in truth], dtype=int)
    cols = np.array([t[1] for t in truth], dtype=int)
    vals = np.array([t[2] for t in truth], dtype=float)
    if rows.min() < 0 or rows.max() >= m.n_rows or cols.min() < 0 or cols.max() >= m.n_columns:
        raise ValueError("truth entry outside the matrix")
    if not result.imputed_mask[rows, cols].all():
        bad = int(np.flatnonzero(~result.imputed_mask[rows, cols])[0])
        raise ValueError(
            f"truth entry at row {rows[bad]}, column "
            f"{m.columns[cols[bad]].label()!r} was not imputed")
    predicted = m.values[rows, cols]

    observed = np.where(~result.imputed_mask, m.values, np.nan)
    with warnings.catch_warnings():
        # a never-observed column yields an all-NaN slice; it falls back
        # to the identity scaling right below
        warnings.simplefilter("ignore", RuntimeWarning)
        lo = np.nanmin(observed, axis=0)
        hi = np.nanmax(observed, axis=0)
    lo = np.where(np.isnan(lo), 0.0, lo)
    hi = np.where(np.isnan(hi), 1.0, hi)
    span = np.where(hi > lo, hi - lo, 1.0)

    t_scaled = (vals - lo[cols]) / span[cols]
    p_scaled = (predicted - lo[cols]) / span[cols]

    overall = _score_values(t_scaled, p_scaled)

    per_group: dict = {}
    per_acq: dict = {}
    per_stat: dict = {}
    descriptors = [m.columns[j] for j in cols]
    group_ids = {}
    acq_ids = {}
    stat_ids = {}
    for i, dsc in enumerate(descriptors):
        group_ids.setdefault((dsc.sensor, dsc.indicator, dsc.statistic), []).append(i)
        acq_ids.setdefault((dsc.sensor, dsc.acquisition_index), []).append(i)
        stat_ids.setdefault(dsc.statistic, []).append(i)
    for key, idx in sorted(group_ids.items()):
        sel = np.array(idx)
        per_group[key] = _score_values(vals[sel], predicted[sel])
    for key, idx in sorted(acq_ids.items()):
        sel = np.array(idx)
        per_acq[key] = _score_values(t_scaled[sel], p_scaled[sel])
    for key, idx in sorted(stat_ids.items()):
        sel = np.array(idx)
        per_stat[key] = _score_values(t_scaled[sel], p_scaled[sel])
    return ReconstructionScores(overall_scaled=overall,
                                per_group=per_group,
                                per_acquisition=per_acq,
                                per_statistic_scaled=per_stat)


@dataclass(frozen=True)
class DetectionCurve:
    """Precision at a sweep of flagged-share ratios plus its area."""

    ratios: tuple
    precisions: tuple
    auc: float


def precision_curve(scores: np.ndarray, labels: np.ndarray,
                    ratios: tuple = DEFAULT_RATIOS) -> DetectionCurve:
    """Precision of flagging the top ceil(ratio * n) scores, per ratio.

    Ties and order are resolved by a stable descending sort, the area is
    the trapezoid integral of precision over ratio.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError("scores and labels must be 1-D and the same length")
    if scores.size == 0:
        raise ValueError("no scores to rank")
    if not labels.any():
        raise ValueError("no positive labels")
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) == 0:
        raise ValueError("no ratios")
    if any(not 0.0 < r <= 1.0 for r in ratios):
        raise ValueError("ratios must lie in (0, 1]")
    if any(b <= a for a, b in zip(ratios, ratios[1:])):
        raise ValueError("ratios must be strictly increasing")
    order = np.argsort(-scores, kind="stable")
    hits = np.cumsum(labels[order])
    n = scores.size
    precisions = []
    for r in ratios:
        top = int(math.ceil(r * n - 1e-9))
        top = min(max(top, 1), n)
        precisions.append(float(hits[top - 1]) / top)
    if len(ratios) >= 2:
        auc = float(np.trapezoid(np.array(precisions), np.array(ratios)))
    else:
        auc = 0.0
    return DetectionCurve(ratios=ratios, precisions=tuple(precisions), auc=auc)
