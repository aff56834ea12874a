"""Imputation front ends sharing one result contract.

All imputers work on a [0, 1] rescaled copy of the matrix and return the
completed matrix in natural scale, with observed entries passed through
bit for bit.  Per-entry provenance records which values were filled in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gmm as gmm_mod
from .data_model import FeatureMatrix, apply_scaling, fit_scaling


@dataclass
class ImputationResult:
    """A fully observed matrix plus provenance and method diagnostics."""

    completed: FeatureMatrix
    imputed_mask: np.ndarray
    method: str
    diagnostics: dict

    def __post_init__(self) -> None:
        if not self.completed.observed_mask.all():
            raise ValueError("completed matrix still has missing entries")
        mask = np.asarray(self.imputed_mask, dtype=bool)
        if mask.shape != self.completed.values.shape:
            raise ValueError("imputed_mask shape does not match the matrix")
        self.imputed_mask = mask


def _identity_result(m: FeatureMatrix, method: str) -> ImputationResult:
    return ImputationResult(completed=m,
                            imputed_mask=np.zeros_like(m.observed_mask),
                            method=method,
                            diagnostics={"note": "input had no missing entries"})


def impute_gmm(m: FeatureMatrix, em: gmm_mod.EmConfig,
               robust: gmm_mod.RobustConfig | None = None) -> ImputationResult:
    """Fit a mixture on the rescaled matrix and fill conditional means."""
    method = "rgmm" if (robust is not None and robust.enabled) else "gmm"
    if m.observed_mask.all():
        return _identity_result(m, method)
    transform = fit_scaling(m)
    scaled = apply_scaling(m, transform)
    report = gmm_mod.fit(scaled, em, robust)
    scaled_result = gmm_mod.impute(scaled, report)
    natural = transform.unscale(scaled_result.completed.values)
    values = np.where(m.observed_mask, m.values, natural)
    completed = m.with_values(values, np.ones_like(m.observed_mask))
    return ImputationResult(completed=completed,
                            imputed_mask=~m.observed_mask,
                            method=method,
                            diagnostics={"fit_report": report, "scaling": transform})


def impute_mean(m: FeatureMatrix) -> ImputationResult:
    """Fill every missing entry with its column's observed mean."""
    if m.observed_mask.all():
        return _identity_result(m, "mean")
    counts = m.observed_mask.sum(axis=0)
    if np.any(counts == 0):
        j = int(np.flatnonzero(counts == 0)[0])
        raise ValueError(f"column {m.columns[j].label()!r} has no observed values")
    means = np.nanmean(np.where(m.observed_mask, m.values, np.nan), axis=0)
    values = np.where(m.observed_mask, m.values, means[None, :])
    completed = m.with_values(values, np.ones_like(m.observed_mask))
    return ImputationResult(completed=completed,
                            imputed_mask=~m.observed_mask,
                            method="mean",
                            diagnostics={})


def _pairwise_distances(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Euclidean distance over mutually observed columns, rescaled by
    sqrt(D / n_shared); inf when two rows share no observed column."""
    d = x.shape[1]
    w = mask.astype(float)
    z = np.where(mask, x, 0.0)
    sq = (z * z) @ w.T
    cross = z @ z.T
    shared = w @ w.T
    dist2 = np.maximum(sq + sq.T - 2.0 * cross, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        dist2 = dist2 * (d / shared)
    dist = np.sqrt(dist2)
    dist[shared == 0] = np.inf
    np.fill_diagonal(dist, np.inf)
    return dist


def impute_knn(m: FeatureMatrix, k: int = 5) -> ImputationResult:
    """Inverse-distance weighted average of the k nearest donor rows.

    Donors must observe the target column.  A donor at distance zero is
    copied outright (several such donors are averaged).  Entries with no
    reachable donor fall back to the column mean and are flagged in the
    diagnostics.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if m.observed_mask.all():
        return _identity_result(m, "knn")
    transform = fit_scaling(m)
    scaled = apply_scaling(m, transform)
    x = scaled.values
    mask = scaled.observed_mask
    n = m.n_rows
    dist = _pairwise_distances(x, mask)
    col_means = np.nanmean(np.where(mask, x, np.nan), axis=0)

    imputed = np.array(x)
    fallback: list[tuple[str, str]] = []
    neighbor_counts: list[int] = []
    # columns sharing an observation pattern share donors and requesters
    groups: dict[bytes, list[int]] = {}
    for j in range(m.n_columns):
        if mask[:, j].all():
            continue
        groups.setdefault(mask[:, j].tobytes(), []).append(j)
    for cols in groups.values():
        donors = mask[:, cols[0]]
        requesters = np.flatnonzero(~donors)
        donor_idx = np.flatnonzero(donors)
        if donor_idx.size == 0:
            for i in requesters:
                imputed[i, cols] = col_means[cols]
                fallback.extend((m.row_ids[i], m.columns[j].label()) for j in cols)
            continue
        sub = dist[np.ix_(requesters, donor_idx)]
        kk = min(k, donor_idx.size)
        if kk < donor_idx.size:
            sel = np.argpartition(sub, kk - 1, axis=1)[:, :kk]
        else:
            sel = np.broadcast_to(np.arange(donor_idx.size), sub.shape).copy()
        sel_dist = np.take_along_axis(sub, sel, axis=1)
        finite = np.isfinite(sel_dist)
        exact = sel_dist == 0.0
        has_exact = exact.any(axis=1)
        with np.errstate(divide="ignore"):
            weights = np.where(finite, 1.0 / sel_dist, 0.0)
        weights = np.where(has_exact[:, None], exact.astype(float), weights)
        weight_sum = weights.sum(axis=1)
        donor_vals = x[donor_idx[:, None], np.array(cols)[None, :]]
        picked = donor_vals[sel]  # (requesters, kk, len(cols))
        filled = np.einsum("rk,rkc->rc", weights, picked)
        for pos, i in enumerate(requesters):
            if weight_sum[pos] > 0:
                imputed[i, cols] = filled[pos] / weight_sum[pos]
                neighbor_counts.append(int(finite[pos].sum()))
            else:
                imputed[i, cols] = col_means[cols]
                fallback.extend((m.row_ids[i], m.columns[j].label()) for j in cols)

    natural = transform.unscale(imputed)
    values = np.where(m.observed_mask, m.values, natural)
    completed = m.with_values(values, np.ones_like(m.observed_mask))
    diagnostics = {"fallback_entries": fallback,
                   "min_neighbors": min(neighbor_counts) if neighbor_counts else 0}
    return ImputationResult(completed=completed,
                            imputed_mask=~m.observed_mask,
                            method="knn",
                            diagnostics=diagnostics)
