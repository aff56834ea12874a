"""Synthetic parcel time series with known clusters and planted anomalies.

Each crop is described by piecewise-linear phenology curves per optical
indicator.  Latent clusters perturb the crop template (time shift,
amplitude, small baseline offsets); rows add smooth within-cluster
variation through three seasonal "vigor" factors plus independent noise.
Radar columns are an affine readout of the NDVI trajectory with noise
calibrated to a target within-cluster correlation, so they carry real
information about masked optical entries without duplicating them.

Planted row kinds: delayed growth (curves evaluated with a time lag),
heterogeneity spikes (inflated IQR statistics mid-season), and
contaminant rows built as mixed plantings of a foreign crop template
with extra scatter.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass, field, replace

import numpy as np

from .data_model import ColumnDescriptor, FeatureMatrix
from .masking import round_half_up

S2_INDICATORS = ("NDVI", "NDWI_GREEN", "NDWI_SWIR", "GRVI", "MCARI_OSAVI")
S1_INDICATORS = ("VV", "VH")
NONNEGATIVE_INDICATORS = ("MCARI_OSAVI",)

LABEL_NORMAL = "normal"
LABEL_DELAY = "growth_delay"
LABEL_HETEROGENEITY = "heterogeneity"
LABEL_CONTAMINANT = "contaminant"
ANOMALY_KINDS = (LABEL_DELAY, LABEL_HETEROGENEITY)

# how strongly each indicator follows the shared vigor factors (sign included)
_VIGOR_DIRECTION = {"NDVI": 1.0, "NDWI_GREEN": -0.8, "NDWI_SWIR": 0.8,
                    "GRVI": 0.7, "MCARI_OSAVI": 0.9}
_HET_DIRECTION = {"NDVI": 1.0, "NDWI_GREEN": 0.7, "NDWI_SWIR": 0.8,
                  "GRVI": 0.6, "MCARI_OSAVI": 0.9}
_VIGOR_SHARE = 0.65
_IID_SHARE = 0.45
_HET_SHARE = 0.5
_IQR_IID_SHARE = 0.4
_BUMP_CENTERS = (0.15, 0.5, 0.85)
_BUMP_HALF_WIDTH = 0.35
_DELAY = 0.12
_HET_SPIKE = 1.2
_HET_WIDTH = 0.45
_CONTAMINANT_SPREAD = 3.0
_IQR_FLOOR = 1e-3
_SEASON_START = datetime.date(2017, 10, 1)
_SEASON_DAYS = 273


@dataclass(frozen=True)
class PhenologyTemplate:
    """Piecewise-linear seasonal curves of one crop over normalized time.

    ``median_curves`` and ``iqr_curves`` map indicator names to control
    points (time, value) with time in [0, 1].  ``s1_affine`` maps each
    radar indicator to (slope, intercept) applied to the NDVI median
    trajectory.
    """

    crop_type: str
    median_curves: dict[str, tuple[tuple[float, float], ...]]
    iqr_curves: dict[str, tuple[tuple[float, float], ...]]
    s1_affine: dict[str, tuple[float, float]]

    def __post_init__(self) -> None:
        for ind in S2_INDICATORS:
            if ind not in self.median_curves or ind not in self.iqr_curves:
                raise ValueError(f"template lacks curves for {ind}")
        for ind in S1_INDICATORS:
            if ind not in self.s1_affine:
                raise ValueError(f"template lacks an affine map for {ind}")
        for name, curves in (("median", self.median_curves), ("iqr", self.iqr_curves)):
            for ind, points in curves.items():
                ts = [t for t, _ in points]
                vs = [v for _, v in points]
                if len(points) < 2 or sorted(ts) != ts:
                    raise ValueError(f"{name} curve of {ind} needs increasing control times")
                if min(ts) < 0 or max(ts) > 1:
                    raise ValueError(f"{name} curve of {ind} has times outside [0, 1]")
                if name == "iqr" and min(vs) <= 0:
                    raise ValueError(f"iqr curve of {ind} must be positive")
                if name == "median":
                    lo, hi = _indicator_range(ind)
                    if min(vs) < lo or max(vs) > hi:
                        raise ValueError(f"median curve of {ind} leaves [{lo}, {hi}]")

    def median(self, indicator: str, t) -> np.ndarray:
        return _interp_curve(self.median_curves[indicator], t)

    def iqr(self, indicator: str, t) -> np.ndarray:
        return _interp_curve(self.iqr_curves[indicator], t)

    def to_config_text(self) -> str:
        lines = [f"crop_type {self.crop_type}"]
        for ind in S2_INDICATORS:
            pts = " ".join(f"{t:g}:{v:g}" for t, v in self.median_curves[ind])
            lines.append(f"median {ind} {pts}")
        for ind in S2_INDICATORS:
            pts = " ".join(f"{t:g}:{v:g}" for t, v in self.iqr_curves[ind])
            lines.append(f"iqr {ind} {pts}")
        for ind in S1_INDICATORS:
            slope, intercept = self.s1_affine[ind]
            lines.append(f"s1 {ind} {slope:g} {intercept:g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_config_text(cls, text: str) -> "PhenologyTemplate":
        crop = "unnamed"
        medians: dict[str, tuple] = {}
        iqrs: dict[str, tuple] = {}
        s1: dict[str, tuple[float, float]] = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            kind = fields[0]
            if kind == "crop_type" and len(fields) == 2:
                crop = fields[1]
            elif kind in ("median", "iqr") and len(fields) >= 4:
                points = []
                for cell in fields[2:]:
                    t_str, _, v_str = cell.partition(":")
                    points.append((float(t_str), float(v_str)))
                (medians if kind == "median" else iqrs)[fields[1]] = tuple(points)
            elif kind == "s1" and len(fields) == 4:
                s1[fields[1]] = (float(fields[2]), float(fields[3]))
            else:
                raise ValueError(f"unrecognized template line: {raw!r}")
        return cls(crop_type=crop, median_curves=medians, iqr_curves=iqrs, s1_affine=s1)


def _indicator_range(indicator: str) -> tuple[float, float]:
    if indicator in NONNEGATIVE_INDICATORS:
        return 0.0, np.inf
    return -1.0, 1.0


def _interp_curve(points, t) -> np.ndarray:
    ts = np.array([p[0] for p in points])
    vs = np.array([p[1] for p in points])
    return np.interp(np.asarray(t, dtype=float), ts, vs)


def default_rapeseed_template() -> PhenologyTemplate:
    medians = {
        "NDVI": ((0.0, 0.30), (0.10, 0.42), (0.25, 0.68), (0.40, 0.82),
                 (0.55, 0.85), (0.70, 0.72), (0.85, 0.52), (1.0, 0.38)),
        "NDWI_GREEN": ((0.0, -0.18), (0.20, -0.35), (0.45, -0.52),
                       (0.60, -0.55), (0.80, -0.40), (1.0, -0.25)),
        "NDWI_SWIR": ((0.0, 0.05), (0.20, 0.22), (0.45, 0.38),
                      (0.60, 0.40), (0.80, 0.22), (1.0, 0.08)),
        "GRVI": ((0.0, -0.06), (0.20, 0.02), (0.45, 0.16),
                 (0.60, 0.18), (0.80, 0.06), (1.0, -0.02)),
        "MCARI_OSAVI": ((0.0, 0.25), (0.20, 0.55), (0.45, 1.05),
                        (0.60, 1.15), (0.80, 0.70), (1.0, 0.40)),
    }
    iqrs = {
        "NDVI": ((0.0, 0.050), (0.25, 0.100), (0.50, 0.070), (0.75, 0.060), (1.0, 0.050)),
        "NDWI_GREEN": ((0.0, 0.040), (0.25, 0.075), (0.50, 0.055), (0.75, 0.045), (1.0, 0.040)),
        "NDWI_SWIR": ((0.0, 0.045), (0.25, 0.085), (0.50, 0.060), (0.75, 0.050), (1.0, 0.045)),
        "GRVI": ((0.0, 0.030), (0.25, 0.055), (0.50, 0.040), (0.75, 0.035), (1.0, 0.030)),
        "MCARI_OSAVI": ((0.0, 0.090), (0.25, 0.180), (0.50, 0.130), (0.75, 0.110), (1.0, 0.090)),
    }
    s1 = {"VV": (0.80, -0.55), "VH": (0.70, -0.75)}
    return PhenologyTemplate("rapeseed", medians, iqrs, s1)


def default_contaminant_template() -> PhenologyTemplate:
    medians = {
        "NDVI": ((0.0, 0.22), (0.30, 0.28), (0.50, 0.52), (0.68, 0.80),
                 (0.82, 0.70), (1.0, 0.30)),
        "NDWI_GREEN": ((0.0, -0.15), (0.35, -0.22), (0.60, -0.45),
                       (0.75, -0.50), (1.0, -0.20)),
        "NDWI_SWIR": ((0.0, 0.04), (0.35, 0.10), (0.60, 0.30),
                      (0.75, 0.35), (1.0, 0.06)),
        "GRVI": ((0.0, -0.08), (0.35, -0.03), (0.60, 0.12),
                 (0.75, 0.15), (1.0, -0.05)),
        "MCARI_OSAVI": ((0.0, 0.20), (0.35, 0.40), (0.60, 0.85),
                        (0.75, 1.00), (1.0, 0.30)),
    }
    iqrs = {
        "NDVI": ((0.0, 0.045), (0.40, 0.080), (0.70, 0.095), (1.0, 0.050)),
        "NDWI_GREEN": ((0.0, 0.035), (0.40, 0.060), (0.70, 0.070), (1.0, 0.040)),
        "NDWI_SWIR": ((0.0, 0.040), (0.40, 0.070), (0.70, 0.080), (1.0, 0.045)),
        "GRVI": ((0.0, 0.028), (0.40, 0.045), (0.70, 0.050), (1.0, 0.030)),
        "MCARI_OSAVI": ((0.0, 0.080), (0.40, 0.140), (0.70, 0.160), (1.0, 0.090)),
    }
    s1 = {"VV": (0.80, -0.55), "VH": (0.70, -0.75)}
    return PhenologyTemplate("spring_cereal", medians, iqrs, s1)


@dataclass(frozen=True)
class SyntheticConfig:
    """Shape, noise and planted-row settings of one synthetic dataset."""

    n_parcels: int = 2000
    n_s2_acquisitions: int = 13
    n_s1_acquisitions: int = 10
    n_clusters: int = 3
    noise_scale: float = 0.05
    anomaly_fraction: float = 0.0
    anomaly_kinds: tuple[str, ...] = ANOMALY_KINDS
    contamination_fraction: float = 0.0
    s1_correlation: float = 0.7
    s2_noise_profile: tuple[float, ...] | None = None
    seed: int = 0
    template: PhenologyTemplate = field(default_factory=default_rapeseed_template)
    contaminant_template: PhenologyTemplate = field(default_factory=default_contaminant_template)

    def __post_init__(self) -> None:
        if self.n_parcels < 2:
            raise ValueError("n_parcels must be at least 2")
        if self.n_s2_acquisitions < 1 or self.n_s1_acquisitions < 0:
            raise ValueError("acquisition counts out of range")
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be at least 1")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        if not 0.0 <= self.anomaly_fraction <= 1.0:
            raise ValueError("anomaly_fraction must lie in [0, 1]")
        if not 0.0 <= self.contamination_fraction <= 0.5:
            raise ValueError("contamination_fraction must lie in [0, 0.5]")
        if not 0.0 < self.s1_correlation <= 1.0:
            raise ValueError("s1_correlation must lie in (0, 1]")
        bad = set(self.anomaly_kinds) - set(ANOMALY_KINDS)
        if bad:
            raise ValueError(f"unknown anomaly kinds {sorted(bad)}")
        if not self.anomaly_kinds and self.anomaly_fraction > 0:
            raise ValueError("anomaly_fraction > 0 needs at least one anomaly kind")
        if self.s2_noise_profile is not None and \
                len(self.s2_noise_profile) != self.n_s2_acquisitions:
            raise ValueError("s2_noise_profile length must match n_s2_acquisitions")


@dataclass(frozen=True)
class LabeledDataset:
    """A fully observed matrix plus per-row ground truth."""

    matrix: FeatureMatrix
    labels: tuple[str, ...]
    clusters: tuple[int, ...]
    cluster_means: np.ndarray
    config: SyntheticConfig

    def __post_init__(self) -> None:
        if len(self.labels) != self.matrix.n_rows or len(self.clusters) != self.matrix.n_rows:
            raise ValueError("labels and clusters must cover every row")


def _acquisition_times(cfg: SyntheticConfig) -> tuple[np.ndarray, np.ndarray]:
    t2 = np.linspace(0.0, 1.0, cfg.n_s2_acquisitions)
    if cfg.n_s2_acquisitions == 1:
        t2 = np.array([0.5])
    t1 = (np.arange(cfg.n_s1_acquisitions) + 0.5) / max(cfg.n_s1_acquisitions, 1)
    return t2, t1


def _date_for(t: float) -> str:
    return (_SEASON_START + datetime.timedelta(days=round(float(t) * _SEASON_DAYS))).isoformat()


def build_columns(cfg: SyntheticConfig) -> tuple[ColumnDescriptor, ...]:
    t2, t1 = _acquisition_times(cfg)
    cols = []
    for j, t in enumerate(t2):
        for ind in S2_INDICATORS:
            for stat in ("median", "IQR"):
                cols.append(ColumnDescriptor("S2", ind, stat, j, _date_for(t)))
    for i, t in enumerate(t1):
        for ind in S1_INDICATORS:
            cols.append(ColumnDescriptor("S1", ind, "median", i, _date_for(t)))
    return tuple(cols)


def _bumps(t: np.ndarray) -> np.ndarray:
    """Seasonal factor loadings, shape (len(t), 3)."""
    t = np.asarray(t, dtype=float)
    out = np.empty((t.size, len(_BUMP_CENTERS)))
    for p, center in enumerate(_BUMP_CENTERS):
        out[:, p] = np.maximum(0.0, 1.0 - np.abs(t - center) / _BUMP_HALF_WIDTH)
    return out


def _het_bump(t: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, 1.0 - np.abs(np.asarray(t) - 0.5) / _HET_WIDTH)


@dataclass(frozen=True)
class _CurveParams:
    template: PhenologyTemplate
    shift: float
    amplitude: float
    offsets: dict[str, float]
    delay: float = 0.0


def _template_time_means(tpl: PhenologyTemplate) -> dict[str, float]:
    grid = np.linspace(0.0, 1.0, 201)
    return {ind: float(tpl.median(ind, grid).mean()) for ind in S2_INDICATORS}


def _evaluate_base(params: _CurveParams, cfg: SyntheticConfig) -> np.ndarray:
    """One noiseless row (all columns) for the given curve parameters."""
    tpl = params.template
    t2, t1 = _acquisition_times(cfg)
    means = _template_time_means(tpl)
    eval2 = t2 - params.shift - params.delay
    eval1 = t1 - params.shift - params.delay
    med = {}
    for ind in S2_INDICATORS:
        base = means[ind] + params.amplitude * (tpl.median(ind, eval2) - means[ind])
        base = base + params.offsets.get(ind, 0.0)
        lo, hi = _indicator_range(ind)
        med[ind] = np.clip(base, lo, hi)
    iqr = {ind: np.maximum(tpl.iqr(ind, eval2) * params.amplitude, _IQR_FLOOR)
           for ind in S2_INDICATORS}
    ndvi_mean = means["NDVI"]
    ndvi_s1 = ndvi_mean + params.amplitude * (tpl.median("NDVI", eval1) - ndvi_mean)
    ndvi_s1 = np.clip(ndvi_s1 + params.offsets.get("NDVI", 0.0), -1.0, 1.0)
    row = []
    for j in range(cfg.n_s2_acquisitions):
        for ind in S2_INDICATORS:
            row.append(med[ind][j])
            row.append(iqr[ind][j])
    for i in range(cfg.n_s1_acquisitions):
        for ind in S1_INDICATORS:
            slope, intercept = tpl.s1_affine[ind]
            row.append(slope * ndvi_s1[i] + intercept)
    return np.array(row)


def _cluster_params(cfg: SyntheticConfig, rng: np.random.Generator) -> list[_CurveParams]:
    """Curve parameters of the latent clusters.

    Clusters stand for distinct variety and sowing-window combinations,
    so their time shifts and amplitudes are stratified over the plausible
    ranges rather than drawn independently: every pair of clusters stays
    clearly apart in both parameters.
    """
    out = []
    k = cfg.n_clusters
    for j in range(k):
        shift = -0.06 + 0.12 * (j + 0.5) / k + float(rng.uniform(-0.01, 0.01))
        amplitude = 0.78 + 0.47 * (k - j - 0.5) / k + float(rng.uniform(-0.03, 0.03))
        offsets = {ind: float(rng.normal(0.0, 0.03)) for ind in S2_INDICATORS}
        out.append(_CurveParams(cfg.template, shift, amplitude, offsets))
    return out


def _contaminant_row(cfg: SyntheticConfig, cluster_means: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
    """One noiseless contaminant row.

    Contaminated parcels are modeled as mixed plantings: part of the
    parcel grows the foreign crop, the rest matches one of the clean
    clusters, and the parcel-level statistics blend the two curves by
    area fraction.  Fractions stay below one half so the rows hug the
    clean clusters from one side instead of forming their own cluster.
    """
    base = cluster_means[rng.integers(cluster_means.shape[0])]
    foreign = _evaluate_base(
        _CurveParams(cfg.contaminant_template,
                     shift=float(rng.uniform(-0.2, 0.2)),
                     amplitude=float(rng.uniform(0.8, 1.2)),
                     offsets={}), cfg)
    fraction = float(rng.uniform(0.1, 0.45))
    return (1.0 - fraction) * base + fraction * foreign


def generate(cfg: SyntheticConfig) -> LabeledDataset:
    """Draw a labeled, fully observed dataset.

    Counts are exact: round_half_up(contamination_fraction * N) rows are
    contaminants and round_half_up(anomaly_fraction * N) of the remaining
    rows carry anomalies, split round-robin over the configured kinds.
    """
    root = np.random.SeedSequence(cfg.seed)
    rng_clusters, rng_assign, rng_noise, rng_planted = (
        np.random.Generator(np.random.PCG64(s)) for s in root.spawn(4))
    n = cfg.n_parcels
    columns = build_columns(cfg)
    d = len(columns)
    cluster_params = _cluster_params(cfg, rng_clusters)
    cluster_means = np.stack([_evaluate_base(p, cfg) for p in cluster_params])

    assignment = rng_assign.integers(0, cfg.n_clusters, size=n)
    n_contaminant = round_half_up(cfg.contamination_fraction * n)
    contaminant_rows = rng_planted.choice(n, size=n_contaminant, replace=False)
    remaining = np.setdiff1d(np.arange(n), contaminant_rows)
    n_anomalies = min(round_half_up(cfg.anomaly_fraction * n), remaining.size)
    anomaly_rows = rng_planted.choice(remaining, size=n_anomalies, replace=False)

    labels = np.full(n, LABEL_NORMAL, dtype=object)
    labels[contaminant_rows] = LABEL_CONTAMINANT
    kinds = cfg.anomaly_kinds if cfg.anomaly_kinds else (LABEL_DELAY,)
    for pos, row in enumerate(anomaly_rows):
        labels[row] = kinds[pos % len(kinds)]
    clusters = assignment.copy()
    clusters[contaminant_rows] = -1

    values = cluster_means[assignment].copy()
    for row in np.flatnonzero(labels == LABEL_DELAY):
        values[row] = _evaluate_base(
            replace(cluster_params[assignment[row]], delay=_DELAY), cfg)
    for row in contaminant_rows:
        values[row] = _contaminant_row(cfg, cluster_means, rng_planted)

    values += _noise_matrix(cfg, rng_noise, labels)
    _apply_heterogeneity(cfg, values, labels)
    _clip_columns(columns, values)

    row_ids = tuple(f"P{idx:05d}" for idx in range(n))
    mask = np.ones((n, d), dtype=bool)
    matrix = FeatureMatrix(values=values, observed_mask=mask,
                           columns=columns, row_ids=row_ids)
    return LabeledDataset(matrix=matrix, labels=tuple(labels),
                          clusters=tuple(int(c) for c in clusters),
                          cluster_means=cluster_means, config=cfg)


def _noise_matrix(cfg: SyntheticConfig, rng: np.random.Generator,
                  labels: np.ndarray) -> np.ndarray:
    """Within-cluster variation: vigor factors, IQR heterogeneity, iid noise."""
    n = cfg.n_parcels
    t2, t1 = _acquisition_times(cfg)
    d = 2 * len(S2_INDICATORS) * cfg.n_s2_acquisitions \
        + len(S1_INDICATORS) * cfg.n_s1_acquisitions
    vigor = rng.standard_normal((n, len(_BUMP_CENTERS)))
    het = rng.standard_normal(n)
    eps = rng.standard_normal((n, d))
    spread = np.where(labels == LABEL_CONTAMINANT, _CONTAMINANT_SPREAD, 1.0)
    vigor *= spread[:, None]
    het *= spread
    eps *= spread[:, None]

    noise = cfg.noise_scale
    profile = np.asarray(cfg.s2_noise_profile if cfg.s2_noise_profile is not None
                         else np.ones(cfg.n_s2_acquisitions))
    b2 = _bumps(t2)
    b1 = _bumps(t1)
    vig2 = vigor @ b2.T
    vig1 = vigor @ b1.T
    het_bump = _het_bump(t2)

    out = np.zeros((n, d))
    col = 0
    for j in range(cfg.n_s2_acquisitions):
        for ind in S2_INDICATORS:
            out[:, col] = noise * (_VIGOR_DIRECTION[ind] * _VIGOR_SHARE * vig2[:, j]
                                   + _IID_SHARE * profile[j] * eps[:, col])
            col += 1
            out[:, col] = noise * (_HET_DIRECTION[ind] * _HET_SHARE * het_bump[j] * het
                                   + _IQR_IID_SHARE * profile[j] * eps[:, col])
            col += 1
    ratio = np.sqrt(max(1.0 / cfg.s1_correlation ** 2 - 1.0, 0.0))
    for i in range(cfg.n_s1_acquisitions):
        signal_std = _VIGOR_SHARE * float(np.sqrt((b1[i] ** 2).sum()))
        for ind in S1_INDICATORS:
            slope = cfg.template.s1_affine[ind][0]
            out[:, col] = noise * slope * (_VIGOR_SHARE * vig1[:, i]
                                           + signal_std * ratio * eps[:, col])
            col += 1
    return out


def _apply_heterogeneity(cfg: SyntheticConfig, values: np.ndarray,
                         labels: np.ndarray) -> None:
    rows = np.flatnonzero(labels == LABEL_HETEROGENEITY)
    if rows.size == 0:
        return
    t2, _ = _acquisition_times(cfg)
    bump = _het_bump(t2)
    col = 0
    for j in range(cfg.n_s2_acquisitions):
        for ind in S2_INDICATORS:
            col += 1  # median column untouched
            peak = max(v for _, v in cfg.template.iqr_curves[ind])
            values[rows, col] += _HET_SPIKE * peak * bump[j]
            col += 1


def _clip_columns(columns, values: np.ndarray) -> None:
    for j, col in enumerate(columns):
        if col.sensor != "S2":
            continue
        if col.statistic == "IQR":
            np.maximum(values[:, j], _IQR_FLOOR, out=values[:, j])
        else:
            lo, hi = _indicator_range(col.indicator)
            np.clip(values[:, j], lo, hi, out=values[:, j])


def inject_contamination(dataset: LabeledDataset, fraction: float,
                         seed: int = 0) -> LabeledDataset:
    """Append contaminant rows partly grown with the other crop.

    The new dataset has round_half_up(fraction * N) extra rows labeled
    contaminant; existing rows are untouched.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    cfg = dataset.config
    n = dataset.matrix.n_rows
    n_new = round_half_up(fraction * n)
    if n_new == 0:
        return dataset
    root = np.random.SeedSequence(entropy=abs(int(seed)), spawn_key=(11,))
    rng_params, rng_noise = (np.random.Generator(np.random.PCG64(s))
                             for s in root.spawn(2))
    rows = np.empty((n_new, dataset.matrix.n_columns))
    for i in range(n_new):
        rows[i] = _contaminant_row(cfg, dataset.cluster_means, rng_params)
    sub_cfg = replace(cfg, n_parcels=max(n_new, 2))
    noise_labels = np.full(max(n_new, 2), LABEL_CONTAMINANT, dtype=object)
    rows += _noise_matrix(sub_cfg, rng_noise, noise_labels)[:n_new]
    _clip_columns(dataset.matrix.columns, rows)

    existing = {rid for rid in dataset.matrix.row_ids}
    new_ids = []
    counter = 0
    while len(new_ids) < n_new:
        rid = f"C{counter:05d}"
        if rid not in existing:
            new_ids.append(rid)
        counter += 1
    matrix = FeatureMatrix(
        values=np.vstack([dataset.matrix.values, rows]),
        observed_mask=np.ones((n + n_new, dataset.matrix.n_columns), dtype=bool),
        columns=dataset.matrix.columns,
        row_ids=dataset.matrix.row_ids + tuple(new_ids),
    )
    return LabeledDataset(matrix=matrix,
                          labels=dataset.labels + (LABEL_CONTAMINANT,) * n_new,
                          clusters=dataset.clusters + (-1,) * n_new,
                          cluster_means=dataset.cluster_means,
                          config=cfg)
