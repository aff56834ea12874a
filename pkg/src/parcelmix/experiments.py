"""Monte Carlo experiment protocol with deterministic seeds and tables.

Every experiment is a grid of conditions crossed with repeated runs.  The
random streams of a run are derived from (base_seed, grid_index,
run_index) alone, so tables are byte for byte reproducible, run order
never matters, and adding runs never changes earlier rows.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import isolation_forest
from .data_model import FeatureMatrix
from .gmm import EmConfig, RobustConfig
from .imputers import ImputationResult, impute_gmm, impute_knn, impute_mean
from .masking import MaskedDataset, MaskingScenario, apply_scenario, day_by_day_scenarios
from .metrics import DEFAULT_RATIOS, precision_curve, reconstruction_scores
from .synthetic import LABEL_NORMAL, SyntheticConfig, generate, inject_contamination

KINDS = ("missing_sweep", "contamination_sweep", "day_by_day",
         "detection_sweep", "per_feature_table", "init_sensitivity")

_IMPUTER_METHODS = ("rgmm", "gmm", "knn", "mean")

_DEFAULT_GRIDS = {
    "missing_sweep": (0.08, 0.23, 0.46, 0.70),
    "contamination_sweep": (0.0, 0.05, 0.10, 0.20, 0.30),
    "detection_sweep": (0.46,),
    "day_by_day": (0.0,),
    "per_feature_table": (0.0,),
    "init_sensitivity": (0.0,),
}

_COLUMNS = {
    "missing_sweep": ("kind", "pct_images", "run", "method", "with_s1",
                      "n_masked", "mae", "rmse", "r2", "mae_median", "mae_iqr"),
    "contamination_sweep": ("kind", "contamination", "run", "method",
                            "n_masked", "mae", "rmse", "r2",
                            "mae_median", "mae_iqr"),
    "day_by_day": ("kind", "acquisition", "run", "method", "with_s1",
                   "n_masked", "mae", "rmse", "r2"),
    "detection_sweep": ("kind", "pct_images", "run", "method",
                        "n_positives", "auc"),
    "per_feature_table": ("kind", "acquisition", "run", "method", "sensor",
                          "indicator", "statistic", "n", "mae", "rmse", "r2"),
    "init_sensitivity": ("kind", "run", "method", "fit_seed",
                         "n_masked", "mae", "rmse", "r2"),
}


@dataclass(frozen=True)
class RunSeeds:
    """Independent seeds of the random streams inside one run."""

    dataset: int
    contamination: int
    mask: int
    fit: int
    forest: int
    detector: int


def run_seeds(base_seed: int, grid_index: int, run_index: int) -> RunSeeds:
    """Derive one run's seeds from its coordinates in the experiment."""
    ss = np.random.SeedSequence(entropy=abs(int(base_seed)),
                                spawn_key=(int(grid_index), int(run_index)))
    state = ss.generate_state(6)
    return RunSeeds(*(int(s) for s in state))


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything one experiment needs, declared up front."""

    kind: str
    dataset: SyntheticConfig = field(default_factory=SyntheticConfig)
    methods: tuple[str, ...] = ("gmm", "knn", "mean")
    grid: tuple[float, ...] | None = None
    n_mc_runs: int = 20
    base_seed: int = 0
    pct_affected_parcels: float = 0.5
    pct_cloudy_images: float = 0.23
    with_s1_comparison: bool = False
    k: int | None = None
    max_iterations: int = 30
    loglik_tolerance: float = 1e-3
    # the flattening threshold is matched to the protocol's dataset size:
    # eigenvalue gaps of a sample covariance at a few thousand rows are
    # orders of magnitude wider than at production scale
    scree_threshold: float = 0.05
    robust_alpha: float = 40.0
    robust_th: float = 0.5
    forest_trees: int = 100
    forest_subsample: int = 256
    knn_k: int = 5
    detection_ratios: tuple[float, ...] = DEFAULT_RATIOS

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.n_mc_runs < 1:
            raise ValueError("n_mc_runs must be at least 1")
        methods = tuple(self.methods)
        if not methods:
            raise ValueError("at least one method required")
        allowed = set(_IMPUTER_METHODS)
        if self.kind == "detection_sweep":
            allowed.add("discard")
        bad = set(methods) - allowed
        if bad:
            raise ValueError(f"unsupported methods {sorted(bad)}")
        if len(set(methods)) != len(methods):
            raise ValueError("methods must not repeat")
        object.__setattr__(self, "methods", methods)
        if self.grid is not None:
            grid = tuple(float(g) for g in self.grid)
            if not grid:
                raise ValueError("grid must not be empty")
            lo, hi = (0.0, 0.5) if self.kind == "contamination_sweep" else (0.0, 1.0)
            if any(not lo <= g <= hi for g in grid):
                raise ValueError(f"grid values must lie in [{lo}, {hi}]")
            object.__setattr__(self, "grid", grid)
        if not 0.0 <= self.pct_affected_parcels <= 1.0:
            raise ValueError("pct_affected_parcels must lie in [0, 1]")
        if not 0.0 <= self.pct_cloudy_images <= 1.0:
            raise ValueError("pct_cloudy_images must lie in [0, 1]")
        if self.kind == "detection_sweep" and self.dataset.anomaly_fraction <= 0:
            raise ValueError("detection_sweep needs a dataset with anomaly labels")
        if self.knn_k < 1:
            raise ValueError("knn_k must be at least 1")

    def resolved_grid(self) -> tuple[float, ...]:
        if self.grid is not None:
            return self.grid
        return _DEFAULT_GRIDS[self.kind]


@dataclass(frozen=True)
class RunSummary:
    """A finished experiment: one table plus a manifest of its settings."""

    kind: str
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]
    manifest: dict

    def to_csv(self) -> str:
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(_format_cell(v) for v in row))
        return "\n".join(lines) + "\n"

    def values(self, column: str, **filters) -> np.ndarray:
        """Numeric column values of the rows matching all filters."""
        j = self.columns.index(column)
        keep = []
        idx = {name: self.columns.index(name) for name in filters}
        for row in self.rows:
            if all(row[idx[name]] == want for name, want in filters.items()):
                keep.append(row[j])
        return np.array(keep, dtype=float)

    def aggregate(self, column: str, stat: str = "mean", **filters) -> float:
        vals = self.values(column, **filters)
        if vals.size == 0:
            raise ValueError("no rows match the filters")
        ops = {"mean": np.mean, "std": np.std, "median": np.median,
               "min": np.min, "max": np.max}
        if stat not in ops:
            raise ValueError(f"unknown stat {stat!r}")
        return float(ops[stat](vals))


def _format_cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(float(v))
    text = str(v)
    if "," in text or "\n" in text:
        raise ValueError(f"cell {text!r} needs quoting, which tables avoid")
    return text


def _fit_configs(spec: ExperimentSpec, seeds: RunSeeds,
                 robust: bool) -> tuple[EmConfig, RobustConfig | None]:
    em = EmConfig(k=spec.k if spec.k is not None else spec.dataset.n_clusters,
                  max_iterations=spec.max_iterations,
                  loglik_tolerance=spec.loglik_tolerance,
                  scree_threshold=spec.scree_threshold,
                  seed=seeds.fit)
    cfg = None
    if robust:
        forest = isolation_forest.IfConfig(n_trees=spec.forest_trees,
                                           subsample_size=spec.forest_subsample,
                                           seed=seeds.forest)
        cfg = RobustConfig(alpha=spec.robust_alpha, th=spec.robust_th,
                           forest=forest)
    return em, cfg


def _impute_with(matrix: FeatureMatrix, method: str, spec: ExperimentSpec,
                 seeds: RunSeeds) -> ImputationResult:
    if method == "mean":
        return impute_mean(matrix)
    if method == "knn":
        return impute_knn(matrix, k=spec.knn_k)
    if method in ("gmm", "rgmm"):
        em, robust = _fit_configs(spec, seeds, robust=method == "rgmm")
        return impute_gmm(matrix, em, robust)
    raise ValueError(f"unknown method {method!r}")


def _without_s1(matrix: FeatureMatrix, truth: tuple):
    s2 = matrix.column_indices(sensor="S2")
    remap = {int(j): i for i, j in enumerate(s2)}
    sub = matrix.select_columns(s2)
    sub_truth = tuple((r, remap[c], v) for r, c, v in truth)
    return sub, sub_truth


def _variants(spec: ExperimentSpec, masked: MaskedDataset):
    """The (flag, matrix, truth) pairs to impute: with and without radar."""
    out = [(True, masked.matrix, masked.truth)]
    if spec.with_s1_comparison and masked.matrix.column_indices(sensor="S1").size:
        sub, sub_truth = _without_s1(masked.matrix, masked.truth)
        out.append((False, sub, sub_truth))
    return out


def _stat_mae(scores, statistic: str) -> float:
    entry = scores.per_statistic_scaled.get(statistic)
    return entry.mae if entry is not None else float("nan")


def _missing_point(spec: ExperimentSpec, gi: int, ri: int):
    pct = spec.resolved_grid()[gi]
    seeds = run_seeds(spec.base_seed, gi, ri)
    data = generate(replace(spec.dataset, seed=seeds.dataset))
    scenario = MaskingScenario(pct_cloudy_images=pct,
                               pct_affected_parcels=spec.pct_affected_parcels,
                               seed=seeds.mask)
    masked = apply_scenario(data.matrix, scenario)
    rows = []
    for with_s1, matrix, truth in _variants(spec, masked):
        for method in spec.methods:
            result = _impute_with(matrix, method, spec, seeds)
            sc = reconstruction_scores(truth, result)
            rows.append((spec.kind, pct, ri, method, with_s1, len(truth),
                         sc.overall_scaled.mae, sc.overall_scaled.rmse,
                         sc.overall_scaled.r2, _stat_mae(sc, "median"),
                         _stat_mae(sc, "IQR")))
    return rows, []


def _clean_row_view(result, keep: np.ndarray):
    """Restrict an imputation result to the rows flagged in ``keep``."""
    sub = FeatureMatrix(values=result.completed.values[keep],
                        observed_mask=result.completed.observed_mask[keep],
                        columns=result.completed.columns,
                        row_ids=tuple(rid for rid, k in
                                      zip(result.completed.row_ids, keep) if k))
    return ImputationResult(completed=sub,
                            imputed_mask=result.imputed_mask[keep],
                            method=result.method,
                            diagnostics=result.diagnostics)


def _contamination_point(spec: ExperimentSpec, gi: int, ri: int):
    frac = spec.resolved_grid()[gi]
    seeds = run_seeds(spec.base_seed, gi, ri)
    data = generate(replace(spec.dataset, seed=seeds.dataset))
    if frac > 0:
        data = inject_contamination(data, frac, seed=seeds.contamination)
    scenario = MaskingScenario(pct_cloudy_images=spec.pct_cloudy_images,
                               pct_affected_parcels=spec.pct_affected_parcels,
                               seed=seeds.mask)
    masked = apply_scenario(data.matrix, scenario)
    keep = np.array([lab != "contaminant" for lab in data.labels])
    new_index = np.cumsum(keep) - 1
    clean_truth = tuple((int(new_index[r]), c, v) for r, c, v in masked.truth
                        if keep[r])
    rows = []
    for method in spec.methods:
        result = _impute_with(masked.matrix, method, spec, seeds)
        sc = reconstruction_scores(clean_truth, _clean_row_view(result, keep))
        rows.append((spec.kind, frac, ri, method, len(clean_truth),
                     sc.overall_scaled.mae, sc.overall_scaled.rmse,
                     sc.overall_scaled.r2, _stat_mae(sc, "median"),
                     _stat_mae(sc, "IQR")))
    return rows, []


def _day_by_day_point(spec: ExperimentSpec, gi: int, ri: int):
    seeds = run_seeds(spec.base_seed, gi, ri)
    data = generate(replace(spec.dataset, seed=seeds.dataset))
    rows = []
    notes = []
    for masked in day_by_day_scenarios(data.matrix,
                                       pct_affected_parcels=spec.pct_affected_parcels,
                                       seed=seeds.mask):
        acq = masked.cloudy_acquisitions[0]
        if not masked.truth:
            notes.append(f"run {ri} acquisition {acq}: nothing masked, row omitted")
            continue
        for with_s1, matrix, truth in _variants(spec, masked):
            for method in spec.methods:
                result = _impute_with(matrix, method, spec, seeds)
                sc = reconstruction_scores(truth, result)
                rows.append((spec.kind, acq, ri, method, with_s1, len(truth),
                             sc.overall_scaled.mae, sc.overall_scaled.rmse,
                             sc.overall_scaled.r2))
    return rows, notes


def _detection_point(spec: ExperimentSpec, gi: int, ri: int):
    pct = spec.resolved_grid()[gi]
    seeds = run_seeds(spec.base_seed, gi, ri)
    data = generate(replace(spec.dataset, seed=seeds.dataset))
    labels = np.array([lab != LABEL_NORMAL for lab in data.labels])
    scenario = MaskingScenario(pct_cloudy_images=pct,
                               pct_affected_parcels=spec.pct_affected_parcels,
                               seed=seeds.mask)
    masked = apply_scenario(data.matrix, scenario)
    rows = []
    for method in spec.methods:
        if method == "discard":
            drop = set()
            for acq in masked.cloudy_acquisitions:
                drop.update(int(j) for j in
                            masked.matrix.column_indices(sensor="S2",
                                                         acquisition_index=acq))
            keep = [j for j in range(masked.matrix.n_columns) if j not in drop]
            if not keep:
                raise ValueError("every column is cloudy, nothing left to rank")
            matrix = masked.matrix.select_columns(keep)
        else:
            matrix = _impute_with(masked.matrix, method, spec, seeds).completed
        forest = isolation_forest.fit(
            matrix, isolation_forest.IfConfig(n_trees=spec.forest_trees,
                                              subsample_size=spec.forest_subsample,
                                              seed=seeds.detector))
        scores = isolation_forest.score(forest, matrix.values)
        curve = precision_curve(scores, labels, spec.detection_ratios)
        rows.append((spec.kind, pct, ri, method, int(labels.sum()), curve.auc))
    return rows, []


def _per_feature_point(spec: ExperimentSpec, gi: int, ri: int):
    seeds = run_seeds(spec.base_seed, gi, ri)
    data = generate(replace(spec.dataset, seed=seeds.dataset))
    rng = np.random.Generator(np.random.PCG64(seeds.mask))
    s2_acqs = data.matrix.acquisitions("S2")
    acq = int(s2_acqs[rng.integers(len(s2_acqs))])
    scenario = MaskingScenario(acquisitions=(acq,),
                               pct_affected_parcels=spec.pct_affected_parcels,
                               seed=seeds.mask)
    masked = apply_scenario(data.matrix, scenario)
    rows = []
    for method in spec.methods:
        result = _impute_with(masked.matrix, method, spec, seeds)
        sc = reconstruction_scores(masked.truth, result)
        for (sensor, indicator, statistic), entry in sorted(sc.per_group.items()):
            rows.append((spec.kind, acq, ri, method, sensor, indicator,
                         statistic, entry.n, entry.mae, entry.rmse, entry.r2))
    return rows, []


def _init_point(spec: ExperimentSpec, gi: int, ri: int):
    base = run_seeds(spec.base_seed, 0, 0)
    seeds = run_seeds(spec.base_seed, gi, ri)
    data = generate(replace(spec.dataset, seed=base.dataset))
    acqs = data.matrix.acquisitions("S2")
    scenario = MaskingScenario(acquisitions=(int(acqs[len(acqs) // 2]),),
                               pct_affected_parcels=spec.pct_affected_parcels,
                               seed=base.mask)
    masked = apply_scenario(data.matrix, scenario)
    rows = []
    for method in spec.methods:
        result = _impute_with(masked.matrix, method, spec, seeds)
        sc = reconstruction_scores(masked.truth, result)
        rows.append((spec.kind, ri, method, seeds.fit, len(masked.truth),
                     sc.overall_scaled.mae, sc.overall_scaled.rmse,
                     sc.overall_scaled.r2))
    return rows, []


_POINT_BUILDERS = {
    "missing_sweep": _missing_point,
    "contamination_sweep": _contamination_point,
    "day_by_day": _day_by_day_point,
    "detection_sweep": _detection_point,
    "per_feature_table": _per_feature_point,
    "init_sensitivity": _init_point,
}


def _run_point(args):
    spec, gi, ri = args
    return _POINT_BUILDERS[spec.kind](spec, gi, ri)


def _manifest(spec: ExperimentSpec, notes: list[str]) -> dict:
    d = spec.dataset
    out = {
        "kind": spec.kind,
        "base_seed": str(spec.base_seed),
        "n_mc_runs": str(spec.n_mc_runs),
        "grid": ",".join(repr(g) for g in spec.resolved_grid()),
        "methods": ",".join(spec.methods),
        "pct_affected_parcels": repr(spec.pct_affected_parcels),
        "pct_cloudy_images": repr(spec.pct_cloudy_images),
        "with_s1_comparison": "true" if spec.with_s1_comparison else "false",
        "k": str(spec.k if spec.k is not None else d.n_clusters),
        "max_iterations": str(spec.max_iterations),
        "knn_k": str(spec.knn_k),
        "dataset.n_parcels": str(d.n_parcels),
        "dataset.n_s2_acquisitions": str(d.n_s2_acquisitions),
        "dataset.n_s1_acquisitions": str(d.n_s1_acquisitions),
        "dataset.n_clusters": str(d.n_clusters),
        "dataset.noise_scale": repr(d.noise_scale),
        "dataset.anomaly_fraction": repr(d.anomaly_fraction),
        "dataset.contamination_fraction": repr(d.contamination_fraction),
        "dataset.s1_correlation": repr(d.s1_correlation),
        "version": _package_version(),
    }
    if notes:
        out["notes"] = "; ".join(notes)
    return out


def _package_version() -> str:
    try:
        from importlib.metadata import version
        return version("parcelmix")
    except Exception:
        return "unknown"


def run_experiment(spec: ExperimentSpec, jobs: int = 1) -> RunSummary:
    """Run the full grid-by-run protocol and assemble one table.

    ``jobs`` > 1 runs points in separate processes; the assembled table
    is identical either way because every row depends only on its run's
    derived seeds and rows are ordered by (grid point, run, method).
    """
    if jobs < 1:
        raise ValueError("jobs must be at least 1")
    grid = spec.resolved_grid()
    points = [(spec, gi, ri) for gi in range(len(grid))
              for ri in range(spec.n_mc_runs)]
    if jobs == 1 or len(points) == 1:
        results = [_run_point(p) for p in points]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_point, points))
    rows: list[tuple] = []
    notes: list[str] = []
    for point_rows, point_notes in results:
        rows.extend(point_rows)
        notes.extend(point_notes)
    return RunSummary(kind=spec.kind, columns=_COLUMNS[spec.kind],
                      rows=tuple(rows), manifest=_manifest(spec, notes))
