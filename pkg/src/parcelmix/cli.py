"""Command line front end.

Subcommands cover the full pipeline: synthesize a labeled dataset, mask
optical acquisitions, impute, rank anomalies, score reconstructions
against held-out truth, and run whole experiment grids from a config
file.  Exit codes: 0 on success, 1 on bad inputs or files, 2 when a fit
fails numerically.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import gmm as gmm_mod
from . import isolation_forest
from .data_model import (FeatureMatrix, apply_scaling, fit_scaling,
                         load_matrix, save_matrix)
from .experiments import KINDS, ExperimentSpec, run_experiment
from .gaussian import CovarianceError
from .gmm import EmConfig, FitError, RobustConfig
from .imputers import ImputationResult, impute_gmm, impute_knn, impute_mean
from .masking import MaskingScenario, apply_scenario
from .metrics import reconstruction_scores
from .synthetic import (ANOMALY_KINDS, PhenologyTemplate, SyntheticConfig,
                        generate)

_TRUTH_HEADER = ["parcel_id", "column", "value"]


def _package_version() -> str:
    try:
        from importlib.metadata import version
        return version("parcelmix")
    except Exception:
        return "unknown"


def _read_template(path: str) -> PhenologyTemplate:
    return PhenologyTemplate.from_config_text(Path(path).read_text(encoding="utf-8"))


def _cmd_synth(args) -> None:
    kwargs = {}
    if args.template:
        kwargs["template"] = _read_template(args.template)
    if args.contaminant_template:
        kwargs["contaminant_template"] = _read_template(args.contaminant_template)
    kinds = tuple(k.strip() for k in args.anomaly_kinds.split(",")) \
        if args.anomaly_kinds else ANOMALY_KINDS
    cfg = SyntheticConfig(n_parcels=args.n_parcels,
                          n_s2_acquisitions=args.s2_images,
                          n_s1_acquisitions=args.s1_images,
                          n_clusters=args.clusters,
                          noise_scale=args.noise,
                          anomaly_fraction=args.anomaly_fraction,
                          anomaly_kinds=kinds,
                          contamination_fraction=args.contamination,
                          s1_correlation=args.s1_correlation,
                          seed=args.seed, **kwargs)
    data = generate(cfg)
    save_matrix(data.matrix, args.out)
    if args.labels_out:
        with open(args.labels_out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["parcel_id", "label", "cluster"])
            for rid, lab, cl in zip(data.matrix.row_ids, data.labels, data.clusters):
                writer.writerow([rid, lab, str(cl)])
    print(f"wrote {data.matrix.n_rows} x {data.matrix.n_columns} matrix to {args.out}")


def _write_truth(path: str, m: FeatureMatrix, truth) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_TRUTH_HEADER)
        for i, j, value in truth:
            writer.writerow([m.row_ids[i], m.columns[j].label(), repr(value)])


def _read_truth(path: str, m: FeatureMatrix):
    row_index = {rid: i for i, rid in enumerate(m.row_ids)}
    col_index = {c.label(): j for j, c in enumerate(m.columns)}
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _TRUTH_HEADER:
            raise ValueError(f"truth file must start with {','.join(_TRUTH_HEADER)}")
        for ln, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 3:
                raise ValueError(f"truth line {ln}: expected 3 fields")
            rid, label, text = rec
            if rid not in row_index:
                raise ValueError(f"truth line {ln}: unknown parcel {rid!r}")
            if label not in col_index:
                raise ValueError(f"truth line {ln}: unknown column {label!r}")
            try:
                value = float(text)
            except ValueError:
                raise ValueError(f"truth line {ln}: bad value {text!r}") from None
            out.append((row_index[rid], col_index[label], value))
    return tuple(out)


def _cmd_mask(args) -> None:
    m = load_matrix(args.input)
    if args.acquisitions:
        acqs = tuple(int(a) for a in args.acquisitions.split(","))
        scenario = MaskingScenario(acquisitions=acqs,
                                   pct_affected_parcels=args.pct_parcels,
                                   seed=args.seed)
    else:
        if args.pct_images is None:
            raise ValueError("give either --pct-images or --acquisitions")
        scenario = MaskingScenario(pct_cloudy_images=args.pct_images,
                                   pct_affected_parcels=args.pct_parcels,
                                   seed=args.seed)
    masked = apply_scenario(m, scenario)
    save_matrix(masked.matrix, args.out)
    _write_truth(args.truth_out, m, masked.truth)
    for note in masked.warnings:
        print(f"warning: {note}", file=sys.stderr)
    cloudy = ",".join(str(a) for a in masked.cloudy_acquisitions)
    print(f"masked {len(masked.truth)} entries across acquisitions [{cloudy}]")


def _cmd_impute(args) -> None:
    m = load_matrix(args.input)
    if args.method in ("rgmm", "gmm"):
        em = EmConfig(k=args.k, max_iterations=args.max_iterations,
                      loglik_tolerance=args.tol,
                      scree_threshold=args.scree, seed=args.seed)
        robust = None
        if args.method == "rgmm":
            forest = isolation_forest.IfConfig(n_trees=args.trees,
                                               subsample_size=args.subsample,
                                               seed=args.seed)
            robust = RobustConfig(alpha=args.alpha, th=args.th, forest=forest)
        if args.k is None:
            transform = fit_scaling(m)
            scaled = apply_scaling(m, transform)
            chosen, _ = gmm_mod.select_k(scaled, range(args.k_min, args.k_max + 1),
                                         em, robust)
            em = replace(em, k=chosen)
            print(f"selected k={chosen} by BIC over {args.k_min}..{args.k_max}")
        result = impute_gmm(m, em, robust)
        report = result.diagnostics.get("fit_report")
        if report is not None:
            print(f"k={report.params.k} iterations={report.n_iterations} "
                  f"loglik={report.log_likelihood_trace[-1]:.4f} "
                  f"bic={report.bic:.2f} converged={report.converged}")
    elif args.method == "knn":
        result = impute_knn(m, k=args.knn_k)
    else:
        result = impute_mean(m)
    save_matrix(result.completed, args.out)
    print(f"imputed {int(result.imputed_mask.sum())} entries "
          f"with {result.method}, wrote {args.out}")


def _cmd_detect(args) -> None:
    m = load_matrix(args.input)
    cfg = isolation_forest.IfConfig(n_trees=args.trees,
                                    subsample_size=args.subsample,
                                    seed=args.seed)
    model = isolation_forest.fit(m, cfg)
    scores = isolation_forest.score(model, m.values)
    order = np.argsort(-scores, kind="stable")
    with open(args.scores_out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parcel_id", "score"])
        for i in order:
            writer.writerow([m.row_ids[i], repr(float(scores[i]))])
    print(f"wrote {m.n_rows} anomaly scores to {args.scores_out}")


def _cmd_score(args) -> None:
    m = load_matrix(args.imputed)
    if not m.observed_mask.all():
        raise ValueError("imputed matrix still has missing entries")
    truth = _read_truth(args.truth, m)
    if not truth:
        raise ValueError("truth file holds no entries")
    imputed_mask = np.zeros(m.values.shape, dtype=bool)
    for i, j, _ in truth:
        imputed_mask[i, j] = True
    result = ImputationResult(completed=m, imputed_mask=imputed_mask,
                              method="scored", diagnostics={})
    sc = reconstruction_scores(truth, result)
    lines = [("overall", "", sc.overall_scaled)]
    for stat, entry in sorted(sc.per_statistic_scaled.items()):
        lines.append(("statistic", stat, entry))
    for (sensor, ind, stat), entry in sorted(sc.per_group.items()):
        lines.append(("group", f"{sensor}:{ind}:{stat}", entry))
    for (sensor, acq), entry in sorted(sc.per_acquisition.items()):
        lines.append(("acquisition", f"{sensor}:{acq}", entry))
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["section", "key", "mae", "rmse", "r2", "n"])
            for section, key, entry in lines:
                writer.writerow([section, key, repr(entry.mae), repr(entry.rmse),
                                 repr(entry.r2), str(entry.n)])
    o = sc.overall_scaled
    print(f"overall scaled: mae={o.mae:.6f} rmse={o.rmse:.6f} "
          f"r2={o.r2:.6f} n={o.n}")


_EXPERIMENT_KEYS = {
    "kind", "methods", "grid", "runs", "base_seed", "pct_affected_parcels",
    "pct_cloudy_images", "with_s1_comparison", "k", "max_iterations",
    "loglik_tolerance", "scree_threshold", "robust_alpha", "robust_th",
    "forest_trees", "forest_subsample", "knn_k", "detection_ratios",
}

_DATASET_KEYS = {
    "n_parcels", "n_s2_acquisitions", "n_s1_acquisitions", "n_clusters",
    "noise_scale", "anomaly_fraction", "anomaly_kinds",
    "contamination_fraction", "s1_correlation", "s2_noise_profile",
    "template", "contaminant_template",
}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v.strip()) for v in text.split(",") if v.strip())


def _read_experiment_spec(path: str) -> ExperimentSpec:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ValueError(f"cannot read experiment file {path!r}")
    extra = set(parser.sections()) - {"experiment", "dataset"}
    if extra:
        raise ValueError(f"unknown sections {sorted(extra)}")
    if "experiment" not in parser:
        raise ValueError("missing [experiment] section")
    exp = parser["experiment"]
    bad = set(exp.keys()) - _EXPERIMENT_KEYS
    if bad:
        raise ValueError(f"unknown experiment keys {sorted(bad)}")
    if "kind" not in exp:
        raise ValueError(f"experiment kind required, one of {', '.join(KINDS)}")

    ds_kwargs = {}
    if "dataset" in parser:
        ds = parser["dataset"]
        bad = set(ds.keys()) - _DATASET_KEYS
        if bad:
            raise ValueError(f"unknown dataset keys {sorted(bad)}")
        for key in ("n_parcels", "n_s2_acquisitions", "n_s1_acquisitions",
                    "n_clusters"):
            if key in ds:
                ds_kwargs[key] = ds.getint(key)
        for key in ("noise_scale", "anomaly_fraction",
                    "contamination_fraction", "s1_correlation"):
            if key in ds:
                ds_kwargs[key] = ds.getfloat(key)
        if "anomaly_kinds" in ds:
            ds_kwargs["anomaly_kinds"] = tuple(
                v.strip() for v in ds["anomaly_kinds"].split(","))
        if "s2_noise_profile" in ds:
            ds_kwargs["s2_noise_profile"] = _floats(ds["s2_noise_profile"])
        if "template" in ds:
            ds_kwargs["template"] = _read_template(ds["template"])
        if "contaminant_template" in ds:
            ds_kwargs["contaminant_template"] = _read_template(
                ds["contaminant_template"])
    dataset = SyntheticConfig(**ds_kwargs)

    kwargs = {"kind": exp["kind"], "dataset": dataset}
    if "methods" in exp:
        kwargs["methods"] = tuple(v.strip() for v in exp["methods"].split(","))
    if "grid" in exp:
        kwargs["grid"] = _floats(exp["grid"])
    if "runs" in exp:
        kwargs["n_mc_runs"] = exp.getint("runs")
    if "base_seed" in exp:
        kwargs["base_seed"] = exp.getint("base_seed")
    if "k" in exp:
        kwargs["k"] = exp.getint("k")
    for key in ("pct_affected_parcels", "pct_cloudy_images",
                "loglik_tolerance", "scree_threshold", "robust_alpha",
                "robust_th"):
        if key in exp:
            kwargs[key] = exp.getfloat(key)
    for key in ("max_iterations", "forest_trees", "forest_subsample", "knn_k"):
        if key in exp:
            kwargs[key] = exp.getint(key)
    if "with_s1_comparison" in exp:
        kwargs["with_s1_comparison"] = exp.getboolean("with_s1_comparison")
    if "detection_ratios" in exp:
        kwargs["detection_ratios"] = _floats(exp["detection_ratios"])
    return ExperimentSpec(**kwargs)


def _cmd_experiment(args) -> None:
    spec = _read_experiment_spec(args.spec)
    summary = run_experiment(spec, jobs=args.jobs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table_path = out_dir / f"{summary.kind}.csv"
    table_path.write_text(summary.to_csv(), encoding="utf-8")
    manifest_path = out_dir / "manifest.txt"
    manifest_lines = [f"{key}={value}" for key, value in
                      sorted(summary.manifest.items())]
    manifest_path.write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")
    print(f"wrote {len(summary.rows)} rows to {table_path}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parcelmix",
        description="Robust mixture imputation of parcel time series")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {_package_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--labels-out")
    p.add_argument("--n-parcels", type=int, default=2000)
    p.add_argument("--s2-images", type=int, default=13)
    p.add_argument("--s1-images", type=int, default=10)
    p.add_argument("--clusters", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--anomaly-fraction", type=float, default=0.0)
    p.add_argument("--anomaly-kinds", default="")
    p.add_argument("--contamination", type=float, default=0.0)
    p.add_argument("--s1-correlation", type=float, default=0.7)
    p.add_argument("--template")
    p.add_argument("--contaminant-template")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("mask", help="hide optical acquisitions behind clouds")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--truth-out", required=True)
    p.add_argument("--pct-images", type=float)
    p.add_argument("--acquisitions")
    p.add_argument("--pct-parcels", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_mask)

    p = sub.add_parser("impute", help="fill missing entries")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=("rgmm", "gmm", "knn", "mean"),
                   default="rgmm")
    p.add_argument("--k", type=int)
    p.add_argument("--k-min", type=int, default=1)
    p.add_argument("--k-max", type=int, default=6)
    p.add_argument("--max-iterations", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--scree", type=float, default=1e-5)
    p.add_argument("--alpha", type=float, default=40.0)
    p.add_argument("--th", type=float, default=0.5)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--subsample", type=int, default=256)
    p.add_argument("--knn-k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_impute)

    p = sub.add_parser("detect", help="rank rows by anomaly score")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--scores-out", required=True)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--subsample", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("score", help="score a completed matrix against truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--imputed", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("experiment", help="run an experiment grid from a config")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_experiment)
    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 1
        return 0 if code == 0 else 1
    try:
        args.func(args)
        return 0
    except (CovarianceError, FitError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
