"""Robust mixture imputation of parcel-level satellite time series.

The package turns incomplete parcel feature matrices (zonal statistics
of optical and radar indicators over a season) into complete ones with
a Gaussian mixture fitted by EM under missing data, optionally
down-weighting anomalous parcels via isolation forest scores, and ships
the baselines, metrics and Monte Carlo experiment protocol used to
evaluate it.
"""

from .data_model import (ColumnCounts, ColumnDescriptor, DataFormatError,
                         FeatureMatrix, RaggedGridError, ScalingTransform,
                         apply_scaling, column_counts, dumps_matrix,
                         fit_scaling, invert_scaling, load_matrix,
                         loads_matrix, save_matrix)
from .experiments import (ExperimentSpec, RunSeeds, RunSummary, run_experiment,
                          run_seeds)
from .gaussian import CovarianceError, GaussianComponent, condition, log_pdf_observed
from .gmm import (ComponentCollapseWarning, EmConfig, FitError, FitReport,
                  GmmParams, RobustConfig, bic, compute_weights, e_step, fit,
                  init_kmeans, m_step, regularize_covariance, select_k,
                  weight_from_score)
from .imputers import ImputationResult, impute_gmm, impute_knn, impute_mean
from .isolation_forest import IfConfig, IsolationForestModel, average_path_length
from .masking import (MaskedDataset, MaskingScenario, apply_scenario,
                      day_by_day_scenarios, restore, round_half_up)
from .metrics import (DEFAULT_RATIOS, DetectionCurve, ReconstructionScores,
                      Scores, precision_curve, reconstruction_scores)
from .synthetic import (ANOMALY_KINDS, LabeledDataset, PhenologyTemplate,
                        SyntheticConfig, default_contaminant_template,
                        default_rapeseed_template, generate,
                        inject_contamination)

__version__ = "0.1.0"

__all__ = [
    "ANOMALY_KINDS", "ColumnCounts", "ColumnDescriptor",
    "ComponentCollapseWarning", "CovarianceError", "DEFAULT_RATIOS",
    "DataFormatError", "DetectionCurve", "EmConfig", "ExperimentSpec",
    "FeatureMatrix", "FitError", "FitReport", "GaussianComponent",
    "GmmParams", "IfConfig", "ImputationResult", "IsolationForestModel",
    "LabeledDataset", "MaskedDataset", "MaskingScenario",
    "PhenologyTemplate", "RaggedGridError", "ReconstructionScores",
    "RobustConfig", "RunSeeds", "RunSummary", "ScalingTransform", "Scores",
    "SyntheticConfig", "apply_scaling", "apply_scenario",
    "average_path_length", "bic", "column_counts", "compute_weights",
    "condition", "day_by_day_scenarios", "default_contaminant_template",
    "default_rapeseed_template", "dumps_matrix", "e_step", "fit",
    "fit_scaling", "generate", "impute_gmm", "impute_knn", "impute_mean",
    "init_kmeans", "inject_contamination", "invert_scaling", "load_matrix",
    "loads_matrix", "log_pdf_observed", "m_step", "precision_curve",
    "reconstruction_scores", "regularize_covariance", "restore",
    "round_half_up", "run_experiment", "run_seeds", "save_matrix",
    "select_k", "weight_from_score",
]
