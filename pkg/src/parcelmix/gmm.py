"""Gaussian mixture fitting on incomplete matrices.

The E-step evaluates each component on the observed margin of every row
and conditions the missing block on the observed one, so no imputation
happens before or outside the model.  Rows are grouped by missingness
pattern and factorizations are shared within a group.  The M-step
re-estimates parameters from per-sample weights, responsibilities,
completed samples and conditional covariances:

    mu_k    = sum_n w_n g_nk xhat_nk / sum_n w_n g_nk
    Sigma_k = sum_n w_n^2 g_nk [(xhat_nk - mu_k)(xhat_nk - mu_k)^T + Chat_nk]
              / sum_n w_n^2 g_nk
    pi_k    = N_k / N with N_k = sum_n g_nk

With all w_n equal to 1 this reduces bitwise to the unweighted update.
Per-sample weights come from an isolation forest refit every iteration
on responsibility-averaged completions, squashed through a sigmoid.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import expit, logsumexp

from . import isolation_forest
from .data_model import FeatureMatrix
from .gaussian import CovarianceError, GaussianComponent, chol_log_pdf, pad_cov

_LOG_2PI = float(np.log(2.0 * np.pi))
_EIGENVALUE_FLOOR = 1e-8


class FitError(RuntimeError):
    """Fitting could not produce a usable model."""


class ComponentCollapseWarning(UserWarning):
    """A component fell below the occupancy floor and was dropped."""


@dataclass(frozen=True)
class EmConfig:
    """Settings of one EM fit."""

    k: int | None = None
    max_iterations: int = 100
    loglik_tolerance: float = 1e-3
    scree_threshold: float = 1e-5
    seed: int = 0
    regularize: bool = True
    min_occupancy: float | None = None
    on_collapse: str = "drop"

    def __post_init__(self) -> None:
        if self.k is not None and self.k < 1:
            raise ValueError("k must be at least 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.loglik_tolerance <= 0:
            raise ValueError("loglik_tolerance must be positive")
        if self.scree_threshold <= 0:
            raise ValueError("scree_threshold must be positive")
        if self.min_occupancy is not None and self.min_occupancy <= 0:
            raise ValueError("min_occupancy must be positive")
        if self.on_collapse not in ("drop", "abort"):
            raise ValueError("on_collapse must be 'drop' or 'abort'")


@dataclass(frozen=True)
class RobustConfig:
    """Sigmoid down-weighting of samples by isolation forest score.

    w_n = 1 / (1 + exp(alpha * (score_n - th))), so a sample scoring at
    the threshold gets weight exactly 0.5 and clear outliers approach 0.
    """

    enabled: bool = True
    alpha: float = 40.0
    th: float = 0.5
    forest: isolation_forest.IfConfig = field(default_factory=isolation_forest.IfConfig)

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.0 < self.th < 1.0:
            raise ValueError("th must lie strictly between 0 and 1")


@dataclass(frozen=True)
class GmmParams:
    """Mixture weights plus one Gaussian component per cluster.

    ``retained_dims`` records, per component, how many leading
    eigenvalues the last covariance regularization kept; None means the
    covariances are unconstrained.
    """

    weights: np.ndarray
    components: tuple[GaussianComponent, ...]
    retained_dims: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=float)
        comps = tuple(self.components)
        if w.ndim != 1 or w.size != len(comps):
            raise ValueError("one weight per component required")
        if w.size == 0:
            raise ValueError("at least one component required")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-8:
            raise ValueError("weights must be positive and sum to 1")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise ValueError("components must share one dimension")
        if self.retained_dims is not None and len(self.retained_dims) != len(comps):
            raise ValueError("retained_dims length must match components")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim


@dataclass(frozen=True)
class _Pattern:
    rows: np.ndarray
    obs: np.ndarray
    mis: np.ndarray


def _group_patterns(mask: np.ndarray) -> tuple[tuple[_Pattern, ...], np.ndarray]:
    seen: dict[bytes, int] = {}
    groups: list[list[int]] = []
    row_pattern = np.empty(mask.shape[0], dtype=np.int64)
    for i in range(mask.shape[0]):
        key = mask[i].tobytes()
        idx = seen.get(key)
        if idx is None:
            idx = len(groups)
            seen[key] = idx
            groups.append([])
        groups[idx].append(i)
        row_pattern[i] = idx
    patterns = []
    for rows in groups:
        row_mask = mask[rows[0]]
        patterns.append(_Pattern(rows=np.array(rows, dtype=np.int64),
                                 obs=np.flatnonzero(row_mask),
                                 mis=np.flatnonzero(~row_mask)))
    return tuple(patterns), row_pattern


@dataclass
class EStepResult:
    """Responsibilities, completions and conditional moments of one E-step.

    ``completed[n, k]`` is row n with its missing block replaced by the
    conditional mean under component k.  Conditional covariances are kept
    per (pattern, component) since they only depend on which coordinates
    are missing; ``padded_cov`` expands one to full width on demand.
    """

    responsibilities: np.ndarray
    completed: np.ndarray
    log_likelihood: float
    patterns: tuple[_Pattern, ...]
    cond_covs: tuple[tuple[np.ndarray, ...], ...]
    row_pattern: np.ndarray

    def padded_cov(self, n: int, k: int) -> np.ndarray:
        p = int(self.row_pattern[n])
        pattern = self.patterns[p]
        return pad_cov(self.cond_covs[p][k], pattern.mis, self.completed.shape[2])


def e_step(m: FeatureMatrix, params: GmmParams) -> EStepResult:
    """Evaluate responsibilities and conditional completions for every row."""
    x = m.values
    mask = m.observed_mask
    n, d = x.shape
    if params.dim != d:
        raise ValueError("parameter dimension does not match matrix width")
    k = params.k
    patterns, row_pattern = _group_patterns(mask)
    base = np.where(mask, x, 0.0)
    completed = np.empty((n, k, d))
    completed[:] = base[:, None, :]
    log_pdf = np.empty((n, k))
    cond_covs: list[list[np.ndarray]] = [[] for _ in patterns]
    empty_cov = np.zeros((0, 0))
    any_missing = any(p.mis.size for p in patterns)

    for ki, comp in enumerate(params.components):
        try:
            chol_full = np.linalg.cholesky(comp.covariance)
        except np.linalg.LinAlgError:
            raise CovarianceError("component covariance is not positive definite",
                                  component_index=ki) from None
        log_det_full = 2.0 * np.log(np.diagonal(chol_full)).sum()
        if any_missing:
            precision = cho_solve((chol_full, True), np.eye(d), check_finite=False)
            precision = 0.5 * (precision + precision.T)
            diffs_zeroed = np.where(mask, x - comp.mean, 0.0)
            u = diffs_zeroed @ precision
            quad_full = np.einsum("nd,nd->n", diffs_zeroed, u)
        for pi, pattern in enumerate(patterns):
            rows, obs, mis = pattern.rows, pattern.obs, pattern.mis
            if mis.size == 0:
                log_pdf[rows, ki] = chol_log_pdf(chol_full, x[rows] - comp.mean)
                cond_covs[pi].append(empty_cov)
                continue
            sub = precision[np.ix_(mis, mis)]
            try:
                chol_mm = np.linalg.cholesky(sub)
            except np.linalg.LinAlgError:
                raise CovarianceError(
                    "observed covariance block is not positive definite",
                    component_index=ki) from None
            log_det_mm = 2.0 * np.log(np.diagonal(chol_mm)).sum()
            r = u[np.ix_(rows, mis)]
            z = cho_solve((chol_mm, True), r.T, check_finite=False)
            corr = np.einsum("mn,mn->n", r.T, z)
            # det Sigma^oo = det Sigma * det Lambda^mm (Schur complement)
            log_det_obs = log_det_full + log_det_mm
            quad_obs = quad_full[rows] - corr
            log_pdf[rows, ki] = -0.5 * (obs.size * _LOG_2PI + log_det_obs + quad_obs)
            cond_mean = comp.mean[mis] - z.T
            completed[rows[:, None], ki, mis[None, :]] = cond_mean
            inv = cho_solve((chol_mm, True), np.eye(mis.size), check_finite=False)
            cond_covs[pi].append(0.5 * (inv + inv.T))

    log_weighted = log_pdf + np.log(params.weights)[None, :]
    log_norm = logsumexp(log_weighted, axis=1)
    responsibilities = np.exp(log_weighted - log_norm[:, None])
    return EStepResult(responsibilities=responsibilities,
                       completed=completed,
                       log_likelihood=float(log_norm.sum()),
                       patterns=patterns,
                       cond_covs=tuple(tuple(c) for c in cond_covs),
                       row_pattern=row_pattern)


def _regularize_with_dim(cov: np.ndarray, scree_threshold: float) -> tuple[np.ndarray, int]:
    sym = 0.5 * (cov + cov.T)
    eigenvalues, vectors = np.linalg.eigh(sym)
    lam = eigenvalues[::-1]
    vec = vectors[:, ::-1]
    d = lam.size
    if d == 1:
        val = max(lam[0], _EIGENVALUE_FLOOR)
        return np.array([[val]]), 1
    top = lam[0]
    if top <= 0:
        return np.eye(d) * _EIGENVALUE_FLOOR, 1
    gaps = (lam[:-1] - lam[1:]) / top
    significant = np.flatnonzero(gaps >= scree_threshold)
    retained = int(significant[-1]) + 1 if significant.size else 1
    floor_value = lam[retained:].mean()
    new_lam = np.concatenate([lam[:retained], np.full(d - retained, floor_value)])
    new_lam = np.maximum(new_lam, _EIGENVALUE_FLOOR)
    out = (vec * new_lam[None, :]) @ vec.T
    return 0.5 * (out + out.T), retained


def regularize_covariance(cov: np.ndarray, scree_threshold: float = 1e-5) -> np.ndarray:
    """Flatten the trailing eigenvalue tail of a covariance matrix.

    A scree test keeps the leading eigenvalues up to the last normalized
    successive gap (lam_j - lam_j+1) / lam_1 at or above the threshold
    (at least one is kept).  The tail is replaced by its arithmetic mean
    and everything is floored at 1e-8, so the result is always positive
    definite while the dominant directions are untouched.
    """
    if scree_threshold <= 0:
        raise ValueError("scree_threshold must be positive")
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance must be square")
    out, _ = _regularize_with_dim(cov, scree_threshold)
    return out


def m_step(m: FeatureMatrix, estep: EStepResult, weights: np.ndarray,
           config: EmConfig | None = None) -> GmmParams:
    """Re-estimate mixture parameters from one E-step and sample weights.

    Components whose responsibility mass falls below the occupancy floor
    are dropped with a warning (or abort the fit, per config), and the
    mixing proportions are renormalized.
    """
    cfg = config or EmConfig()
    n, k = estep.responsibilities.shape
    d = estep.completed.shape[2]
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError("one weight per row required")
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("weights must lie in [0, 1]")
    gamma = estep.responsibilities
    wg = w[:, None] * gamma
    w2g = (w * w)[:, None] * gamma
    occupancy = gamma.sum(axis=0)
    floor = cfg.min_occupancy if cfg.min_occupancy is not None else max(2.0, 0.005 * n)
    usable = (occupancy >= floor) & (wg.sum(axis=0) > 1e-12) & (w2g.sum(axis=0) > 1e-12)
    if not usable.all():
        dropped = np.flatnonzero(~usable)
        if cfg.on_collapse == "abort":
            raise FitError(f"components {dropped.tolist()} collapsed "
                           f"below occupancy {floor:g}")
        if not usable.any():
            raise FitError("all components collapsed")
        warnings.warn(f"dropping degenerate components {dropped.tolist()}",
                      ComponentCollapseWarning, stacklevel=2)

    components = []
    dims = []
    for ki in np.flatnonzero(usable):
        mu = wg[:, ki] @ estep.completed[:, ki, :] / wg[:, ki].sum()
        centered = estep.completed[:, ki, :] - mu
        scatter = (centered * w2g[:, ki, None]).T @ centered
        for pi, pattern in enumerate(estep.patterns):
            if pattern.mis.size == 0:
                continue
            coeff = w2g[pattern.rows, ki].sum()
            scatter[np.ix_(pattern.mis, pattern.mis)] += coeff * estep.cond_covs[pi][ki]
        cov = scatter / w2g[:, ki].sum()
        if cfg.regularize:
            cov, dim_i = _regularize_with_dim(cov, cfg.scree_threshold)
            dims.append(dim_i)
        else:
            cov = 0.5 * (cov + cov.T)
        components.append(GaussianComponent(mean=mu, covariance=cov))
    pi_k = occupancy[usable] / n
    pi_k = pi_k / pi_k.sum()
    return GmmParams(weights=pi_k, components=tuple(components),
                     retained_dims=tuple(dims) if cfg.regularize else None)


def _kmeans_seed(x: np.ndarray, sq: np.ndarray, k: int,
                 rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread starting centroids by squared distance."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.maximum(sq - 2.0 * (x @ centers[0]) + (centers[0] * centers[0]).sum(), 0.0)
    for ki in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[ki] = x[rng.integers(n)]
            continue
        centers[ki] = x[rng.choice(n, p=d2 / total)]
        cand = np.maximum(sq - 2.0 * (x @ centers[ki]) + (centers[ki] * centers[ki]).sum(), 0.0)
        np.minimum(d2, cand, out=d2)
    return centers


def init_kmeans(m: FeatureMatrix, k: int, seed: int = 0, n_init: int = 10) -> GmmParams:
    """Seed the mixture from Lloyd's algorithm on a mean-filled copy.

    Missing entries are provisionally filled with column means.  Lloyd's
    algorithm runs ``n_init`` times from k-means++ starts and the
    partition with the lowest within-cluster sum of squares wins; runs
    that end with an empty cluster are discarded.  Components get the
    winning centroids as means, a shared pooled diagonal covariance, and
    proportions floored at 1 / (10 k).
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if n_init < 1:
        raise ValueError("n_init must be at least 1")
    n = m.n_rows
    if k > n:
        raise ValueError(f"k={k} exceeds the number of rows {n}")
    rng = np.random.Generator(np.random.PCG64(seed))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        col_means = np.nanmean(np.where(m.observed_mask, m.values, np.nan), axis=0)
    if not np.isfinite(col_means).all():
        raise FitError("a column has no observed values")
    x = np.where(m.observed_mask, m.values, col_means)
    sq = (x * x).sum(axis=1)

    assign = None
    centers = None
    best_inertia = np.inf
    attempts = max(n_init, 4)
    for _ in range(attempts):
        run_centers = _kmeans_seed(x, sq, k, rng)
        ok = True
        run_assign = None
        for _ in range(100):
            dist2 = sq[:, None] - 2.0 * (x @ run_centers.T) \
                + (run_centers * run_centers).sum(axis=1)[None, :]
            new_assign = dist2.argmin(axis=1)
            counts = np.bincount(new_assign, minlength=k)
            if (counts == 0).any():
                ok = False
                break
            run_centers = np.stack([x[new_assign == ki].mean(axis=0) for ki in range(k)])
            if run_assign is not None and np.array_equal(new_assign, run_assign):
                run_assign = new_assign
                break
            run_assign = new_assign
        if not ok:
            continue
        dist2 = sq[:, None] - 2.0 * (x @ run_centers.T) \
            + (run_centers * run_centers).sum(axis=1)[None, :]
        inertia = float(np.maximum(dist2.min(axis=1), 0.0).sum())
        if inertia < best_inertia:
            best_inertia = inertia
            assign = run_assign
            centers = run_centers
    if assign is None:
        raise FitError(f"k-means produced an empty cluster in {attempts} attempts")

    pooled = np.zeros(m.n_columns)
    for ki in range(k):
        member = x[assign == ki] - centers[ki]
        pooled += (member * member).sum(axis=0)
    pooled = np.maximum(pooled / n, _EIGENVALUE_FLOOR)
    counts = np.bincount(assign, minlength=k)
    pi_k = np.maximum(counts / n, 1.0 / (10.0 * k))
    pi_k = pi_k / pi_k.sum()
    cov = np.diag(pooled)
    components = tuple(GaussianComponent(mean=centers[ki], covariance=cov)
                       for ki in range(k))
    return GmmParams(weights=pi_k, components=components)


def weight_from_score(scores, cfg: RobustConfig) -> np.ndarray:
    """Map anomaly scores to sample weights, w = sigmoid(-alpha (score - th)).

    A score at the threshold gives exactly 0.5 and the weight decreases
    monotonically as the score grows.
    """
    return expit(-cfg.alpha * (np.asarray(scores, dtype=float) - cfg.th))


def compute_weights(completed_rows: np.ndarray, cfg: RobustConfig,
                    forest: isolation_forest.IsolationForestModel) -> np.ndarray:
    """Per-sample weights from forest scores of the completed rows."""
    rows = np.atleast_2d(np.asarray(completed_rows, dtype=float))
    if not cfg.enabled:
        return np.ones(rows.shape[0])
    scores = isolation_forest.score(forest, rows)
    return weight_from_score(np.atleast_1d(scores), cfg)


@dataclass
class FitReport:
    """Everything a fit produced, enough to impute and to diagnose."""

    params: GmmParams
    responsibilities: np.ndarray
    weights: np.ndarray
    log_likelihood_trace: tuple[float, ...]
    converged: bool
    robust: bool
    seed: int
    bic: float = float("nan")
    final_estep: EStepResult | None = None

    @property
    def n_iterations(self) -> int:
        return len(self.log_likelihood_trace)


def _forest_seed(base_seed: int, iteration: int) -> int:
    ss = np.random.SeedSequence(entropy=abs(int(base_seed)), spawn_key=(97, iteration))
    return int(ss.generate_state(1)[0])


def fit(m: FeatureMatrix, em: EmConfig, robust: RobustConfig | None = None) -> FitReport:
    """Run EM to convergence of the observed log-likelihood.

    Iterations stop when two consecutive log-likelihood values differ by
    less than ``em.loglik_tolerance`` or the iteration cap is reached
    (flagged, not fatal).  When ``robust`` is enabled, an isolation
    forest is refit every iteration on responsibility-averaged
    completions and its scores set the per-sample weights of the M-step.
    """
    if em.k is None:
        raise ValueError("em.k must be set; use select_k to pick one")
    if not 1 <= em.k < m.n_rows:
        raise ValueError("k must satisfy 1 <= k < number of rows")
    params = init_kmeans(m, em.k, seed=em.seed)
    robust_on = robust is not None and robust.enabled
    weights = np.ones(m.n_rows)
    trace: list[float] = []
    converged = False
    previous = None
    estep = None
    for iteration in range(em.max_iterations):
        estep = e_step(m, params)
        trace.append(estep.log_likelihood)
        if previous is not None and abs(estep.log_likelihood - previous) < em.loglik_tolerance:
            converged = True
            break
        previous = estep.log_likelihood
        if iteration == em.max_iterations - 1:
            break
        if robust_on:
            averaged = np.einsum("nk,nkd->nd", estep.responsibilities, estep.completed)
            forest_cfg = replace(robust.forest,
                                 seed=_forest_seed(robust.forest.seed + em.seed, iteration))
            forest = isolation_forest.fit(averaged, forest_cfg)
            weights = compute_weights(averaged, robust, forest)
        params = m_step(m, estep, weights, em)

    report = FitReport(params=params,
                       responsibilities=estep.responsibilities,
                       weights=weights,
                       log_likelihood_trace=tuple(trace),
                       converged=converged,
                       robust=robust_on,
                       seed=em.seed,
                       final_estep=estep)
    report.bic = bic(report, m)
    return report


def impute(m: FeatureMatrix, report: FitReport):
    """Fill missing entries with responsibility-weighted conditional means.

    Observed entries pass through untouched.  Returns an ImputationResult
    whose diagnostics carry the fit report.
    """
    from .imputers import ImputationResult

    estep = report.final_estep
    if estep is None or estep.responsibilities.shape[0] != m.n_rows:
        raise ValueError("report does not belong to this matrix")
    xhat = np.einsum("nk,nkd->nd", estep.responsibilities, estep.completed)
    values = np.where(m.observed_mask, m.values, xhat)
    completed = m.with_values(values, np.ones_like(m.observed_mask))
    return ImputationResult(completed=completed,
                            imputed_mask=~m.observed_mask,
                            method="rgmm" if report.robust else "gmm",
                            diagnostics={"fit_report": report})


def bic(report: FitReport, m: FeatureMatrix) -> float:
    """Bayesian information criterion, -2 loglik + p ln N.

    The parameter count follows the flattened-tail covariance model:
    mixing proportions, means, per-component orientation and retained
    eigenvalues, plus one shared tail level.  Unconstrained covariances
    count the full d (d + 1) / 2 each.
    """
    n = m.n_rows
    d = m.n_columns
    k = report.params.k
    p = (k - 1) + k * d
    dims = report.params.retained_dims
    if dims is None:
        p += k * d * (d + 1) / 2
    else:
        p += sum(di * (d - (di + 1) / 2) + di for di in dims) + 1
    log_lik = report.log_likelihood_trace[-1]
    return float(-2.0 * log_lik + p * np.log(n))


def select_k(m: FeatureMatrix, k_range, em: EmConfig,
             robust: RobustConfig | None = None) -> tuple[int, FitReport]:
    """Fit every candidate order and keep the one with the lowest BIC."""
    candidates = [int(k) for k in k_range]
    if not candidates:
        raise ValueError("k_range must not be empty")
    best: tuple[float, int, FitReport] | None = None
    failures = []
    for k in candidates:
        try:
            report = fit(m, replace(em, k=k), robust)
        except (FitError, CovarianceError) as exc:
            failures.append((k, str(exc)))
            continue
        if best is None or report.bic < best[0]:
            best = (report.bic, k, report)
    if best is None:
        raise FitError(f"every candidate order failed: {failures}")
    return best[1], best[2]
