"""Multivariate normal primitives on observed margins.

Everything here works from index sets into a full D-dimensional
component: the log-density of the observed sub-vector, the conditional
distribution of the missing block given the observed one, and helpers
that place conditional results back into full-width arrays.  All density
work stays in log space and goes through triangular factorizations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

_LOG_2PI = float(np.log(2.0 * np.pi))


class CovarianceError(RuntimeError):
    """A covariance block required by a factorization is not positive definite."""

    def __init__(self, message: str, component_index: int | None = None):
        super().__init__(message)
        self.component_index = component_index


@dataclass(frozen=True)
class GaussianComponent:
    """One mixture component: mean vector and full covariance matrix."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=float)
        cov = np.array(self.covariance, dtype=float)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError("mean must be (d,) and covariance (d, d)")
        asym = np.max(np.abs(cov - cov.T)) if cov.size else 0.0
        if asym > 1e-10:
            raise ValueError(f"covariance asymmetry {asym:g} exceeds 1e-10")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def _as_index(idx, dim: int) -> np.ndarray:
    out = np.asarray(idx, dtype=int)
    if out.ndim != 1:
        raise ValueError("index sets must be 1-d")
    if out.size != np.unique(out).size:
        raise ValueError("index sets must not repeat indices")
    if out.size and (out.min() < 0 or out.max() >= dim):
        raise ValueError("index out of range")
    return out


def _chol(block: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(block)
    except np.linalg.LinAlgError:
        raise CovarianceError(f"{what} block is not positive definite") from None


def chol_log_pdf(chol: np.ndarray, diffs: np.ndarray) -> np.ndarray:
    """Log-density rows given a lower Cholesky factor of the covariance.

    ``diffs`` holds centered observations, one per row.  Shared by the
    single-sample entry point and the batched E-step so both produce
    identical floating point results.
    """
    o = chol.shape[0]
    log_det = 2.0 * np.log(np.diagonal(chol)).sum()
    z = solve_triangular(chol, diffs.T, lower=True, check_finite=False)
    quad = np.einsum("on,on->n", z, z)
    return -0.5 * (o * _LOG_2PI + log_det + quad)


def log_pdf_observed(g: GaussianComponent, x_obs: np.ndarray, obs_idx) -> float | np.ndarray:
    """Log-density of the observed margin, log N(x^o | mu^o, Sigma^oo).

    ``x_obs`` may be a single vector of observed coordinates or a stack
    of them (one row per sample, all sharing ``obs_idx``).
    """
    obs = _as_index(obs_idx, g.dim)
    if obs.size == 0:
        raise ValueError("at least one observed coordinate is required")
    x = np.asarray(x_obs, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.shape[1] != obs.size:
        raise ValueError("x_obs width does not match obs_idx")
    chol = _chol(g.covariance[np.ix_(obs, obs)], "observed covariance")
    out = chol_log_pdf(chol, x2 - g.mean[obs])
    return float(out[0]) if single else out


def condition(g: GaussianComponent, x_obs: np.ndarray, obs_idx, mis_idx):
    """Conditional distribution of the missing block given observed values.

    Returns ``(cond_mean, cond_cov)`` where

        cond_mean = mu^m + Sigma^mo (Sigma^oo)^-1 (x^o - mu^o)
        cond_cov  = Sigma^mm - Sigma^mo (Sigma^oo)^-1 Sigma^om

    For a stack of observations sharing the same pattern, ``cond_mean``
    has one row per sample; ``cond_cov`` does not depend on the values.
    """
    obs = _as_index(obs_idx, g.dim)
    mis = _as_index(mis_idx, g.dim)
    if np.intersect1d(obs, mis).size:
        raise ValueError("obs_idx and mis_idx overlap")
    if obs.size + mis.size != g.dim:
        raise ValueError("obs_idx and mis_idx must partition all coordinates")
    x = np.asarray(x_obs, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.shape[1] != obs.size:
        raise ValueError("x_obs width does not match obs_idx")
    if mis.size == 0:
        empty_mean = np.zeros((x2.shape[0], 0))
        empty_cov = np.zeros((0, 0))
        return (empty_mean[0] if single else empty_mean), empty_cov
    if obs.size == 0:
        mean = np.broadcast_to(g.mean[mis], (x2.shape[0], mis.size)).copy()
        cov = g.covariance[np.ix_(mis, mis)].copy()
        return (mean[0] if single else mean), cov
    cov = g.covariance
    chol = _chol(cov[np.ix_(obs, obs)], "observed covariance")
    # gain = (Sigma^oo)^-1 Sigma^om, shape (o, m)
    gain = cho_solve((chol, True), cov[np.ix_(obs, mis)], check_finite=False)
    cond_mean = g.mean[mis] + (x2 - g.mean[obs]) @ gain
    cond_cov = cov[np.ix_(mis, mis)] - cov[np.ix_(mis, obs)] @ gain
    cond_cov = 0.5 * (cond_cov + cond_cov.T)
    return (cond_mean[0] if single else cond_mean), cond_cov


def complete_sample(x_obs: np.ndarray, obs_idx, mis_idx, cond_mean: np.ndarray) -> np.ndarray:
    """Assemble a full vector from observed values and conditional means."""
    obs = np.asarray(obs_idx, dtype=int)
    mis = np.asarray(mis_idx, dtype=int)
    if np.intersect1d(obs, mis).size:
        raise ValueError("obs_idx and mis_idx overlap")
    d = obs.size + mis.size
    out = np.empty(d)
    out[obs] = np.asarray(x_obs, dtype=float)
    out[mis] = np.asarray(cond_mean, dtype=float)
    return out


def pad_cov(cond_cov: np.ndarray, mis_idx, d: int) -> np.ndarray:
    """Embed an m-by-m conditional covariance into a D-by-D zero matrix."""
    mis = _as_index(mis_idx, d)
    cc = np.asarray(cond_cov, dtype=float)
    if cc.shape != (mis.size, mis.size):
        raise ValueError("cond_cov shape does not match mis_idx")
    out = np.zeros((d, d))
    if mis.size:
        out[np.ix_(mis, mis)] = cc
    return out
