"""Simulated covariate profiles for the aggregate-data setting.

When only published summaries are available for the external control, the
non-balancing estimators need subject-level covariates to standardize over.
These are simulated from a Gaussian copula: latent multivariate normals with
the published pairwise correlation are pushed through the standard normal
CDF and then through each covariate's marginal quantile function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .data_model import (
    AggregateTarget,
    BernoulliMarginal,
    Dataset,
    Marginal,
    NormalMarginal,
    _validate_correlation,
)
from .errors import DataError
from .rng import DOMAIN_COPULA, stream

__all__ = ["CopulaSpec", "simulate_profiles", "make_ad_dataset"]


@dataclass(frozen=True)
class CopulaSpec:
    """Gaussian-copula specification for M simulated covariate profiles."""

    marginals: tuple[Marginal, ...]
    correlation: np.ndarray
    m: int
    seed: int

    def __post_init__(self):
        if self.m < 1:
            raise DataError("M must be at least 1")
        object.__setattr__(
            self,
            "correlation",
            _validate_correlation(self.correlation, len(self.marginals)),
        )

    @classmethod
    def from_target(cls, target: AggregateTarget, m: int, seed: int) -> "CopulaSpec":
        return cls(target.marginals, target.correlation, m, seed)


def _psd_repair(corr: np.ndarray) -> np.ndarray:
    """Clip tiny negative eigenvalues and restore the unit diagonal."""
    eigval, eigvec = np.linalg.eigh(corr)
    if eigval.min() < -1e-8:
        raise DataError(
            f"correlation matrix is not positive semi-definite "
            f"(min eigenvalue {eigval.min():.3e})"
        )
    if eigval.min() >= 0:
        return corr
    repaired = (eigvec * np.clip(eigval, 0.0, None)) @ eigvec.T
    d = np.sqrt(np.diag(repaired))
    repaired = repaired / np.outer(d, d)
    np.fill_diagonal(repaired, 1.0)
    return repaired


def _factor(corr: np.ndarray) -> np.ndarray:
    """A matrix L with L L' = corr, by Cholesky or eigenfactor if singular."""
    try:
        return np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        eigval, eigvec = np.linalg.eigh(corr)
        return eigvec * np.sqrt(np.clip(eigval, 0.0, None))


def simulate_profiles(spec: CopulaSpec) -> np.ndarray:
    """Draw an (M, p) covariate matrix; bit-identical for identical specs."""
    corr = _psd_repair(spec.correlation)
    L = _factor(corr)
    rng = stream(spec.seed, DOMAIN_COPULA, 0)
    z = rng.standard_normal((spec.m, len(spec.marginals))) @ L.T
    u = ndtr(z)
    out = np.empty_like(z)
    for j, marg in enumerate(spec.marginals):
        if isinstance(marg, NormalMarginal):
            out[:, j] = marg.mean + marg.sd * ndtri(u[:, j])
        elif isinstance(marg, BernoulliMarginal):
            # larger latent normals map to 1, preserving correlation signs
            out[:, j] = (u[:, j] > 1.0 - marg.prob).astype(float)
        else:  # pragma: no cover
            raise DataError(f"unsupported marginal {marg!r}")
    return out


def make_ad_dataset(sat: Dataset, profiles: np.ndarray, target: AggregateTarget) -> Dataset:
    """Stack SAT rows with simulated pseudo-control rows (outcomes absent)."""
    profiles = np.asarray(profiles, dtype=float)
    if profiles.ndim != 2 or profiles.shape[0] < 1:
        raise DataError("profiles must be a nonempty matrix")
    if profiles.shape[1] != sat.p:
        raise DataError(
            f"profiles have {profiles.shape[1]} columns, SAT data has {sat.p}"
        )
    if target.p != sat.p:
        raise DataError("aggregate target dimension does not match SAT covariates")
    m = profiles.shape[0]
    sat_cov = sat.sat_covariates
    n1 = sat_cov.shape[0]
    if n1 < 1:
        raise DataError("SAT side is empty")
    cov = np.vstack([sat_cov, profiles])
    source = np.concatenate([np.ones(n1, dtype=np.int8), np.zeros(m, dtype=np.int8)])
    outcome = np.concatenate([sat.sat_outcomes, np.full(m, np.nan)])
    return Dataset(cov, source, outcome, ad_mode=True)
