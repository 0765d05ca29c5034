"""Bootstrap standard errors and confidence intervals.

Variance estimation is by the ordinary non-parametric bootstrap, re-running
the full estimation pipeline (weight estimation and/or outcome modeling) in
every resample. Two stratification modes are supported:

* ``by_source``: both groups are resampled with replacement within source,
  preserving n1 and n0 exactly (the IPD-IPD setting).
* ``sat_only``: only SAT rows are resampled; the control side is treated as
  fixed (the aggregate-data setting). The SE of the contrast then combines
  the bootstrap SE of the transported log-odds with the published control
  SE via the square-root-of-sum-of-squares decomposition.

Sandwich-type analytic variances are intentionally not provided: common
implementations treat the estimated weights as fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .data_model import AggregateTarget, Dataset
from .errors import DataError, DritcError, UnstableBootstrapError
from .estimators import EstimatorSpec, _estimate_one, _Fitted, _fitted_for
from .rng import DOMAIN_BOOTSTRAP, stream

__all__ = [
    "BootstrapConfig",
    "IntervalResult",
    "bootstrap",
    "se_decomposition",
    "delta_se_logodds",
    "z_quantile",
    "resample_indices",
]

_MAX_FAILURE_FRACTION = 0.2


@dataclass(frozen=True)
class BootstrapConfig:
    b: int
    seed: int
    strata: str = "by_source"
    ci: str = "wald"
    level: float = 0.95

    def __post_init__(self):
        if self.b < 2:
            raise DataError("bootstrap needs at least 2 resamples")
        if not (0.0 < self.level < 1.0):
            raise DataError("confidence level must be in (0, 1)")
        if self.strata not in ("by_source", "sat_only"):
            raise DataError(f"unknown strata mode {self.strata!r}")
        if self.ci not in ("wald", "percentile"):
            raise DataError(f"unknown ci type {self.ci!r}")


@dataclass(frozen=True)
class IntervalResult:
    point: float
    se: float
    lower: float
    upper: float
    n_failed_resamples: int
    se_mu1: float | None = None  # bootstrap SE of the transported log-odds (sat_only)
    caveats: tuple[str, ...] = ()


def z_quantile(level: float) -> float:
    """Two-sided normal critical value for the given confidence level."""
    if not (0.0 < level < 1.0):
        raise DataError("level must be in (0, 1)")
    return float(ndtri(0.5 + level / 2.0))


def delta_se_logodds(p: float, n: int) -> float:
    """Delta-method SE of the log-odds of a binomial proportion."""
    if not (0.0 < p < 1.0):
        raise DataError(f"degenerate proportion {p}")
    if n < 1:
        raise DataError("n must be at least 1")
    return math.sqrt(1.0 / (n * p * (1.0 - p)))


def se_decomposition(se_mu1: float, se_mu0: float) -> float:
    """Combine independent component SEs: sqrt(se1^2 + se0^2)."""
    if se_mu1 < 0 or se_mu0 < 0:
        raise DataError("standard errors must be nonnegative")
    return math.hypot(se_mu1, se_mu0)


def resample_indices(rng: np.random.Generator, n1: int, n0: int, strata: str):
    """Within-stratum resample index vectors (control ones empty in sat_only)."""
    sat_idx = rng.integers(0, n1, n1)
    if strata == "by_source":
        ctl_idx = rng.integers(0, n0, n0)
    else:
        ctl_idx = np.arange(n0)
    return sat_idx, ctl_idx


def bootstrap(
    dataset: Dataset,
    spec: EstimatorSpec,
    config: BootstrapConfig,
    target: AggregateTarget | None = None,
) -> IntervalResult:
    """Bootstrap SE and CI for one estimator on one dataset.

    The estimator must run on the original data (errors propagate). Failed
    resamples are skipped and counted, up to a 20% ceiling. Resample j draws
    its indices from the stream keyed by (seed, j), so results are identical
    regardless of execution order.
    """
    sat_only = config.strata == "sat_only"
    if sat_only and spec.estimand != "atc":
        raise DataError("sat_only resampling is defined for the ATC only")
    fitted0 = _fitted_for(dataset, spec, target)
    original = _estimate_one(fitted0, spec)
    point = original.point

    if sat_only:
        if dataset.ad_mode:
            se_g_mu0 = target.se_g_mu0
        else:
            mu0 = float(dataset.control_outcomes.mean())
            se_g_mu0 = delta_se_logodds(mu0, dataset.n0)
        g_mu0 = math.log(original.mu_control / (1.0 - original.mu_control))

    stats = []
    n_failed = 0
    for j in range(config.b):
        rng = stream(config.seed, DOMAIN_BOOTSTRAP, j)
        sat_idx, ctl_idx = resample_indices(rng, dataset.n1, dataset.n0, config.strata)
        assert len(sat_idx) == dataset.n1 and len(ctl_idx) == dataset.n0
        ds_j = dataset.resample(sat_idx, ctl_idx)
        try:
            fitted_j = _Fitted(
                ds_j,
                fitted0.balance,
                target,
                spec.estimand,
                outcome_balance=spec.outcome_balance,
                warm=fitted0,
            )
            res = _estimate_one(fitted_j, spec)
        except DritcError:
            n_failed += 1
            continue
        if sat_only:
            # only the transported component varies; record its log-odds
            mu1 = res.mu_treated
            stats.append(math.log(mu1 / (1.0 - mu1)))
        else:
            stats.append(res.point)

    if n_failed > _MAX_FAILURE_FRACTION * config.b:
        raise UnstableBootstrapError(
            f"unstable bootstrap: {n_failed} of {config.b} resamples failed"
        )
    stats_arr = np.asarray(stats)
    se_stat = float(stats_arr.std(ddof=1)) if len(stats_arr) > 1 else 0.0

    caveats: tuple[str, ...] = ()
    se_mu1 = None
    if sat_only:
        se_mu1 = se_stat
        se = se_decomposition(se_mu1, se_g_mu0)
        caveats = ("aggregate-mode interval is conditional on fixed published moments",)
        resampled_points = stats_arr - g_mu0  # recentered to the contrast scale
    else:
        se = se_stat
        resampled_points = stats_arr

    if config.ci == "wald":
        z = z_quantile(config.level)
        lower, upper = point - z * se, point + z * se
    else:
        alpha = 1.0 - config.level
        lower, upper = (
            float(np.quantile(resampled_points, alpha / 2.0)),
            float(np.quantile(resampled_points, 1.0 - alpha / 2.0)),
        )
    return IntervalResult(
        point=point,
        se=se,
        lower=lower,
        upper=upper,
        n_failed_resamples=n_failed,
        se_mu1=se_mu1,
        caveats=caveats,
    )
