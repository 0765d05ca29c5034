"""Weight estimation: inverse-odds modeling weights and entropy balancing.

Two weighting families are provided. The "modeling" route fits a logistic
data-source model and converts propensity predictions into inverse-odds
weights. The "balancing" route solves the strictly convex entropy-balancing
dual so that weighted SAT balance-function means exactly reproduce a target
moment vector; this is the weight construction used by matching-adjusted
indirect comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .data_model import BalanceSpec, Dataset, balance_matrix, target_from_ipd
from .errors import DataError, DritcError, InfeasibleBalanceError, NonOverlapError
from .glm import Link, fit_bernoulli, predict_mean

__all__ = [
    "WeightSet",
    "BalanceReport",
    "FeasibilityResult",
    "iow_weights",
    "entropy_balance",
    "effective_sample_size",
    "balance_report",
    "feasibility_check",
]

_EB_TOL = 1e-11
_EB_MAX_ITER = 200
_EB_DIVERGENCE_NORM = 1e4


def effective_sample_size(weights) -> float:
    """Kish effective sample size (sum w)^2 / sum w^2.

    Invariant to rescaling all weights by a positive constant.
    """
    w = np.asarray(weights, dtype=float)
    ssq = float(np.sum(w * w))
    if ssq <= 0.0:
        raise DataError("all-zero weights")
    return float(np.sum(w)) ** 2 / ssq


@dataclass(frozen=True)
class WeightSet:
    """Estimated weights over the reweighted rows, with provenance.

    ``weights`` cover the source=1 rows when targeting the ATC and the
    source=0 rows when targeting the ATT. ``dual`` holds the entropy-balance
    dual parameters (kind="maic" only).
    """

    kind: str  # iow | iow_normalized | maic
    weights: np.ndarray
    dual: np.ndarray | None
    ess: float
    sum: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or not np.isfinite(w).all() or (w < 0).any():
            raise DataError("weights must be a finite nonnegative vector")
        object.__setattr__(self, "weights", w)
        if self.kind not in ("iow", "iow_normalized", "maic"):
            raise DataError(f"unknown weight kind {self.kind!r}")
        if self.kind in ("iow_normalized", "maic") and abs(self.sum - 1.0) >= 1e-10:
            raise DataError(f"{self.kind} weights must sum to one, got {self.sum}")

    @classmethod
    def build(cls, kind: str, weights: np.ndarray, dual=None) -> "WeightSet":
        w = np.asarray(weights, dtype=float)
        return cls(
            kind=kind,
            weights=w,
            dual=None if dual is None else np.asarray(dual, dtype=float),
            ess=effective_sample_size(w),
            sum=float(w.sum()),
        )

    def normalized(self) -> "WeightSet":
        if self.kind != "iow":
            return self
        return WeightSet.build("iow_normalized", self.weights / self.sum)


@dataclass(frozen=True)
class BalanceTermReport:
    label: str
    target: float
    unweighted: float
    weighted: float
    gap: float


@dataclass(frozen=True)
class BalanceReport:
    terms: tuple[BalanceTermReport, ...]
    max_gap: float


@dataclass(frozen=True)
class FeasibilityResult:
    feasible: bool
    witness: np.ndarray | None
    max_gap: float | None
    message: str


def iow_weights(
    dataset: Dataset,
    spec: BalanceSpec,
    normalize: bool = False,
    estimand: str = "atc",
    truncate_quantile: float | None = None,
) -> WeightSet:
    """Inverse-odds weights from a logistic data-source model.

    Fits source ~ balance functions on the stacked data. For the ATC, SAT
    rows receive w = (1 - e) / e; for the ATT, control rows receive
    w = e / (1 - e). A propensity of numerically 0 (resp. 1) is a
    non-overlap error. ``truncate_quantile`` optionally caps weights at that
    quantile of their own distribution (off by default).
    """
    if dataset.n1 < 1 or dataset.n0 < 1:
        raise DataError("both groups must be nonempty")
    C = balance_matrix(spec, dataset.covariates)
    design = np.column_stack([np.ones(dataset.n), C])
    fit = fit_bernoulli(design, dataset.source.astype(float), link=Link.LOGIT)
    e_hat = predict_mean(fit, design)
    if estimand == "atc":
        e = e_hat[: dataset.n1]
        if np.any(e <= 0.0):
            raise NonOverlapError("non-overlap: infinite weight (propensity of 0)")
        w = (1.0 - e) / e
    elif estimand == "att":
        e = e_hat[dataset.n1 :]
        if np.any(e >= 1.0):
            raise NonOverlapError("non-overlap: infinite weight (propensity of 1)")
        w = e / (1.0 - e)
    else:
        raise DataError(f"unknown estimand {estimand!r}")
    if truncate_quantile is not None:
        w = np.minimum(w, np.quantile(w, truncate_quantile))
    if normalize:
        return WeightSet.build("iow_normalized", w / w.sum())
    return WeightSet.build("iow", w)


def _solve_entropy_dual(C: np.ndarray, target: np.ndarray, init_dual=None):
    """Newton minimization of Q(gamma) = sum_i exp(c*_i . gamma).

    Works on centered columns standardized by their sample SD; returns the
    dual on the original scale together with the normalized weights.
    ``init_dual`` optionally warm-starts the iterations (original scale).
    Raises InfeasibleBalanceError (with the LP diagnosis) on divergence.
    """
    n, k = C.shape
    centered = C - target
    sd = C.std(axis=0, ddof=1) if n > 1 else np.zeros(k)
    varying = sd > 0

    # constant balance functions either match the target trivially or can
    # never be balanced; only the varying ones enter the optimization
    const_gap = np.abs(centered[0, ~varying]) if (~varying).any() else np.array([])
    if const_gap.size and const_gap.max() > 1e-9 * max(1.0, float(np.abs(target).max())):
        res = feasibility_check(C, target)
        raise InfeasibleBalanceError(
            "infeasible balance: a constant balance function differs from its target",
            feasibility=res,
        )
    Cs = centered[:, varying] / sd[varying]
    kv = Cs.shape[1]
    if init_dual is not None:
        gamma = np.asarray(init_dual, dtype=float)[varying] * sd[varying]
    else:
        gamma = np.zeros(kv)
    a = Cs @ gamma
    iterations = 0
    converged = kv == 0
    for iterations in range(1, _EB_MAX_ITER + 1):
        shift = a.max()
        e = np.exp(a - shift)
        se = e.sum()
        m = (Cs.T @ e) / se  # gradient of Q divided by Q: weighted mean
        if float(np.max(np.abs(m))) <= _EB_TOL:
            converged = True
            break
        H = (Cs.T @ (Cs * e[:, None])) / se
        try:
            direction = -np.linalg.solve(H, m)
        except np.linalg.LinAlgError:
            direction = -np.linalg.lstsq(H, m, rcond=None)[0]
        if not np.isfinite(direction).all():
            break
        log_q = shift + np.log(se)
        step = 1.0
        while step > 1e-12:
            cand = gamma + step * direction
            a_new = Cs @ cand
            sh = a_new.max()
            lq_new = sh + np.log(np.exp(a_new - sh).sum())
            if lq_new <= log_q + 1e-13 * (abs(log_q) + 1.0):
                break
            step *= 0.5
        gamma, a = cand, a_new
        if float(np.max(np.abs(gamma))) > _EB_DIVERGENCE_NORM:
            break
    if not converged:
        res = feasibility_check(C, target)
        if not res.feasible:
            raise InfeasibleBalanceError(
                "infeasible balance: target lies outside the convex hull "
                "of the sample balance functions",
                feasibility=res,
            )
        raise DritcError(
            "entropy balance failed to converge on a feasible problem "
            "(target may lie on the hull boundary)"
        )
    shift = a.max()
    e = np.exp(a - shift)
    weights = e / e.sum()
    dual = np.zeros(k)
    dual[varying] = gamma / sd[varying]
    return dual, weights, iterations


def entropy_balance(data, spec: BalanceSpec, target=None, init_dual=None) -> WeightSet:
    """Entropy-balancing (MAIC) weights reproducing the target moments.

    ``data`` is either a Dataset (the SAT rows are weighted; the target
    defaults to the control-group balance moments) or a raw covariate matrix
    of the rows to be weighted (then ``target`` is required). The returned
    weights sum to one and satisfy the balance constraints to optimizer
    precision; the dual vector is reported on the original covariate scale.
    """
    if isinstance(data, Dataset):
        covs = data.sat_covariates
        if target is None:
            target = target_from_ipd(spec, data)
    else:
        covs = np.asarray(data, dtype=float)
        if target is None:
            raise DataError("a target moment vector is required with raw covariates")
    target = np.asarray(target, dtype=float)
    if covs.shape[0] < 1:
        raise DataError("at least one row is required for entropy balancing")
    if not np.isfinite(target).all():
        raise DataError("target moments must be finite")
    if target.shape != (spec.k,):
        raise DataError(f"target must have length {spec.k}")
    C = balance_matrix(spec, covs)
    dual, weights, _ = _solve_entropy_dual(C, target, init_dual=init_dual)
    return WeightSet.build("maic", weights, dual=dual)


def balance_report(weights, covariates, spec: BalanceSpec, target) -> BalanceReport:
    """Weighted vs unweighted balance-function moments against a target."""
    w = weights.weights if isinstance(weights, WeightSet) else np.asarray(weights, float)
    C = balance_matrix(spec, np.asarray(covariates, dtype=float))
    target = np.asarray(target, dtype=float)
    if C.shape[0] != len(w) or target.shape != (spec.k,):
        raise DataError("weights, covariates and target must be aligned")
    unweighted = C.mean(axis=0)
    weighted = (C.T @ w) / w.sum()
    gaps = np.abs(weighted - target)
    terms = tuple(
        BalanceTermReport(lbl, float(t), float(u), float(ww), float(gap))
        for lbl, t, u, ww, gap in zip(spec.labels(), target, unweighted, weighted, gaps)
    )
    return BalanceReport(terms=terms, max_gap=float(gaps.max()) if terms else 0.0)


def feasibility_check(balance_mat, target) -> FeasibilityResult:
    """Decide whether the target lies in the convex hull of the sample rows.

    Solves the phase-1 linear program: find lambda >= 0 with sum(lambda) = 1
    and lambda' C = target. Returns a witness weight vector when feasible;
    infeasibility is a valid answer, not an error.
    """
    C = np.asarray(balance_mat, dtype=float)
    t = np.asarray(target, dtype=float)
    if C.ndim != 2 or t.shape != (C.shape[1],):
        raise DataError("balance matrix and target are not aligned")
    if not (np.isfinite(C).all() and np.isfinite(t).all()):
        raise DataError("feasibility check requires finite inputs")
    n, k = C.shape
    A = np.vstack([C.T, np.ones((1, n))])
    b = np.concatenate([t, [1.0]])
    # scale rows for conditioning (e.g. squared-age columns)
    row_scale = np.maximum(np.abs(A).max(axis=1), np.abs(b))
    row_scale = np.where(row_scale > 0, row_scale, 1.0)
    res = linprog(
        c=np.zeros(n),
        A_eq=A / row_scale[:, None],
        b_eq=b / row_scale,
        bounds=(0.0, None),
        method="highs",
    )
    if res.status == 0:
        witness = np.clip(res.x, 0.0, None)
        witness = witness / witness.sum()
        gap = float(np.abs(C.T @ witness - t).max()) if k else 0.0
        return FeasibilityResult(True, witness, gap, "feasible")
    if res.status == 2:
        return FeasibilityResult(False, None, None, "infeasible: target outside convex hull")
    return FeasibilityResult(False, None, None, f"solver status {res.status}: {res.message}")
