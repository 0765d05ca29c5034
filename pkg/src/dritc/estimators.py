"""Treatment-effect estimators for externally controlled single-arm trials.

Implements the full battery on the marginal log-odds scale: the naive
contrast, inverse-odds weighting (Horvitz-Thompson and Hajek forms), entropy
balancing, G-computation, the three doubly robust augmented weighting
estimators, and the two weighted-G-computation variants. Every estimator is
available for the ATC (primary) and, with subject-level data on both sides,
for the ATT; all except entropy-balancing-only paths also run in the
aggregate-data mode where the external control is represented by simulated
covariate profiles plus an :class:`AggregateTarget`.

Estimators targeting the same dataset share fitted components (one
propensity fit, one entropy-balance solve, one outcome fit per link) through
:func:`estimate_battery`, which also isolates per-method failures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data_model import (
    AggregateTarget,
    BalanceSpec,
    Dataset,
    balance_matrix,
)
from .errors import (
    DataError,
    DegenerateOutcomeError,
    DritcError,
    UnboundedMeanError,
)
from .glm import GlmFit, Link, fit_bernoulli, predict_mean
from .weighting import WeightSet, _solve_entropy_dual

__all__ = [
    "METHODS",
    "LINKED_METHODS",
    "EstimatorSpec",
    "EstimateResult",
    "BatteryEntry",
    "BatteryRun",
    "battery_specs",
    "estimate_naive",
    "estimate_iow",
    "estimate_maic",
    "estimate_gcomp",
    "estimate_dr",
    "estimate_weighted_gcomp",
    "estimate_battery",
    "estimate_att",
]

METHODS = (
    "naive",
    "iow",
    "iow_norm",
    "maic",
    "gcomp",
    "dr_iow",
    "dr_iow_norm",
    "dr_maic",
    "wgcomp_iow_norm",
    "wgcomp_maic",
)
# methods that fit a conditional outcome model and therefore carry a link
LINKED_METHODS = ("gcomp", "dr_iow", "dr_iow_norm", "dr_maic", "wgcomp_iow_norm", "wgcomp_maic")

_DR_WEIGHT_KINDS = {"dr_iow": "iow", "dr_iow_norm": "iow_norm", "dr_maic": "maic"}
_WG_WEIGHT_KINDS = {"wgcomp_iow_norm": "iow_norm", "wgcomp_maic": "maic"}


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


@dataclass(frozen=True)
class EstimatorSpec:
    """One estimator configuration; ``method_key`` names it in reports."""

    method: str
    outcome_link: Link = Link.LOGIT
    estimand: str = "atc"
    balance: BalanceSpec | None = None
    outcome_balance: BalanceSpec | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise DataError(f"unknown estimator method {self.method!r}")
        if self.estimand not in ("atc", "att"):
            raise DataError(f"unknown estimand {self.estimand!r}")
        if self.method != "naive" and self.balance is None:
            raise DataError(f"method {self.method!r} requires a balance spec")

    @property
    def method_key(self) -> str:
        if self.method in LINKED_METHODS:
            return f"{self.method}_{self.outcome_link.value}"
        return self.method


@dataclass(frozen=True)
class EstimateResult:
    """Point estimate on the log-odds scale with its component means."""

    method: str
    estimand: str
    point: float
    mu_treated: float
    mu_control: float
    ess: float | None = None
    diagnostics: dict = field(default_factory=dict)


def _make_result(spec: EstimatorSpec, mu_treated, mu_control, ess=None, diagnostics=None) -> EstimateResult:
    for name, mu in (("treated", mu_treated), ("control", mu_control)):
        if not (0.0 < mu < 1.0):
            raise DegenerateOutcomeError(
                f"infinite log-odds: {name} mean outcome {mu} is outside (0, 1)"
            )
    return EstimateResult(
        method=spec.method_key,
        estimand=spec.estimand,
        point=_logit(mu_treated) - _logit(mu_control),
        mu_treated=float(mu_treated),
        mu_control=float(mu_control),
        ess=ess,
        diagnostics=diagnostics or {},
    )


class _Fitted:
    """Shared fitted components for one (dataset, balance, target, estimand).

    Components are computed lazily and memoized, including failures, so a
    battery run performs one propensity fit, one entropy-balance solve and
    one outcome fit per link, while methods that do not need a failing
    component are unaffected by it.
    """

    def __init__(
        self,
        dataset: Dataset,
        balance: BalanceSpec,
        target: AggregateTarget | np.ndarray | None,
        estimand: str,
        outcome_balance: BalanceSpec | None = None,
        warm: "_Fitted | None" = None,
        designs: tuple[np.ndarray, np.ndarray] | None = None,
        fast: bool = False,
        tol_grad: float = 1e-10,
    ):
        if estimand not in ("atc", "att"):
            raise DataError(f"unknown estimand {estimand!r}")
        if dataset.ad_mode:
            if estimand == "att":
                raise DataError("ATT requires control IPD")
            if not isinstance(target, AggregateTarget):
                raise DataError("ad-mode estimation requires an AggregateTarget")
        self.dataset = dataset
        self.balance = balance
        self.outcome_balance = outcome_balance or balance
        self.target = target
        self.estimand = estimand
        self.warm = warm
        self.standardize = not fast
        self.tol_grad = tol_grad
        self._cache: dict = {}
        if designs is not None:
            self._cache["prop_design"] = (designs[0], None)
            self._cache["out_design"] = (designs[1], None)

        n1 = dataset.n1
        if estimand == "atc":
            self.adj = slice(0, n1)  # rows carrying weights and the outcome model
            self.ref = slice(n1, dataset.n)  # rows receiving predictions
        else:
            self.adj = slice(n1, dataset.n)
            self.ref = slice(0, n1)
        self.n_ref = dataset.n0 if estimand == "atc" else n1
        self.n_adj = dataset.n - self.n_ref
        if self.n_adj < 1 or self.n_ref < 1:
            raise DataError("both groups must be nonempty")
        self.y_adj = dataset.outcome[self.adj]

    # -- cached heavy pieces -----------------------------------------------

    def _get(self, key, fn):
        if key in self._cache:
            value, err = self._cache[key]
            if err is not None:
                raise err
            return value
        try:
            value = fn()
        except DritcError as exc:
            self._cache[key] = (None, exc)
            raise
        self._cache[key] = (value, None)
        return value

    def _warm_fit(self, key) -> GlmFit | None:
        if self.warm is None:
            return None
        cached = self.warm._cache.get(key)
        if cached and cached[1] is None and cached[0] is not None:
            return cached[0]
        return None

    @property
    def propensity_design(self) -> np.ndarray:
        def build():
            C = balance_matrix(self.balance, self.dataset.covariates)
            return np.column_stack([np.ones(self.dataset.n), C])

        return self._get("prop_design", build)

    @property
    def outcome_design(self) -> np.ndarray:
        def build():
            if self.outcome_balance is self.balance:
                return self.propensity_design
            C = balance_matrix(self.outcome_balance, self.dataset.covariates)
            return np.column_stack([np.ones(self.dataset.n), C])

        return self._get("out_design", build)

    def propensity_fit(self) -> GlmFit:
        def fit():
            warm = self._warm_fit("prop_fit")
            return fit_bernoulli(
                self.propensity_design,
                self.dataset.source.astype(float),
                link=Link.LOGIT,
                init=None if warm is None else warm.coefficients,
                standardize=self.standardize,
                tol_grad=self.tol_grad,
            )

        return self._get("prop_fit", fit)

    def iow_raw(self) -> WeightSet:
        """Unnormalized inverse-odds weights over the adjusted rows."""

        def build():
            fit = self.propensity_fit()
            e = predict_mean(fit, self.propensity_design[self.adj])
            if self.estimand == "atc":
                if np.any(e <= 0.0):
                    from .errors import NonOverlapError

                    raise NonOverlapError("non-overlap: infinite weight (propensity of 0)")
                w = (1.0 - e) / e
            else:
                if np.any(e >= 1.0):
                    from .errors import NonOverlapError

                    raise NonOverlapError("non-overlap: infinite weight (propensity of 1)")
                w = e / (1.0 - e)
            return WeightSet.build("iow", w)

        return self._get("iow", build)

    def theta(self) -> np.ndarray:
        """Balance-function target moments for entropy balancing."""

        def build():
            if isinstance(self.target, AggregateTarget):
                return self.target.moments_for(self.balance)
            if self.target is not None:
                t = np.asarray(self.target, dtype=float)
                if t.shape != (self.balance.k,):
                    raise DataError("explicit target length does not match balance spec")
                return t
            # the propensity design is [1, c(X)], so its non-intercept
            # columns over the reference rows are exactly the balance matrix
            return self.propensity_design[self.ref, 1:].mean(axis=0)

        return self._get("theta", build)

    def eb_weights(self) -> WeightSet:
        def build():
            init = None
            if self.warm is not None:
                cached = self.warm._cache.get("eb")
                if cached and cached[1] is None and cached[0] is not None:
                    init = cached[0].dual
            C = self.propensity_design[self.adj, 1:]
            dual, weights, _ = _solve_entropy_dual(C, self.theta(), init_dual=init)
            return WeightSet.build("maic", weights, dual=dual)

        return self._get("eb", build)

    def outcome_fit(self, link: Link) -> GlmFit:
        key = f"ofit_{link.value}"

        def fit():
            init = None
            warm = self._warm_fit(key)
            if warm is not None:
                init = warm.coefficients
            elif link is Link.CAUCHIT:
                logit_fit = self.outcome_fit(Link.LOGIT)
                init = logit_fit.coefficients / math.log(3.0)
            return fit_bernoulli(
                self.outcome_design[self.adj],
                self.y_adj,
                link=link,
                init=init,
                standardize=self.standardize,
                tol_grad=self.tol_grad,
            )

        return self._get(key, fit)

    def predictions(self, link: Link) -> np.ndarray:
        key = f"pred_{link.value}"
        return self._get(
            key, lambda: predict_mean(self.outcome_fit(link), self.outcome_design)
        )

    def weighted_outcome_fit(self, kind: str, link: Link) -> GlmFit:
        key = f"wofit_{kind}_{link.value}"

        def fit():
            if kind == "maic":
                w = self.eb_weights().weights
            else:
                w = self.iow_raw().weights  # fit is invariant to normalization
            init = None
            warm = self._warm_fit(key)
            if warm is not None:
                init = warm.coefficients
            else:
                try:
                    init = self.outcome_fit(link).coefficients
                except DritcError:
                    init = None
            return fit_bernoulli(
                self.outcome_design[self.adj],
                self.y_adj,
                weights=w,
                link=link,
                init=init,
                standardize=self.standardize,
                tol_grad=self.tol_grad,
            )

        return self._get(key, fit)

    # -- component means ----------------------------------------------------

    def mu_ref(self) -> float:
        """Mean observed outcome on the reference (unweighted) side."""
        if self.dataset.ad_mode:
            return self.target.control_mean_outcome
        return float(self.dataset.outcome[self.ref].mean())

    def mu_adj_naive(self) -> float:
        return float(self.y_adj.mean())


def _estimate_one(f: _Fitted, spec: EstimatorSpec) -> EstimateResult:
    method = spec.method
    diag: dict = {}
    ess = None

    if method == "naive":
        mu_adj = f.mu_adj_naive()
    elif method in ("iow", "iow_norm"):
        ws = f.iow_raw()
        diag["propensity_converged"] = f.propensity_fit().converged
        if method == "iow":
            mu_adj = float(ws.weights @ f.y_adj) / f.n_ref
            if not (0.0 < mu_adj < 1.0):
                raise UnboundedMeanError(
                    f"unbounded HT mean: {mu_adj} is outside (0, 1)"
                )
        else:
            mu_adj = float(ws.weights @ f.y_adj) / ws.sum
        ess = ws.ess
    elif method == "maic":
        ws = f.eb_weights()
        mu_adj = float(ws.weights @ f.y_adj)
        ess = ws.ess
        diag["eb_dual"] = ws.dual
    elif method == "gcomp":
        pred = f.predictions(spec.outcome_link)
        mu_adj = float(pred[f.ref].mean())
        diag["outcome_converged"] = f.outcome_fit(spec.outcome_link).converged
    elif method in _DR_WEIGHT_KINDS:
        kind = _DR_WEIGHT_KINDS[method]
        pred = f.predictions(spec.outcome_link)
        resid = f.y_adj - pred[f.adj]
        if kind == "maic":
            ws = f.eb_weights()
            u = ws.weights
        else:
            ws = f.iow_raw()
            u = ws.weights / (f.n_ref if kind == "iow" else ws.sum)
        mu_adj = float(u @ resid) + float(pred[f.ref].mean())
        if not (0.0 < mu_adj < 1.0):
            raise UnboundedMeanError(
                f"augmented mean {mu_adj} is outside (0, 1)"
            )
        ess = ws.ess
        diag["outcome_converged"] = f.outcome_fit(spec.outcome_link).converged
    elif method in _WG_WEIGHT_KINDS:
        kind = _WG_WEIGHT_KINDS[method]
        wfit = f.weighted_outcome_fit(kind, spec.outcome_link)
        pred = predict_mean(wfit, f.outcome_design[f.ref])
        mu_adj = float(pred.mean())
        ws = f.eb_weights() if kind == "maic" else f.iow_raw()
        ess = ws.ess
        diag["outcome_converged"] = wfit.converged
    else:  # pragma: no cover - guarded by EstimatorSpec validation
        raise DataError(f"unknown method {method!r}")

    mu_ref = f.mu_ref()
    if spec.estimand == "atc":
        return _make_result(spec, mu_adj, mu_ref, ess=ess, diagnostics=diag)
    return _make_result(spec, mu_ref, mu_adj, ess=ess, diagnostics=diag)


def _fitted_for(dataset, spec: EstimatorSpec, target) -> _Fitted:
    balance = spec.balance or BalanceSpec.main_effects(dataset.p)
    return _Fitted(
        dataset,
        balance,
        target,
        spec.estimand,
        outcome_balance=spec.outcome_balance,
    )


# -- public single-method operations ----------------------------------------


def estimate_naive(dataset: Dataset, target: AggregateTarget | None = None) -> EstimateResult:
    """Unadjusted contrast of the SAT and control mean outcomes."""
    spec = EstimatorSpec("naive", balance=BalanceSpec.main_effects(dataset.p))
    return _estimate_one(_fitted_for(dataset, spec, target), spec)


def estimate_iow(
    dataset: Dataset,
    spec: BalanceSpec,
    normalized: bool = False,
    target: AggregateTarget | None = None,
    estimand: str = "atc",
) -> EstimateResult:
    """Inverse-odds weighting (Horvitz-Thompson, or Hajek if normalized)."""
    es = EstimatorSpec("iow_norm" if normalized else "iow", estimand=estimand, balance=spec)
    return _estimate_one(_fitted_for(dataset, es, target), es)


def estimate_maic(
    dataset: Dataset,
    spec: BalanceSpec,
    target: AggregateTarget | np.ndarray | None = None,
    estimand: str = "atc",
) -> EstimateResult:
    """Entropy-balancing estimator with exact moment balance."""
    es = EstimatorSpec("maic", estimand=estimand, balance=spec)
    return _estimate_one(_fitted_for(dataset, es, target), es)


def estimate_gcomp(
    dataset: Dataset,
    spec: BalanceSpec,
    outcome_link: Link = Link.LOGIT,
    target: AggregateTarget | None = None,
    estimand: str = "atc",
    outcome_balance: BalanceSpec | None = None,
) -> EstimateResult:
    """Outcome-model standardization over the reference covariates."""
    es = EstimatorSpec(
        "gcomp", outcome_link, estimand, balance=spec, outcome_balance=outcome_balance
    )
    return _estimate_one(_fitted_for(dataset, es, target), es)


def estimate_dr(
    dataset: Dataset,
    spec: BalanceSpec,
    weight_kind: str = "maic",
    outcome_link: Link = Link.LOGIT,
    target: AggregateTarget | None = None,
    estimand: str = "atc",
    outcome_balance: BalanceSpec | None = None,
) -> EstimateResult:
    """Doubly robust augmented weighting estimator.

    ``weight_kind`` selects the residual weights: "iow" (Horvitz-Thompson
    scaling), "iow_norm" (Hajek scaling) or "maic" (entropy balancing).
    """
    method = {"iow": "dr_iow", "iow_norm": "dr_iow_norm", "maic": "dr_maic"}.get(weight_kind)
    if method is None:
        raise DataError(f"unknown weight kind {weight_kind!r}")
    es = EstimatorSpec(
        method, outcome_link, estimand, balance=spec, outcome_balance=outcome_balance
    )
    return _estimate_one(_fitted_for(dataset, es, target), es)


def estimate_weighted_gcomp(
    dataset: Dataset,
    spec: BalanceSpec,
    weight_kind: str = "maic",
    outcome_link: Link = Link.LOGIT,
    target: AggregateTarget | None = None,
    estimand: str = "atc",
    outcome_balance: BalanceSpec | None = None,
) -> EstimateResult:
    """G-computation from a weighted outcome model (Hajek or MAIC weights)."""
    method = {"iow_norm": "wgcomp_iow_norm", "maic": "wgcomp_maic"}.get(weight_kind)
    if method is None:
        raise DataError(f"unknown weight kind {weight_kind!r} for weighted G-computation")
    es = EstimatorSpec(
        method, outcome_link, estimand, balance=spec, outcome_balance=outcome_balance
    )
    return _estimate_one(_fitted_for(dataset, es, target), es)


def estimate_att(
    dataset: Dataset,
    spec: BalanceSpec,
    method: str,
    outcome_link: Link = Link.LOGIT,
) -> EstimateResult:
    """ATT analog of any battery method (requires control IPD)."""
    if dataset.ad_mode:
        raise DataError("ATT requires control IPD")
    es = EstimatorSpec(method, outcome_link, "att", balance=spec)
    return _estimate_one(_fitted_for(dataset, es, None), es)


# -- battery -----------------------------------------------------------------


@dataclass(frozen=True)
class BatteryEntry:
    key: str
    result: EstimateResult | None
    error: str | None


@dataclass
class BatteryRun:
    entries: tuple[BatteryEntry, ...]
    fitted: _Fitted

    def points(self) -> dict[str, float]:
        return {e.key: e.result.point for e in self.entries if e.result is not None}


def battery_specs(
    balance: BalanceSpec,
    links: tuple[Link, ...] = (Link.LOGIT, Link.CAUCHIT),
    estimand: str = "atc",
    outcome_balance: BalanceSpec | None = None,
) -> tuple[EstimatorSpec, ...]:
    """The standard estimator battery: 4 link-free + 6 per outcome link."""
    specs = [
        EstimatorSpec(m, Link.LOGIT, estimand, balance, outcome_balance)
        for m in ("naive", "iow", "iow_norm", "maic")
    ]
    for link in links:
        specs.extend(
            EstimatorSpec(m, link, estimand, balance, outcome_balance)
            for m in LINKED_METHODS
        )
    return tuple(specs)


def estimate_battery(
    dataset: Dataset,
    specs,
    target: AggregateTarget | None = None,
    warm: _Fitted | None = None,
    designs: tuple[np.ndarray, np.ndarray] | None = None,
    fast: bool = False,
    tol_grad: float = 1e-10,
) -> BatteryRun:
    """Run a set of estimator specs with shared fitted components.

    Per-method failures are recorded in the entry rather than aborting the
    battery. All specs must share the estimand and balance specification so
    the shared components are actually common. ``designs`` optionally
    injects prebuilt (propensity, outcome) design matrices and ``fast``
    skips internal column standardization; both are used by the simulation
    engine's bootstrap loop.
    """
    specs = tuple(specs)
    if not specs:
        raise DataError("empty battery")
    first = specs[0]
    if any(
        s.estimand != first.estimand
        or s.balance != first.balance
        or s.outcome_balance != first.outcome_balance
        for s in specs
    ):
        raise DataError("battery specs must share estimand and balance specs")
    balance = first.balance or BalanceSpec.main_effects(dataset.p)
    fitted = _Fitted(
        dataset,
        balance,
        target,
        first.estimand,
        outcome_balance=first.outcome_balance,
        warm=warm,
        designs=designs,
        fast=fast,
        tol_grad=tol_grad,
    )
    entries = []
    for spec in specs:
        try:
            entries.append(BatteryEntry(spec.method_key, _estimate_one(fitted, spec), None))
        except DritcError as exc:
            entries.append(BatteryEntry(spec.method_key, None, str(exc)))
    return BatteryRun(entries=tuple(entries), fitted=fitted)
