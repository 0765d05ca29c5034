"""Observed-data representation, balance functions and file ingestion.

The package works on a stacked layout: all single-arm-trial (SAT, source=1)
rows first, then the external-control (source=0) rows. Covariate
transformations used for balancing and modeling are never stored as columns;
they are evaluated on demand from a :class:`BalanceSpec`.

Two data settings are supported:

* IPD-IPD: subject-level rows for both sources, all with outcomes.
* IPD-AD ("ad-mode"): subject-level rows for the SAT only; control rows are
  simulated covariate profiles with absent outcomes, and the control outcome
  information lives in an :class:`AggregateTarget`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

__all__ = [
    "SubjectRecord",
    "BalanceTerm",
    "BalanceSpec",
    "NormalMarginal",
    "BernoulliMarginal",
    "AggregateTarget",
    "Dataset",
    "AnalysisConfig",
    "eval_balance",
    "balance_matrix",
    "target_from_ipd",
    "load_ipd",
    "write_ipd",
    "load_config",
]


@dataclass(frozen=True)
class SubjectRecord:
    """One stacked row: data source, treatment, covariates and outcome."""

    source: int
    treatment: int
    covariates: tuple[float, ...]
    outcome: int | None


@dataclass(frozen=True)
class BalanceTerm:
    """A single covariate balance function.

    One index with exponent e evaluates to x[i] ** e; two indices (always
    with exponents (1, 1)) evaluate to the pairwise product x[i] * x[j].
    """

    indices: tuple[int, ...]
    exponents: tuple[int, ...]

    def __post_init__(self):
        if len(self.indices) not in (1, 2) or len(self.indices) != len(self.exponents):
            raise DataError(f"balance term must have one or two indices: {self}")
        if any(e < 1 for e in self.exponents):
            raise DataError(f"balance term exponents must be positive: {self}")
        if len(self.indices) == 2:
            if self.exponents != (1, 1):
                raise DataError(f"product terms support exponents (1, 1) only: {self}")
            if self.indices[0] == self.indices[1]:
                raise DataError(f"product term must use two distinct covariates: {self}")

    def label(self) -> str:
        parts = []
        for i, e in zip(self.indices, self.exponents):
            parts.append(f"x{i}" if e == 1 else f"x{i}^{e}")
        return "*".join(parts)


@dataclass(frozen=True)
class BalanceSpec:
    """Ordered list of distinct balance functions c(X)."""

    terms: tuple[BalanceTerm, ...]

    def __post_init__(self):
        if len(set(self.terms)) != len(self.terms):
            raise DataError("duplicated balance function in spec")

    @property
    def k(self) -> int:
        return len(self.terms)

    def max_index(self) -> int:
        return max(i for t in self.terms for i in t.indices) if self.terms else -1

    def labels(self) -> tuple[str, ...]:
        return tuple(t.label() for t in self.terms)

    @classmethod
    def main_effects(cls, p: int) -> "BalanceSpec":
        """Identity balance functions for covariates 0..p-1."""
        return cls(tuple(BalanceTerm((i,), (1,)) for i in range(p)))

    @classmethod
    def from_config(cls, entries: Iterable[dict]) -> "BalanceSpec":
        terms = []
        for entry in entries:
            idx = tuple(int(i) for i in entry["indices"])
            exps = tuple(int(e) for e in entry.get("exponents", [1] * len(idx)))
            terms.append(BalanceTerm(idx, exps))
        return cls(tuple(terms))

    def to_config(self) -> list[dict]:
        return [
            {"indices": list(t.indices), "exponents": list(t.exponents)}
            for t in self.terms
        ]


def eval_balance(spec: BalanceSpec, covariates: Sequence[float]) -> np.ndarray:
    """Evaluate every balance function on one covariate vector."""
    x = np.asarray(covariates, dtype=float)
    if spec.max_index() >= x.shape[0]:
        raise DataError(
            f"balance spec references covariate index {spec.max_index()} "
            f"but only {x.shape[0]} covariates are present"
        )
    out = np.empty(spec.k)
    for j, t in enumerate(spec.terms):
        if len(t.indices) == 1:
            out[j] = x[t.indices[0]] ** t.exponents[0]
        else:
            out[j] = x[t.indices[0]] * x[t.indices[1]]
    return out


def balance_matrix(spec: BalanceSpec, covariates: np.ndarray) -> np.ndarray:
    """Evaluate the balance functions row-wise: (n, p) -> (n, k)."""
    X = np.asarray(covariates, dtype=float)
    if X.ndim != 2:
        raise DataError("covariate matrix must be two-dimensional")
    if spec.max_index() >= X.shape[1]:
        raise DataError(
            f"balance spec references covariate index {spec.max_index()} "
            f"but only {X.shape[1]} covariates are present"
        )
    cols = []
    for t in spec.terms:
        if len(t.indices) == 1:
            cols.append(X[:, t.indices[0]] ** t.exponents[0])
        else:
            cols.append(X[:, t.indices[0]] * X[:, t.indices[1]])
    return np.column_stack(cols) if cols else np.empty((X.shape[0], 0))


@dataclass(frozen=True)
class NormalMarginal:
    mean: float
    sd: float

    def __post_init__(self):
        if not (self.sd > 0 and math.isfinite(self.sd) and math.isfinite(self.mean)):
            raise DataError(f"normal marginal needs finite mean and sd > 0: {self}")

    def moment(self, e: int) -> float:
        """E[X^e] via the binomial expansion around the mean."""
        total = 0.0
        for k in range(0, e + 1, 2):
            # E[Z^k] = (k-1)!! for even k
            dblfact = 1.0
            for m in range(k - 1, 0, -2):
                dblfact *= m
            total += math.comb(e, k) * self.mean ** (e - k) * dblfact * self.sd**k
        return total

    def variance(self) -> float:
        return self.sd**2


@dataclass(frozen=True)
class BernoulliMarginal:
    prob: float

    def __post_init__(self):
        if not (0.0 < self.prob < 1.0):
            raise DataError(f"bernoulli marginal prob must be in (0, 1): {self}")

    def moment(self, e: int) -> float:
        return self.prob  # 0/1 valued, so every positive power has mean p

    def variance(self) -> float:
        return self.prob * (1.0 - self.prob)


Marginal = NormalMarginal | BernoulliMarginal


def _validate_correlation(corr: np.ndarray, p: int) -> np.ndarray:
    corr = np.asarray(corr, dtype=float)
    if corr.shape != (p, p):
        raise DataError(f"correlation matrix must be {p}x{p}, got {corr.shape}")
    if not np.allclose(corr, corr.T, atol=1e-10):
        raise DataError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(corr), 1.0, atol=1e-10):
        raise DataError("correlation matrix must have unit diagonal")
    if np.any(np.abs(corr) > 1.0 + 1e-10):
        raise DataError("correlation entries must lie in [-1, 1]")
    if np.linalg.eigvalsh(corr).min() < -1e-8:
        raise DataError("correlation matrix is not positive semi-definite")
    return corr


@dataclass(frozen=True)
class AggregateTarget:
    """Published control-arm summaries for the IPD-AD setting.

    ``moments`` may be given explicitly (aligned with a balance spec) or left
    None, in which case :meth:`moments_for` derives them from the marginal
    distributions and the correlation matrix.
    """

    marginals: tuple[Marginal, ...]
    correlation: np.ndarray
    control_mean_outcome: float
    control_n: int
    se_g_mu0: float = None  # type: ignore[assignment]
    moments: np.ndarray | None = None

    def __post_init__(self):
        p = len(self.marginals)
        object.__setattr__(
            self, "correlation", _validate_correlation(self.correlation, p)
        )
        if not (0.0 < self.control_mean_outcome < 1.0):
            raise DataError("control mean outcome must be in (0, 1)")
        if self.control_n < 1:
            raise DataError("control_n must be at least 1")
        if self.se_g_mu0 is None:
            # delta-method standard error of the control log-odds
            mu = self.control_mean_outcome
            object.__setattr__(
                self, "se_g_mu0", math.sqrt(1.0 / (self.control_n * mu * (1.0 - mu)))
            )
        elif self.se_g_mu0 < 0:
            raise DataError("se_g_mu0 must be nonnegative")
        if self.moments is not None:
            object.__setattr__(
                self, "moments", np.asarray(self.moments, dtype=float)
            )

    @property
    def p(self) -> int:
        return len(self.marginals)

    def moments_for(self, spec: BalanceSpec) -> np.ndarray:
        """Balance-function moments implied by the aggregate summaries."""
        if self.moments is not None:
            if len(self.moments) != spec.k:
                raise DataError(
                    f"explicit moments have length {len(self.moments)}, "
                    f"balance spec has {spec.k} terms"
                )
            return self.moments.copy()
        if spec.max_index() >= self.p:
            raise DataError("balance spec indexes beyond the aggregate marginals")
        out = np.empty(spec.k)
        for j, t in enumerate(spec.terms):
            if len(t.indices) == 1:
                out[j] = self.marginals[t.indices[0]].moment(t.exponents[0])
            else:
                a, b = t.indices
                ma, mb = self.marginals[a], self.marginals[b]
                cov = self.correlation[a, b] * math.sqrt(ma.variance() * mb.variance())
                out[j] = cov + ma.moment(1) * mb.moment(1)
        return out

    @classmethod
    def from_config(cls, cfg: dict) -> "AggregateTarget":
        marginals = []
        for m in cfg["marginals"]:
            kind = m["kind"]
            if kind == "normal":
                marginals.append(NormalMarginal(float(m["mean"]), float(m["sd"])))
            elif kind == "bernoulli":
                marginals.append(BernoulliMarginal(float(m["prob"])))
            else:
                raise DataError(f"unknown marginal kind {kind!r}")
        p = len(marginals)
        corr_raw = np.asarray(cfg["correlation"], dtype=float)
        if corr_raw.ndim == 1:
            if corr_raw.size != p * p:
                raise DataError("row-major correlation array has wrong length")
            corr_raw = corr_raw.reshape(p, p)
        moments = cfg.get("moments")
        return cls(
            marginals=tuple(marginals),
            correlation=corr_raw,
            control_mean_outcome=float(cfg["control_outcome"]),
            control_n=int(cfg["control_n"]),
            se_g_mu0=cfg.get("se_g_mu0"),
            moments=None if moments is None else np.asarray(moments, dtype=float),
        )


class Dataset:
    """Stacked subject-level data, array-backed and immutable.

    Rows are reordered at construction so that all source=1 rows come first;
    within each source group the input order is preserved.
    """

    def __init__(
        self,
        covariates: np.ndarray,
        source: np.ndarray,
        outcome: np.ndarray,
        ad_mode: bool = False,
        _validated: bool = False,
    ):
        covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
        source = np.asarray(source, dtype=np.int8)
        outcome = np.asarray(outcome, dtype=float)
        n = source.shape[0]
        if covariates.shape[0] != n or outcome.shape[0] != n:
            raise DataError("covariates, source and outcome must have equal length")
        if not _validated:
            if not np.isin(source, (0, 1)).all():
                raise DataError("source values must be 0 or 1")
            if not np.isfinite(covariates).all():
                raise DataError("covariate values must be finite")
            present = ~np.isnan(outcome)
            if not np.isin(outcome[present], (0.0, 1.0)).all():
                raise DataError("outcomes must be 0 or 1 when present")
            missing_sat = (~present) & (source == 1)
            if missing_sat.any():
                raise DataError("missing outcome for a source=1 row")
            if ad_mode:
                outcome = outcome.copy()
                outcome[source == 0] = np.nan
            elif (~present).any():
                raise DataError("missing outcome in non-ad-mode data")
        order = np.argsort(1 - source, kind="stable")
        self.covariates = np.ascontiguousarray(covariates[order])
        self.source = source[order]
        self.outcome = outcome[order]
        self.ad_mode = bool(ad_mode)
        self.n1 = int(self.source.sum())
        self.n0 = n - self.n1
        self._rows: tuple[SubjectRecord, ...] | None = None
        self.covariates.setflags(write=False)
        self.source.setflags(write=False)
        self.outcome.setflags(write=False)

    # -- accessors ---------------------------------------------------------

    @property
    def n(self) -> int:
        return self.n1 + self.n0

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def treatment(self) -> np.ndarray:
        return self.source  # control fully external: T == S

    @property
    def sat_covariates(self) -> np.ndarray:
        return self.covariates[: self.n1]

    @property
    def control_covariates(self) -> np.ndarray:
        return self.covariates[self.n1 :]

    @property
    def sat_outcomes(self) -> np.ndarray:
        return self.outcome[: self.n1]

    @property
    def control_outcomes(self) -> np.ndarray:
        if self.ad_mode:
            raise DataError("ad-mode dataset has no control outcomes")
        return self.outcome[self.n1 :]

    @property
    def rows(self) -> tuple[SubjectRecord, ...]:
        if self._rows is None:
            self._rows = tuple(
                SubjectRecord(
                    source=int(s),
                    treatment=int(s),
                    covariates=tuple(x),
                    outcome=None if np.isnan(y) else int(y),
                )
                for s, x, y in zip(self.source, self.covariates, self.outcome)
            )
        return self._rows

    @classmethod
    def from_records(cls, records: Iterable[SubjectRecord], ad_mode: bool = False) -> "Dataset":
        records = list(records)
        for i, r in enumerate(records):
            if r.source != r.treatment:
                raise DataError(f"source/treatment mismatch at record {i}")
        cov = np.array([r.covariates for r in records], dtype=float)
        src = np.array([r.source for r in records])
        out = np.array(
            [np.nan if r.outcome is None else float(r.outcome) for r in records]
        )
        return cls(cov, src, out, ad_mode=ad_mode)

    def resample(self, sat_idx: np.ndarray, control_idx: np.ndarray) -> "Dataset":
        """Index-based resample preserving the stacked layout (no revalidation)."""
        idx = np.concatenate([sat_idx, control_idx + self.n1])
        ds = Dataset.__new__(Dataset)
        ds.covariates = self.covariates[idx]
        ds.source = self.source[idx]
        ds.outcome = self.outcome[idx]
        ds.ad_mode = self.ad_mode
        ds.n1 = len(sat_idx)
        ds.n0 = len(control_idx)
        ds._rows = None
        return ds


def target_from_ipd(spec: BalanceSpec, dataset: Dataset) -> np.ndarray:
    """Mean of each balance function over the external-control rows."""
    if dataset.n0 < 1:
        raise DataError("empty control group")
    return balance_matrix(spec, dataset.control_covariates).mean(axis=0)


@dataclass(frozen=True)
class AnalysisConfig:
    """Parsed sidecar configuration mapping file columns to analysis roles."""

    covariates: tuple[str, ...]
    balance: BalanceSpec
    ad_target: AggregateTarget | None = None
    pseudo_m: int | None = None
    pseudo_seed: int | None = None


def load_config(path: str) -> AnalysisConfig:
    """Read the JSON sidecar config (covariates, balance_terms, ad_target)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    try:
        covariates = tuple(str(c) for c in cfg["covariates"])
        if "balance_terms" in cfg:
            balance = BalanceSpec.from_config(cfg["balance_terms"])
        else:
            balance = BalanceSpec.main_effects(len(covariates))
        ad_cfg = cfg.get("ad_target")
        ad_target = None if ad_cfg is None else AggregateTarget.from_config(ad_cfg)
        pseudo_m = pseudo_seed = None
        if ad_cfg is not None:
            pseudo_m = int(ad_cfg["M"]) if "M" in ad_cfg else None
            pseudo_seed = int(ad_cfg["seed"]) if "seed" in ad_cfg else None
    except KeyError as exc:
        raise DataError(f"config {path} is missing key {exc}") from exc
    if balance.max_index() >= len(covariates):
        raise DataError("balance term indexes beyond the declared covariates")
    return AnalysisConfig(covariates, balance, ad_target, pseudo_m, pseudo_seed)


def _parse_cell(raw: str, line: int, column: str, kind: str):
    raw = raw.strip()
    try:
        if kind == "binary":
            v = int(raw)
            if v not in (0, 1):
                raise ValueError
            return v
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError
        return v
    except ValueError:
        raise DataError(
            f"cannot parse column {column!r} on line {line}: {raw!r}"
        ) from None


def load_ipd(
    path: str,
    covariates: Sequence[str],
    ad_mode: bool = False,
    source_col: str = "source",
    treatment_col: str = "treatment",
    outcome_col: str = "outcome",
) -> Dataset:
    """Load a delimited file into a stacked :class:`Dataset`.

    The file needs a header with the source/treatment/outcome columns plus the
    declared covariate columns. In ad-mode, source=0 rows carry no outcome
    (empty cells; any value present is ignored).
    """
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [source_col, treatment_col, outcome_col, *covariates]
        missing = [c for c in needed if c not in header]
        if missing:
            raise DataError(f"{path} is missing columns: {', '.join(missing)}")
        src_rows, cov_rows, out_rows = [], [], []
        for line, row in enumerate(reader, start=2):
            s = _parse_cell(row[source_col], line, source_col, "binary")
            t = _parse_cell(row[treatment_col], line, treatment_col, "binary")
            if s != t:
                raise DataError(f"source/treatment mismatch on line {line}")
            raw_out = (row[outcome_col] or "").strip()
            if s == 0 and ad_mode:
                y = math.nan
            elif raw_out == "":
                raise DataError(f"missing outcome on line {line}")
            else:
                y = float(_parse_cell(raw_out, line, outcome_col, "binary"))
            x = [_parse_cell(row[c], line, c, "float") for c in covariates]
            src_rows.append(s)
            cov_rows.append(x)
            out_rows.append(y)
    if not src_rows:
        raise DataError(f"{path} contains no data rows")
    return Dataset(
        np.asarray(cov_rows, dtype=float),
        np.asarray(src_rows),
        np.asarray(out_rows),
        ad_mode=ad_mode,
    )


def write_ipd(dataset: Dataset, path: str, covariates: Sequence[str]) -> None:
    """Write a dataset back to CSV; absent outcomes become empty cells."""
    if len(covariates) != dataset.p:
        raise DataError("covariate name count does not match dataset")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source", "treatment", "outcome", *covariates])
        for s, y, x in zip(dataset.source, dataset.outcome, dataset.covariates):
            out = "" if np.isnan(y) else int(y)
            writer.writerow([int(s), int(s), out, *(repr(float(v)) for v in x)])
