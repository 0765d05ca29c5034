"""Bernoulli generalized linear models under logit and Cauchit links.

Fits are by maximum likelihood: Newton iterations on the observed Hessian
with step-halving, falling back to expected (Fisher) information whenever the
observed Hessian is not negative definite (the Cauchit likelihood is not
concave). Non-intercept design columns are standardized internally for
conditioning; reported coefficients are on the original scale.

Probabilities are clamped to [1e-12, 1 - 1e-12] inside the likelihood,
score and information computations only, never in reported predictions.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, SeparationError

__all__ = [
    "Link",
    "GlmFit",
    "link_inverse",
    "link_forward",
    "fit_bernoulli",
    "predict_mean",
    "bernoulli_loglik",
    "bernoulli_score",
]

_CLAMP = 1e-12
_MAX_ITER = 100
_SEPARATION_NORM = 1e4
# Cauchit fits start from the logit solution rescaled so the two latent
# distributions agree at their quartiles: tan(pi/4) / logit(0.75).
_CAUCHIT_INIT_SCALE = 1.0 / math.log(3.0)


class Link(enum.Enum):
    LOGIT = "logit"
    CAUCHIT = "cauchit"


def link_inverse(link: Link, eta):
    """Mean function: maps the linear predictor into (0, 1)."""
    arr = np.asarray(eta, dtype=float)
    scalar = arr.ndim == 0
    e = np.atleast_1d(arr)
    if link is Link.LOGIT:
        out = np.empty_like(e)
        pos = e >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-e[pos]))
        ex = np.exp(e[~pos])
        out[~pos] = ex / (1.0 + ex)
    else:
        out = 0.5 + np.arctan(e) / math.pi
    return float(out[0]) if scalar else out


def link_forward(link: Link, p):
    """Quantile function q(p); inverse of :func:`link_inverse`."""
    p = np.asarray(p, dtype=float)
    if link is Link.LOGIT:
        out = np.log(p / (1.0 - p))
    else:
        out = np.tan(math.pi * (p - 0.5))
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class GlmFit:
    """Result of a Bernoulli GLM fit (coefficients on the original scale)."""

    coefficients: np.ndarray
    link: Link
    converged: bool
    iterations: int
    design_columns: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "coefficients", np.asarray(self.coefficients, dtype=float)
        )


def _expit(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ex = np.exp(eta[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _mu_and_deriv(link: Link, eta: np.ndarray):
    """Return (p, u) with p = h(eta) and u = h'(eta)."""
    if link is Link.LOGIT:
        p = _expit(eta)
        return p, p * (1.0 - p)
    p = 0.5 + np.arctan(eta) / math.pi
    u = 1.0 / (math.pi * (1.0 + eta * eta))
    return p, u


def _loglik(y, p, w):
    pc = np.clip(p, _CLAMP, 1.0 - _CLAMP)
    return float(np.sum(w * (y * np.log(pc) + (1.0 - y) * np.log1p(-pc))))


def _loglik_eta_logit(y, eta, w):
    # y*eta - log(1 + exp(eta)), stable via logaddexp; equals the clamped
    # form up to the clamp itself, which only binds beyond |eta| ~ 27
    return float(w @ (y * eta - np.logaddexp(0.0, eta)))


def bernoulli_loglik(design, outcomes, beta, link: Link = Link.LOGIT, weights=None):
    """Weighted Bernoulli log-likelihood at an arbitrary coefficient vector."""
    X = np.asarray(design, dtype=float)
    y = np.asarray(outcomes, dtype=float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    p, _ = _mu_and_deriv(link, X @ np.asarray(beta, dtype=float))
    return _loglik(y, p, w)


def bernoulli_score(design, outcomes, beta, link: Link = Link.LOGIT, weights=None):
    """Analytic gradient of :func:`bernoulli_loglik` with respect to beta."""
    X = np.asarray(design, dtype=float)
    y = np.asarray(outcomes, dtype=float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    p, u = _mu_and_deriv(link, X @ np.asarray(beta, dtype=float))
    pc = np.clip(p, _CLAMP, 1.0 - _CLAMP)
    r = w * (y - p) * u / (pc * (1.0 - pc))
    return X.T @ r


def _newton(X, y, w, link, beta0, tol_grad, max_iter):
    """Maximize the weighted log-likelihood; returns (beta, ll, grad_norm, iters)."""
    logit = link is Link.LOGIT
    beta = beta0.copy()
    eta = X @ beta
    if logit:
        p = _expit(eta)
        u = None
        ll = _loglik_eta_logit(y, eta, w)
    else:
        p, u = _mu_and_deriv(link, eta)
        ll = _loglik(y, p, w)
    scale = max(1.0, float(np.sum(w)))
    it = 0
    for it in range(1, max_iter + 1):
        if logit:
            resid = w * (y - p)
            curv = None
        else:
            pc = np.clip(p, _CLAMP, 1.0 - _CLAMP)
            v = pc * (1.0 - pc)
            resid = w * (y - p) * u / v
        grad = X.T @ resid
        gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
        if gnorm <= tol_grad * scale:
            return beta, ll, gnorm, it - 1
        if logit:
            curv = w * (p * (1.0 - p))
        else:
            # observed information for the cauchit link
            uprime = -2.0 * math.pi * eta * u * u
            curv = w * (u * u / v - (y - p) * (uprime * v - u * u * (1.0 - 2.0 * pc)) / (v * v))
        H = X.T @ (X * curv[:, None])
        try:
            direction = np.linalg.solve(H, grad)
            # not a descent direction of -ll means H was not positive definite
            if grad @ direction <= 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            if logit:
                fisher = curv
            else:
                fisher = w * u * u / v
            HF = X.T @ (X * fisher[:, None])
            try:
                direction = np.linalg.solve(HF, grad)
            except np.linalg.LinAlgError:
                direction = np.linalg.lstsq(HF, grad, rcond=None)[0]
        step = 1.0
        while step > 1e-10:
            cand = beta + step * direction
            eta_new = X @ cand
            if logit:
                p_new = _expit(eta_new)
                u_new = None
                ll_new = _loglik_eta_logit(y, eta_new, w)
            else:
                p_new, u_new = _mu_and_deriv(link, eta_new)
                ll_new = _loglik(y, p_new, w)
            if ll_new >= ll - 1e-13 * (abs(ll) + 1.0):
                break
            step *= 0.5
        improved = ll_new > ll
        rel_change = abs(ll_new - ll) / (abs(ll) + 1.0)
        beta, eta, p, u, ll = cand, eta_new, p_new, u_new, ll_new
        if float(np.max(np.abs(beta))) > _SEPARATION_NORM and improved:
            raise SeparationError("separation: coefficients diverging with improving likelihood")
        active = w > 0
        if bool(np.all(np.abs(y[active] - p[active]) < 1e-8)):
            # perfect prediction: the likelihood supremum is only approached
            # as the coefficients diverge, so no finite maximizer exists
            raise SeparationError("separation: model perfectly predicts every outcome")
        if rel_change < 1e-10:
            break
    if logit:
        grad = X.T @ (w * (y - p))
    else:
        pc = np.clip(p, _CLAMP, 1.0 - _CLAMP)
        grad = X.T @ (w * (y - p) * u / (pc * (1.0 - pc)))
    gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
    return beta, ll, gnorm, it


def fit_bernoulli(
    design,
    outcomes,
    weights=None,
    link: Link = Link.LOGIT,
    init=None,
    column_names=None,
    max_iter: int = _MAX_ITER,
    standardize: bool = True,
    tol_grad: float = 1e-10,
) -> GlmFit:
    """Fit a Bernoulli GLM by maximum likelihood.

    ``design`` must already include any intercept column. ``weights`` are
    optional nonnegative observation weights (the fit is invariant to their
    positive rescaling). ``init`` optionally warm-starts the iterations with
    coefficients on the original scale. ``standardize=False`` skips the
    internal column standardization; only use it for designs already on a
    unit scale.

    The fit is reported converged when the final score max-norm is at most
    1e-8 times the weight total; non-convergence within ``max_iter``
    iterations returns ``converged=False``. Diverging coefficients with a
    still-improving likelihood raise :class:`SeparationError`.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(outcomes, dtype=float)
    if X.ndim != 2:
        raise DataError("design must be a 2-d matrix")
    n, k = X.shape
    if len(y) != n:
        raise DataError("outcome length does not match design")
    if n < k:
        raise DataError(f"need at least {k} rows to fit {k} coefficients")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,) or np.any(w < 0):
            raise DataError("weights must be nonnegative, one per row")
        total = w.sum()
        if not total > 0:
            raise DataError("weights must have positive sum")
        w = w * (n / total)  # normalize to mean one; MLE is scale-invariant

    if init is None and link is Link.CAUCHIT:
        logit_fit = fit_bernoulli(
            X, y, weights=w, link=Link.LOGIT, column_names=column_names,
            max_iter=max_iter, standardize=standardize, tol_grad=tol_grad,
        )
        return fit_bernoulli(
            X, y, weights=w, link=Link.CAUCHIT,
            init=logit_fit.coefficients * _CAUCHIT_INIT_SCALE,
            column_names=column_names, max_iter=max_iter, standardize=standardize,
            tol_grad=tol_grad,
        )

    if not standardize:
        beta0 = np.zeros(k) if init is None else np.asarray(init, dtype=float)
        beta, _, gnorm, iters = _newton(X, y, w, link, beta0, tol_grad=tol_grad, max_iter=max_iter)
    else:
        # standardize non-constant columns for conditioning; centering is only
        # possible when a constant column exists to absorb the shift
        col_mean = X.mean(axis=0)
        col_sd = X.std(axis=0)
        varying = col_sd > 0
        has_const = bool((~varying).any())
        mean_shift = np.where(varying & has_const, col_mean, 0.0)
        sd_scale = np.where(varying, col_sd, 1.0)
        Xs = (X - mean_shift) / sd_scale
        const = np.flatnonzero(~varying)

        if init is not None:
            beta0 = np.asarray(init, dtype=float) * sd_scale
            # fold the centering shift into the constant column, if any
            shift = float(np.asarray(init, dtype=float) @ mean_shift)
            if const.size and shift != 0.0:
                beta0 = beta0.copy()
                beta0[const[0]] += shift / X[0, const[0]]
        else:
            beta0 = np.zeros(k)

        beta_s, _, gnorm, iters = _newton(Xs, y, w, link, beta0, tol_grad=tol_grad, max_iter=max_iter)

        beta = beta_s / sd_scale
        if const.size:
            shift = float(beta_s[varying] @ (mean_shift[varying] / sd_scale[varying]))
            beta = beta.copy()
            beta[const[0]] -= shift / X[0, const[0]]

    converged = gnorm <= 1e-8 * max(1.0, float(np.sum(w)))
    if column_names is None:
        column_names = tuple(f"col{i}" for i in range(k))
    return GlmFit(
        coefficients=beta,
        link=link,
        converged=bool(converged),
        iterations=iters,
        design_columns=tuple(column_names),
    )


def predict_mean(fit: GlmFit, design) -> np.ndarray:
    """Elementwise mean prediction h(X @ coefficients); no clamping."""
    X = np.asarray(design, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(fit.coefficients):
        raise DataError("design column count does not match fitted coefficients")
    return np.asarray(link_inverse(fit.link, X @ fit.coefficients))
