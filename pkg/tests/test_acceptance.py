"""Acceptance suite.

Each criterion prints one PASS/FAIL line. The scenario studies are scaled
to 1000 replications (KS1) and 500 replications (KS2-KS4) at n=1000 with
B=200 bootstrap resamples, run once per pytest session; expect these to
dominate the suite's runtime (roughly an hour on a single core, scaling
down with available cores).
"""

import json
import math
import time

import numpy as np
import pytest

from dritc.data_model import BalanceSpec, BalanceTerm, Dataset, balance_matrix
from dritc.errors import InfeasibleBalanceError
from dritc.estimators import battery_specs, estimate_att, estimate_battery
from dritc.glm import Link, fit_bernoulli, predict_mean
from dritc.inference import BootstrapConfig, delta_se_logodds, se_decomposition, z_quantile
from dritc.simlab import ScenarioConfig, run_study, true_estimand
from dritc.weighting import balance_report, entropy_balance, feasibility_check

TRUTH_SEED = 20260810
TRUTH_DRAWS = 10_000_000
REFERENCE_TRUTHS = {"KS1": 1.116, "KS2": 1.215, "KS3": 1.068, "KS4": 1.181}
STUDY_SEEDS = {"KS1": 31415, "KS2": 31416, "KS3": 31417, "KS4": 31418}


def check(criterion: str, conditions: list[tuple[bool, str]]):
    """Print one summary line for the criterion, then assert."""
    failed = [detail for ok, detail in conditions if not ok]
    status = "PASS" if not failed else "FAIL"
    print(f"\nACCEPTANCE {criterion}: {status}" + ("" if not failed else f" — {'; '.join(failed)}"))
    assert not failed, f"criterion {criterion}: {failed}"


@pytest.fixture(scope="session")
def truths():
    out = {}
    for scenario, want in REFERENCE_TRUTHS.items():
        t0 = time.time()
        value = true_estimand(scenario, draws=TRUTH_DRAWS, seed=TRUTH_SEED)
        out[scenario] = (value, time.time() - t0)
    return out


def _study(scenario: str, replications: int, truth: float):
    config = ScenarioConfig(
        scenario=scenario,
        n=1000,
        replications=replications,
        seed=STUDY_SEEDS[scenario],
        bootstrap=BootstrapConfig(b=200, seed=STUDY_SEEDS[scenario]),
        truth=truth,
    )
    return run_study(config)


@pytest.fixture(scope="session")
def ks1_study(truths):
    return _study("KS1", 1000, truths["KS1"][0])


@pytest.fixture(scope="session")
def ks1_study_repeat(truths):
    return _study("KS1", 1000, truths["KS1"][0])


@pytest.fixture(scope="session")
def ks2_study(truths):
    return _study("KS2", 500, truths["KS2"][0])


@pytest.fixture(scope="session")
def ks3_study(truths):
    return _study("KS3", 500, truths["KS3"][0])


@pytest.fixture(scope="session")
def ks4_study(truths):
    return _study("KS4", 500, truths["KS4"][0])


def test_criterion_1_true_estimands(truths):
    conditions = []
    for scenario, want in REFERENCE_TRUTHS.items():
        value, elapsed = truths[scenario]
        conditions.append(
            (abs(value - want) <= 0.01, f"{scenario} value {value:.4f} vs {want}")
        )
        conditions.append(
            (elapsed <= 120.0, f"{scenario} took {elapsed:.0f}s > 120s")
        )
    check("1 (true estimands)", conditions)


def test_criterion_2_applied_aggregates():
    mu1, n1 = 390 / 500, 500
    mu0, n0 = 120 / 300, 300
    point = math.log(mu1 / (1 - mu1)) - math.log(mu0 / (1 - mu0))
    se1 = delta_se_logodds(mu1, n1)
    se0 = delta_se_logodds(mu0, n0)
    se = se_decomposition(se1, se0)
    z = z_quantile(0.95)
    lo, hi = point - z * se, point + z * se
    composite = se_decomposition(0.164, 0.118)
    check(
        "2 (applied-example aggregates)",
        [
            (round(point, 3) == 1.671, f"naive point {point:.4f}"),
            (round(lo, 3) == 1.358, f"ci lower {lo:.4f}"),
            (round(hi, 3) == 1.984, f"ci upper {hi:.4f}"),
            (round(se1, 3) == 0.108, f"treated delta SE {se1:.4f}"),
            (round(se0, 3) == 0.118, f"control delta SE {se0:.4f}"),
            (round(composite, 3) == 0.202, f"composite SE {composite:.4f}"),
        ],
    )


def test_criterion_3_ks1_table(ks1_study):
    rep = ks1_study
    dr = rep.estimators["dr_maic_logit"]
    maic = rep.estimators["maic"]
    gcomp = rep.estimators["gcomp_logit"]
    weighting_keys = [
        k for k in rep.estimators
        if k not in ("naive", "gcomp_logit", "gcomp_cauchit")
    ]
    conditions = [
        (abs(dr.bias - 0.007) <= 0.02, f"dr_maic bias {dr.bias:+.4f} vs 0.007±0.02"),
        (
            abs(dr.ese - 0.170) <= 0.15 * 0.170,
            f"dr_maic ESE {dr.ese:.4f} vs 0.170±15%",
        ),
        (
            0.92 <= dr.coverage <= 0.96,
            f"dr_maic coverage {dr.coverage:.3f} outside [0.92, 0.96]",
        ),
        (
            abs(maic.ese - 0.172) <= 0.15 * 0.172,
            f"maic ESE {maic.ese:.4f} vs 0.172±15%",
        ),
    ]
    for key in weighting_keys:
        perf = rep.estimators[key]
        margin = perf.ese - gcomp.ese
        need = 2.0 * max(perf.mcse_ese, gcomp.mcse_ese)
        conditions.append(
            (
                margin > need,
                f"gcomp ESE {gcomp.ese:.4f} not below {key} ESE {perf.ese:.4f} "
                f"by more than {need:.4f}",
            )
        )
    check("3 (scaled KS1 table)", conditions)


def test_criterion_4_ks2_double_robustness(ks2_study):
    rep = ks2_study
    dr = rep.estimators["dr_maic_cauchit"]
    gc = rep.estimators["gcomp_cauchit"]
    wg = rep.estimators["wgcomp_maic_cauchit"]
    check(
        "4 (KS2 double robustness)",
        [
            (abs(dr.bias) < 0.05, f"dr_maic cauchit bias {dr.bias:+.4f} not < 0.05"),
            (gc.bias > 0.15, f"gcomp cauchit bias {gc.bias:+.4f} not > 0.15"),
            (wg.bias > 0.07, f"wgcomp_maic cauchit bias {wg.bias:+.4f} not > 0.07"),
        ],
    )


def test_criterion_5_ks3_weighting_misspecified(ks3_study):
    rep = ks3_study
    maic = rep.estimators["maic"]
    gc = rep.estimators["gcomp_logit"]
    check(
        "5 (KS3 table)",
        [
            (abs(maic.bias - 0.104) <= 0.03, f"maic bias {maic.bias:+.4f} vs 0.104±0.03"),
            (abs(gc.bias - 0.005) <= 0.02, f"gcomp logit bias {gc.bias:+.4f} vs 0.005±0.02"),
        ],
    )


def test_criterion_6_ks4_dual_misspecification(ks4_study):
    rep = ks4_study
    conditions = []
    for key, perf in rep.estimators.items():
        conditions.append(
            (abs(perf.bias) > 0.3, f"{key} bias {perf.bias:+.4f} not > 0.3 in magnitude")
        )
    dr = rep.estimators["dr_maic_cauchit"]
    gc = rep.estimators["gcomp_cauchit"]
    margin = gc.bias - dr.bias
    need = 2.0 * max(dr.mcse_bias, gc.mcse_bias)
    conditions.append(
        (
            margin > need,
            f"dr_maic cauchit bias {dr.bias:+.4f} not below gcomp cauchit "
            f"{gc.bias:+.4f} by more than {need:.4f}",
        )
    )
    check("6 (KS4 table)", conditions)


def _random_balance_instance(rng):
    n1 = int(rng.integers(5, 201))
    p = int(rng.integers(1, 5))
    X = rng.standard_normal((n1, p))
    terms = [BalanceTerm((j,), (1,)) for j in range(p)]
    extra = [BalanceTerm((j,), (2,)) for j in range(p)]
    extra += [
        BalanceTerm((a, b), (1, 1)) for a in range(p) for b in range(a + 1, p)
    ]
    order = rng.permutation(len(extra))
    take = int(rng.integers(0, min(len(extra), 8 - p) + 1)) if extra else 0
    spec = BalanceSpec(tuple(terms + [extra[j] for j in order[:take]]))
    return X, spec


def test_criterion_7_exact_balance_suite():
    rng = np.random.default_rng(424242)
    conditions = []
    worst_gap = 0.0
    n_minimality = 0
    n_infeasible_checked = 0
    for i in range(200):
        X, spec = _random_balance_instance(rng)
        C = balance_matrix(spec, X)
        lam = rng.dirichlet(np.ones(X.shape[0]))
        target = C.T @ lam
        ws = entropy_balance(X, spec, target)
        gap = balance_report(ws, X, spec, target).max_gap
        worst_gap = max(worst_gap, gap)
        if gap >= 1e-8:
            conditions.append((False, f"instance {i}: max_gap {gap:.2e}"))

        if i % 20 == 0:
            # entropy minimality against projected feasible perturbations
            v = ws.weights
            A = np.vstack([C.T, np.ones((1, len(v)))])
            b = np.concatenate([target, [1.0]])
            proj = np.linalg.pinv(A)
            base = float(v @ np.log(v))
            for _ in range(100):
                pert = v + rng.normal(0.0, 0.005, len(v))
                pert = pert - proj @ (A @ pert - b)
                while (pert <= 0).any():
                    pert = v + 0.5 * (pert - v)
                if float(pert @ np.log(pert)) < base - 1e-9:
                    conditions.append((False, f"instance {i}: entropy not minimal"))
                    break
            n_minimality += 1

        if i % 4 == 0:
            # push the target strictly outside the hull; solver and LP must
            # agree that the instance is infeasible
            outside = C.max(axis=0) + 0.5 + rng.uniform(0, 1, spec.k)
            lp = feasibility_check(C, outside)
            raised = False
            try:
                entropy_balance(X, spec, outside)
            except InfeasibleBalanceError:
                raised = True
            if lp.feasible or not raised:
                conditions.append(
                    (False, f"instance {i}: inconsistent infeasibility handling")
                )
            n_infeasible_checked += 1
    conditions.insert(
        0,
        (
            worst_gap < 1e-8,
            f"worst max_gap {worst_gap:.2e} over 200 feasible instances",
        ),
    )
    conditions.insert(
        1, (n_minimality >= 10, f"only {n_minimality} minimality checks ran")
    )
    conditions.insert(
        2, (n_infeasible_checked >= 50, f"only {n_infeasible_checked} infeasible checks ran")
    )
    check("7 (exact balance suite)", conditions)


def _discrete_oracle_dataset(n, seed):
    """Single binary covariate with known cell probabilities."""
    rng = np.random.default_rng(seed)
    px = 0.4  # Pr(X=1)
    e = {0: 0.62, 1: 0.35}  # Pr(S=1 | X=x)
    p1 = {0: 0.55, 1: 0.80}  # Pr(Y=1 | T=1, X=x)
    p0 = {0: 0.30, 1: 0.50}  # Pr(Y=1 | T=0, X=x)
    x = (rng.random(n) < px).astype(float)
    ps = np.where(x == 1, e[1], e[0])
    s = (rng.random(n) < ps).astype(float)
    py = np.where(
        s == 1, np.where(x == 1, p1[1], p1[0]), np.where(x == 1, p0[1], p0[0])
    )
    y = (rng.random(n) < py).astype(float)
    ds = Dataset(x.reshape(-1, 1), s, y)

    # closed forms via Bayes' rule with the true cell probabilities
    pr_x1_s0 = (1 - e[1]) * px / ((1 - e[1]) * px + (1 - e[0]) * (1 - px))
    pr_x1_s1 = e[1] * px / (e[1] * px + e[0] * (1 - px))
    mu01 = p1[1] * pr_x1_s0 + p1[0] * (1 - pr_x1_s0)  # E(Y^1 | S=0)
    mu00 = p0[1] * pr_x1_s0 + p0[0] * (1 - pr_x1_s0)  # E(Y^0 | S=0)
    mu10 = p0[1] * pr_x1_s1 + p0[0] * (1 - pr_x1_s1)  # E(Y^0 | S=1)
    mu11 = p1[1] * pr_x1_s1 + p1[0] * (1 - pr_x1_s1)  # E(Y^1 | S=1)
    g = lambda q: math.log(q / (1 - q))
    return ds, g(mu01) - g(mu00), g(mu11) - g(mu10)


def test_criterion_8_discrete_covariate_oracle():
    ds, atc_closed, att_closed = _discrete_oracle_dataset(50_000, seed=606)
    spec = BalanceSpec.main_effects(1)
    run = estimate_battery(ds, battery_specs(spec))
    conditions = []
    for entry in run.entries:
        if entry.key == "naive":
            continue
        err_msg = f"{entry.key} failed: {entry.error}" if entry.result is None else None
        if err_msg:
            conditions.append((False, err_msg))
            continue
        diff = abs(entry.result.point - atc_closed)
        conditions.append(
            (diff < 0.02, f"ATC {entry.key} off closed form by {diff:.4f}")
        )
    for method in ("iow", "iow_norm", "maic", "gcomp", "dr_iow", "dr_iow_norm",
                   "dr_maic", "wgcomp_iow_norm", "wgcomp_maic"):
        res = estimate_att(ds, spec, method, Link.LOGIT)
        diff = abs(res.point - att_closed)
        conditions.append(
            (diff < 0.02, f"ATT {method} off closed form by {diff:.4f}")
        )
    check("8 (discrete-covariate oracle)", conditions)


def test_criterion_9_glm_correctness():
    from dritc.glm import bernoulli_loglik, bernoulli_score

    rng = np.random.default_rng(321)
    conditions = []

    # score-equation residual orthogonality on weighted logit fits
    worst_score = 0.0
    for trial in range(10):
        n = 500
        X = np.column_stack([np.ones(n), rng.standard_normal((n, 3))])
        y = (rng.random(n) < 0.45).astype(float)
        w = rng.uniform(0.1, 2.5, n)
        fit = fit_bernoulli(X, y, weights=w)
        p = predict_mean(fit, X)
        score = np.abs(X.T @ (w * (y - p))).max() / w.sum()
        worst_score = max(worst_score, score)
    conditions.append(
        (worst_score < 1e-8, f"score residual {worst_score:.2e} not < 1e-8")
    )

    # analytic vs central finite-difference gradients
    worst_rel = 0.0
    X = np.column_stack([np.ones(150), rng.standard_normal((150, 2))])
    y = (rng.random(150) < 0.5).astype(float)
    w = rng.uniform(0.5, 1.5, 150)
    step = 1e-5
    for link in Link:
        for trial in range(8):
            beta = rng.uniform(-1.5, 1.5, 3)
            g = bernoulli_score(X, y, beta, link, weights=w)
            fd = np.empty(3)
            for j in range(3):
                e = np.zeros(3)
                e[j] = step
                fd[j] = (
                    bernoulli_loglik(X, y, beta + e, link, weights=w)
                    - bernoulli_loglik(X, y, beta - e, link, weights=w)
                ) / (2 * step)
            rel = float(np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(fd))))
            worst_rel = max(worst_rel, rel)
    conditions.append(
        (worst_rel < 1e-6, f"finite-difference gradient mismatch {worst_rel:.2e}")
    )

    # saturated-model cell-mean recovery
    x = np.r_[np.zeros(400), np.ones(400)]
    y = np.r_[np.ones(120), np.zeros(280), np.ones(300), np.zeros(100)]
    X = np.column_stack([np.ones(800), x])
    worst_cell = 0.0
    for link in Link:
        fit = fit_bernoulli(X, y, link=link)
        pred = predict_mean(fit, np.array([[1.0, 0.0], [1.0, 1.0]]))
        worst_cell = max(
            worst_cell, abs(pred[0] - 0.30), abs(pred[1] - 0.75)
        )
    conditions.append(
        (worst_cell < 1e-10, f"saturated cell recovery error {worst_cell:.2e}")
    )
    check("9 (GLM correctness)", conditions)


def test_criterion_10_determinism(ks1_study, ks1_study_repeat):
    a = json.dumps(ks1_study.to_dict(), sort_keys=True)
    b = json.dumps(ks1_study_repeat.to_dict(), sort_keys=True)
    check(
        "10 (study determinism)",
        [(a == b, "repeated KS1 study reports are not byte-identical")],
    )
