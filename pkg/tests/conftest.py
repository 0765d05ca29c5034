"""Shared fixtures: synthetic trial datasets and CLI input files."""

import csv
import json

import numpy as np
import pytest

from dritc.data_model import BalanceSpec, Dataset


def expit(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


def make_trial(
    n=1000,
    p=2,
    seed=0,
    prop_coef=(0.7, -0.4),
    out_coef=(1.0, -0.8),
    out_intercept=0.3,
    treat_effect=0.8,
):
    """A generic externally controlled trial with logistic mechanisms."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    ps = expit(X @ np.asarray(prop_coef))
    S = (rng.random(n) < ps).astype(float)
    py = expit(out_intercept + X @ np.asarray(out_coef) + treat_effect * S)
    Y = (rng.random(n) < py).astype(float)
    return Dataset(X, S, Y)


@pytest.fixture
def trial():
    return make_trial()


@pytest.fixture
def spec2():
    return BalanceSpec.main_effects(2)


def write_applied_inputs(tmp_path, m=2000, seed=123):
    """The lung-cancer-style aggregate-mode inputs: SAT CSV + config JSON.

    Outcomes reproduce the 390-of-500 SAT responders and the published
    external aggregates (age Normal(50.06, 3.24); male 0.49; ECOG 0.35;
    smoking 0.19; 120-of-300 responders).
    """
    rng = np.random.default_rng(11)
    n1 = 500
    age = rng.normal(59.85, 9.01, n1)
    sex = (rng.random(n1) < 0.38).astype(int)
    ecog = (rng.random(n1) < 0.41).astype(int)
    smoke = (rng.random(n1) < 0.32).astype(int)
    y = np.r_[np.ones(390), np.zeros(110)].astype(int)
    data_path = tmp_path / "sat.csv"
    with open(data_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "treatment", "outcome", "age", "sex", "ecog", "smoke"])
        for i in range(n1):
            w.writerow([1, 1, int(y[i]), repr(float(age[i])), sex[i], ecog[i], smoke[i]])
    config = {
        "covariates": ["age", "sex", "ecog", "smoke"],
        "balance_terms": [
            {"indices": [0], "exponents": [1]},
            {"indices": [1], "exponents": [1]},
            {"indices": [2], "exponents": [1]},
            {"indices": [3], "exponents": [1]},
            {"indices": [0], "exponents": [2]},
        ],
        "ad_target": {
            "marginals": [
                {"kind": "normal", "mean": 50.06, "sd": 3.24},
                {"kind": "bernoulli", "prob": 0.49},
                {"kind": "bernoulli", "prob": 0.35},
                {"kind": "bernoulli", "prob": 0.19},
            ],
            "correlation": [
                1.0, 0.03, 0.0, 0.0,
                0.03, 1.0, -0.14, -0.02,
                0.0, -0.14, 1.0, -0.01,
                0.0, -0.02, -0.01, 1.0,
            ],
            "control_outcome": 0.4,
            "control_n": 300,
            "M": m,
            "seed": seed,
        },
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config, indent=1))
    return str(data_path), str(config_path)


@pytest.fixture
def applied_inputs(tmp_path):
    return write_applied_inputs(tmp_path)
