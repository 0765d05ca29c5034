"""Command-line front door.

Subcommands: ``estimate``, ``bootstrap``, ``simulate``, ``truth`` and
``check-feasibility``. Every artifact is JSON and embeds a run manifest
(command, resolved options, seed, version, input digests, timestamp);
identical invocations produce identical artifacts except for the timestamp.

Exit codes: 0 success, 1 usage error, 2 computation error.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import math
import os
import sys

import click
import numpy as np

from . import __version__
from .data_model import (
    AggregateTarget,
    AnalysisConfig,
    Dataset,
    balance_matrix,
    load_config,
    load_ipd,
    target_from_ipd,
)
from .errors import DataError, DritcError
from .estimators import (
    LINKED_METHODS,
    METHODS,
    EstimatorSpec,
    estimate_battery,
)
from .glm import Link
from .inference import BootstrapConfig, bootstrap as run_bootstrap, delta_se_logodds, se_decomposition, z_quantile
from .pseudo_population import CopulaSpec, make_ad_dataset, simulate_profiles
from .simlab import ScenarioConfig, run_study, true_estimand
from .weighting import balance_report, entropy_balance, feasibility_check

_DEFAULT_AD_M = 10_000
_DEFAULT_AD_SEED = 0


def _digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def _manifest(command: str, options: dict, seed, inputs: list[str]) -> dict:
    return {
        "command": command,
        "options": options,
        "seed": seed,
        "version": __version__,
        "inputs": {p: _digest(p) for p in inputs if p},
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        click.echo(text)


def _load_inputs(data: str, config: str, ad_target: str | None):
    """Shared ingestion: config, optional aggregate target, stacked dataset."""
    cfg = load_config(config)
    target = cfg.ad_target
    pseudo_m, pseudo_seed = cfg.pseudo_m, cfg.pseudo_seed
    if ad_target:
        with open(ad_target, "r", encoding="utf-8") as fh:
            ad_cfg = json.load(fh)
        if "ad_target" in ad_cfg:
            ad_cfg = ad_cfg["ad_target"]
        target = AggregateTarget.from_config(ad_cfg)
        pseudo_m = int(ad_cfg["M"]) if "M" in ad_cfg else None
        pseudo_seed = int(ad_cfg["seed"]) if "seed" in ad_cfg else None
    ad_mode = target is not None
    dataset = load_ipd(data, cfg.covariates, ad_mode=ad_mode)
    if ad_mode and dataset.n0 == 0:
        # no pre-simulated pseudo-controls in the file: draw them
        spec = CopulaSpec.from_target(
            target,
            pseudo_m if pseudo_m is not None else _DEFAULT_AD_M,
            pseudo_seed if pseudo_seed is not None else _DEFAULT_AD_SEED,
        )
        dataset = make_ad_dataset(dataset, simulate_profiles(spec), target)
    return cfg, dataset, target


def _parse_methods(methods: str, link: Link, estimand: str, cfg: AnalysisConfig):
    names = [m.strip() for m in methods.split(",") if m.strip()]
    if not names or "all" in names:
        names = list(METHODS)
    specs = []
    for name in names:
        if name not in METHODS:
            raise click.UsageError(
                f"unknown method {name!r}; choose from {', '.join(METHODS)} or 'all'"
            )
        specs.append(EstimatorSpec(name, link, estimand, cfg.balance))
    return specs


def _naive_interval(result, dataset: Dataset, target, level: float):
    """Analytic delta-method Wald interval for the naive contrast."""
    se1 = delta_se_logodds(result.mu_treated, dataset.n1)
    if target is not None:
        se0 = target.se_g_mu0
    else:
        se0 = delta_se_logodds(result.mu_control, dataset.n0)
    se = se_decomposition(se1, se0)
    z = z_quantile(level)
    return se, (result.point - z * se, result.point + z * se)


@click.group(name="dritc")
@click.version_option(version=__version__)
def cli():
    """Estimators for externally controlled single-arm trials."""


@cli.command("estimate")
@click.option("--data", required=True, type=click.Path(), help="Subject-level CSV.")
@click.option("--config", required=True, type=click.Path(), help="JSON sidecar config.")
@click.option("--methods", default="all", show_default=True, help="Comma list of methods or 'all'.")
@click.option("--estimand", type=click.Choice(["atc", "att"]), default="atc", show_default=True)
@click.option("--link", type=click.Choice(["logit", "cauchit"]), default="logit", show_default=True)
@click.option("--ad-target", type=click.Path(), default=None, help="Aggregate-target JSON (enables AD mode).")
@click.option("--out", type=click.Path(), default=None, help="Write JSON here instead of stdout.")
def estimate_cmd(data, config, methods, estimand, link, ad_target, out):
    """Point estimates for the selected methods (one JSON record each)."""
    cfg, dataset, target = _load_inputs(data, config, ad_target)
    link_kind = Link(link)
    specs = _parse_methods(methods, link_kind, estimand, cfg)
    run = estimate_battery(dataset, specs, target=target)
    records = []
    for entry in run.entries:
        if entry.result is None:
            records.append({"method": entry.key, "error": entry.error})
            continue
        r = entry.result
        rec = {
            "method": entry.key,
            "estimand": r.estimand,
            "point": r.point,
            "mu_treated": r.mu_treated,
            "mu_control": r.mu_control,
            "ess": r.ess,
            "se": None,
            "ci": None,
        }
        if entry.key == "naive":
            se, ci = _naive_interval(r, dataset, target, 0.95)
            rec["se"] = se
            rec["ci"] = list(ci)
        records.append(rec)
    payload = {
        "manifest": _manifest(
            "estimate",
            {"methods": methods, "estimand": estimand, "link": link},
            None,
            [data, config, ad_target],
        ),
        "results": records,
    }
    _emit(payload, out)


@cli.command("bootstrap")
@click.option("--data", required=True, type=click.Path())
@click.option("--config", required=True, type=click.Path())
@click.option("--methods", default="all", show_default=True)
@click.option("--estimand", type=click.Choice(["atc", "att"]), default="atc", show_default=True)
@click.option("--link", type=click.Choice(["logit", "cauchit"]), default="logit", show_default=True)
@click.option("--ad-target", type=click.Path(), default=None)
@click.option("--B", "b", default=1000, show_default=True, help="Bootstrap resamples.")
@click.option("--seed", default=0, show_default=True, help="Resampling seed.")
@click.option("--ci", type=click.Choice(["wald", "percentile"]), default="wald", show_default=True)
@click.option("--level", default=0.95, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def bootstrap_cmd(data, config, methods, estimand, link, ad_target, b, seed, ci, level, out):
    """Bootstrap SEs and CIs for the selected methods."""
    cfg, dataset, target = _load_inputs(data, config, ad_target)
    strata = "sat_only" if dataset.ad_mode else "by_source"
    boot_cfg = BootstrapConfig(b=b, seed=seed, strata=strata, ci=ci, level=level)
    specs = _parse_methods(methods, Link(link), estimand, cfg)
    records = []
    for spec in specs:
        try:
            res = run_bootstrap(dataset, spec, boot_cfg, target=target)
        except DritcError as exc:
            records.append({"method": spec.method_key, "error": str(exc)})
            continue
        records.append(
            {
                "method": spec.method_key,
                "point": res.point,
                "se": res.se,
                "ci": [res.lower, res.upper],
                "se_g_mu1": res.se_mu1,
                "n_failed_resamples": res.n_failed_resamples,
                "caveats": list(res.caveats),
            }
        )
    payload = {
        "manifest": _manifest(
            "bootstrap",
            {
                "methods": methods,
                "estimand": estimand,
                "link": link,
                "B": b,
                "ci": ci,
                "level": level,
                "strata": strata,
            },
            seed,
            [data, config, ad_target],
        ),
        "results": records,
    }
    _emit(payload, out)


@cli.command("simulate")
@click.option("--scenario", required=True, type=click.Choice(["KS1", "KS2", "KS3", "KS4"]))
@click.option("--n", default=1000, show_default=True)
@click.option("--reps", default=1000, show_default=True)
@click.option("--B", "b", default=200, show_default=True)
@click.option("--seed", required=True, type=int, help="Mandatory study seed.")
@click.option("--truth", type=float, default=None, help="Skip the Monte Carlo truth run.")
@click.option("--threads", type=int, default=None, help="Worker processes (default: all cores).")
@click.option("--out", type=click.Path(), default=None)
def simulate_cmd(scenario, n, reps, b, seed, truth, threads, out):
    """Replicated benchmark study with the full 16-estimator battery."""
    config = ScenarioConfig(
        scenario=scenario,
        n=n,
        replications=reps,
        seed=seed,
        bootstrap=BootstrapConfig(b=b, seed=seed),
        truth=truth,
    )
    report = run_study(config, threads=threads)
    payload = {
        "manifest": _manifest(
            "simulate",
            {"scenario": scenario, "n": n, "reps": reps, "B": b, "truth": truth},
            seed,
            [],
        ),
        **report.to_dict(),
    }
    _emit(payload, out)


@cli.command("truth")
@click.option("--scenario", required=True, type=click.Choice(["KS1", "KS2", "KS3", "KS4"]))
@click.option("--draws", default=10_000_000, show_default=True)
@click.option("--seed", required=True, type=int, help="Mandatory seed.")
@click.option("--out", type=click.Path(), default=None)
def truth_cmd(scenario, draws, seed, out):
    """Monte Carlo value of the true contrast for one scenario."""
    value = true_estimand(scenario, draws=draws, seed=seed)
    payload = {
        "manifest": _manifest("truth", {"scenario": scenario, "draws": draws}, seed, []),
        "scenario": scenario,
        "draws": draws,
        "value": value,
    }
    _emit(payload, out)


@cli.command("check-feasibility")
@click.option("--data", required=True, type=click.Path())
@click.option("--config", required=True, type=click.Path())
@click.option("--ad-target", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), default=None)
def check_feasibility_cmd(data, config, ad_target, out):
    """Convex-hull feasibility of the balance problem, as JSON."""
    cfg, dataset, target = _load_inputs(data, config, ad_target)
    if target is not None:
        theta = target.moments_for(cfg.balance)
    else:
        theta = target_from_ipd(cfg.balance, dataset)
    C = balance_matrix(cfg.balance, dataset.sat_covariates)
    res = feasibility_check(C, theta)
    eb_gap = None
    if res.feasible:
        try:
            ws = entropy_balance(dataset.sat_covariates, cfg.balance, theta)
            eb_gap = balance_report(ws, dataset.sat_covariates, cfg.balance, theta).max_gap
        except DritcError:
            eb_gap = None
    payload = {
        "manifest": _manifest("check-feasibility", {}, None, [data, config, ad_target]),
        "feasible": res.feasible,
        "message": res.message,
        "witness_max_gap": res.max_gap,
        "entropy_balance_max_gap": eb_gap,
        "targets": list(map(float, theta)),
    }
    _emit(payload, out)


def dispatch(argv) -> int:
    """Run the CLI; 0 = success, 1 = usage error, 2 = computation error."""
    try:
        cli.main(args=list(argv), standalone_mode=False)
        return 0
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        if exc.ctx is not None:
            click.echo(exc.ctx.get_usage(), err=True)
        return 1
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except (DritcError, OSError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
