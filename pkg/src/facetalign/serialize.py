"""Stable JSON serialization for result files.

All result files carry a ``schema_version`` field and are written with
sorted keys so repeated runs with the same seed are byte-identical.
Missing cells (NaN) serialize as null.
"""

from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

from .align import DualState, StepRecord, TrainConfig, TrainTrace
from .params import FacetParams
from .rasch import FitConfig, FitResult
from .scoring import ModelScorecard, StatReport

SCHEMA_VERSION = 1


def _jsonable(value):
    """Convert numpy scalars/arrays and NaN to JSON-safe values."""
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return None if np.isnan(v) else v
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return value


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, allow_nan=False)


# ---------------------------------------------------------------------------
# Facet parameters and fit results
# ---------------------------------------------------------------------------

def facet_params_to_dict(params: FacetParams) -> dict:
    return {
        "models": list(params.models),
        "questions": list(params.questions),
        "judges": list(params.judges),
        "rubrics": list(params.rubrics),
        "theta": _jsonable(params.theta),
        "gamma": _jsonable(params.gamma),
        "delta": _jsonable(params.delta),
        "phi": _jsonable(params.phi),
    }


def facet_params_from_dict(d: dict) -> FacetParams:
    def arr(x):
        return np.array(
            [[np.nan if v is None else v for v in row] for row in x]
            if x and isinstance(x[0], list)
            else [np.nan if v is None else v for v in x],
            dtype=float,
        )

    theta = arr(d["theta"])
    if theta.ndim == 1:
        theta = theta.reshape(len(d["models"]), len(d["questions"]))
    return FacetParams(
        models=tuple(d["models"]),
        questions=tuple(d["questions"]),
        judges=tuple(d["judges"]),
        rubrics=tuple(d["rubrics"]),
        theta=theta,
        gamma=arr(d["gamma"]),
        delta=arr(d["delta"]),
        phi=arr(d["phi"]),
    )


def fit_result_to_dict(result: FitResult) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "fit_result",
        "dimension": result.dimension,
        "converged": bool(result.converged),
        "iters_used": int(result.iters_used),
        "config": asdict(result.config),
        "nll_trace": _jsonable(list(result.nll_trace)),
        "params": facet_params_to_dict(result.params),
        "ses": facet_params_to_dict(result.ses),
    }


def fit_result_from_dict(d: dict) -> FitResult:
    return FitResult(
        params=facet_params_from_dict(d["params"]),
        ses=facet_params_from_dict(d["ses"]),
        nll_trace=tuple(d["nll_trace"]),
        converged=bool(d["converged"]),
        iters_used=int(d["iters_used"]),
        config=FitConfig(**d["config"]),
        dimension=d.get("dimension", ""),
    )


def write_fit_result(result: FitResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(fit_result_to_dict(result)) + "\n")


def read_fit_result(path) -> FitResult:
    with open(path, encoding="utf-8") as fh:
        return fit_result_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Scorecards and stat reports
# ---------------------------------------------------------------------------

def scorecard_to_record(card: ModelScorecard) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "model": card.model_id,
        "method": card.method,
        "scores": dict(card.dim_scores),
        "ses": dict(card.dim_ses),
        "coverage": dict(card.coverage),
        "peer": card.peer,
        "dignity": card.dignity,
    }


def write_scorecards(cards, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for card in cards:
            fh.write(dumps(scorecard_to_record(card)) + "\n")


def stat_report_to_dict(report: StatReport) -> dict:
    d = asdict(report)
    d["schema_version"] = SCHEMA_VERSION
    return d


def write_stat_report(report: StatReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(stat_report_to_dict(report)) + "\n")


# ---------------------------------------------------------------------------
# Training traces and configs
# ---------------------------------------------------------------------------

def dual_state_to_dict(dual: DualState) -> dict:
    return {
        "lambdas": dict(dual.lambdas),
        "epsilon": dict(dual.epsilon),
        "eta_lambda": dual.eta_lambda,
        "lambda_max": dual.lambda_max,
        "update_rule": dual.update_rule,
    }


def step_record_to_dict(rec: StepRecord) -> dict:
    return {
        "step": rec.step,
        "losses": dict(rec.losses),
        "lambdas": dict(rec.lambdas),
        "objective": rec.objective,
        "grad_norm": rec.grad_norm,
        "feasible": bool(rec.feasible),
    }


def write_trace(trace: TrainTrace, path) -> None:
    header = {
        "schema_version": SCHEMA_VERSION,
        "kind": "trace",
        "dims": list(trace.dims),
        "config": {
            k: v
            for k, v in asdict(trace.config).items()
            if k != "record_logits"
        },
        "dual_final": dual_state_to_dict(trace.dual_final),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(header) + "\n")
        for rec in trace.records:
            fh.write(dumps(step_record_to_dict(rec)) + "\n")


TRAIN_CONFIG_KEYS = {
    "algo",
    "steps",
    "beta",
    "primal_lr",
    "batch_size",
    "seed",
    "dual_loss_ema",
    "epsilon",
    "eta_lambda",
    "lambda_max",
    "update_rule",
}


def parse_train_config(d: dict, dims) -> tuple[TrainConfig, DualState]:
    """Build a TrainConfig and DualState from one config mapping.

    Unknown keys are rejected.  ``epsilon`` may be a single number or a
    per-dimension object.
    """
    unknown = sorted(set(d) - TRAIN_CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys {unknown}")
    if "algo" not in d or "steps" not in d:
        raise ValueError("config requires at least 'algo' and 'steps'")
    config = TrainConfig(
        algo=d["algo"],
        steps=int(d["steps"]),
        beta=float(d.get("beta", 0.1)),
        primal_lr=float(d.get("primal_lr", 0.05)),
        batch_size=None if d.get("batch_size") is None else int(d["batch_size"]),
        seed=int(d.get("seed", 0)),
        dual_loss_ema=(
            None if d.get("dual_loss_ema") is None else float(d["dual_loss_ema"])
        ),
    )
    eps = d.get("epsilon", 0.5)
    if isinstance(eps, dict):
        epsilon = {str(k): float(v) for k, v in eps.items()}
        if set(epsilon) != set(dims):
            raise ValueError("per-dimension epsilon must cover exactly the dims")
    else:
        epsilon = {dim: float(eps) for dim in dims}
    dual = DualState(
        lambdas={dim: 0.0 for dim in dims},
        epsilon=epsilon,
        eta_lambda=float(d.get("eta_lambda", 0.01)),
        lambda_max=float(d.get("lambda_max", 10.0)),
        update_rule=str(d.get("update_rule", "signed")),
    )
    return config, dual
