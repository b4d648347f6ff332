"""Command-line entry point: config parsing, subcommands, serialization.

Configs are JSON documents validated against a strict schema: unknown keys
are rejected with the offending path and every numeric range check is
reported path-qualified. Subcommands:

* ``run`` -- execute the configured experiment, write per-round metrics
  (CSV or JSON) plus a summary JSON, echo the summary to stdout.
* ``bound`` -- print the sample-complexity inputs and the resulting
  round count as a single JSON object.
* ``check-graph`` -- print the weight-matrix verdict: stationary vector,
  subdominant eigenvalue modulus, mixing bound and partial-sum residuals.

Exit codes: 0 success, 2 validation error, 3 runtime error. Diagnostics
go to stderr only.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import GraphError, NotStochasticError, validate_weight_matrix, verify_mixing_bound, spectral_gap
from .models import (
    BernoulliContextModel,
    CategoricalContextModel,
    LinearGaussianModel,
    NotGloballyLearnableError,
    ParameterSet,
    assumption_bounds,
    separation_table,
)
from .sim import Scenario, make_regression_test_set, run_experiment
from .theory import BoundInputs, sample_complexity

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


class ConfigError(Exception):
    """Base class for configuration failures."""


class ConfigSyntaxError(ConfigError):
    """The config is not valid JSON; message carries the position."""


class ConfigValidationError(ConfigError):
    """A validated field is missing, unknown, or out of range."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def _require(condition: bool, path: str, message: str) -> None:
    if not condition:
        raise ConfigValidationError(path, message)


def _check_keys(obj, path: str, required: set, optional: set) -> None:
    _require(isinstance(obj, dict), path, "expected an object")
    for key in obj:
        if key not in required and key not in optional:
            raise ConfigValidationError(f"{path}.{key}", "unknown key")
    for key in required:
        if key not in obj:
            raise ConfigValidationError(path, f"missing required key {key!r}")


def _number(value, path: str, minimum=None, maximum=None,
            exclusive_min=None, exclusive_max=None) -> float:
    _require(isinstance(value, (int, float)) and not isinstance(value, bool),
             path, "expected a number")
    value = float(value)
    _require(math.isfinite(value), path, "must be finite")
    if minimum is not None:
        _require(value >= minimum, path, f"must be >= {minimum}")
    if maximum is not None:
        _require(value <= maximum, path, f"must be <= {maximum}")
    if exclusive_min is not None:
        _require(value > exclusive_min, path, f"must be > {exclusive_min}")
    if exclusive_max is not None:
        _require(value < exclusive_max, path, f"must be < {exclusive_max}")
    return value


def _integer(value, path: str, minimum=None, maximum=None) -> int:
    _require(isinstance(value, int) and not isinstance(value, bool),
             path, "expected an integer")
    if minimum is not None:
        _require(value >= minimum, path, f"must be >= {minimum}")
    if maximum is not None:
        _require(value <= maximum, path, f"must be <= {maximum}")
    return value


def _number_list(value, path: str) -> list:
    _require(isinstance(value, list) and len(value) > 0, path, "expected a non-empty array")
    return [_number(v, f"{path}[{i}]") for i, v in enumerate(value)]


def _matrix(value, path: str) -> list:
    _require(isinstance(value, list) and len(value) > 0, path, "expected a non-empty array")
    rows = [_number_list(row, f"{path}[{i}]") for i, row in enumerate(value)]
    width = len(rows[0])
    for i, row in enumerate(rows):
        _require(len(row) == width, f"{path}[{i}]", "ragged matrix row")
    return rows


_MODEL_KEYS = {
    "bernoulli": ({"family", "true_probs", "visible"}, set()),
    "categorical": ({"family", "true_table", "visible"}, set()),
    "linear_gaussian": ({"family", "observed", "ranges"}, set()),
}


def _validate_model(entry, path: str) -> dict:
    _require(isinstance(entry, dict), path, "expected an object")
    family = entry.get("family")
    _require(family in _MODEL_KEYS, f"{path}.family",
             f"expected one of {sorted(_MODEL_KEYS)}")
    required, optional = _MODEL_KEYS[family]
    _check_keys(entry, path, required, optional)
    out = {"family": family}
    if family == "bernoulli":
        out["true_probs"] = [
            _number(v, f"{path}.true_probs[{i}]", minimum=0.0, maximum=1.0)
            for i, v in enumerate(
                entry["true_probs"] if isinstance(entry["true_probs"], list) else []
            )
        ]
        _require(bool(out["true_probs"]), f"{path}.true_probs", "expected a non-empty array")
        out["visible"] = [
            _integer(v, f"{path}.visible[{i}]", minimum=0)
            for i, v in enumerate(entry["visible"] if isinstance(entry["visible"], list) else [])
        ]
        _require(bool(out["visible"]), f"{path}.visible", "expected a non-empty array")
    elif family == "categorical":
        out["true_table"] = _matrix(entry["true_table"], f"{path}.true_table")
        out["visible"] = [
            _integer(v, f"{path}.visible[{i}]", minimum=0)
            for i, v in enumerate(entry["visible"] if isinstance(entry["visible"], list) else [])
        ]
        _require(bool(out["visible"]), f"{path}.visible", "expected a non-empty array")
    else:
        out["observed"] = [
            _integer(v, f"{path}.observed[{i}]", minimum=0)
            for i, v in enumerate(entry["observed"] if isinstance(entry["observed"], list) else [])
        ]
        ranges = _matrix(entry["ranges"], f"{path}.ranges")
        for i, row in enumerate(ranges):
            _require(len(row) == 2, f"{path}.ranges[{i}]", "expected a [low, high] pair")
            _require(row[0] < row[1], f"{path}.ranges[{i}]", "low bound must be below high")
        out["ranges"] = ranges
    return out


_SCENARIO_REQUIRED = {"engine", "graph", "n_rounds", "trials", "master_seed", "models"}
_SCENARIO_OPTIONAL = {
    "cooperative", "delta", "kl_mc_samples", "mixing_horizon", "parameters",
    "prior", "true_theta", "noise_std", "test_set", "bound",
}


def _validate_scenario(raw, path: str = "scenario") -> dict:
    _check_keys(raw, path, _SCENARIO_REQUIRED, _SCENARIO_OPTIONAL)
    out = {}
    engine = raw["engine"]
    _require(engine in ("discrete", "gaussian"), f"{path}.engine",
             "expected 'discrete' or 'gaussian'")
    out["engine"] = engine

    _check_keys(raw["graph"], f"{path}.graph", {"weights"}, set())
    weights = _matrix(raw["graph"]["weights"], f"{path}.graph.weights")
    try:
        validate_weight_matrix(weights)
    except NotStochasticError as exc:
        raise ConfigValidationError(f"{path}.graph.weights[{exc.row}]", str(exc)) from exc
    except (GraphError, ValueError) as exc:
        raise ConfigValidationError(f"{path}.graph.weights", str(exc)) from exc
    out["graph"] = {"weights": weights}

    out["n_rounds"] = _integer(raw["n_rounds"], f"{path}.n_rounds", minimum=1)
    out["trials"] = _integer(raw["trials"], f"{path}.trials", minimum=1)
    out["master_seed"] = _integer(raw["master_seed"], f"{path}.master_seed",
                                  minimum=0, maximum=2**64 - 1)
    out["cooperative"] = raw.get("cooperative", True)
    _require(isinstance(out["cooperative"], bool), f"{path}.cooperative",
             "expected a boolean")
    out["delta"] = _number(raw.get("delta", 0.1), f"{path}.delta",
                           exclusive_min=0.0, exclusive_max=1.0)
    out["kl_mc_samples"] = _integer(raw.get("kl_mc_samples", 2000),
                                    f"{path}.kl_mc_samples", minimum=1)
    out["mixing_horizon"] = _integer(raw.get("mixing_horizon", 100),
                                     f"{path}.mixing_horizon", minimum=1)

    _require(isinstance(raw["models"], list) and raw["models"],
             f"{path}.models", "expected a non-empty array")
    out["models"] = [
        _validate_model(entry, f"{path}.models[{i}]")
        for i, entry in enumerate(raw["models"])
    ]

    if "parameters" in raw:
        _check_keys(raw["parameters"], f"{path}.parameters", {"points"}, set())
        out["parameters"] = {
            "points": _matrix(raw["parameters"]["points"], f"{path}.parameters.points")
        }
    if "prior" in raw:
        _check_keys(raw["prior"], f"{path}.prior", {"mean", "variance_diag"}, set())
        mean = _number_list(raw["prior"]["mean"], f"{path}.prior.mean")
        var = [
            _number(v, f"{path}.prior.variance_diag[{i}]", exclusive_min=0.0)
            for i, v in enumerate(
                raw["prior"]["variance_diag"]
                if isinstance(raw["prior"]["variance_diag"], list) else []
            )
        ]
        _require(len(var) == len(mean), f"{path}.prior.variance_diag",
                 "length must match prior.mean")
        out["prior"] = {"mean": mean, "variance_diag": var}
    if "true_theta" in raw:
        out["true_theta"] = _number_list(raw["true_theta"], f"{path}.true_theta")
    if "noise_std" in raw:
        out["noise_std"] = _number(raw["noise_std"], f"{path}.noise_std",
                                   exclusive_min=0.0)
    if "test_set" in raw:
        _check_keys(raw["test_set"], f"{path}.test_set",
                    {"size", "ranges", "seed"}, set())
        ranges = _matrix(raw["test_set"]["ranges"], f"{path}.test_set.ranges")
        for i, row in enumerate(ranges):
            _require(len(row) == 2 and row[0] < row[1],
                     f"{path}.test_set.ranges[{i}]", "expected a [low, high] pair")
        out["test_set"] = {
            "size": _integer(raw["test_set"]["size"], f"{path}.test_set.size", minimum=1),
            "ranges": ranges,
            "seed": _integer(raw["test_set"]["seed"], f"{path}.test_set.seed", minimum=0),
        }
    if "bound" in raw:
        _check_keys(raw["bound"], f"{path}.bound", set(),
                    {"likelihood_log_range", "separation_rate"})
        block = {}
        if "likelihood_log_range" in raw["bound"]:
            block["likelihood_log_range"] = _number(
                raw["bound"]["likelihood_log_range"],
                f"{path}.bound.likelihood_log_range", exclusive_min=0.0,
            )
        if "separation_rate" in raw["bound"]:
            block["separation_rate"] = _number(
                raw["bound"]["separation_rate"],
                f"{path}.bound.separation_rate", exclusive_min=0.0,
            )
        out["bound"] = block

    # Engine-specific completeness.
    if engine == "discrete":
        _require("parameters" in out, f"{path}.parameters",
                 "discrete engine requires a parameter set")
    else:
        for key in ("prior", "true_theta", "noise_std"):
            _require(key in out, f"{path}.{key}",
                     "gaussian engine requires this key")
    needs_truth = any(m["family"] == "linear_gaussian" for m in out["models"])
    if needs_truth:
        for key in ("true_theta", "noise_std"):
            _require(key in out, f"{path}.{key}",
                     "linear_gaussian models require this key")
    return out


@dataclass
class ConfigDocument:
    """Validated configuration with defaults filled in."""

    schema_version: int
    scenario: dict
    output: dict

    def as_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "scenario": self.scenario,
            "output": self.output,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))


def parse_config(text) -> ConfigDocument:
    """Parse and fully validate a JSON config document."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigSyntaxError(f"config is not valid UTF-8: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(
            f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc

    _check_keys(raw, "config", {"schema_version", "scenario"}, {"output"})
    version = _integer(raw["schema_version"], "config.schema_version")
    _require(version == SCHEMA_VERSION, "config.schema_version",
             f"expected {SCHEMA_VERSION}")
    scenario = _validate_scenario(raw["scenario"])

    output = raw.get("output", {})
    _check_keys(output, "output", set(), {"directory", "format"})
    directory = output.get("directory", "peerlearn-out")
    _require(isinstance(directory, str) and directory, "output.directory",
             "expected a non-empty string")
    fmt = output.get("format", "csv")
    _require(fmt in ("csv", "json"), "output.format", "expected 'csv' or 'json'")
    return ConfigDocument(
        schema_version=version,
        scenario=scenario,
        output={"directory": directory, "format": fmt},
    )


def build_scenario(doc: ConfigDocument) -> Scenario:
    """Construct the simulator scenario from a validated document."""
    data = doc.scenario
    try:
        graph = validate_weight_matrix(data["graph"]["weights"])
    except NotStochasticError as exc:
        raise ConfigValidationError(f"scenario.graph.weights[{exc.row}]", str(exc)) from exc
    except GraphError as exc:
        raise ConfigValidationError("scenario.graph.weights", str(exc)) from exc

    models = []
    for node_id, spec in enumerate(data["models"]):
        path = f"scenario.models[{node_id}]"
        try:
            if spec["family"] == "bernoulli":
                models.append(
                    BernoulliContextModel(node_id, spec["true_probs"], spec["visible"])
                )
            elif spec["family"] == "categorical":
                models.append(
                    CategoricalContextModel(node_id, spec["true_table"], spec["visible"])
                )
            else:
                models.append(
                    LinearGaussianModel(
                        node_id,
                        data["true_theta"],
                        spec["ranges"],
                        spec["observed"],
                        data["noise_std"],
                    )
                )
        except ValueError as exc:
            raise ConfigValidationError(path, str(exc)) from exc

    theta_set = None
    if "parameters" in data:
        try:
            theta_set = ParameterSet(np.array(data["parameters"]["points"], dtype=float))
        except ValueError as exc:
            raise ConfigValidationError("scenario.parameters.points", str(exc)) from exc

    test_set = None
    if data.get("test_set") is not None:
        ts = data["test_set"]
        test_set = make_regression_test_set(
            ts["size"], ts["ranges"], data["true_theta"], data["noise_std"], ts["seed"]
        )

    scenario = Scenario(
        graph=graph,
        engine=data["engine"],
        models=models,
        n_rounds=data["n_rounds"],
        trials=data["trials"],
        master_seed=data["master_seed"],
        theta_set=theta_set,
        prior_mean=np.array(data["prior"]["mean"]) if "prior" in data else None,
        prior_variance_diag=(
            np.array(data["prior"]["variance_diag"]) if "prior" in data else None
        ),
        noise_var=data["noise_std"] ** 2 if "noise_std" in data else None,
        cooperative=data["cooperative"],
        test_set=test_set,
        delta=data["delta"],
        kl_mc_samples=data["kl_mc_samples"],
        likelihood_log_range_override=data.get("bound", {}).get("likelihood_log_range"),
    )
    try:
        scenario.validate()
    except ValueError as exc:
        raise ConfigValidationError("scenario", str(exc)) from exc
    return scenario


def _fmt(value: float) -> str:
    return f"{float(value):.12g}"


def _metric_columns_and_rows(report, scenario):
    if report.engine == "discrete":
        n_params = scenario.theta_set.n_points
        columns = ["trial", "round", "node", "estimate_index"] + [
            f"belief_{m}" for m in range(n_params)
        ]

        def rows():
            for t, result in enumerate(report.trial_results):
                probs = np.exp(result.belief_history)
                for k in range(scenario.n_rounds):
                    for i in range(scenario.graph.n_nodes):
                        yield [str(t), str(k), str(i),
                               str(int(result.estimate_history[k, i]))] + [
                            _fmt(p) for p in probs[k, i]
                        ]

        return columns, rows

    dim = len(scenario.prior_mean)
    columns = ["trial", "round", "node"] + [f"mu_{m}" for m in range(dim)] + [
        f"sigma_{m}" for m in range(dim)
    ] + ["mse"]

    def rows():
        for t, result in enumerate(report.trial_results):
            for k in range(scenario.n_rounds):
                for i in range(scenario.graph.n_nodes):
                    mse = (
                        _fmt(result.mse_history[k, i])
                        if result.mse_history is not None
                        else ""
                    )
                    yield (
                        [str(t), str(k), str(i)]
                        + [_fmt(v) for v in result.mean_history[k, i]]
                        + [_fmt(v) for v in result.variance_diag_history[k, i]]
                        + [mse]
                    )

    return columns, rows


def _write_metrics(report, scenario, directory: Path, fmt: str) -> Path:
    columns, rows = _metric_columns_and_rows(report, scenario)
    if fmt == "csv":
        target = directory / "metrics.csv"
        with open(target, "w", newline="\n") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(columns)
            for row in rows():
                writer.writerow(row)
    else:
        target = directory / "metrics.json"
        payload = {"columns": columns, "rows": [row for row in rows()]}
        with open(target, "w") as handle:
            json.dump(payload, handle, separators=(",", ":"))
            handle.write("\n")
    return target


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if math.isinf(value):
            return "inf"
        return value
    if isinstance(value, np.integer):
        return int(value)
    return value


def _summary_dict(report, scenario) -> dict:
    summary = {
        "engine": report.engine,
        "trials": report.trials,
        "n_rounds": scenario.n_rounds,
        "master_seed": int(scenario.master_seed),
        "cooperative": scenario.cooperative,
        "stationary": _jsonable(report.spectral.stationary),
        "lambda_max": _jsonable(report.spectral.lambda_max),
        "mixing_bound": _jsonable(report.spectral.mixing_bound),
        "empirical_error": report.empirical_error,
        "sample_bound": report.sample_bound,
        "assumption_violated": report.assumption_violated,
        "first_all_success_round": report.first_all_success_round,
        "runtime_seconds": report.runtime_seconds,
    }
    if report.separation is not None:
        summary["global_optima"] = list(report.separation.global_optima)
        summary["separation_rate"] = _jsonable(report.separation.separation_rate)
    if report.final_mse_per_node is not None:
        summary["final_mse_per_node"] = _jsonable(report.final_mse_per_node)
        summary["baseline_final_mse"] = _jsonable(report.baseline_final_mse)
    return summary


def cmd_run(doc: ConfigDocument, out_dir=None, fmt=None, seed=None,
            trials=None, workers: int = 1) -> int:
    """Run the configured experiment and write metrics plus a summary."""
    scenario = build_scenario(doc)
    if seed is not None:
        scenario.master_seed = seed
    if trials is not None:
        scenario.trials = trials
    directory = Path(out_dir if out_dir is not None else doc.output["directory"])
    fmt = fmt if fmt is not None else doc.output["format"]

    report = run_experiment(scenario, workers=workers)
    directory.mkdir(parents=True, exist_ok=True)
    _write_metrics(report, scenario, directory, fmt)
    summary = _summary_dict(report, scenario)
    with open(directory / "summary.json", "w") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
        handle.write("\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_bound(doc: ConfigDocument) -> int:
    """Print the sample-complexity inputs and result as one JSON object."""
    scenario = build_scenario(doc)
    overrides = doc.scenario.get("bound", {})
    spectral = spectral_gap(scenario.graph)

    if scenario.theta_set is None:
        raise ConfigValidationError(
            "scenario.parameters",
            "the sample-complexity bound requires a parameter set",
        )
    if "separation_rate" in overrides:
        separation_rate = overrides["separation_rate"]
    else:
        table = separation_table(
            scenario.models,
            scenario.theta_set,
            spectral.stationary,
            mc_samples=scenario.kl_mc_samples,
            seed=scenario.master_seed,
        )
        separation_rate = table.separation_rate

    bounds = assumption_bounds(scenario.models, scenario.theta_set)
    if "likelihood_log_range" in overrides:
        log_range = overrides["likelihood_log_range"]
        assumption_violated = bounds is None
    elif bounds is not None:
        log_range = abs(math.log(bounds[1] / bounds[0]))
        assumption_violated = False
    else:
        raise ConfigValidationError(
            "scenario.bound.likelihood_log_range",
            "likelihoods are unbounded; supply an explicit value",
        )

    n_params = scenario.theta_set.n_points
    inputs = BoundInputs(
        n_nodes=scenario.graph.n_nodes,
        n_params=n_params,
        delta=scenario.delta,
        likelihood_log_range=float(log_range),
        separation_rate=float(separation_rate),
        lambda_max=spectral.lambda_max,
    )
    payload = {
        "n_nodes": inputs.n_nodes,
        "n_params": inputs.n_params,
        "delta": inputs.delta,
        "likelihood_log_range": inputs.likelihood_log_range,
        "separation_rate": _jsonable(inputs.separation_rate),
        "lambda_max": _jsonable(inputs.lambda_max),
        "n": sample_complexity(inputs),
        "assumption_violated": assumption_violated,
    }
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def cmd_check_graph(doc: ConfigDocument, horizon=None) -> int:
    """Print the graph verdict with stationary, spectral and mixing data."""
    weights = doc.scenario["graph"]["weights"]
    graph = validate_weight_matrix(weights)  # GraphError propagates to main
    horizon = horizon if horizon is not None else doc.scenario["mixing_horizon"]
    report = verify_mixing_bound(graph, horizon)
    summary = spectral_gap(graph)
    payload = {
        "valid": True,
        "n_nodes": graph.n_nodes,
        "stationary": _jsonable(summary.stationary),
        "lambda_max": _jsonable(summary.lambda_max),
        "mixing_bound": _jsonable(summary.mixing_bound),
        "horizon": report.horizon,
        "partial_sums": _jsonable(report.partial_sums),
        "within_bound": [bool(b) for b in report.within_bound],
    }
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="peerlearn",
        description="Decentralized belief-consensus learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the configured experiment")
    run_p.add_argument("config", help="path to a JSON config")
    run_p.add_argument("--seed", type=int, default=None, help="override master_seed")
    run_p.add_argument("--trials", type=int, default=None, help="override trial count")
    run_p.add_argument("--out", default=None, help="override output directory")
    run_p.add_argument("--format", choices=("csv", "json"), default=None,
                       help="override metrics format")
    run_p.add_argument("--workers", type=int, default=1,
                       help="parallel trial workers (does not affect results)")

    bound_p = sub.add_parser("bound", help="print the sample-complexity bound")
    bound_p.add_argument("config", help="path to a JSON config")

    check_p = sub.add_parser("check-graph", help="validate the weight matrix")
    check_p.add_argument("config", help="path to a JSON config")
    check_p.add_argument("--horizon", type=int, default=None,
                         help="override the mixing-bound check horizon")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        with open(args.config, "rb") as handle:
            doc = parse_config(handle.read())
        if args.command == "run":
            return cmd_run(doc, out_dir=args.out, fmt=args.format,
                           seed=args.seed, trials=args.trials,
                           workers=args.workers)
        if args.command == "bound":
            return cmd_bound(doc)
        return cmd_check_graph(doc, horizon=args.horizon)
    except (ConfigError, GraphError, NotGloballyLearnableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
