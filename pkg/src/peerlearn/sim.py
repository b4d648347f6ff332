"""Synchronous round-based simulation of the peer-to-peer learning loop.

Each round every node draws one (instance, label) pair from its own
substream, performs its local Bayesian (or conjugate-Gaussian) update to
produce a public belief, and only after a full-round barrier merges its
in-neighbors' public beliefs through the weighted consensus rule, then
records its estimate.

Randomness is counter-based: every (master_seed, trial, node) triple keys
an independent Philox stream, and each node consumes a fixed number of
draws per round (all instances first, then all labels). Results are
therefore a pure function of the scenario and master seed, independent of
how many workers execute the trials.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import beliefs as bel
from . import gaussian as gau
from .graph import SpectralSummary, WeightMatrix, spectral_gap
from .models import ParameterSet, SeparationTable, assumption_bounds, separation_table
from .theory import BoundInputs, sample_complexity

ENGINES = ("discrete", "gaussian")


@dataclass
class Scenario:
    """Full description of one simulated experiment."""

    graph: WeightMatrix
    engine: str
    models: list
    n_rounds: int
    trials: int
    master_seed: int
    theta_set: ParameterSet | None = None
    prior_mean: np.ndarray | None = None
    prior_variance_diag: np.ndarray | None = None
    noise_var: float | None = None
    cooperative: bool = True
    test_set: tuple[np.ndarray, np.ndarray] | None = None
    record_beliefs: bool = True
    delta: float = 0.1
    kl_mc_samples: int = 2000
    likelihood_log_range_override: float | None = None

    def validate(self) -> None:
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if len(self.models) != self.graph.n_nodes:
            raise ValueError(
                f"{len(self.models)} models for {self.graph.n_nodes} graph nodes"
            )
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be at least 1")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must fit in 64 bits")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.engine == "discrete":
            if self.theta_set is None:
                raise ValueError("discrete engine requires a parameter set")
            if self.test_set is not None:
                raise ValueError("test sets apply to the gaussian engine only")
            for model in self.models:
                model.validate_parameters(self.theta_set.points)
        else:
            if self.prior_mean is None or self.prior_variance_diag is None:
                raise ValueError("gaussian engine requires a prior mean and variance diagonal")
            if self.noise_var is None or self.noise_var <= 0:
                raise ValueError("gaussian engine requires a positive noise variance")


@dataclass
class TrialResult:
    """Outcome of one seeded trial.

    ``final_estimates`` holds parameter indices (discrete) or posterior
    means (gaussian). ``success`` is defined only when the globally
    optimal index set was supplied.
    """

    final_estimates: np.ndarray
    success: bool | None = None
    estimate_history: np.ndarray | None = None
    belief_history: np.ndarray | None = None
    mean_history: np.ndarray | None = None
    variance_diag_history: np.ndarray | None = None
    mse_history: np.ndarray | None = None
    instances: list | None = None
    labels: list | None = None
    message_log: list | None = None
    clamp_events: int = 0


@dataclass
class ExperimentReport:
    """Aggregate over independent trials of one scenario."""

    engine: str
    trials: int
    spectral: SpectralSummary
    trial_results: list
    empirical_error: float | None = None
    separation: SeparationTable | None = None
    sample_bound: int | None = None
    assumption_violated: bool | None = None
    first_all_success_round: int | None = None
    mean_mse_curves: np.ndarray | None = None
    final_mse_per_node: np.ndarray | None = None
    baseline_mse_curve: np.ndarray | None = None
    baseline_final_mse: float | None = None
    runtime_seconds: float = 0.0


def node_stream(master_seed: int, trial: int, node: int) -> np.random.Generator:
    """Counter-based substream for one node within one trial."""
    key = np.random.SeedSequence((int(master_seed), int(trial), int(node)))
    return np.random.Generator(np.random.Philox(key))


def _draw_trial_samples(scenario: Scenario, trial: int):
    """Pre-draw each node's per-round samples; order is fixed per stream."""
    instances, labels = [], []
    for node, model in enumerate(scenario.models):
        rng = node_stream(scenario.master_seed, trial, node)
        xs = model.sample_instances(rng, scenario.n_rounds)
        ys = model.sample_labels(rng, xs)
        instances.append(xs)
        labels.append(ys)
    return instances, labels


def make_regression_test_set(size: int, ranges, true_theta, noise_std: float,
                             seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Fixed evaluation set with every coordinate drawn from its own range."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed),))))
    ranges = np.asarray(ranges, dtype=float).reshape(-1, 2)
    xs = np.column_stack([rng.uniform(lo, hi, size=size) for lo, hi in ranges])
    theta = np.asarray(true_theta, dtype=float)
    aug = np.hstack([np.ones((size, 1)), xs])
    ys = aug @ theta + noise_std * rng.standard_normal(size)
    return xs, ys


def run_trial(scenario: Scenario, trial_index: int, global_optima=None,
              record_samples: bool = False,
              record_messages: bool = False) -> TrialResult:
    """Execute one full synchronous trial, deterministic in (scenario, trial)."""
    scenario.validate()
    if scenario.engine == "discrete":
        return _run_discrete_trial(
            scenario, trial_index, global_optima, record_samples, record_messages
        )
    return _run_gaussian_trial(scenario, trial_index, record_samples, record_messages)


def _run_discrete_trial(scenario, trial_index, global_optima,
                        record_samples, record_messages) -> TrialResult:
    # The instrumented reference path walks the per-node belief operations
    # and records the message log; the default path runs the identical
    # arithmetic row-vectorized across nodes.
    if record_messages:
        result = _discrete_trial_reference(scenario, trial_index)
    else:
        result = _discrete_trial_fast(scenario, trial_index)
    if global_optima is not None:
        star = set(int(g) for g in global_optima)
        result.success = bool(all(int(e) in star for e in result.final_estimates))
    if record_samples:
        result.instances, result.labels = _draw_trial_samples(scenario, trial_index)
    return result


def _row_normalize(log_rows: np.ndarray) -> tuple[np.ndarray, bool]:
    """Clamp at the floor and log-sum-exp normalize each row in place."""
    fired = bool(np.any(log_rows < bel.LOG_FLOOR))
    np.maximum(log_rows, bel.LOG_FLOOR, out=log_rows)
    peak = log_rows.max(axis=1, keepdims=True)
    log_rows -= peak + np.log(np.exp(log_rows - peak).sum(axis=1, keepdims=True))
    return log_rows, fired


def _discrete_trial_fast(scenario, trial_index) -> TrialResult:
    graph, theta_set = scenario.graph, scenario.theta_set
    n_nodes, n_rounds = graph.n_nodes, scenario.n_rounds
    n_params = theta_set.n_points
    weights = graph.weights

    instances, labels = _draw_trial_samples(scenario, trial_index)
    log_lik = np.stack(
        [
            model.log_likelihood_matrix(theta_set.points, instances[i], labels[i])
            for i, model in enumerate(scenario.models)
        ],
        axis=1,
    )  # (n_rounds, n_nodes, n_params)

    private = np.full((n_nodes, n_params), -np.log(n_params))
    estimate_history = np.empty((n_rounds, n_nodes), dtype=np.int64)
    belief_history = (
        np.empty((n_rounds, n_nodes, n_params)) if scenario.record_beliefs else None
    )
    clamp_events = 0
    for k in range(n_rounds):
        public = private + log_lik[k]
        if not np.all(np.isfinite(public.max(axis=1))):
            raise bel.ZeroLikelihoodError(
                f"round {k}: every likelihood underflowed for some node"
            )
        public, fired_pub = _row_normalize(public)
        # Barrier: the merge below only ever sees this round's publics.
        merged = weights @ public if scenario.cooperative else public
        merged, fired_prv = _row_normalize(merged)
        private = merged
        clamp_events += int(fired_pub) + int(fired_prv)
        estimate_history[k] = np.argmax(private, axis=1)
        if belief_history is not None:
            belief_history[k] = private

    return TrialResult(
        final_estimates=estimate_history[-1].copy(),
        estimate_history=estimate_history,
        belief_history=belief_history,
        clamp_events=clamp_events,
    )


def _discrete_trial_reference(scenario, trial_index) -> TrialResult:
    graph, theta_set = scenario.graph, scenario.theta_set
    n_nodes, n_rounds = graph.n_nodes, scenario.n_rounds
    n_params = theta_set.n_points
    neighbors = [graph.in_neighbors(i) for i in range(n_nodes)]
    weights = graph.weights

    instances, labels = _draw_trial_samples(scenario, trial_index)
    privates = [bel.uniform_prior(n_params) for _ in range(n_nodes)]
    estimate_history = np.empty((n_rounds, n_nodes), dtype=np.int64)
    belief_history = (
        np.empty((n_rounds, n_nodes, n_params)) if scenario.record_beliefs else None
    )
    message_log = []
    clamp_events = 0

    public_rounds = np.full(n_nodes, -1, dtype=int)
    for k in range(n_rounds):
        publics = []
        for i, model in enumerate(scenario.models):
            public = bel.bayesian_update(
                privates[i], model, theta_set, instances[i][k], labels[i][k]
            )
            publics.append(public)
            public_rounds[i] = k
        # Barrier: all round-k publics exist before any private update.
        for i in range(n_nodes):
            if scenario.cooperative:
                merged = bel.consensus_update(
                    [(publics[j], weights[i, j]) for j in neighbors[i]]
                )
                for j in neighbors[i]:
                    message_log.append((k, i, int(j), int(public_rounds[j])))
            else:
                merged = publics[i]
            privates[i] = merged
            clamp_events += int(merged.clamped)
            estimate_history[k, i] = bel.map_estimate(merged)
            if belief_history is not None:
                belief_history[k, i] = merged.log_weights

    return TrialResult(
        final_estimates=estimate_history[-1].copy(),
        estimate_history=estimate_history,
        belief_history=belief_history,
        message_log=message_log,
        clamp_events=clamp_events,
    )


def _test_mse(aug_test: np.ndarray, y_test: np.ndarray, mean: np.ndarray) -> float:
    residual = aug_test @ mean - y_test
    return float(residual @ residual / residual.size)


def _run_gaussian_trial(scenario, trial_index, record_samples,
                        record_messages) -> TrialResult:
    graph = scenario.graph
    n_nodes, n_rounds = graph.n_nodes, scenario.n_rounds
    neighbors = [graph.in_neighbors(i) for i in range(n_nodes)]
    weights = graph.weights
    prior = gau.from_mean_covariance_diag(
        scenario.prior_mean, scenario.prior_variance_diag
    )
    dim = prior.dim

    instances, labels = _draw_trial_samples(scenario, trial_index)
    privates = [prior] * n_nodes
    mean_history = np.empty((n_rounds, n_nodes, dim))
    variance_history = np.empty((n_rounds, n_nodes, dim))
    aug_test = y_test = None
    mse_history = None
    if scenario.test_set is not None:
        x_test, y_test = scenario.test_set
        aug_test = np.hstack([np.ones((x_test.shape[0], 1)), x_test])
        mse_history = np.empty((n_rounds, n_nodes))
    message_log = [] if record_messages else None

    public_rounds = np.full(n_nodes, -1, dtype=int)
    for k in range(n_rounds):
        publics = []
        for i in range(n_nodes):
            publics.append(
                gau.gaussian_bayes_update(
                    privates[i], instances[i][k], labels[i][k], scenario.noise_var
                )
            )
            public_rounds[i] = k
        for i in range(n_nodes):
            if scenario.cooperative:
                merged = gau.gaussian_consensus(
                    [(publics[j], weights[i, j]) for j in neighbors[i]]
                )
                if record_messages:
                    for j in neighbors[i]:
                        message_log.append((k, i, int(j), int(public_rounds[j])))
            else:
                merged = publics[i]
            privates[i] = merged
            mean_history[k, i] = merged.mean
            variance_history[k, i] = np.diag(merged.covariance())
            if mse_history is not None:
                mse_history[k, i] = _test_mse(aug_test, y_test, merged.mean)

    return TrialResult(
        final_estimates=mean_history[-1].copy(),
        estimate_history=None,
        mean_history=mean_history,
        variance_diag_history=variance_history,
        mse_history=mse_history,
        instances=instances if record_samples else None,
        labels=labels if record_samples else None,
        message_log=message_log,
    )


def central_baseline(scenario: Scenario, trial_index: int = 0) -> TrialResult:
    """One node fed every node's per-round samples, same update rule.

    Consumes exactly the substreams the distributed trial would, so the
    baseline sees the identical data, merged centrally.
    """
    scenario.validate()
    if scenario.engine != "gaussian":
        raise ValueError("the central baseline is defined for the gaussian engine")
    n_rounds = scenario.n_rounds
    belief = gau.from_mean_covariance_diag(
        scenario.prior_mean, scenario.prior_variance_diag
    )
    instances, labels = _draw_trial_samples(scenario, trial_index)
    mean_history = np.empty((n_rounds, 1, belief.dim))
    variance_history = np.empty((n_rounds, 1, belief.dim))
    aug_test = y_test = None
    mse_history = None
    if scenario.test_set is not None:
        x_test, y_test = scenario.test_set
        aug_test = np.hstack([np.ones((x_test.shape[0], 1)), x_test])
        mse_history = np.empty((n_rounds, 1))
    for k in range(n_rounds):
        for i in range(scenario.graph.n_nodes):
            belief = gau.gaussian_bayes_update(
                belief, instances[i][k], labels[i][k], scenario.noise_var
            )
        mean_history[k, 0] = belief.mean
        variance_history[k, 0] = np.diag(belief.covariance())
        if mse_history is not None:
            mse_history[k, 0] = _test_mse(aug_test, y_test, belief.mean)
    return TrialResult(
        final_estimates=mean_history[-1].copy(),
        mean_history=mean_history,
        variance_diag_history=variance_history,
        mse_history=mse_history,
    )


def _sample_bound(scenario: Scenario, spectral: SpectralSummary,
                   separation: SeparationTable | None):
    """(bound, assumption_violated) from declared or overridden likelihood bounds."""
    if separation is None:
        return None, None
    bounds = assumption_bounds(scenario.models, scenario.theta_set)
    override = scenario.likelihood_log_range_override
    if bounds is not None:
        low, high = bounds
        log_range = abs(np.log(high / low)) if override is None else override
        violated = False
    elif override is not None:
        log_range = override
        violated = True
    else:
        return None, True
    inputs = BoundInputs(
        n_nodes=scenario.graph.n_nodes,
        n_params=scenario.theta_set.n_points,
        delta=scenario.delta,
        likelihood_log_range=float(log_range),
        separation_rate=separation.separation_rate,
        lambda_max=spectral.lambda_max,
    )
    return sample_complexity(inputs), violated


def run_experiment(scenario: Scenario, workers: int = 1,
                   include_baseline: bool = True) -> ExperimentReport:
    """Run all trials with derived seeds and aggregate the results.

    Trials are embarrassingly parallel; ``workers`` only changes the
    executor width, never the results. ``include_baseline`` controls
    whether gaussian runs also compute the central reference curve.
    """
    started = time.perf_counter()
    scenario.validate()
    spectral = spectral_gap(scenario.graph)

    separation = None
    global_optima = None
    if scenario.engine == "discrete":
        separation = separation_table(
            scenario.models,
            scenario.theta_set,
            spectral.stationary,
            mc_samples=scenario.kl_mc_samples,
            seed=scenario.master_seed,
        )
        global_optima = separation.global_optima
    bound, violated = _sample_bound(scenario, spectral, separation)

    def one_trial(t: int) -> TrialResult:
        return run_trial(scenario, t, global_optima=global_optima)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_trial, range(scenario.trials)))
    else:
        results = [one_trial(t) for t in range(scenario.trials)]

    report = ExperimentReport(
        engine=scenario.engine,
        trials=scenario.trials,
        spectral=spectral,
        trial_results=results,
        separation=separation,
        sample_bound=bound,
        assumption_violated=violated,
    )

    if scenario.engine == "discrete":
        failures = sum(1 for r in results if r.success is False)
        report.empirical_error = failures / scenario.trials
        star_mask = np.zeros(scenario.theta_set.n_points, dtype=bool)
        star_mask[list(global_optima)] = True
        per_round_ok = np.stack(
            [star_mask[r.estimate_history].all(axis=1) for r in results]
        ).all(axis=0)
        hits = np.flatnonzero(per_round_ok)
        report.first_all_success_round = int(hits[0]) if hits.size else None
    else:
        if scenario.test_set is not None:
            curves = np.stack([r.mse_history for r in results])
            report.mean_mse_curves = curves.mean(axis=0)
            report.final_mse_per_node = report.mean_mse_curves[-1].copy()
            if include_baseline:
                baselines = [
                    central_baseline(scenario, t).mse_history[:, 0]
                    for t in range(scenario.trials)
                ]
                report.baseline_mse_curve = np.stack(baselines).mean(axis=0)
                report.baseline_final_mse = float(report.baseline_mse_curve[-1])

    report.runtime_seconds = time.perf_counter() - started
    return report
