"""Parameter sets, per-node likelihood models, and KL-derived quantities.

Three built-in model families cover every in-scope experiment:

* ``BernoulliContextModel`` -- binary labels whose success probability is
  one coordinate of the parameter vector, selected by the observed
  context index. A node's instance distribution is uniform over the
  contexts it can see, so nodes with partial visibility cannot separate
  parameters that agree on their visible coordinates.
* ``CategoricalContextModel`` -- same structure with a full probability
  row per context.
* ``LinearGaussianModel`` -- regression labels y = <theta, [1, x]> + noise
  with per-coordinate uniform instance ranges and a coordinate mask, so a
  node only excites the parameter directions it observes.

Expectations over the instance distribution are Monte Carlo with
closed-form conditional KL per sampled instance; the inner divergence is
exact, so antisymmetry identities hold to float precision when estimates
share samples.

Model instances carry their own sampling methods but no generator state;
a model is confined to one worker at a time, while separate instances may
run in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf, rel_entr

DUPLICATE_TOL = 1e-12
ARGMIN_TIE_TOL = 1e-6


class UnboundedKLError(ValueError):
    """Supports mismatch: the truth puts mass where a likelihood has none."""


class NotGloballyLearnableError(ValueError):
    """No parameter is optimal for every node simultaneously."""


@dataclass(frozen=True)
class ParameterSet:
    """Finite set of candidate parameter vectors with stable indices."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise ValueError("parameter points must form a 2-D array (M, d)")
        if pts.shape[0] < 2:
            raise ValueError("parameter set needs at least two points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("parameter points must be finite")
        diffs = np.abs(pts[:, None, :] - pts[None, :, :]).max(axis=2)
        np.fill_diagonal(diffs, np.inf)
        if np.any(diffs <= DUPLICATE_TOL):
            a, b = np.unravel_index(int(np.argmin(diffs)), diffs.shape)
            raise ValueError(f"duplicate parameter points at indices {a} and {b}")
        object.__setattr__(self, "points", pts)
        pts.setflags(write=False)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


class LikelihoodModel:
    """Per-node observation model: instance law, label law, and likelihoods.

    Subclasses implement sampling plus closed-form conditional divergences.
    ``thetas`` arguments are (M, param_dim) arrays of candidate parameters.
    """

    node_id: int
    bounds: tuple[float, float] | None
    param_dim: int

    def sample_instances(self, rng: np.random.Generator, size: int):
        raise NotImplementedError

    def sample_labels(self, rng: np.random.Generator, xs):
        raise NotImplementedError

    def log_likelihood_vector(self, thetas: np.ndarray, x, y) -> np.ndarray:
        raise NotImplementedError

    def log_likelihood_matrix(self, thetas: np.ndarray, xs, ys) -> np.ndarray:
        """Log likelihoods for a whole sample batch, shape (len(xs), M)."""
        return np.stack(
            [self.log_likelihood_vector(thetas, x, y) for x, y in zip(xs, ys)]
        )

    def kl_to_truth(self, thetas: np.ndarray, xs) -> np.ndarray:
        """Conditional KL(truth || likelihood(theta)) per (theta, instance)."""
        raise NotImplementedError

    def kl_between(self, thetas: np.ndarray, psi: np.ndarray, xs) -> np.ndarray:
        """Conditional KL(likelihood(theta) || likelihood(psi)) per (theta, instance)."""
        raise NotImplementedError

    def label_expectation(self, theta: np.ndarray, xs, fn) -> np.ndarray:
        """E[fn(x, Y)] under likelihood(theta) per instance; discrete labels only."""
        raise NotImplementedError

    def density_l1(self, theta: np.ndarray, psi: np.ndarray, xs) -> np.ndarray:
        """Integral of |l(theta) - l(psi)| over labels, per instance."""
        raise NotImplementedError

    def likelihood_bounds(self, thetas: np.ndarray) -> tuple[float, float] | None:
        """(alpha, L) with alpha <= likelihood <= L over the set, or None."""
        return self.bounds

    def validate_parameters(self, thetas: np.ndarray) -> None:
        """Reject parameter vectors the family cannot interpret."""


def _bernoulli_kl(p, q):
    return rel_entr(p, q) + rel_entr(1.0 - p, 1.0 - q)


class BernoulliContextModel(LikelihoodModel):
    """Binary labels with per-context success probabilities.

    ``true_probs`` is the label law per context; ``visible`` lists the
    context indices this node draws uniformly at random.
    """

    def __init__(self, node_id: int, true_probs, visible):
        self.node_id = node_id
        self.true_probs = np.asarray(true_probs, dtype=float)
        if self.true_probs.ndim != 1 or np.any((self.true_probs < 0) | (self.true_probs > 1)):
            raise ValueError("true_probs must be probabilities in [0, 1]")
        self.visible = np.asarray(sorted(set(int(i) for i in visible)), dtype=int)
        if self.visible.size == 0:
            raise ValueError("a node must observe at least one context")
        if np.any(self.visible < 0) or np.any(self.visible >= self.true_probs.size):
            raise ValueError("visible context index out of range")
        self.param_dim = self.true_probs.size
        self.bounds = None  # computed per parameter set via likelihood_bounds

    def sample_instances(self, rng, size):
        return self.visible[rng.integers(0, self.visible.size, size=size)]

    def sample_labels(self, rng, xs):
        return (rng.random(len(xs)) < self.true_probs[xs]).astype(np.int64)

    def log_likelihood_vector(self, thetas, x, y):
        p = thetas[:, x]
        with np.errstate(divide="ignore"):
            return np.log(p) if y == 1 else np.log1p(-p)

    def log_likelihood_matrix(self, thetas, xs, ys):
        with np.errstate(divide="ignore"):
            log_p = np.log(thetas)
            log_q = np.log1p(-thetas)
        return np.where((ys == 1)[:, None], log_p[:, xs].T, log_q[:, xs].T)

    def kl_to_truth(self, thetas, xs):
        p = self.true_probs[xs][None, :]
        q = thetas[:, xs]
        return _bernoulli_kl(p, q)

    def kl_between(self, thetas, psi, xs):
        return _bernoulli_kl(thetas[:, xs], psi[xs][None, :])

    def label_expectation(self, theta, xs, fn):
        p = theta[xs]
        return p * fn(xs, 1) + (1.0 - p) * fn(xs, 0)

    def density_l1(self, theta, psi, xs):
        return 2.0 * np.abs(theta[xs] - psi[xs])

    def likelihood_bounds(self, thetas):
        values = np.concatenate([thetas[:, self.visible].ravel(),
                                 1.0 - thetas[:, self.visible].ravel()])
        return float(values.min()), float(values.max())

    def validate_parameters(self, thetas):
        if thetas.shape[1] != self.param_dim:
            raise ValueError(
                f"node {self.node_id}: parameters have dimension {thetas.shape[1]}, "
                f"expected {self.param_dim}"
            )
        if np.any((thetas < 0) | (thetas > 1)):
            raise ValueError(f"node {self.node_id}: parameter entries must lie in [0, 1]")


class CategoricalContextModel(LikelihoodModel):
    """Labels in {0..K-1} with a probability row per context.

    Parameter vectors are row-major flattenings of (n_contexts, K) tables
    whose rows each sum to 1.
    """

    def __init__(self, node_id: int, true_table, visible):
        self.node_id = node_id
        table = np.asarray(true_table, dtype=float)
        if table.ndim != 2 or np.any(table < 0):
            raise ValueError("true_table must be a nonnegative (contexts, labels) matrix")
        if np.any(np.abs(table.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("every true_table row must sum to 1")
        self.true_table = table
        self.n_contexts, self.n_labels = table.shape
        self.visible = np.asarray(sorted(set(int(i) for i in visible)), dtype=int)
        if self.visible.size == 0:
            raise ValueError("a node must observe at least one context")
        if np.any(self.visible < 0) or np.any(self.visible >= self.n_contexts):
            raise ValueError("visible context index out of range")
        self.param_dim = self.n_contexts * self.n_labels
        self.bounds = None

    def _tables(self, thetas):
        return thetas.reshape(thetas.shape[0], self.n_contexts, self.n_labels)

    def sample_instances(self, rng, size):
        return self.visible[rng.integers(0, self.visible.size, size=size)]

    def sample_labels(self, rng, xs):
        cdf = np.cumsum(self.true_table[xs], axis=1)
        u = rng.random(len(xs))
        return (u[:, None] > cdf).sum(axis=1).astype(np.int64)

    def log_likelihood_vector(self, thetas, x, y):
        with np.errstate(divide="ignore"):
            return np.log(self._tables(thetas)[:, x, y])

    def log_likelihood_matrix(self, thetas, xs, ys):
        with np.errstate(divide="ignore"):
            logs = np.log(self._tables(thetas))
        return logs[:, xs, ys].T

    def kl_to_truth(self, thetas, xs):
        p = self.true_table[xs][None, :, :]
        q = self._tables(thetas)[:, xs, :]
        return rel_entr(p, q).sum(axis=2)

    def kl_between(self, thetas, psi, xs):
        p = self._tables(thetas)[:, xs, :]
        q = psi.reshape(self.n_contexts, self.n_labels)[xs][None, :, :]
        return rel_entr(p, q).sum(axis=2)

    def label_expectation(self, theta, xs, fn):
        rows = theta.reshape(self.n_contexts, self.n_labels)[xs]
        values = np.stack([fn(xs, label) for label in range(self.n_labels)], axis=1)
        return (rows * values).sum(axis=1)

    def density_l1(self, theta, psi, xs):
        shape = (self.n_contexts, self.n_labels)
        return np.abs(theta.reshape(shape)[xs] - psi.reshape(shape)[xs]).sum(axis=1)

    def likelihood_bounds(self, thetas):
        rows = self._tables(thetas)[:, self.visible, :].ravel()
        return float(rows.min()), float(rows.max())

    def validate_parameters(self, thetas):
        if thetas.shape[1] != self.param_dim:
            raise ValueError(
                f"node {self.node_id}: parameters have dimension {thetas.shape[1]}, "
                f"expected {self.param_dim}"
            )
        tables = self._tables(thetas)
        if np.any(tables < 0) or np.any(np.abs(tables.sum(axis=2) - 1.0) > 1e-9):
            raise ValueError(f"node {self.node_id}: parameter rows must be distributions")


class LinearGaussianModel(LikelihoodModel):
    """Regression labels y = <theta, [1, x]> + Gaussian noise.

    ``ranges`` gives a uniform sampling interval per instance coordinate;
    coordinates outside ``observed`` are pinned to zero, which is how a
    node with a deficient instance space is expressed. Gaussian densities
    are unbounded below, so no (alpha, L) likelihood bounds are declared.
    """

    def __init__(self, node_id: int, true_theta, ranges, observed, noise_std: float):
        self.node_id = node_id
        self.true_theta = np.asarray(true_theta, dtype=float)
        self.ranges = np.asarray(ranges, dtype=float).reshape(-1, 2)
        self.observed = sorted(set(int(i) for i in observed))
        if any(i < 0 or i >= self.ranges.shape[0] for i in self.observed):
            raise ValueError("observed coordinate index out of range")
        if noise_std <= 0:
            raise ValueError("noise_std must be positive")
        self.noise_std = float(noise_std)
        self.noise_var = self.noise_std**2
        self.instance_dim = self.ranges.shape[0]
        if self.true_theta.shape != (self.instance_dim + 1,):
            raise ValueError("true_theta must have length instance_dim + 1")
        self.param_dim = self.instance_dim + 1
        self.bounds = None

    def augment(self, xs) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        return np.hstack([np.ones((xs.shape[0], 1)), xs])

    def sample_instances(self, rng, size):
        xs = np.zeros((size, self.instance_dim))
        for j in self.observed:
            lo, hi = self.ranges[j]
            xs[:, j] = rng.uniform(lo, hi, size=size)
        return xs

    def sample_labels(self, rng, xs):
        means = self.augment(xs) @ self.true_theta
        return means + self.noise_std * rng.standard_normal(len(means))

    def log_likelihood_vector(self, thetas, x, y):
        means = thetas @ self.augment(x)[0]
        return -0.5 * ((y - means) / self.noise_std) ** 2 - math.log(
            self.noise_std * math.sqrt(2.0 * math.pi)
        )

    def log_likelihood_matrix(self, thetas, xs, ys):
        means = self.augment(xs) @ thetas.T
        return -0.5 * ((np.asarray(ys)[:, None] - means) / self.noise_std) ** 2 - math.log(
            self.noise_std * math.sqrt(2.0 * math.pi)
        )

    def kl_to_truth(self, thetas, xs):
        proj = self.augment(xs) @ (self.true_theta[None, :] - thetas).T
        return proj.T**2 / (2.0 * self.noise_var)

    def kl_between(self, thetas, psi, xs):
        proj = self.augment(xs) @ (thetas - psi[None, :]).T
        return proj.T**2 / (2.0 * self.noise_var)

    def density_l1(self, theta, psi, xs):
        gap = np.abs(self.augment(xs) @ (theta - psi))
        return 2.0 * erf(gap / (2.0 * math.sqrt(2.0) * self.noise_std))

    def likelihood_bounds(self, thetas):
        return None

    def validate_parameters(self, thetas):
        if thetas.shape[1] != self.param_dim:
            raise ValueError(
                f"node {self.node_id}: parameters have dimension {thetas.shape[1]}, "
                f"expected {self.param_dim}"
            )


@dataclass(frozen=True)
class SeparationTable:
    """Per-node KL geometry of a parameter set.

    ``kl_advantage[j, a, b]`` is how strongly node j's data favors
    parameter a over parameter b (difference of expected KLs to the
    truth). ``local_optima[j]`` holds node j's KL-minimizing indices,
    ``global_optima`` their intersection, and ``separation_rate`` the
    minimum stationary-weighted advantage of a globally optimal parameter
    over any other; it is +inf when every parameter is globally optimal.
    """

    kl_to_truth: np.ndarray
    kl_advantage: np.ndarray
    local_optima: tuple[tuple[int, ...], ...]
    global_optima: tuple[int, ...]
    separation_rate: float


@dataclass(frozen=True)
class CoveringReport:
    """Result of checking candidate points against a covering radius."""

    radius: float
    distances: np.ndarray
    violating_indices: tuple[int, ...]
    worst_radius: float

    @property
    def is_covering(self) -> bool:
        return not self.violating_indices


def _instance_draws(model, mc_samples: int, seed, node_index: int):
    rng = np.random.default_rng([int(seed), int(node_index)])
    return model.sample_instances(rng, mc_samples)


def expected_kl_to_truth(model, theta_set: ParameterSet, theta_index: int,
                         mc_samples: int = 2000, seed: int = 0) -> float:
    """Monte Carlo estimate of the node's expected KL from truth to a parameter.

    Deterministic given the seed. Raises ``UnboundedKLError`` when the
    truth has support where the candidate likelihood vanishes.
    """
    if mc_samples < 1:
        raise ValueError("mc_samples must be at least 1")
    xs = _instance_draws(model, mc_samples, seed, model.node_id)
    kls = model.kl_to_truth(theta_set.points[[theta_index]], xs)[0]
    if np.any(np.isinf(kls)):
        raise UnboundedKLError(
            f"node {model.node_id}: likelihood at parameter {theta_index} "
            "has no support where the truth does"
        )
    return float(kls.mean())


def separation_table(models, theta_set: ParameterSet, stationary,
                     mc_samples: int = 2000, seed: int = 0) -> SeparationTable:
    """Expected-KL geometry over all nodes and parameter pairs.

    Each node's expectations share one set of instance draws, so the
    advantage array is exactly antisymmetric and has a zero diagonal.
    Raises ``NotGloballyLearnableError`` when no parameter minimizes every
    node's expected KL simultaneously.
    """
    stationary = np.asarray(stationary, dtype=float)
    if len(models) != stationary.shape[0]:
        raise ValueError("stationary vector length must match the number of models")
    n_nodes, n_params = len(models), theta_set.n_points
    kl = np.empty((n_nodes, n_params))
    for j, model in enumerate(models):
        model.validate_parameters(theta_set.points)
        xs = _instance_draws(model, mc_samples, seed, model.node_id)
        per_sample = model.kl_to_truth(theta_set.points, xs)
        if np.any(np.isinf(per_sample)):
            raise UnboundedKLError(f"node {j}: some parameter lacks support for the truth")
        kl[j] = per_sample.mean(axis=1)

    advantage = kl[:, None, :] - kl[:, :, None]
    local = tuple(
        tuple(int(i) for i in np.flatnonzero(kl[j] <= kl[j].min() + ARGMIN_TIE_TOL))
        for j in range(n_nodes)
    )
    shared = set(local[0])
    for indices in local[1:]:
        shared &= set(indices)
    if not shared:
        raise NotGloballyLearnableError(
            "no parameter is optimal for every node; per-node optima are "
            + ", ".join(str(list(ix)) for ix in local)
        )
    global_optima = tuple(sorted(shared))

    others = [i for i in range(n_params) if i not in shared]
    if not others:
        rate = math.inf
    else:
        weighted = np.einsum("j,jab->ab", stationary, advantage)
        rate = float(weighted[np.ix_(global_optima, others)].min())
    return SeparationTable(
        kl_to_truth=kl,
        kl_advantage=advantage,
        local_optima=local,
        global_optima=global_optima,
        separation_rate=rate,
    )


def verify_r_covering(phi_samples, theta_set: ParameterSet, models,
                      radius: float, mc_samples: int = 2000, seed: int = 0) -> CoveringReport:
    """Check that every sampled point of the continuum is KL-close to the set.

    For each candidate psi, computes min over theta in the set of the
    node-averaged expected KL(likelihood(theta) || likelihood(psi)) and
    compares it with ``radius``. Returns the violating sample indices and
    the empirical worst-case radius.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    phi = np.atleast_2d(np.asarray(phi_samples, dtype=float))
    draws = [_instance_draws(model, mc_samples, seed, model.node_id) for model in models]
    distances = np.empty(phi.shape[0])
    for p, psi in enumerate(phi):
        per_theta = np.zeros(theta_set.n_points)
        for model, xs in zip(models, draws):
            per_theta += model.kl_between(theta_set.points, psi, xs).mean(axis=1)
        distances[p] = per_theta.min() / len(models)
    violating = tuple(int(i) for i in np.flatnonzero(distances > radius))
    return CoveringReport(
        radius=radius,
        distances=distances,
        violating_indices=violating,
        worst_radius=float(distances.max()),
    )


def assumption_bounds(models, theta_set: ParameterSet) -> tuple[float, float] | None:
    """Network-wide likelihood bounds (alpha, L), or None if any family is unbounded."""
    lows, highs = [], []
    for model in models:
        bounds = model.likelihood_bounds(theta_set.points)
        if bounds is None:
            return None
        lows.append(bounds[0])
        highs.append(bounds[1])
    return min(lows), max(highs)
