"""Shared scenario builders for the test suite."""

import numpy as np

from peerlearn import (
    BernoulliContextModel,
    LinearGaussianModel,
    ParameterSet,
    Scenario,
    WeightMatrix,
    make_regression_test_set,
    validate_weight_matrix,
)

REGRESSION_THETA = [-0.3, 0.5, 0.8]
REGRESSION_RANGES = [[-1.0, 1.0], [-1.5, 1.5]]
REGRESSION_NOISE_STD = 0.8
REGRESSION_W = [[0.9, 0.1], [0.6, 0.4]]


def random_weight_matrix(rng, n_nodes: int) -> WeightMatrix:
    """Random strongly connected aperiodic row-stochastic matrix.

    A directed ring plus self-loops guarantees both properties; extra
    random edges vary the spectrum.
    """
    w = rng.uniform(0.0, 1.0, (n_nodes, n_nodes)) * (rng.random((n_nodes, n_nodes)) < 0.4)
    for i in range(n_nodes):
        w[i, (i + 1) % n_nodes] = rng.uniform(0.2, 1.0)
        w[i, i] = rng.uniform(0.2, 1.0)
    w /= w.sum(axis=1, keepdims=True)
    return validate_weight_matrix(w)


def three_node_bernoulli():
    """3-node network where only the network as a whole identifies the truth.

    Each node sees two of three contexts, Theta has 10 points, and for
    every node there is a decoy agreeing with the truth on exactly its
    visible contexts, so no node can identify the optimum alone while the
    intersection of local optima is the single true parameter (index 0).
    """
    graph = validate_weight_matrix(
        [[0.5, 0.25, 0.25], [0.25, 0.5, 0.25], [0.25, 0.25, 0.5]]
    )
    star = [0.9, 0.1, 0.9]
    points = np.array(
        [
            star,
            [0.9, 0.1, 0.1],
            [0.1, 0.1, 0.9],
            [0.9, 0.9, 0.9],
            [0.1, 0.9, 0.9],
            [0.9, 0.9, 0.1],
            [0.1, 0.1, 0.1],
            [0.1, 0.9, 0.1],
            [0.3, 0.7, 0.3],
            [0.2, 0.8, 0.2],
        ]
    )
    theta_set = ParameterSet(points)
    models = [
        BernoulliContextModel(0, star, [0, 1]),
        BernoulliContextModel(1, star, [1, 2]),
        BernoulliContextModel(2, star, [0, 2]),
    ]
    return graph, theta_set, models


def regression_models():
    type1 = LinearGaussianModel(0, REGRESSION_THETA, REGRESSION_RANGES, [0],
                                REGRESSION_NOISE_STD)
    type2 = LinearGaussianModel(1, REGRESSION_THETA, REGRESSION_RANGES, [1],
                                REGRESSION_NOISE_STD)
    return [type1, type2]


def regression_scenario(n_rounds=2000, trials=1, master_seed=11,
                        cooperative=True, test_seed=99, test_size=1000) -> Scenario:
    """The two-node distributed linear-regression setup."""
    test_set = make_regression_test_set(
        test_size, REGRESSION_RANGES, REGRESSION_THETA, REGRESSION_NOISE_STD, test_seed
    )
    return Scenario(
        graph=validate_weight_matrix(REGRESSION_W),
        engine="gaussian",
        models=regression_models(),
        n_rounds=n_rounds,
        trials=trials,
        master_seed=master_seed,
        prior_mean=np.zeros(3),
        prior_variance_diag=np.full(3, 0.5),
        noise_var=REGRESSION_NOISE_STD**2,
        cooperative=cooperative,
        test_set=test_set,
    )


def covering_grid_world():
    """2-node Bernoulli world whose parameter set is a grid in a continuum.

    Each node sees one of two contexts; the truth (0.65, 0.35) is a grid
    point, every grid slice through it is one node's local optimum set,
    and their intersection is the single true index.
    """
    graph = validate_weight_matrix([[0.9, 0.1], [0.6, 0.4]])
    axis = np.array([0.2, 0.35, 0.5, 0.65, 0.8])
    points = np.array([[a, b] for a in axis for b in axis])
    theta_set = ParameterSet(points)
    star_index = int(np.argmax((points[:, 0] == 0.65) & (points[:, 1] == 0.35)))
    truth = points[star_index]
    models = [
        BernoulliContextModel(0, truth, [0]),
        BernoulliContextModel(1, truth, [1]),
    ]
    return graph, theta_set, models, star_index
