from __future__ import annotations

# ruff: noqa: S101
import math

import numpy as np
import pytest
from bandit_policy import BanditPolicy, play_policy_round
from baseline_policies import (
    CucbPolicy,
    EdgeStatsState,
    EpsGreedyPolicy,
    ImLinUcbPolicy,
    LinUcbState,
    cucb_ucb,
    eps_greedy_select,
    imlinucb_features,
    imlinucb_round,
    imlinucb_ucb,
    imlinucb_update,
)
from im_environment import CascadeResult, Environment, GroundTruthModel
from im_graph import DirectedGraph, synthesize_gnm
from im_oracle import OracleSpec, make_oracle
from imfb_policy import ImfbHyperparams, ImfbPolicy
from scipy.stats import chisquare


def cascade_of(edges: list[int], outcomes: list[int]) -> CascadeResult:
    return CascadeResult(
        activated_nodes=(),
        observed_edges=np.asarray(edges, dtype=np.int64),
        outcomes=np.asarray(outcomes, dtype=np.int8),
    )


def random_truth(graph: DirectedGraph, dim: int, seed: int) -> GroundTruthModel:
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0, 1, size=(graph.node_count, dim)) / math.sqrt(dim)
    beta = rng.uniform(0, 1, size=(graph.node_count, dim)) / math.sqrt(dim)
    return GroundTruthModel.from_factors(graph, theta, beta)


def star(n: int) -> DirectedGraph:
    return DirectedGraph.from_edges(n, [(0, v) for v in range(1, n)])


def test_cucb_radius_examples() -> None:
    state = EdgeStatsState.fresh(3)
    state.trials[:] = [1, 3, 0]
    state.successes[:] = [0, 0, 0]
    p_bar = cucb_ucb(state, 2)
    # sqrt(3 ln 2 / 2) = 1.0197 clamps to 1.
    assert math.sqrt(3 * math.log(2) / 2) == pytest.approx(1.0197, abs=1e-4)
    assert p_bar[0] == 1.0
    assert p_bar[1] == pytest.approx(math.sqrt(math.log(2) / 2))
    assert p_bar[2] == 1.0


def test_cucb_radius_vanishes_with_many_trials() -> None:
    state = EdgeStatsState.fresh(1)
    state.trials[0] = 1_000_000
    state.successes[0] = 500_000
    assert cucb_ucb(state, 10)[0] == pytest.approx(0.5, abs=0.01)


def test_cucb_rejects_round_zero() -> None:
    with pytest.raises(ValueError, match="t must be >= 1"):
        cucb_ucb(EdgeStatsState.fresh(2), 0)


def test_edge_stats_touch_only_observed_edges() -> None:
    state = EdgeStatsState.fresh(4)
    state.observe(cascade_of([1, 3, 1], [1, 0, 0]))
    assert state.trials.tolist() == [0, 2, 0, 1]
    assert state.successes.tolist() == [0, 1, 0, 0]
    assert state.empirical_means().tolist() == [0.5, 0.5, 0.5, 0.0]
    assert cucb_ucb(state, 3)[[0, 2]].tolist() == [1.0, 1.0]
    with pytest.raises(ValueError, match="outside"):
        state.observe(cascade_of([4], [1]))


def test_eps_greedy_without_exploration_follows_oracle() -> None:
    graph = star(6)
    state = EdgeStatsState.fresh(graph.edge_count)
    oracle = make_oracle(OracleSpec())
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert eps_greedy_select(state, graph, oracle, 1, 0.0, rng) == (0,)


def test_eps_greedy_exploration_frequency() -> None:
    graph = star(10)
    state = EdgeStatsState.fresh(graph.edge_count)
    oracle = make_oracle(OracleSpec())
    rng = np.random.default_rng(1)
    draws = 10_000
    hits = sum(eps_greedy_select(state, graph, oracle, 1, 0.3, rng) == (0,) for _ in range(draws))
    expected = 0.7 + 0.3 / 10
    sigma = math.sqrt(expected * (1 - expected) / draws)
    assert abs(hits / draws - expected) < 3 * sigma


def test_full_exploration_picks_nodes_uniformly() -> None:
    graph = star(10)
    state = EdgeStatsState.fresh(graph.edge_count)
    oracle = make_oracle(OracleSpec())
    rng = np.random.default_rng(12)
    counts = np.zeros(graph.node_count)
    draws = 5000
    for _ in range(draws):
        counts[list(eps_greedy_select(state, graph, oracle, 2, 1.0, rng))] += 1
    assert counts.sum() == 2 * draws
    assert chisquare(counts).pvalue > 1e-3
    # No preference for the hub.
    assert counts[0] < 1.2 * counts[1:].mean()


def test_eps_greedy_random_picks_are_distinct_and_replayable() -> None:
    graph = star(8)
    state = EdgeStatsState.fresh(graph.edge_count)
    oracle = make_oracle(OracleSpec())
    first = [eps_greedy_select(state, graph, oracle, 3, 1.0, np.random.default_rng([4, t])) for t in range(30)]
    again = [eps_greedy_select(state, graph, oracle, 3, 1.0, np.random.default_rng([4, t])) for t in range(30)]
    assert first == again
    for pick in first:
        assert len(set(pick)) == 3
        assert list(pick) == sorted(pick)
    with pytest.raises(ValueError, match="epsilon"):
        eps_greedy_select(state, graph, oracle, 1, 1.5, np.random.default_rng(0))


def test_imlinucb_feature_layout() -> None:
    graph = DirectedGraph.from_edges(2, [(0, 1)])
    truth = GroundTruthModel.from_factors(
        graph, np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[0.0, 0.0], [0.0, 1.0]])
    )
    assert imlinucb_features(graph, truth).tolist() == [[0.0, 1.0, 0.0, 0.0]]


def test_imlinucb_identity_weight_recovers_truth() -> None:
    graph = synthesize_gnm(15, 50, seed=2)
    truth = random_truth(graph, 3, 0)
    features = imlinucb_features(graph, truth)
    assert features.shape == (50, 9)
    assert np.allclose(features @ np.eye(3).ravel(), truth.p_star)
    norms = np.linalg.norm(truth.theta_star[graph.sources], axis=1) * np.linalg.norm(
        truth.beta_star[graph.targets], axis=1
    )
    assert np.allclose(np.linalg.norm(features, axis=1), norms)


def test_imlinucb_fresh_state_without_exploration_is_zero() -> None:
    graph = synthesize_gnm(6, 10, seed=0)
    state = LinUcbState.fresh(imlinucb_features(graph, random_truth(graph, 2, 1)))
    assert state.feature_dim == 4
    assert not imlinucb_ucb(state, 0.0).any()
    assert (imlinucb_ucb(state, 1.0) > 0).all()
    with pytest.raises(ValueError, match="lam"):
        LinUcbState.fresh(state.features, lam=0.0)


def test_imlinucb_update_solves_ridge_system() -> None:
    graph = synthesize_gnm(12, 40, seed=3)
    truth = random_truth(graph, 2, 2)
    state = LinUcbState.fresh(imlinucb_features(graph, truth), lam=0.5)
    env = Environment(graph, truth)
    oracle = make_oracle(OracleSpec())
    rng = np.random.default_rng(7)
    for _ in range(10):
        imlinucb_round(state, graph, oracle, 2, 0.5, lambda seeds: env.run_cascade(seeds, rng))
    assert np.max(np.abs(state.gram @ state.weight_hat - state.moment)) < 1e-9
    np.linalg.cholesky(state.gram)


def test_imlinucb_update_ignores_empty_feedback() -> None:
    graph = synthesize_gnm(5, 8, seed=0)
    state = LinUcbState.fresh(imlinucb_features(graph, random_truth(graph, 2, 0)))
    gram = state.gram.copy()
    imlinucb_update(state, cascade_of([], []))
    assert np.array_equal(state.gram, gram)
    with pytest.raises(ValueError, match="feature row"):
        imlinucb_update(state, cascade_of([99], [1]))


def make_policies(graph: DirectedGraph, truth: GroundTruthModel) -> list[BanditPolicy]:
    return [
        ImfbPolicy(graph, ImfbHyperparams(dim=2), 0),
        CucbPolicy(graph),
        EpsGreedyPolicy(graph, 0.2),
        ImLinUcbPolicy(graph, truth, c_explore=0.5),
    ]


def test_every_policy_runs_the_shared_loop() -> None:
    graph = synthesize_gnm(20, 70, seed=1)
    truth = random_truth(graph, 2, 3)
    env = Environment(graph, truth)
    oracle = make_oracle(OracleSpec())
    for policy in make_policies(graph, truth):
        for t in range(1, 6):
            outcome = play_policy_round(
                policy,
                env,
                oracle,
                3,
                np.random.default_rng([0, t, 3]),
                np.random.default_rng([0, t, 2]),
            )
            assert len(outcome.seeds) == 3
            assert outcome.cascade.reward >= 3
        estimates = policy.point_estimates()
        assert estimates.shape == (graph.edge_count,)
        assert ((estimates >= 0) & (estimates <= 1)).all()
        factors = policy.factor_estimates()
        assert (factors is not None) == (policy.name == "imfb")
