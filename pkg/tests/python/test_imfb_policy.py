from __future__ import annotations

# ruff: noqa: S101
import math
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pytest
from im_environment import CascadeResult, Environment, GroundTruthModel
from im_graph import DirectedGraph, synthesize_gnm
from im_oracle import OracleSpec, make_oracle
from imfb_policy import (
    ImfbHyperparams,
    ImfbPolicy,
    ImfbState,
    confidence_width,
    confidence_widths,
    init_state,
    load_state,
    parameter_count,
    play_round,
    point_estimates,
    save_state,
    statistics_size,
    ucb_matrix,
    update,
)


def cascade_of(edges: List[int], outcomes: List[int]) -> CascadeResult:
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


def feed_rounds(
    state: ImfbState, graph: DirectedGraph, rounds: int, seed: int, k: int = 3
) -> ImfbState:
    env = Environment(graph, random_truth(graph, state.params.dim, seed))
    oracle = make_oracle(OracleSpec())
    rng = np.random.default_rng(seed)
    for _ in range(rounds):
        play_round(state, graph, oracle, k, env, rng)
    return state


def test_init_state_shapes_and_unit_rows() -> None:
    graph = synthesize_gnm(12, 30, seed=0)
    state = init_state(graph, ImfbHyperparams(dim=4, lambda1=2.0, lambda2=3.0), 7)
    assert state.round == 1
    assert state.A.shape == (12, 4, 4)
    assert np.allclose(state.A, 3.0 * np.eye(4))
    assert np.allclose(state.C, 2.0 * np.eye(4))
    assert not state.b.any() and not state.dvec.any()
    assert np.allclose(np.linalg.norm(state.theta_hat, axis=1), 1.0)
    assert np.allclose(np.linalg.norm(state.beta_hat, axis=1), 1.0)
    assert (state.theta_hat >= 0).all() and (state.beta_hat >= 0).all()


def test_init_state_is_seeded() -> None:
    graph = synthesize_gnm(8, 20, seed=0)
    params = ImfbHyperparams(dim=3)
    a = init_state(graph, params, [1, 2, 1])
    b = init_state(graph, params, [1, 2, 1])
    c = init_state(graph, params, [1, 3, 1])
    assert np.array_equal(a.theta_hat, b.theta_hat)
    assert not np.array_equal(a.theta_hat, c.theta_hat)


@pytest.mark.parametrize(
    "params",
    [
        ImfbHyperparams(q=1.0),
        ImfbHyperparams(delta=0.0),
        ImfbHyperparams(dim=0),
        ImfbHyperparams(lambda1=0.0),
        ImfbHyperparams(update_mode="batch"),
        ImfbHyperparams(cb_variant="other"),
        ImfbHyperparams(exploration_scale=-1.0),
    ],
)
def test_hyperparams_reject_out_of_range_values(params: ImfbHyperparams) -> None:
    with pytest.raises(ValueError):
        params.validate()


def test_width_is_decay_term_when_estimates_are_zero() -> None:
    graph = DirectedGraph.from_edges(2, [(0, 1)])
    state = init_state(graph, ImfbHyperparams(dim=3, q=0.5), 0)
    state.theta_hat[:] = 0.0
    state.beta_hat[:] = 0.0
    state.round = 2
    assert confidence_widths(state, graph)[0] == pytest.approx(0.125)
    assert confidence_width(state, graph, 0) == pytest.approx(0.125)


def test_width_matches_hand_arithmetic_in_one_dimension() -> None:
    graph = DirectedGraph.from_edges(2, [(0, 1)])
    state = init_state(graph, ImfbHyperparams(dim=1, q=0.5, delta=0.1), 0)
    alpha = math.sqrt(math.log(100.0)) + 3.0
    expected = 2.0 * alpha + 2.0 * 0.5**2
    assert confidence_widths(state, graph)[0] == pytest.approx(expected)


@pytest.mark.parametrize("variant", ["cross", "own"])
def test_scalar_and_vectorized_widths_agree(variant: str) -> None:
    graph = synthesize_gnm(15, 60, seed=2)
    state = init_state(graph, ImfbHyperparams(dim=3, cb_variant=variant), 5)
    feed_rounds(state, graph, 10, seed=4)
    widths = confidence_widths(state, graph)
    assert (widths >= 0).all()
    for e in range(0, graph.edge_count, 7):
        assert confidence_width(state, graph, e) == pytest.approx(widths[e], rel=1e-9)


def test_zero_exploration_scale_leaves_only_decay() -> None:
    graph = synthesize_gnm(10, 30, seed=1)
    base = init_state(graph, ImfbHyperparams(dim=2, q=0.5), 3)
    quiet = base.copy()
    quiet.params = ImfbHyperparams(dim=2, q=0.5, exploration_scale=0.0)
    decay = 2.0 * 0.5**2
    assert np.allclose(confidence_widths(quiet, graph), decay)
    assert (confidence_widths(base, graph) > decay).all()


def test_ucb_matrix_clamps_into_unit_interval() -> None:
    graph = DirectedGraph.from_edges(6, [(0, 1), (2, 3), (4, 5)])
    params = ImfbHyperparams(dim=1, q=0.5, exploration_scale=0.0)
    state = init_state(graph, params, 0)
    state.theta_hat[:, 0] = [1.3, 0.0, 0.05, 0.0, -0.9, 0.0]
    state.beta_hat[:, 0] = 1.0
    ucb = ucb_matrix(state, graph)
    assert np.allclose(ucb.cb, 0.5)
    assert ucb.p_bar.tolist() == pytest.approx([1.0, 0.55, 0.0])
    assert point_estimates(state, graph).tolist() == pytest.approx([1.0, 0.05, 0.0])


def test_empty_feedback_only_advances_round() -> None:
    graph = synthesize_gnm(6, 12, seed=0)
    state = init_state(graph, ImfbHyperparams(dim=2), 1)
    before = state.copy()
    update(state, cascade_of([], []), graph)
    assert state.round == before.round + 1
    assert np.array_equal(state.A, before.A)
    assert np.array_equal(state.theta_hat, before.theta_hat)


def test_single_observation_incremental_update() -> None:
    graph = DirectedGraph.from_edges(3, [(0, 1), (1, 2)])
    state = init_state(graph, ImfbHyperparams(dim=3), 9)
    theta0 = state.theta_hat[0].copy()
    beta1 = state.beta_hat[1].copy()
    untouched = state.theta_hat[2].copy()

    update(state, cascade_of([0], [1]), graph)

    assert np.allclose(state.A[0], np.eye(3) + np.outer(beta1, beta1))
    assert np.allclose(state.b[0], beta1)
    # Unit-norm priors: (I + x x^T)^-1 x = x / (1 + |x|^2) = x / 2.
    assert np.allclose(state.theta_hat[0], beta1 / 2.0)
    assert np.allclose(state.beta_hat[1], theta0 / 2.0)
    assert np.array_equal(state.theta_hat[2], untouched)
    assert state.round == 2


def test_failed_observation_shrinks_estimates_toward_zero() -> None:
    graph = DirectedGraph.from_edges(2, [(0, 1)])
    state = init_state(graph, ImfbHyperparams(dim=2), 4)
    update(state, cascade_of([0], [0]), graph)
    assert np.allclose(state.theta_hat[0], 0.0)
    assert np.allclose(state.beta_hat[1], 0.0)


def test_update_rejects_unknown_edge() -> None:
    graph = DirectedGraph.from_edges(2, [(0, 1)])
    state = init_state(graph, ImfbHyperparams(dim=2), 0)
    with pytest.raises(ValueError, match="outside"):
        update(state, cascade_of([3], [1]), graph)


def test_recompute_solves_both_ridge_systems() -> None:
    graph = synthesize_gnm(10, 40, seed=3)
    params = ImfbHyperparams(dim=3, lambda1=0.5, lambda2=2.0, update_mode="exact-recompute")
    state = feed_rounds(init_state(graph, params, 2), graph, 8, seed=6)

    edges = np.concatenate(state.history_edges)
    y = np.concatenate(state.history_outcomes)
    g, r = graph.sources[edges], graph.targets[edges]

    for v in np.unique(g).tolist():
        residual = state.A[v] @ state.theta_hat[v] - state.b[v]
        assert np.max(np.abs(residual)) < 1e-9

    for v in np.unique(r).tolist():
        rows = state.theta_hat[g[r == v]]
        design = np.vstack([rows, math.sqrt(params.lambda1) * np.eye(3)])
        target = np.concatenate([y[r == v], np.zeros(3)])
        expected, *_ = np.linalg.lstsq(design, target, rcond=None)
        assert np.allclose(state.beta_hat[v], expected, atol=1e-6)


@pytest.mark.parametrize("mode", ["incremental", "exact-recompute"])
def test_statistics_stay_positive_definite(mode: str) -> None:
    graph = synthesize_gnm(12, 50, seed=5)
    state = feed_rounds(
        init_state(graph, ImfbHyperparams(dim=3, update_mode=mode), 1), graph, 15, seed=2
    )
    np.linalg.cholesky(state.A)
    np.linalg.cholesky(state.C)
    assert state.round == 16


def test_inverse_norm_never_grows_under_updates() -> None:
    graph = synthesize_gnm(12, 50, seed=8)
    state = init_state(graph, ImfbHyperparams(dim=3), 1)
    probe = np.array([0.3, -0.2, 0.9])

    def quad(mats: np.ndarray) -> np.ndarray:
        return np.einsum("j,njk,k->n", probe, np.linalg.inv(mats), probe)

    before = quad(state.A), quad(state.C)
    feed_rounds(state, graph, 10, seed=1)
    after = quad(state.A), quad(state.C)
    assert (after[0] <= before[0] + 1e-12).all()
    assert (after[1] <= before[1] + 1e-12).all()


def test_round_with_zero_seeds(path_graph: Tuple[DirectedGraph, np.ndarray]) -> None:
    graph, _ = path_graph
    env = Environment(graph, GroundTruthModel.from_factors(graph, np.ones((3, 1)), np.ones((3, 1))))
    state = init_state(graph, ImfbHyperparams(dim=1), 0)
    seeds, cascade, state, _ = play_round(
        state, graph, make_oracle(OracleSpec()), 0, env, np.random.default_rng(0)
    )
    assert seeds == ()
    assert cascade.reward == 0
    assert state.round == 2


def test_replay_from_copy_is_deterministic() -> None:
    graph = synthesize_gnm(20, 80, seed=4)
    env = Environment(graph, random_truth(graph, 3, 0))
    oracle = make_oracle(OracleSpec())
    start = init_state(graph, ImfbHyperparams(dim=3), 11)
    first, second = start.copy(), start.copy()
    rng_a, rng_b = np.random.default_rng(5), np.random.default_rng(5)
    for _ in range(5):
        seeds_a, casc_a, _, _ = play_round(first, graph, oracle, 2, env, rng_a)
        seeds_b, casc_b, _, _ = play_round(second, graph, oracle, 2, env, rng_b)
        assert seeds_a == seeds_b
        assert casc_a.same_as(casc_b)
    assert np.array_equal(first.theta_hat, second.theta_hat)
    assert start.round == 1


def test_learns_best_seed_on_path(path_graph: Tuple[DirectedGraph, np.ndarray]) -> None:
    graph, _ = path_graph
    theta = np.array([[1.0, 0.0], [0.5, 0.0], [0.0, 0.0]])
    beta = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    env = Environment(graph, GroundTruthModel.from_factors(graph, theta, beta))
    policy = ImfbPolicy(graph, ImfbHyperparams(dim=2, exploration_scale=0.1), 3)
    oracle = make_oracle(OracleSpec(kind="exact"))
    rng = np.random.default_rng(0)

    picks = []
    for _ in range(200):
        seeds = policy.select_seeds(oracle, 1, rng)
        policy.observe(env.run_cascade(seeds, rng))
        picks.append(seeds)
    assert sum(s == (0,) for s in picks[-50:]) >= 45
    assert policy.last_ucb is not None
    assert policy.factor_estimates() is not None


def test_path_seed_is_found_in_every_run(path_graph: Tuple[DirectedGraph, np.ndarray]) -> None:
    graph, _ = path_graph
    theta = np.array([[1.0, 0.0], [0.5, 0.0], [0.0, 0.0]])
    beta = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    env = Environment(graph, GroundTruthModel.from_factors(graph, theta, beta))
    oracle = make_oracle(OracleSpec(kind="exact"))
    for run in range(5):
        policy = ImfbPolicy(graph, ImfbHyperparams(dim=2), [run, 1])
        rng = np.random.default_rng([run, 2])
        picks = []
        for _ in range(50):
            seeds = policy.select_seeds(oracle, 1, rng)
            policy.observe(env.run_cascade(seeds, rng))
            picks.append(seeds)
        assert sum(s == (0,) for s in picks) >= 45


def test_incremental_estimates_solve_both_systems_every_round() -> None:
    graph = synthesize_gnm(15, 60, seed=9)
    env = Environment(graph, random_truth(graph, 3, 4))
    oracle = make_oracle(OracleSpec())
    state = init_state(graph, ImfbHyperparams(dim=3), 2)
    rng = np.random.default_rng(7)
    givers: set[int] = set()
    receivers: set[int] = set()
    for _ in range(30):
        _, cascade, state, _ = play_round(state, graph, oracle, 3, env, rng)
        givers.update(graph.sources[cascade.observed_edges].tolist())
        receivers.update(graph.targets[cascade.observed_edges].tolist())
        for v in givers:
            assert np.max(np.abs(state.A[v] @ state.theta_hat[v] - state.b[v])) < 1e-9
        for v in receivers:
            assert np.max(np.abs(state.C[v] @ state.beta_hat[v] - state.dvec[v])) < 1e-9
    assert receivers


def test_parameter_count_ignores_edge_count() -> None:
    sparse = synthesize_gnm(30, 40, seed=0)
    dense = synthesize_gnm(30, 400, seed=0)
    params = ImfbHyperparams(dim=5)
    assert parameter_count(init_state(sparse, params, 0)) == 2 * 5 * 30
    assert parameter_count(init_state(dense, params, 0)) == 2 * 5 * 30
    assert statistics_size(init_state(dense, params, 0)) == 2 * 30 * (25 + 5)


@pytest.mark.parametrize("mode", ["incremental", "exact-recompute"])
def test_state_snapshot_round_trip(tmp_path: Path, mode: str) -> None:
    graph = synthesize_gnm(8, 24, seed=1)
    state = feed_rounds(
        init_state(graph, ImfbHyperparams(dim=2, update_mode=mode), 0), graph, 4, seed=3
    )
    path = tmp_path / "state" / "imfb.json"
    save_state(state, path)
    loaded = load_state(path)

    assert loaded.params == state.params
    assert loaded.round == state.round
    for name in ("A", "b", "C", "dvec", "theta_hat", "beta_hat"):
        assert np.allclose(getattr(loaded, name), getattr(state, name))
    if mode == "exact-recompute":
        assert np.array_equal(
            np.concatenate(loaded.history_edges), np.concatenate(state.history_edges)
        )
    assert np.allclose(confidence_widths(loaded, graph), confidence_widths(state, graph))


def test_load_state_reports_bad_file(tmp_path: Path) -> None:
    path = tmp_path / "broken.json"
    path.write_text("{", encoding="utf-8")
    with pytest.raises(ValueError, match="Failed to load IMFB state"):
        load_state(path)
