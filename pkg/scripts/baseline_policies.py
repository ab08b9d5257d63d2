#!/usr/bin/env python3
"""Comparison policies: CUCB, epsilon-greedy and IMLinUCB with outer-product features."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from bandit_policy import cholesky
from im_environment import CascadeResult, GroundTruthModel
from im_graph import DirectedGraph
from im_oracle import SeedOracle
from scipy.linalg import cho_solve

UNOBSERVED_MEAN = 0.5

CascadeRunner = Callable[[Tuple[int, ...]], CascadeResult]


@dataclass(eq=False)
class EdgeStatsState:
    trials: np.ndarray
    successes: np.ndarray

    @classmethod
    def fresh(cls, edge_count: int) -> "EdgeStatsState":
        return cls(
            trials=np.zeros(edge_count, dtype=np.int64),
            successes=np.zeros(edge_count, dtype=np.int64),
        )

    def observe(self, cascade: CascadeResult) -> None:
        edges = np.asarray(cascade.observed_edges, dtype=np.int64)
        if edges.size and (edges.min() < 0 or edges.max() >= self.trials.size):
            raise ValueError(
                f"cascade references an edge outside [0, {self.trials.size})"
            )
        np.add.at(self.trials, edges, 1)
        np.add.at(self.successes, edges, np.asarray(cascade.outcomes, dtype=np.int64))

    def empirical_means(self, unobserved: float = UNOBSERVED_MEAN) -> np.ndarray:
        means = np.full(self.trials.shape, unobserved, dtype=np.float64)
        seen = self.trials > 0
        means[seen] = self.successes[seen] / self.trials[seen]
        return means


def cucb_ucb(state: EdgeStatsState, t: int) -> np.ndarray:
    """p_bar_e = clamp(mean_e + sqrt(3 ln t / (2 T_e)), 0, 1); unobserved edges get 1."""
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    p_bar = np.ones(state.trials.shape, dtype=np.float64)
    seen = state.trials > 0
    trials = state.trials[seen].astype(np.float64)
    radius = np.sqrt(3.0 * math.log(t) / (2.0 * trials))
    p_bar[seen] = np.clip(state.successes[seen] / trials + radius, 0.0, 1.0)
    return p_bar


def eps_greedy_select(
    state: EdgeStatsState,
    graph: DirectedGraph,
    oracle: SeedOracle,
    k: int,
    epsilon: float,
    rng: np.random.Generator,
) -> Tuple[int, ...]:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    k = min(k, graph.node_count)
    # The coin is drawn every round, explore or not.
    explore = rng.random() < epsilon
    if explore:
        picks = rng.choice(graph.node_count, size=k, replace=False)
        return tuple(sorted(int(v) for v in picks))
    return oracle(graph, state.empirical_means(), k)


def imlinucb_features(graph: DirectedGraph, truth: GroundTruthModel) -> np.ndarray:
    """Row-major flattening of theta*_g beta*_r^T per edge, shape (|E|, d^2)."""
    outer = np.einsum(
        "ki,kj->kij", truth.theta_star[graph.sources], truth.beta_star[graph.targets]
    )
    return outer.reshape(graph.edge_count, -1)


@dataclass(eq=False)
class LinUcbState:
    features: np.ndarray
    gram: np.ndarray
    moment: np.ndarray
    weight_hat: np.ndarray

    @classmethod
    def fresh(cls, features: np.ndarray, lam: float = 1.0) -> "LinUcbState":
        if lam <= 0:
            raise ValueError(f"lam must be positive, got {lam}")
        dim = int(features.shape[1])
        return cls(
            features=np.asarray(features, dtype=np.float64),
            gram=lam * np.eye(dim),
            moment=np.zeros(dim),
            weight_hat=np.zeros(dim),
        )

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])


def imlinucb_ucb(state: LinUcbState, c_explore: float) -> np.ndarray:
    x = state.features
    mean = x @ state.weight_hat
    if c_explore == 0.0:
        return np.clip(mean, 0.0, 1.0)
    factor = cholesky(state.gram, "IMLinUCB gram")
    solved = cho_solve(factor, x.T)
    width = np.sqrt(np.maximum(np.einsum("ij,ji->i", x, solved), 0.0))
    return np.clip(mean + c_explore * width, 0.0, 1.0)


def imlinucb_update(state: LinUcbState, cascade: CascadeResult) -> None:
    edges = np.asarray(cascade.observed_edges, dtype=np.int64)
    if edges.size == 0:
        return
    if edges.min() < 0 or edges.max() >= state.features.shape[0]:
        raise ValueError("cascade references an edge without a feature row")
    x = state.features[edges]
    y = np.asarray(cascade.outcomes, dtype=np.float64)
    # One refactorization per round for all rank-one terms.
    state.gram += x.T @ x
    state.moment += x.T @ y
    state.weight_hat = cho_solve(cholesky(state.gram, "IMLinUCB gram"), state.moment)


def imlinucb_round(
    state: LinUcbState,
    graph: DirectedGraph,
    oracle: SeedOracle,
    k: int,
    c_explore: float,
    run_cascade: CascadeRunner,
) -> Tuple[np.ndarray, Tuple[int, ...], CascadeResult]:
    p_bar = imlinucb_ucb(state, c_explore)
    seeds = oracle(graph, p_bar, k)
    cascade = run_cascade(seeds)
    imlinucb_update(state, cascade)
    return p_bar, seeds, cascade


class CucbPolicy:
    name = "cucb"

    def __init__(self, graph: DirectedGraph) -> None:
        self.graph = graph
        self.state = EdgeStatsState.fresh(graph.edge_count)
        self.round = 1

    def select_seeds(
        self, oracle: SeedOracle, k: int, rng: np.random.Generator
    ) -> Tuple[int, ...]:
        return oracle(self.graph, cucb_ucb(self.state, self.round), k)

    def observe(self, cascade: CascadeResult) -> None:
        self.state.observe(cascade)
        self.round += 1

    def point_estimates(self) -> np.ndarray:
        return self.state.empirical_means()

    def factor_estimates(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        return None


class EpsGreedyPolicy:
    name = "eps-greedy"

    def __init__(self, graph: DirectedGraph, epsilon: float = 0.1) -> None:
        self.graph = graph
        self.epsilon = epsilon
        self.state = EdgeStatsState.fresh(graph.edge_count)

    def select_seeds(
        self, oracle: SeedOracle, k: int, rng: np.random.Generator
    ) -> Tuple[int, ...]:
        return eps_greedy_select(self.state, self.graph, oracle, k, self.epsilon, rng)

    def observe(self, cascade: CascadeResult) -> None:
        self.state.observe(cascade)

    def point_estimates(self) -> np.ndarray:
        return self.state.empirical_means()

    def factor_estimates(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        return None


class ImLinUcbPolicy:
    """Edge-level linear bandit fed with ground-truth outer-product features."""

    name = "imlinucb"

    def __init__(
        self,
        graph: DirectedGraph,
        truth: GroundTruthModel,
        c_explore: float = 1.0,
        lam: float = 1.0,
    ) -> None:
        self.graph = graph
        self.c_explore = c_explore
        self.state = LinUcbState.fresh(imlinucb_features(graph, truth), lam)

    def select_seeds(
        self, oracle: SeedOracle, k: int, rng: np.random.Generator
    ) -> Tuple[int, ...]:
        return oracle(self.graph, imlinucb_ucb(self.state, self.c_explore), k)

    def observe(self, cascade: CascadeResult) -> None:
        imlinucb_update(self.state, cascade)

    def point_estimates(self) -> np.ndarray:
        return np.clip(self.state.features @ self.state.weight_hat, 0.0, 1.0)

    def factor_estimates(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        return None
