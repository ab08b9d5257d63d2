#!/usr/bin/env python3
"""Seed-selection oracles: DegreeDiscountIC and exact brute force."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from im_environment import DEFAULT_ENUMERATION_CAP, live_edge_reachability
from im_graph import DirectedGraph, degrees

ORACLE_KINDS = ("degree-discount", "exact")
DEGREE_WEIGHTINGS = ("out-degree", "expected")
DEFAULT_SUBSET_CAP = 100_000
DEFAULT_GAMMA = 1.0 - 1.0 / math.e

SeedOracle = Callable[[DirectedGraph, np.ndarray, int], Tuple[int, ...]]


class OracleError(ValueError):
    """Raised for invalid oracle inputs or exceeded enumeration caps."""


@dataclass(frozen=True)
class OracleSpec:
    kind: str = "degree-discount"
    alpha: float = 1.0
    gamma: float = DEFAULT_GAMMA
    degree_weighting: str = "out-degree"
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP
    subset_cap: int = DEFAULT_SUBSET_CAP


def oracle_guarantee(spec: OracleSpec) -> Tuple[float, float]:
    """(alpha, gamma) the regret proxy scales by; the exact oracle is (1, 1)."""
    if spec.kind == "exact":
        return 1.0, 1.0
    return spec.alpha, spec.gamma


def _check_k(k: int) -> None:
    if k < 0:
        raise OracleError(f"K must be >= 0, got {k}")


def select_seeds_degree_discount(
    graph: DirectedGraph,
    probabilities: np.ndarray,
    k: int,
    weighting: str = "out-degree",
) -> Tuple[int, ...]:
    """Greedy DegreeDiscountIC generalised to per-edge probabilities.

    out-degree: score(v) = d_v - 2 t_v - (d_v - t_v) t_v pbar_v
    expected:   d_v is the sum of out-edge probabilities and each selected
                in-neighbour counts pbar_v instead of 1.
    pbar_v is the mean probability on edges from selected in-neighbours.
    """
    _check_k(k)
    if weighting not in DEGREE_WEIGHTINGS:
        raise OracleError(f"unknown degree weighting: {weighting}")
    n = graph.node_count
    k = min(k, n)
    p = np.asarray(probabilities, dtype=np.float64)

    if weighting == "out-degree":
        d = degrees(graph)[0].astype(np.float64)
    else:
        d = np.bincount(graph.sources, weights=p, minlength=n).astype(np.float64)
    t = np.zeros(n)
    p_sum = np.zeros(n)
    score = d.copy()
    selected = np.zeros(n, dtype=bool)
    seeds = []

    for _ in range(k):
        masked = np.where(selected, -np.inf, score)
        # argmax returns the first maximum: lowest node id wins ties.
        u = int(np.argmax(masked))
        selected[u] = True
        seeds.append(u)
        edges = graph.out_edges(u)
        for e, v in zip(edges.tolist(), graph.targets[edges].tolist()):
            if selected[v]:
                continue
            t[v] += 1.0
            p_sum[v] += p[e]
            pbar = p_sum[v] / t[v]
            if weighting == "out-degree":
                score[v] = d[v] - 2.0 * t[v] - (d[v] - t[v]) * t[v] * pbar
            else:
                tw = t[v] * pbar
                score[v] = d[v] - 2.0 * tw - (d[v] - tw) * tw
    return tuple(seeds)


def select_seeds_exact(
    graph: DirectedGraph,
    probabilities: np.ndarray,
    k: int,
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP,
    subset_cap: int = DEFAULT_SUBSET_CAP,
) -> Tuple[int, ...]:
    """argmax of exact expected spread over all K-subsets, lexicographic ties."""
    _check_k(k)
    n = graph.node_count
    k = min(k, n)
    if k == 0:
        return ()
    if graph.edge_count > enumeration_cap:
        raise OracleError(
            f"exact oracle needs |E| <= {enumeration_cap}, got {graph.edge_count}"
        )
    subsets = math.comb(n, k)
    if subsets > subset_cap:
        raise OracleError(
            f"exact oracle needs C(|V|, K) <= {subset_cap}, got {subsets}"
        )

    return _best_subset(graph, probabilities, k, enumeration_cap)[0]


def _best_subset(
    graph: DirectedGraph, probabilities: np.ndarray, k: int, cap: int
) -> Tuple[Tuple[int, ...], float]:
    nodes, chunks = live_edge_reachability(graph, probabilities, cap)
    position = {v: i for i, v in enumerate(nodes.tolist())}
    subsets = list(itertools.combinations(range(graph.node_count), k))
    columns = [[position[v] for v in s if v in position] for s in subsets]
    untracked = np.array([k - len(cols) for cols in columns], dtype=np.float64)

    values = np.zeros(len(subsets))
    for weights, reach in chunks:
        for j, cols in enumerate(columns):
            if cols:
                covered = np.bitwise_or.reduce(reach[:, cols], axis=1)
                values[j] += float(weights @ np.bitwise_count(covered))
        values += untracked * float(weights.sum())

    # First subset within tolerance of the maximum: lexicographic tie-break.
    best = int(np.flatnonzero(values >= values.max() - 1e-12)[0])
    return subsets[best], float(values[best])


def optimal_spread(
    graph: DirectedGraph, probabilities: np.ndarray, k: int, spec: OracleSpec
) -> float:
    """Exact f_P(S_opt); callers check exact_is_tractable first."""
    k = min(max(k, 0), graph.node_count)
    if not exact_is_tractable(graph, k, spec):
        raise OracleError("optimal spread is intractable under the configured caps")
    if k == 0:
        return 0.0
    return _best_subset(graph, probabilities, k, spec.enumeration_cap)[1]


def exact_is_tractable(graph: DirectedGraph, k: int, spec: OracleSpec) -> bool:
    k = min(max(k, 0), graph.node_count)
    return (
        graph.edge_count <= spec.enumeration_cap
        and math.comb(graph.node_count, k) <= spec.subset_cap
    )


def make_oracle(spec: OracleSpec) -> SeedOracle:
    if spec.kind not in ORACLE_KINDS:
        raise OracleError(f"unknown oracle kind: {spec.kind}")
    if spec.kind == "exact":

        def exact(graph: DirectedGraph, probabilities: np.ndarray, k: int) -> Tuple[int, ...]:
            return select_seeds_exact(
                graph, probabilities, k, spec.enumeration_cap, spec.subset_cap
            )

        return exact

    def discount(graph: DirectedGraph, probabilities: np.ndarray, k: int) -> Tuple[int, ...]:
        return select_seeds_degree_discount(
            graph, probabilities, k, spec.degree_weighting
        )

    return discount
