#!/usr/bin/env python3
"""IMFB: influence maximization with a low-rank factorization bandit.

Each node v carries an influence factor theta_v and a susceptibility factor
beta_v. Ridge statistics per node:

    A_v = lambda2 I + sum beta_r beta_r^T   b_v = sum beta_r y   (v giving)
    C_v = lambda1 I + sum theta_g theta_g^T d_v = sum theta_g y  (v receiving)

and theta_v = A_v^-1 b_v, beta_v = C_v^-1 d_v. All solves go through the
Cholesky factor; no inverse is formed.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from bandit_policy import InvariantError, cholesky
from im_environment import CascadeResult, Environment, edge_dot
from im_graph import DirectedGraph
from im_oracle import SeedOracle
from scipy.linalg import cho_solve, solve_triangular

logger = logging.getLogger(__name__)

UPDATE_MODES = ("incremental", "exact-recompute")
CB_VARIANTS = ("cross", "own")
RECOMPUTE_MAX_SWEEPS = 50
RECOMPUTE_TOLERANCE = 1e-8

Seed = Union[int, Sequence[int]]


@dataclass(frozen=True)
class ImfbHyperparams:
    dim: int = 20
    lambda1: float = 1.0
    lambda2: float = 1.0
    q: float = 0.9
    delta: float = 0.1
    update_mode: str = "incremental"
    cb_variant: str = "cross"
    exploration_scale: float = 1.0

    def validate(self) -> None:
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ValueError("lambda1 and lambda2 must be positive")
        if not 0.0 < self.q < 1.0:
            raise ValueError(f"q must be in (0, 1), got {self.q}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if self.update_mode not in UPDATE_MODES:
            raise ValueError(f"unknown update_mode: {self.update_mode}")
        if self.cb_variant not in CB_VARIANTS:
            raise ValueError(f"unknown cb_variant: {self.cb_variant}")
        if self.exploration_scale < 0:
            raise ValueError("exploration_scale must be >= 0")


@dataclass(eq=False)
class ImfbState:
    params: ImfbHyperparams
    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    dvec: np.ndarray
    theta_hat: np.ndarray
    beta_hat: np.ndarray
    round: int = 1
    history_edges: List[np.ndarray] = field(default_factory=list)
    history_outcomes: List[np.ndarray] = field(default_factory=list)

    @property
    def node_count(self) -> int:
        return int(self.theta_hat.shape[0])

    def copy(self) -> "ImfbState":
        return ImfbState(
            params=self.params,
            A=self.A.copy(),
            b=self.b.copy(),
            C=self.C.copy(),
            dvec=self.dvec.copy(),
            theta_hat=self.theta_hat.copy(),
            beta_hat=self.beta_hat.copy(),
            round=self.round,
            history_edges=list(self.history_edges),
            history_outcomes=list(self.history_outcomes),
        )


@dataclass(frozen=True, eq=False)
class UcbMatrix:
    p_bar: np.ndarray
    cb: np.ndarray


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    raw = rng.uniform(0.0, 1.0, size=(n, d))
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def init_state(graph: DirectedGraph, params: ImfbHyperparams, rng_seed: Seed) -> ImfbState:
    params.validate()
    n, d = graph.node_count, params.dim
    rng = np.random.default_rng(rng_seed)
    theta = _unit_rows(rng, n, d)
    beta = _unit_rows(rng, n, d)
    eye = np.eye(d)
    return ImfbState(
        params=params,
        A=np.broadcast_to(params.lambda2 * eye, (n, d, d)).copy(),
        b=np.zeros((n, d)),
        C=np.broadcast_to(params.lambda1 * eye, (n, d, d)).copy(),
        dvec=np.zeros((n, d)),
        theta_hat=theta,
        beta_hat=beta,
    )


def _alpha(logdet: np.ndarray, lam: float, params: ImfbHyperparams) -> np.ndarray:
    d, q = params.dim, params.q
    log_term = logdet - 2.0 * math.log(params.delta) - d * math.log(lam)
    radius = np.sqrt(np.maximum(log_term, 0.0))
    bias = (lam * (1.0 - q) + 2.0 * q) / (math.sqrt(lam) * (1.0 - q))
    return params.exploration_scale * (radius + bias)


def _decay(params: ImfbHyperparams, t: int) -> float:
    return 2.0 * params.q ** (2 * t)


def _batched_cholesky(mats: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(mats)
    except np.linalg.LinAlgError as exc:
        raise InvariantError(f"{what} statistics are not positive definite") from exc


def _logdet(chol: np.ndarray) -> np.ndarray:
    return 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(axis=-1)


def _factor_logdet(factor: Tuple[np.ndarray, bool]) -> np.ndarray:
    return 2.0 * np.log(np.diag(factor[0])).sum()


def _inverse_norms(chol: np.ndarray, owners: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """||x_i||_{M_{owner_i}^-1} with M = L L^T, via L^-1 x."""
    out = np.empty(owners.shape[0])
    order = np.argsort(owners, kind="stable")
    # One triangular solve per owner, over all of its columns at once.
    for idx in np.split(order, np.flatnonzero(np.diff(owners[order])) + 1):
        if idx.size == 0:
            continue
        z = solve_triangular(chol[owners[idx[0]]], vectors[idx].T, lower=True)
        out[idx] = np.sqrt(np.sum(z**2, axis=0))
    return out


def _norm_vectors(
    state: ImfbState, g: np.ndarray, r: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    if state.params.cb_variant == "cross":
        return state.beta_hat[r], state.theta_hat[g]
    return state.beta_hat[g], state.theta_hat[r]


def confidence_widths(state: ImfbState, graph: DirectedGraph) -> np.ndarray:
    """CB for every edge of the graph at the state's round."""
    params = state.params
    chol_a = _batched_cholesky(state.A, "A")
    chol_c = _batched_cholesky(state.C, "C")
    alpha_beta = _alpha(_logdet(chol_a), params.lambda1, params)
    alpha_theta = _alpha(_logdet(chol_c), params.lambda2, params)
    g, r = graph.sources, graph.targets
    under_a, under_c = _norm_vectors(state, g, r)
    width = alpha_beta[g] * _inverse_norms(chol_a, g, under_a)
    width += alpha_theta[r] * _inverse_norms(chol_c, r, under_c)
    return width + _decay(params, state.round)


def confidence_width(state: ImfbState, graph: DirectedGraph, edge: int) -> float:
    params = state.params
    g, r = graph.edge(edge)
    fa = cholesky(state.A[g], f"A[{g}]")
    fc = cholesky(state.C[r], f"C[{r}]")
    alpha_beta = _alpha(_factor_logdet(fa), params.lambda1, params)
    alpha_theta = _alpha(_factor_logdet(fc), params.lambda2, params)
    x_a, x_c = _norm_vectors(state, np.array([g]), np.array([r]))
    norm_a = math.sqrt(max(float(x_a[0] @ cho_solve(fa, x_a[0])), 0.0))
    norm_c = math.sqrt(max(float(x_c[0] @ cho_solve(fc, x_c[0])), 0.0))
    return float(alpha_beta) * norm_a + float(alpha_theta) * norm_c + _decay(params, state.round)


def point_estimates(state: ImfbState, graph: DirectedGraph) -> np.ndarray:
    return np.clip(edge_dot(graph, state.theta_hat, state.beta_hat), 0.0, 1.0)


def ucb_matrix(state: ImfbState, graph: DirectedGraph) -> UcbMatrix:
    cb = confidence_widths(state, graph)
    raw = edge_dot(graph, state.theta_hat, state.beta_hat) + cb
    return UcbMatrix(p_bar=np.clip(raw, 0.0, 1.0), cb=cb)


def _check_cascade(graph: DirectedGraph, cascade: CascadeResult) -> Tuple[np.ndarray, np.ndarray]:
    edges = np.asarray(cascade.observed_edges, dtype=np.int64)
    if edges.size and (edges.min() < 0 or edges.max() >= graph.edge_count):
        raise ValueError(
            f"cascade references an edge outside [0, {graph.edge_count})"
        )
    return edges, np.asarray(cascade.outcomes, dtype=np.float64)


def _solve_nodes(
    mats: np.ndarray, rhs: np.ndarray, nodes: np.ndarray, out: np.ndarray, what: str
) -> None:
    for v in nodes.tolist():
        out[v] = cho_solve(cholesky(mats[v], f"{what}[{v}]"), rhs[v])


def _accumulate(
    state: ImfbState,
    g: np.ndarray,
    r: np.ndarray,
    y: np.ndarray,
    theta: np.ndarray,
    beta: np.ndarray,
) -> None:
    bb = beta[r]
    tt = theta[g]
    np.add.at(state.A, g, np.einsum("ki,kj->kij", bb, bb))
    np.add.at(state.b, g, bb * y[:, None])
    np.add.at(state.C, r, np.einsum("ki,kj->kij", tt, tt))
    np.add.at(state.dvec, r, tt * y[:, None])


def _update_incremental(state: ImfbState, graph: DirectedGraph, edges: np.ndarray, y: np.ndarray) -> None:
    g, r = graph.sources[edges], graph.targets[edges]
    # Rank-one terms use the estimates entering this round.
    _accumulate(state, g, r, y, state.theta_hat.copy(), state.beta_hat.copy())
    _solve_nodes(state.A, state.b, np.unique(g), state.theta_hat, "A")
    _solve_nodes(state.C, state.dvec, np.unique(r), state.beta_hat, "C")


def _update_recompute(state: ImfbState, graph: DirectedGraph, edges: np.ndarray, y: np.ndarray) -> None:
    state.history_edges.append(edges)
    state.history_outcomes.append(y)
    all_edges = np.concatenate(state.history_edges)
    all_y = np.concatenate(state.history_outcomes)
    g, r = graph.sources[all_edges], graph.targets[all_edges]
    givers, receivers = np.unique(g), np.unique(r)
    params = state.params
    n, d = state.node_count, params.dim
    eye = np.eye(d)

    for sweep in range(1, RECOMPUTE_MAX_SWEEPS + 1):
        prev_theta = state.theta_hat.copy()
        prev_beta = state.beta_hat.copy()

        state.A = np.broadcast_to(params.lambda2 * eye, (n, d, d)).copy()
        state.b = np.zeros((n, d))
        bb = state.beta_hat[r]
        np.add.at(state.A, g, np.einsum("ki,kj->kij", bb, bb))
        np.add.at(state.b, g, bb * all_y[:, None])
        _solve_nodes(state.A, state.b, givers, state.theta_hat, "A")

        state.C = np.broadcast_to(params.lambda1 * eye, (n, d, d)).copy()
        state.dvec = np.zeros((n, d))
        tt = state.theta_hat[g]
        np.add.at(state.C, r, np.einsum("ki,kj->kij", tt, tt))
        np.add.at(state.dvec, r, tt * all_y[:, None])
        _solve_nodes(state.C, state.dvec, receivers, state.beta_hat, "C")

        change = max(
            float(np.max(np.abs(state.theta_hat - prev_theta))),
            float(np.max(np.abs(state.beta_hat - prev_beta))),
        )
        if change < RECOMPUTE_TOLERANCE:
            logger.debug("recompute converged after %d sweeps", sweep)
            return
    logger.debug("recompute stopped at %d sweeps (change %.3g)", RECOMPUTE_MAX_SWEEPS, change)


def update(state: ImfbState, cascade: CascadeResult, graph: DirectedGraph) -> ImfbState:
    """Fold one round of edge-level feedback into the state (in place) and advance t."""
    edges, y = _check_cascade(graph, cascade)
    if edges.size:
        if state.params.update_mode == "incremental":
            _update_incremental(state, graph, edges, y)
        else:
            _update_recompute(state, graph, edges, y)
    state.round += 1
    return state


def play_round(
    state: ImfbState,
    graph: DirectedGraph,
    oracle: SeedOracle,
    k: int,
    environment: Environment,
    rng: np.random.Generator,
) -> Tuple[Tuple[int, ...], CascadeResult, ImfbState, UcbMatrix]:
    ucb = ucb_matrix(state, graph)
    seeds = oracle(graph, ucb.p_bar, k)
    cascade = environment.run_cascade(seeds, rng)
    return seeds, cascade, update(state, cascade, graph), ucb


def parameter_count(state: ImfbState) -> int:
    """Learned factor entries, 2 d |V|; independent of the edge count."""
    return 2 * state.params.dim * state.node_count


def statistics_size(state: ImfbState) -> int:
    d = state.params.dim
    return 2 * state.node_count * (d * d + d)


def state_to_dict(state: ImfbState) -> Dict[str, Any]:
    payload: Dict[str, Any] = {
        "params": asdict(state.params),
        "round": state.round,
        "A": state.A.tolist(),
        "b": state.b.tolist(),
        "C": state.C.tolist(),
        "d": state.dvec.tolist(),
        "theta_hat": state.theta_hat.tolist(),
        "beta_hat": state.beta_hat.tolist(),
    }
    if state.history_edges:
        payload["history"] = {
            "edges": np.concatenate(state.history_edges).tolist(),
            "outcomes": np.concatenate(state.history_outcomes).astype(int).tolist(),
        }
    return payload


def state_from_dict(data: Dict[str, Any]) -> ImfbState:
    params = ImfbHyperparams(**data["params"])
    params.validate()
    d = params.dim
    state = ImfbState(
        params=params,
        A=np.asarray(data["A"], dtype=np.float64).reshape(-1, d, d),
        b=np.asarray(data["b"], dtype=np.float64).reshape(-1, d),
        C=np.asarray(data["C"], dtype=np.float64).reshape(-1, d, d),
        dvec=np.asarray(data["d"], dtype=np.float64).reshape(-1, d),
        theta_hat=np.asarray(data["theta_hat"], dtype=np.float64).reshape(-1, d),
        beta_hat=np.asarray(data["beta_hat"], dtype=np.float64).reshape(-1, d),
        round=int(data["round"]),
    )
    history = data.get("history")
    if history and history["edges"]:
        state.history_edges.append(np.asarray(history["edges"], dtype=np.int64))
        state.history_outcomes.append(np.asarray(history["outcomes"], dtype=np.float64))
    return state


def save_state(state: ImfbState, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(state_to_dict(state)) + "\n", encoding="utf-8")


def load_state(path: Path) -> ImfbState:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"Failed to load IMFB state: {path}: {exc}") from exc
    return state_from_dict(data)


class ImfbPolicy:
    name = "imfb"

    def __init__(self, graph: DirectedGraph, params: ImfbHyperparams, rng_seed: Seed) -> None:
        self.graph = graph
        self.state = init_state(graph, params, rng_seed)
        self.last_ucb: Optional[UcbMatrix] = None

    def select_seeds(
        self, oracle: SeedOracle, k: int, rng: np.random.Generator
    ) -> Tuple[int, ...]:
        self.last_ucb = ucb_matrix(self.state, self.graph)
        return oracle(self.graph, self.last_ucb.p_bar, k)

    def observe(self, cascade: CascadeResult) -> None:
        update(self.state, cascade, self.graph)

    def point_estimates(self) -> np.ndarray:
        return point_estimates(self.state, self.graph)

    def factor_estimates(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        return self.state.theta_hat, self.state.beta_hat
