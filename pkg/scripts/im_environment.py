#!/usr/bin/env python3
"""Ground-truth activation model and independent-cascade simulation.

Activation probabilities are low rank: p*_e = clamp(theta*_g . beta*_r, 0, 1)
for the giving node g and receiving node r of edge e.
"""

from __future__ import annotations

import itertools
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from im_graph import DirectedGraph, degrees, without_edges

logger = logging.getLogger(__name__)

GENERATION_MODES = ("uniform", "stratified", "two-type")
DEFAULT_ENUMERATION_CAP = 20
MAX_ENUMERATION_CAP = 30
MAX_TRACKED_NODES = 64
WORLD_CHUNK = 1 << 14
MAX_CLAMPED_FRACTION = 0.5

SeedWords = Union[int, Tuple[int, ...]]


class GenerationError(RuntimeError):
    """Raised when a ground truth cannot be generated as requested."""


@dataclass(frozen=True, eq=False)
class GroundTruthModel:
    dim: int
    theta_star: np.ndarray
    beta_star: np.ndarray
    p_star: np.ndarray

    @classmethod
    def from_factors(
        cls, graph: DirectedGraph, theta_star: np.ndarray, beta_star: np.ndarray
    ) -> "GroundTruthModel":
        theta = np.asarray(theta_star, dtype=np.float64)
        beta = np.asarray(beta_star, dtype=np.float64)
        expected = (graph.node_count, theta.shape[1] if theta.ndim == 2 else -1)
        if theta.shape != expected or beta.shape != expected:
            raise GenerationError(
                f"factor shapes {theta.shape}/{beta.shape} do not match "
                f"{graph.node_count} nodes"
            )
        if np.any(theta < 0) or np.any(beta < 0):
            raise GenerationError("factor entries must be non-negative")
        p_star = edge_dot(graph, theta, beta)
        np.clip(p_star, 0.0, 1.0, out=p_star)
        for arr in (theta, beta, p_star):
            arr.setflags(write=False)
        return cls(dim=int(theta.shape[1]), theta_star=theta, beta_star=beta, p_star=p_star)


@dataclass(frozen=True)
class GenerationSpec:
    mode: str = "uniform"
    dim: int = 20
    target_mean_p: Optional[float] = None
    group_count: int = 10
    rng_seed: SeedWords = 0
    type_one_fraction: float = 0.1
    cross_type_removal: float = 0.0


@dataclass(frozen=True)
class PerturbationSpec:
    noise_halfwidth: float = 0.0
    scale: float = 1.0
    global_noise: bool = False


@dataclass(frozen=True, eq=False)
class CascadeResult:
    activated_nodes: Tuple[int, ...]
    observed_edges: np.ndarray
    outcomes: np.ndarray
    seeds: Tuple[int, ...] = field(default=())

    @property
    def reward(self) -> int:
        return len(self.activated_nodes)

    def outcome_map(self) -> Dict[int, int]:
        return {int(e): int(y) for e, y in zip(self.observed_edges, self.outcomes)}

    def same_as(self, other: "CascadeResult") -> bool:
        return (
            self.activated_nodes == other.activated_nodes
            and np.array_equal(self.observed_edges, other.observed_edges)
            and np.array_equal(self.outcomes, other.outcomes)
        )


def edge_dot(graph: DirectedGraph, theta: np.ndarray, beta: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", theta[graph.sources], beta[graph.targets])


def soft_degrees(graph: DirectedGraph, probabilities: np.ndarray) -> np.ndarray:
    """Sum of activation probabilities over each node's out-edges."""
    return np.bincount(
        graph.sources, weights=probabilities, minlength=graph.node_count
    ).astype(np.float64)


def coefficient_of_variation(values: np.ndarray) -> float:
    mean = float(np.mean(values)) if values.size else 0.0
    if mean == 0.0:
        return 0.0
    return float(np.std(values) / mean)


def _normalize_rows(factors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(factors, axis=1, keepdims=True)
    return np.divide(factors, norms, out=np.zeros_like(factors), where=norms > 0)


def _normalize_family(factors: np.ndarray) -> np.ndarray:
    """Divide a factor family by its largest row norm."""
    largest = float(np.linalg.norm(factors, axis=1).max()) if factors.size else 0.0
    return factors / largest if largest > 0 else factors


def _nodes_by_out_degree(graph: DirectedGraph) -> np.ndarray:
    out_deg, _ = degrees(graph)
    # Descending degree, ascending id among ties.
    return np.lexsort((np.arange(graph.node_count), -out_deg))


def _rescale_factor(raw: np.ndarray, target: float) -> float:
    """Solve mean(min(k * raw, 1)) == target for k (piecewise linear in k)."""
    m = raw.size
    desc = np.sort(raw)[::-1]
    if desc[0] <= 0.0:
        raise GenerationError(
            "target_mean_p is unreachable: every raw edge probability is 0"
        )
    tails = np.concatenate([np.cumsum(desc[::-1])[::-1], [0.0]])
    budget = m * target
    for clamped in range(m):
        rest = tails[clamped]
        if rest <= 0.0:
            break
        k = (budget - clamped) / rest
        upper_ok = clamped == 0 or k * desc[clamped - 1] >= 1.0
        lower_ok = k * desc[clamped] <= 1.0
        if upper_ok and lower_ok:
            if clamped > MAX_CLAMPED_FRACTION * m:
                break
            return float(k)
    raise GenerationError(
        f"target_mean_p={target} is unreachable without clamping more than "
        f"{int(MAX_CLAMPED_FRACTION * 100)}% of edges; use a smaller target"
    )


def _seed_words(seed: SeedWords) -> List[int]:
    return [int(seed)] if isinstance(seed, int) else [int(w) for w in seed]


def _validate_generation(spec: GenerationSpec) -> None:
    if spec.mode not in GENERATION_MODES:
        raise GenerationError(f"unknown generation mode: {spec.mode}")
    if spec.dim < 1:
        raise GenerationError(f"dim must be >= 1, got {spec.dim}")
    if spec.target_mean_p is not None and not 0.0 < spec.target_mean_p <= 1.0:
        raise GenerationError("target_mean_p must be in (0, 1]")
    if spec.mode == "stratified" and spec.group_count < 1:
        raise GenerationError("group_count must be >= 1")
    if not 0.0 <= spec.cross_type_removal <= 1.0:
        raise GenerationError("cross_type_removal must be in [0, 1]")
    if not 0.0 < spec.type_one_fraction < 1.0:
        raise GenerationError("type_one_fraction must be in (0, 1)")


def type_one_mask(graph: DirectedGraph, fraction: float) -> np.ndarray:
    """Top `fraction` of nodes by out-degree (at least one node)."""
    order = _nodes_by_out_degree(graph)
    count = max(1, int(round(fraction * graph.node_count)))
    mask = np.zeros(graph.node_count, dtype=bool)
    mask[order[:count]] = True
    return mask


def _sample_factors(
    graph: DirectedGraph,
    spec: GenerationSpec,
    rng: np.random.Generator,
    type_one: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    n, d = graph.node_count, spec.dim
    if spec.mode == "uniform":
        theta = rng.uniform(0.0, 0.1, size=(n, d))
        beta = rng.uniform(0.0, 0.1, size=(n, d))
        return _normalize_rows(theta), _normalize_rows(beta)

    if spec.mode == "stratified":
        g = spec.group_count
        low = np.empty(n)
        groups = np.array_split(_nodes_by_out_degree(graph), g)
        # Group 0 holds the highest hard degrees and draws from the lowest range.
        for k, members in enumerate(groups):
            low[members] = k / g
        low = low[:, None]
        theta = low + rng.uniform(0.0, 1.0 / g, size=(n, d))
        beta = low + rng.uniform(0.0, 1.0 / g, size=(n, d))
        # One norm per family keeps the group ranges apart.
        return _normalize_family(theta), _normalize_family(beta)

    # two-type: raw ranges scaled by 1/sqrt(d) so an all-high vector has norm ~1.
    if type_one is None:
        type_one = type_one_mask(graph, spec.type_one_fraction)
    mask = type_one[:, None]
    scale = 1.0 / np.sqrt(d)
    theta = np.where(
        mask, rng.uniform(0.0, 0.1, size=(n, d)), rng.uniform(0.9, 1.0, size=(n, d))
    )
    beta = np.where(
        mask, rng.uniform(0.0, 0.1, size=(n, d)), rng.uniform(0.9, 1.0, size=(n, d))
    )
    return theta * scale, beta * scale


def generate_ground_truth(
    graph: DirectedGraph,
    spec: GenerationSpec,
    type_one: Optional[np.ndarray] = None,
) -> GroundTruthModel:
    _validate_generation(spec)
    rng = np.random.default_rng(_seed_words(spec.rng_seed))
    theta, beta = _sample_factors(graph, spec, rng, type_one)

    if spec.target_mean_p is not None:
        if graph.edge_count == 0:
            logger.warning("target_mean_p ignored: graph has no edges")
        else:
            k = _rescale_factor(edge_dot(graph, theta, beta), spec.target_mean_p)
            s = np.sqrt(k)
            theta = theta * s
            beta = beta * s

    model = GroundTruthModel.from_factors(graph, theta, beta)
    logger.info(
        "generated %s ground truth: dim=%d, mean p*=%.6f",
        spec.mode,
        spec.dim,
        float(model.p_star.mean()) if graph.edge_count else 0.0,
    )
    return model


def build_ground_truth(
    graph: DirectedGraph, spec: GenerationSpec
) -> Tuple[DirectedGraph, GroundTruthModel]:
    """Generate a ground truth, pruning cross-type edges first in two-type mode."""
    _validate_generation(spec)
    if spec.mode != "two-type":
        return graph, generate_ground_truth(graph, spec)
    # Types are fixed on the unpruned graph.
    mask = type_one_mask(graph, spec.type_one_fraction)
    if spec.cross_type_removal > 0.0:
        rng = np.random.default_rng(_seed_words(spec.rng_seed) + [1])
        cross = np.flatnonzero(mask[graph.sources] != mask[graph.targets])
        count = int(round(spec.cross_type_removal * cross.size))
        if count:
            drop = rng.choice(cross, size=count, replace=False)
            graph = without_edges(graph, drop)
            logger.info("removed %d of %d cross-type edges", count, cross.size)
    return graph, generate_ground_truth(graph, spec, mask)


def apply_perturbation(
    p: float, spec: PerturbationSpec, rng: np.random.Generator
) -> float:
    eta = 0.0
    if spec.noise_halfwidth > 0:
        eta = rng.uniform(-spec.noise_halfwidth, spec.noise_halfwidth)
    return float(min(max(spec.scale * p + eta, 0.0), 1.0))


def perturb_probabilities(
    p_star: np.ndarray, spec: PerturbationSpec, rng: np.random.Generator
) -> np.ndarray:
    """Per-round effective probabilities clamp(c * p + eta, 0, 1)."""
    effective = spec.scale * np.asarray(p_star, dtype=np.float64)
    if spec.noise_halfwidth > 0:
        a = spec.noise_halfwidth
        if spec.global_noise:
            effective = effective + rng.uniform(-a, a)
        else:
            effective = effective + rng.uniform(-a, a, size=effective.shape)
    return np.clip(effective, 0.0, 1.0)


def _check_seeds(graph: DirectedGraph, seeds: Iterable[int]) -> Tuple[int, ...]:
    ordered: List[int] = []
    seen = set()
    for s in seeds:
        s = int(s)
        if s < 0 or s >= graph.node_count:
            raise ValueError(f"seed id {s} out of range [0, {graph.node_count})")
        if s not in seen:
            seen.add(s)
            ordered.append(s)
    return tuple(ordered)


def simulate_cascade(
    graph: DirectedGraph,
    probabilities: np.ndarray,
    seeds: Iterable[int],
    rng: np.random.Generator,
) -> CascadeResult:
    """Breadth-first independent cascade with edge-level feedback."""
    seed_tuple = _check_seeds(graph, seeds)
    active = np.zeros(graph.node_count, dtype=bool)
    active[list(seed_tuple)] = True
    activated: List[int] = list(seed_tuple)
    observed: List[np.ndarray] = []
    outcomes: List[np.ndarray] = []

    wave = list(seed_tuple)
    while wave:
        next_wave: List[int] = []
        for u in wave:
            edges = graph.out_edges(u)
            if edges.size == 0:
                continue
            y = rng.random(edges.size) < probabilities[edges]
            observed.append(edges)
            outcomes.append(y.astype(np.int8))
            for v in graph.targets[edges[y]].tolist():
                if not active[v]:
                    active[v] = True
                    activated.append(v)
                    next_wave.append(v)
        wave = next_wave

    if observed:
        observed_edges = np.concatenate(observed)
        outcome_arr = np.concatenate(outcomes)
    else:
        observed_edges = np.zeros(0, dtype=np.int64)
        outcome_arr = np.zeros(0, dtype=np.int8)
    return CascadeResult(
        activated_nodes=tuple(activated),
        observed_edges=observed_edges,
        outcomes=outcome_arr,
        seeds=seed_tuple,
    )


def monte_carlo_spread(
    graph: DirectedGraph,
    probabilities: np.ndarray,
    seeds: Sequence[int],
    samples: int,
    rng: np.random.Generator,
) -> float:
    total = 0
    for _ in range(samples):
        total += simulate_cascade(graph, probabilities, seeds, rng).reward
    return total / samples if samples else 0.0


def _reachable(graph: DirectedGraph, live: np.ndarray, seeds: Sequence[int]) -> int:
    seen = set(seeds)
    queue = deque(seeds)
    while queue:
        u = queue.popleft()
        for e in graph.out_edges(u).tolist():
            if live[e]:
                v = int(graph.targets[e])
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
    return len(seen)


def _check_enumeration_cap(graph: DirectedGraph, cap: int) -> None:
    if graph.edge_count > cap:
        raise ValueError(
            f"exact enumeration needs |E| <= {cap}, got {graph.edge_count}; "
            "use monte_carlo_spread instead"
        )


def exact_expected_spread(
    graph: DirectedGraph,
    probabilities: np.ndarray,
    seeds: Iterable[int],
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> float:
    """Exact f_P(S) by enumerating live-edge realizations."""
    _check_enumeration_cap(graph, cap)
    seed_tuple = _check_seeds(graph, seeds)
    if not seed_tuple:
        return 0.0
    p = np.asarray(probabilities, dtype=np.float64)

    # Only uncertain edges whose giving node can be reached matter.
    possible = p > 0.0
    reach_nodes = np.zeros(graph.node_count, dtype=bool)
    reach_nodes[list(seed_tuple)] = True
    queue = deque(seed_tuple)
    while queue:
        u = queue.popleft()
        for e in graph.out_edges(u).tolist():
            v = int(graph.targets[e])
            if possible[e] and not reach_nodes[v]:
                reach_nodes[v] = True
                queue.append(v)
    uncertain = np.flatnonzero(possible & (p < 1.0) & reach_nodes[graph.sources])

    base = p >= 1.0
    total = 0.0
    for bits in itertools.product((False, True), repeat=int(uncertain.size)):
        live = base.copy()
        weight = 1.0
        for e, on in zip(uncertain.tolist(), bits):
            live[e] = on
            weight *= p[e] if on else 1.0 - p[e]
        if weight == 0.0:
            continue
        total += weight * _reachable(graph, live, seed_tuple)
    return total


def live_edge_reachability(
    graph: DirectedGraph,
    probabilities: np.ndarray,
    cap: int = DEFAULT_ENUMERATION_CAP,
    chunk: int = WORLD_CHUNK,
) -> Tuple[np.ndarray, Iterator[Tuple[np.ndarray, np.ndarray]]]:
    """Stream every live-edge world as (weights[W], reach[W, a]) chunks.

    Only the endpoints of edges with p > 0 are tracked; they are returned as
    `nodes`, and reach[w, i] is a uint64 bitset over `nodes` of what nodes[i]
    reaches in world w, itself included. Any other node reaches only itself.
    Memory is bounded by the chunk size, not by the number of worlds.
    """
    _check_enumeration_cap(graph, cap)
    p = np.asarray(probabilities, dtype=np.float64)
    possible = np.flatnonzero(p > 0.0)
    nodes = np.unique(np.concatenate([graph.sources[possible], graph.targets[possible]]))
    if nodes.size > MAX_TRACKED_NODES:
        raise ValueError(
            f"exact enumeration tracks at most {MAX_TRACKED_NODES} nodes, got {nodes.size}"
        )
    src = np.searchsorted(nodes, graph.sources[possible])
    dst = np.searchsorted(nodes, graph.targets[possible])
    uncertain = np.flatnonzero(p[possible] < 1.0)
    return nodes, _world_chunks(src, dst, uncertain, p[possible][uncertain], nodes.size, chunk)


def _world_chunks(
    src: np.ndarray,
    dst: np.ndarray,
    uncertain: np.ndarray,
    pu: np.ndarray,
    tracked: int,
    chunk: int,
) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    worlds = 1 << int(uncertain.size)
    shifts = np.arange(uncertain.size, dtype=np.int64)
    self_bits = np.left_shift(np.uint64(1), np.arange(tracked, dtype=np.uint64))
    zero = np.uint64(0)
    for start in range(0, worlds, chunk):
        ids = np.arange(start, min(start + chunk, worlds), dtype=np.int64)
        bits = ((ids[:, None] >> shifts[None, :]) & 1).astype(bool)
        weights = np.prod(np.where(bits, pu, 1.0 - pu), axis=1)
        live = np.ones((ids.size, src.size), dtype=bool)
        live[:, uncertain] = bits

        reach = np.tile(self_bits, (ids.size, 1))
        # Relax every edge until no bitset grows; at most one pass per tracked node.
        for _ in range(tracked):
            before = reach.copy()
            for e in range(src.size):
                reach[:, src[e]] |= np.where(live[:, e], reach[:, dst[e]], zero)
            if np.array_equal(reach, before):
                break
        yield weights, reach


def _as_list(arr: np.ndarray) -> List[Any]:
    return arr.tolist()


def save_ground_truth(model: GroundTruthModel, graph: DirectedGraph, path: Path) -> None:
    """Rows are keyed by the original node ids so a re-read edge list lines up."""
    payload = {
        "dim": model.dim,
        "node_ids": list(graph.original_ids),
        "theta_star": _as_list(model.theta_star),
        "beta_star": _as_list(model.beta_star),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_ground_truth(path: Path, graph: DirectedGraph) -> GroundTruthModel:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise GenerationError(f"Failed to read ground truth: {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise GenerationError(f"Failed to parse ground truth JSON: {path}: {exc}") from exc
    missing = {"dim", "theta_star", "beta_star"} - set(data)
    if missing:
        raise GenerationError(f"ground truth missing keys: {sorted(missing)}")
    dim = int(data["dim"])
    theta = np.asarray(data["theta_star"], dtype=np.float64).reshape(-1, dim)
    beta = np.asarray(data["beta_star"], dtype=np.float64).reshape(-1, dim)
    node_ids = data.get("node_ids")
    if node_ids is not None:
        row_of = {int(raw): i for i, raw in enumerate(node_ids)}
        missing_ids = [raw for raw in graph.original_ids if raw not in row_of]
        if missing_ids:
            raise GenerationError(
                f"ground truth has no factors for node ids {missing_ids[:5]}"
            )
        rows = [row_of[raw] for raw in graph.original_ids]
        theta, beta = theta[rows], beta[rows]
    return GroundTruthModel.from_factors(graph, theta, beta)


class Environment:
    """The world a policy interacts with: graph, secret truth and perturbations."""

    def __init__(
        self,
        graph: DirectedGraph,
        model: GroundTruthModel,
        perturbation: Optional[PerturbationSpec] = None,
    ) -> None:
        self.graph = graph
        self.model = model
        self.perturbation = perturbation or PerturbationSpec()

    def round_probabilities(self, rng: np.random.Generator) -> np.ndarray:
        spec = self.perturbation
        if spec.noise_halfwidth == 0 and spec.scale == 1.0:
            return np.asarray(self.model.p_star)
        return perturb_probabilities(self.model.p_star, spec, rng)

    def run_cascade(self, seeds: Sequence[int], rng: np.random.Generator) -> CascadeResult:
        probabilities = self.round_probabilities(rng)
        return simulate_cascade(self.graph, probabilities, seeds, rng)
