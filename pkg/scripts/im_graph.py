#!/usr/bin/env python3
"""Directed graph store, SNAP edge-list ingestion and degree statistics.

Node ids are dense integers in [0, node_count). The ids found in an input
file are kept in ``original_ids`` for reporting and serialization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, TextIO, Tuple

import networkx as nx
import numpy as np

logger = logging.getLogger(__name__)


class GraphError(ValueError):
    """Raised when edges violate a graph invariant."""


class GraphFormatError(ValueError):
    """Raised for malformed edge-list input."""

    def __init__(self, message: str, line_no: Optional[int] = None) -> None:
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


@dataclass(frozen=True)
class LoadReport:
    data_lines: int
    self_loops_dropped: int
    duplicates_deduped: int


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _csr(keys: np.ndarray, node_count: int) -> Tuple[np.ndarray, np.ndarray]:
    # Stable sort keeps edge-id order inside each node's bucket.
    order = np.argsort(keys, kind="stable").astype(np.int64)
    counts = np.bincount(keys, minlength=node_count)
    indptr = np.zeros(node_count + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, order


@dataclass(frozen=True, eq=False)
class DirectedGraph:
    node_count: int
    sources: np.ndarray
    targets: np.ndarray
    out_indptr: np.ndarray
    out_edge_ids: np.ndarray
    in_indptr: np.ndarray
    in_edge_ids: np.ndarray
    original_ids: Tuple[int, ...]

    @classmethod
    def from_edges(
        cls,
        node_count: int,
        edges: Sequence[Tuple[int, int]],
        original_ids: Optional[Sequence[int]] = None,
    ) -> "DirectedGraph":
        if node_count < 0:
            raise GraphError(f"node_count must be >= 0, got {node_count}")
        pairs = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        sources = np.ascontiguousarray(pairs[:, 0])
        targets = np.ascontiguousarray(pairs[:, 1])
        if pairs.size:
            if pairs.min() < 0 or pairs.max() >= node_count:
                raise GraphError(
                    f"edge endpoint out of range [0, {node_count})"
                )
            if np.any(sources == targets):
                raise GraphError("self-loops are not allowed")
            keys = sources * node_count + targets
            if np.unique(keys).size != keys.size:
                raise GraphError("duplicate (giving, receiving) pairs")

        if original_ids is None:
            ids: Tuple[int, ...] = tuple(range(node_count))
        else:
            ids = tuple(int(x) for x in original_ids)
            if len(ids) != node_count:
                raise GraphError(
                    f"original_ids has {len(ids)} entries, expected {node_count}"
                )

        out_indptr, out_edge_ids = _csr(sources, node_count)
        in_indptr, in_edge_ids = _csr(targets, node_count)
        return cls(
            node_count=node_count,
            sources=_readonly(sources),
            targets=_readonly(targets),
            out_indptr=_readonly(out_indptr),
            out_edge_ids=_readonly(out_edge_ids),
            in_indptr=_readonly(in_indptr),
            in_edge_ids=_readonly(in_edge_ids),
            original_ids=ids,
        )

    @property
    def edge_count(self) -> int:
        return int(self.sources.shape[0])

    def out_edges(self, node: int) -> np.ndarray:
        return self.out_edge_ids[self.out_indptr[node] : self.out_indptr[node + 1]]

    def in_edges(self, node: int) -> np.ndarray:
        return self.in_edge_ids[self.in_indptr[node] : self.in_indptr[node + 1]]

    def edge(self, edge_id: int) -> Tuple[int, int]:
        return int(self.sources[edge_id]), int(self.targets[edge_id])

    def edge_list(self) -> List[Tuple[int, int]]:
        return [(int(g), int(r)) for g, r in zip(self.sources, self.targets)]

    def original_edge_set(self) -> Set[Tuple[int, int]]:
        ids = self.original_ids
        return {(ids[g], ids[r]) for g, r in self.edge_list()}


def degrees(graph: DirectedGraph) -> Tuple[np.ndarray, np.ndarray]:
    """Return (out_degree, in_degree) arrays indexed by node id."""
    return np.diff(graph.out_indptr), np.diff(graph.in_indptr)


def load_edge_list(lines: Iterable[str]) -> Tuple[DirectedGraph, LoadReport]:
    dense: Dict[int, int] = {}
    seen: Set[Tuple[int, int]] = set()
    edges: List[Tuple[int, int]] = []
    data_lines = 0
    self_loops = 0
    duplicates = 0

    def node_id(raw: int) -> int:
        if raw not in dense:
            dense[raw] = len(dense)
        return dense[raw]

    for line_no, raw_line in enumerate(lines, start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        data_lines += 1
        tokens = line.split()
        if len(tokens) != 2:
            raise GraphFormatError(
                f"expected 2 fields 'src dst', got {len(tokens)}", line_no
            )
        try:
            src, dst = int(tokens[0]), int(tokens[1])
        except ValueError as exc:
            raise GraphFormatError(f"non-integer node id: {line!r}", line_no) from exc
        if src < 0 or dst < 0:
            raise GraphFormatError(f"negative node id: {line!r}", line_no)

        # Self-loops do not register their node.
        if src == dst:
            self_loops += 1
            continue
        pair = (node_id(src), node_id(dst))
        if pair in seen:
            duplicates += 1
            continue
        seen.add(pair)
        edges.append(pair)

    if data_lines == 0:
        raise GraphFormatError("empty edge list")

    original = [0] * len(dense)
    for raw, idx in dense.items():
        original[idx] = raw
    graph = DirectedGraph.from_edges(len(dense), edges, original)
    report = LoadReport(
        data_lines=data_lines,
        self_loops_dropped=self_loops,
        duplicates_deduped=duplicates,
    )
    logger.debug(
        "loaded edge list: %d nodes, %d edges, %d self-loops dropped, %d duplicates",
        graph.node_count,
        graph.edge_count,
        self_loops,
        duplicates,
    )
    return graph, report


def load_edge_list_file(
    path: Path, symmetrize: bool = False
) -> Tuple[DirectedGraph, LoadReport]:
    try:
        with path.open("r", encoding="utf-8") as fh:
            graph, report = load_edge_list(fh)
    except OSError as exc:
        raise GraphFormatError(f"failed to read edge list {path}: {exc}") from exc
    if symmetrize:
        graph = symmetrized(graph)
    return graph, report


def dump_edge_list(graph: DirectedGraph, out: TextIO) -> None:
    """Write original-id edges sorted by (giving, receiving)."""
    for g, r in sorted(graph.original_edge_set()):
        out.write(f"{g} {r}\n")


def symmetrized(graph: DirectedGraph) -> DirectedGraph:
    seen = set(graph.edge_list())
    edges = graph.edge_list()
    for g, r in graph.edge_list():
        if (r, g) not in seen:
            seen.add((r, g))
            edges.append((r, g))
    return DirectedGraph.from_edges(graph.node_count, edges, graph.original_ids)


def without_edges(graph: DirectedGraph, drop: np.ndarray) -> DirectedGraph:
    keep = np.ones(graph.edge_count, dtype=bool)
    keep[drop] = False
    pairs = np.stack([graph.sources[keep], graph.targets[keep]], axis=1)
    return DirectedGraph.from_edges(
        graph.node_count, [tuple(p) for p in pairs.tolist()], graph.original_ids
    )


def _check_capacity(node_count: int, edge_count: int) -> None:
    if edge_count > node_count * (node_count - 1):
        raise GraphError(
            f"cannot place {edge_count} distinct edges on {node_count} nodes"
        )


def synthesize_gnm(node_count: int, edge_count: int, seed: int) -> DirectedGraph:
    """Seeded directed G(n, m): m distinct non-loop pairs drawn uniformly."""
    _check_capacity(node_count, edge_count)
    g = nx.gnm_random_graph(node_count, edge_count, seed=seed, directed=True)
    return DirectedGraph.from_edges(node_count, sorted(g.edges()))


def _skewed_out_degrees(
    node_count: int, edge_count: int, weights: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    counts = np.zeros(node_count, dtype=np.int64)
    left = edge_count
    while left > 0:
        room = (node_count - 1) - counts
        p = np.where(room > 0, weights, 0.0)
        draw = np.bincount(rng.choice(node_count, size=left, p=p / p.sum()), minlength=node_count)
        add = np.minimum(draw, room)
        counts += add
        left -= int(add.sum())
    return counts


def synthesize_skewed(
    node_count: int, edge_count: int, skew: float, seed: int
) -> DirectedGraph:
    """Directed graph whose out-degree follows rank^-skew over a random node order.

    Each node's out-degree is drawn by weight (capped at n - 1) and its
    targets are a uniform sample of the other nodes.
    """
    _check_capacity(node_count, edge_count)
    rng = np.random.default_rng(seed)
    ranks = rng.permutation(node_count)
    weights = (ranks + 1.0) ** (-skew)
    out_deg = _skewed_out_degrees(node_count, edge_count, weights / weights.sum(), rng)
    g = nx.DiGraph()
    g.add_nodes_from(range(node_count))
    for u in np.flatnonzero(out_deg).tolist():
        others = rng.choice(node_count - 1, size=int(out_deg[u]), replace=False)
        g.add_edges_from((u, int(v) + (v >= u)) for v in others.tolist())
    return DirectedGraph.from_edges(node_count, sorted(g.edges()))


SUMMARY_QUANTILES = (0.0, 0.25, 0.5, 0.75, 0.9, 0.99, 1.0)


def quantile_summary(values: np.ndarray) -> Dict[str, float]:
    """q0..q100 of `values`; all zeros for an empty array."""
    values = np.asarray(values, dtype=np.float64)
    return {
        f"q{int(round(q * 100))}": float(np.quantile(values, q)) if values.size else 0.0
        for q in SUMMARY_QUANTILES
    }


def degree_summary(graph: DirectedGraph) -> Dict[str, Any]:
    out_deg, in_deg = degrees(graph)
    return {
        "nodes": graph.node_count,
        "edges": graph.edge_count,
        "out_degree": quantile_summary(out_deg),
        "in_degree": quantile_summary(in_deg),
    }
