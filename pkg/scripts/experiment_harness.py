#!/usr/bin/env python3
"""Multi-run experiment loop, per-round metrics and result persistence."""

from __future__ import annotations

import json
import logging
import math
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from bandit_policy import BanditPolicy, play_policy_round
from baseline_policies import CucbPolicy, EpsGreedyPolicy, ImLinUcbPolicy
from experiment_config import ExperimentConfig, GraphSource
from im_environment import (
    Environment,
    GenerationError,
    GenerationSpec,
    GroundTruthModel,
    build_ground_truth,
    load_ground_truth,
)
from im_graph import (
    DirectedGraph,
    load_edge_list_file,
    symmetrized,
    synthesize_gnm,
    synthesize_skewed,
)
from im_oracle import exact_is_tractable, make_oracle, optimal_spread, oracle_guarantee
from imfb_policy import ImfbPolicy
from jinja2 import Environment as JinjaEnvironment
from jinja2 import FileSystemLoader, StrictUndefined, select_autoescape

logger = logging.getLogger(__name__)

RUN_COLUMNS = [
    "round",
    "reward",
    "cum_reward",
    "est_error",
    "theta_err",
    "beta_err",
    "regret_proxy",
]
AGGREGATE_METRICS = RUN_COLUMNS[1:] + ["cum_regret_proxy"]
FLOAT_FORMAT = "%.10g"
TEMPLATE_DIR = Path(__file__).resolve().parents[1] / "templates" / "experiment"

# RNG stream tags under (master_seed, run).
STREAM_TRUTH = 0
STREAM_POLICY = 1
STREAM_CASCADE = 2
STREAM_SELECT = 3


class ExperimentError(RuntimeError):
    """A component failure annotated with the run and round it happened in."""

    def __init__(self, message: str, run: int, round_no: Optional[int] = None) -> None:
        where = f"run {run}" if round_no is None else f"run {run}, round {round_no}"
        super().__init__(f"{where}: {message}")
        self.detail = message
        self.run = run
        self.round = round_no

    def __reduce__(self) -> Tuple[Any, ...]:
        return type(self), (self.detail, self.run, self.round)


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    reward: int
    cumulative_reward: int
    est_error: Optional[float]
    theta_err: Optional[float]
    beta_err: Optional[float]
    regret_proxy: Optional[float]

    def as_row(self) -> Dict[str, Any]:
        return {
            "round": self.round,
            "reward": self.reward,
            "cum_reward": self.cumulative_reward,
            "est_error": self.est_error,
            "theta_err": self.theta_err,
            "beta_err": self.beta_err,
            "regret_proxy": self.regret_proxy,
        }


@dataclass(frozen=True)
class RunResult:
    run: int
    metrics: List[RoundMetrics]
    optimal_spread: Optional[float]
    node_count: int
    edge_count: int
    mean_p_star: float

    def frame(self) -> pd.DataFrame:
        df = pd.DataFrame([m.as_row() for m in self.metrics], columns=RUN_COLUMNS)
        types = {c: "float64" for c in RUN_COLUMNS[3:]}
        types.update({"round": "int64", "reward": "int64", "cum_reward": "int64"})
        return df.astype(types)


@dataclass(frozen=True)
class ExperimentResult:
    runs: List[RunResult]
    aggregate: pd.DataFrame
    output_dir: Optional[Path]

    def final_cumulative_reward(self) -> Tuple[float, float]:
        finals = np.array([r.metrics[-1].cumulative_reward for r in self.runs], dtype=float)
        return float(finals.mean()), float(finals.std())


def regret_proxy(round_reward: float, optimal: float, alpha_gamma: float) -> float:
    """f_P*(S_opt) - reward / (alpha gamma) for one round."""
    return optimal - round_reward / alpha_gamma


def estimation_error(
    estimates: np.ndarray, p_star: np.ndarray, observed_edges: np.ndarray
) -> Optional[float]:
    edges = np.asarray(observed_edges, dtype=np.int64)
    if edges.size == 0:
        return None
    return float(np.mean(np.abs(estimates[edges] - p_star[edges])))


def factor_error(
    estimate: np.ndarray, truth: np.ndarray, nodes: np.ndarray
) -> Optional[float]:
    """Mean L2 distance between estimated and true factors over `nodes`."""
    nodes = np.unique(np.asarray(nodes, dtype=np.int64))
    if nodes.size == 0 or estimate.shape[1] != truth.shape[1]:
        return None
    return float(np.mean(np.linalg.norm(estimate[nodes] - truth[nodes], axis=1)))


def load_graph(source: GraphSource) -> DirectedGraph:
    if source.source == "file":
        if source.path is None:
            raise ValueError("graph.path is required for a file source")
        graph, report = load_edge_list_file(source.path, source.symmetrize)
        logger.info(
            "loaded %s: %d nodes, %d edges (%d self-loops dropped, %d duplicates)",
            source.path,
            graph.node_count,
            graph.edge_count,
            report.self_loops_dropped,
            report.duplicates_deduped,
        )
        return graph
    if source.synthetic_kind == "skewed":
        graph = synthesize_skewed(source.nodes, source.edges, source.skew, source.seed)
    else:
        graph = synthesize_gnm(source.nodes, source.edges, source.seed)
    return symmetrized(graph) if source.symmetrize else graph


def run_ground_truth(
    config: ExperimentConfig, graph: DirectedGraph, run: int
) -> Tuple[DirectedGraph, GroundTruthModel]:
    if config.truth_path is not None:
        return graph, load_ground_truth(config.truth_path, graph)
    seed = (
        config.generation_seed
        if config.generation_seed is not None
        else (config.master_seed, run, STREAM_TRUTH)
    )
    spec = GenerationSpec(
        mode=config.generation.mode,
        dim=config.generation.dim,
        target_mean_p=config.generation.target_mean_p,
        group_count=config.generation.group_count,
        rng_seed=seed,
        type_one_fraction=config.generation.type_one_fraction,
        cross_type_removal=config.generation.cross_type_removal,
    )
    return build_ground_truth(graph, spec)


def make_policy(
    config: ExperimentConfig, graph: DirectedGraph, truth: GroundTruthModel, run: int
) -> BanditPolicy:
    kind = config.policy_kind
    if kind == "imfb":
        return ImfbPolicy(graph, config.imfb, (config.master_seed, run, STREAM_POLICY))
    if kind == "cucb":
        return CucbPolicy(graph)
    if kind == "eps-greedy":
        return EpsGreedyPolicy(graph, config.epsilon)
    if kind == "imlinucb":
        return ImLinUcbPolicy(graph, truth, config.c_explore, config.lam)
    raise ValueError(f"unknown policy kind: {kind}")


def _stream(config: ExperimentConfig, run: int, tag: int, t: int) -> np.random.Generator:
    return np.random.default_rng([config.master_seed, run, tag, t])


def run_single(config: ExperimentConfig, graph: DirectedGraph, run: int) -> RunResult:
    try:
        graph, truth = run_ground_truth(config, graph, run)
        policy = make_policy(config, graph, truth, run)
        oracle = make_oracle(config.oracle)
        alpha, gamma = oracle_guarantee(config.oracle)
        optimal: Optional[float] = None
        if exact_is_tractable(graph, config.K, config.oracle):
            optimal = optimal_spread(graph, truth.p_star, config.K, config.oracle)
    except GenerationError:
        raise
    except (ValueError, RuntimeError) as exc:
        raise ExperimentError(str(exc), run) from exc

    environment = Environment(graph, truth, config.perturbation)
    metrics: List[RoundMetrics] = []
    cumulative = 0
    for t in range(1, config.T + 1):
        try:
            outcome = play_policy_round(
                policy,
                environment,
                oracle,
                config.K,
                _stream(config, run, STREAM_SELECT, t),
                _stream(config, run, STREAM_CASCADE, t),
            )
            observed = outcome.cascade.observed_edges
            est = estimation_error(policy.point_estimates(), truth.p_star, observed)
            theta_err = beta_err = None
            factors = policy.factor_estimates()
            if factors is not None:
                theta_err = factor_error(factors[0], truth.theta_star, graph.sources[observed])
                beta_err = factor_error(factors[1], truth.beta_star, graph.targets[observed])
        except (ValueError, RuntimeError) as exc:
            raise ExperimentError(str(exc), run, t) from exc

        reward = outcome.cascade.reward
        cumulative += reward
        metrics.append(
            RoundMetrics(
                round=t,
                reward=reward,
                cumulative_reward=cumulative,
                est_error=est,
                theta_err=theta_err,
                beta_err=beta_err,
                regret_proxy=(
                    None if optimal is None else regret_proxy(reward, optimal, alpha * gamma)
                ),
            )
        )

    logger.info("run %d finished: cumulative reward %d", run, cumulative)
    return RunResult(
        run=run,
        metrics=metrics,
        optimal_spread=optimal,
        node_count=graph.node_count,
        edge_count=graph.edge_count,
        mean_p_star=float(truth.p_star.mean()) if graph.edge_count else 0.0,
    )


def aggregate_runs(frames: Sequence[pd.DataFrame]) -> pd.DataFrame:
    """Per-round mean and population std across runs, one row per round."""
    stacked = []
    for df in frames:
        df = df.copy()
        df["cum_regret_proxy"] = df["regret_proxy"].cumsum(skipna=False)
        stacked.append(df)
    grouped = pd.concat(stacked, ignore_index=True).groupby("round", sort=True)[AGGREGATE_METRICS]
    mean = grouped.mean().add_suffix("_mean")
    std = grouped.std(ddof=0).add_suffix("_std")
    columns: List[str] = []
    for metric in AGGREGATE_METRICS:
        columns += [f"{metric}_mean", f"{metric}_std"]
    return pd.concat([mean, std], axis=1)[columns].reset_index()


def _setup_jinja_env(template_dir: Path) -> JinjaEnvironment:
    return JinjaEnvironment(
        loader=FileSystemLoader(str(template_dir)),
        autoescape=select_autoescape(["html", "xml"]),
        undefined=StrictUndefined,
        trim_blocks=True,
        lstrip_blocks=True,
    )


def _fmt(value: Optional[float], spec: str = ".4f") -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "n/a"
    return format(value, spec)


def render_summary(config: ExperimentConfig, result: ExperimentResult) -> str:
    final = result.aggregate.iloc[-1]
    mean, std = result.final_cumulative_reward()
    first = result.runs[0]
    context = {
        "policy": config.policy_kind,
        "oracle": config.oracle.kind,
        "K": config.K,
        "T": config.T,
        "run_count": len(result.runs),
        "nodes": first.node_count,
        "edges": first.edge_count,
        "cum_reward_mean": _fmt(mean, ".2f"),
        "cum_reward_std": _fmt(std, ".2f"),
        "est_error_mean": _fmt(float(final["est_error_mean"])),
        "cum_regret_mean": _fmt(float(final["cum_regret_proxy_mean"]), ".2f"),
        "runs": [
            {
                "index": r.run,
                "cum_reward": r.metrics[-1].cumulative_reward,
                "mean_p_star": _fmt(r.mean_p_star, ".6f"),
                "optimal": _fmt(r.optimal_spread),
            }
            for r in result.runs
        ],
    }
    return _setup_jinja_env(TEMPLATE_DIR).get_template("summary.md.j2").render(**context)


def _write_csv(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")


def write_outputs(config: ExperimentConfig, result: ExperimentResult, output_dir: Path) -> None:
    """Stage every file next to output_dir, then move them in; nothing is left on failure.

    Run files of an earlier experiment in the same directory are removed;
    other files there are left alone.
    """
    output_dir.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{output_dir.name}.", dir=output_dir.parent))
    try:
        for r in result.runs:
            _write_csv(r.frame(), staging / f"run_{r.run}.csv")
        _write_csv(result.aggregate, staging / "aggregate.csv")
        (staging / "config.json").write_text(
            json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        (staging / "summary.md").write_text(render_summary(config, result), encoding="utf-8")
        output_dir.mkdir(parents=True, exist_ok=True)
        fresh = {item.name for item in staging.iterdir()}
        for stale in output_dir.glob("run_*.csv"):
            if stale.name not in fresh:
                stale.unlink()
        for item in sorted(staging.iterdir()):
            item.replace(output_dir / item.name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)


def run_experiment(config: ExperimentConfig, write: bool = True) -> ExperimentResult:
    logger.info(
        "experiment: policy=%s K=%d T=%d runs=%d workers=%d",
        config.policy_kind,
        config.K,
        config.T,
        config.runs,
        config.workers,
    )
    graph = load_graph(config.graph)
    indices = list(range(config.runs))
    if config.workers > 1 and config.runs > 1:
        with ProcessPoolExecutor(max_workers=min(config.workers, config.runs)) as pool:
            runs = list(pool.map(run_single, [config] * len(indices), [graph] * len(indices), indices))
    else:
        runs = [run_single(config, graph, r) for r in indices]

    aggregate = aggregate_runs([r.frame() for r in runs])
    result = ExperimentResult(
        runs=runs,
        aggregate=aggregate,
        output_dir=config.output_dir if write else None,
    )
    if write:
        write_outputs(config, result, config.output_dir)
    return result
