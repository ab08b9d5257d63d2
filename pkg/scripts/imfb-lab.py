#!/usr/bin/env python3
"""
imfb-lab: online influence-maximization experiments from the command line.

Subcommands:
  run       execute an experiment config and write metrics to output_dir
  generate  build a graph + ground truth and report mean p* and soft degrees
  inspect   print graph statistics for an edge list
  validate  resolve a config against the defaults and report every violation

Exit codes: 0 success, 2 usage/config, 3 graph/generation, 4 runtime.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, Optional, Sequence

sys.path.insert(0, str(Path(__file__).resolve().parent))
from cli_utils import (  # noqa: E402
    EXIT_CONFIG,
    EXIT_GENERATION,
    EXIT_OK,
    EXIT_RUNTIME,
    configure_logging,
    eprint,
    eprint_errors,
)
from experiment_config import (  # noqa: E402
    ConfigError,
    load_config_file,
    load_experiment_config,
    resolve_config,
)
from experiment_harness import ExperimentError, run_experiment  # noqa: E402
from im_environment import (  # noqa: E402
    GENERATION_MODES,
    GenerationError,
    GenerationSpec,
    build_ground_truth,
    coefficient_of_variation,
    save_ground_truth,
    soft_degrees,
)
from im_graph import (  # noqa: E402
    DirectedGraph,
    GraphError,
    GraphFormatError,
    degree_summary,
    degrees,
    dump_edge_list,
    load_edge_list_file,
    quantile_summary,
    symmetrized,
    synthesize_gnm,
    synthesize_skewed,
)

GRAPH_FILE = "graph.txt"
TRUTH_FILE = "truth.json"


def _config_path(value: Optional[str]) -> Optional[Path]:
    return Path(value) if value else None


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = load_experiment_config(_config_path(args.config), args.overrides)
    except ConfigError as exc:
        eprint_errors("invalid configuration", exc.errors)
        return EXIT_CONFIG

    try:
        result = run_experiment(config)
    except (GraphFormatError, GraphError, GenerationError) as exc:
        eprint(f"Error: {exc}")
        return EXIT_GENERATION
    except (ExperimentError, OSError, RuntimeError, ValueError) as exc:
        eprint(f"Error: {exc}")
        return EXIT_RUNTIME

    mean, std = result.final_cumulative_reward()
    print(
        f"final mean cumulative reward: {mean:.2f} ± {std:.2f} "
        f"(policy={config.policy_kind}, runs={config.runs}, T={config.T}, "
        f"output={config.output_dir})"
    )
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        path = _config_path(args.config)
        raw = load_config_file(path) if path is not None else None
        resolved = resolve_config(raw, args.overrides)
    except ConfigError as exc:
        eprint_errors("invalid configuration", exc.errors)
        return EXIT_CONFIG
    print(json.dumps(resolved, indent=2, sort_keys=True))
    return EXIT_OK


def _graph_from_args(args: argparse.Namespace) -> DirectedGraph:
    if args.graph:
        graph, _ = load_edge_list_file(Path(args.graph))
    elif args.synthetic == "skewed":
        graph = synthesize_skewed(args.nodes, args.edges, args.skew, args.graph_seed)
    else:
        graph = synthesize_gnm(args.nodes, args.edges, args.graph_seed)
    return symmetrized(graph) if args.symmetrize else graph


def _quantile_line(label: str, quantiles: Dict[str, float]) -> str:
    parts = " ".join(f"{k}={v:.4g}" for k, v in quantiles.items())
    return f"{label}: {parts}"


def cmd_generate(args: argparse.Namespace) -> int:
    spec = GenerationSpec(
        mode=args.mode,
        dim=args.dim,
        target_mean_p=args.target_mean_p,
        group_count=args.group_count,
        rng_seed=args.seed,
        type_one_fraction=args.type_one_fraction,
        cross_type_removal=args.cross_type_removal,
    )
    try:
        graph, model = build_ground_truth(_graph_from_args(args), spec)
    except (GraphFormatError, GraphError, GenerationError) as exc:
        eprint(f"Error: {exc}")
        return EXIT_GENERATION

    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with (out_dir / GRAPH_FILE).open("w", encoding="utf-8") as fh:
            dump_edge_list(graph, fh)
        save_ground_truth(model, graph, out_dir / TRUTH_FILE)
    except OSError as exc:
        eprint(f"Error: failed to write outputs: {exc}")
        return EXIT_RUNTIME

    soft = soft_degrees(graph, model.p_star)
    hard = degrees(graph)[0].astype(float)
    mean_p = float(model.p_star.mean()) if graph.edge_count else 0.0
    print(f"nodes: {graph.node_count}  edges: {graph.edge_count}")
    print(f"mean p*: {mean_p:.6f}")
    print(f"hard-degree CV: {coefficient_of_variation(hard):.4f}")
    print(f"soft-degree CV: {coefficient_of_variation(soft):.4f}")
    print(_quantile_line("soft degree", quantile_summary(soft)))
    print(f"wrote {out_dir / GRAPH_FILE} and {out_dir / TRUTH_FILE}")
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    try:
        graph, report = load_edge_list_file(Path(args.path), args.symmetrize)
    except (GraphFormatError, GraphError) as exc:
        eprint(f"Error: {exc}")
        return EXIT_GENERATION

    summary = degree_summary(graph)
    summary["load"] = {
        "data_lines": report.data_lines,
        "self_loops_dropped": report.self_loops_dropped,
        "duplicates_deduped": report.duplicates_deduped,
    }
    if args.json:
        print(json.dumps(summary, indent=2))
        return EXIT_OK

    print(f"nodes: {summary['nodes']}  edges: {summary['edges']}")
    print(_quantile_line("out-degree", summary["out_degree"]))
    print(_quantile_line("in-degree", summary["in_degree"]))
    print(
        f"data lines: {report.data_lines}  self-loops dropped: {report.self_loops_dropped}"
        f"  duplicates deduped: {report.duplicates_deduped}"
    )
    return EXIT_OK


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-c", "--config", default=None, help="JSON config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a config value by dotted key (repeatable; JSON literal values)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imfb-lab",
        description="Online influence-maximization experiments (IMFB and baselines)",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="Run an experiment")
    _add_config_args(p_run)
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="Resolve and check a config without running it")
    _add_config_args(p_val)
    p_val.set_defaults(func=cmd_validate)

    p_gen = sub.add_parser("generate", help="Generate a graph and ground truth")
    source = p_gen.add_mutually_exclusive_group()
    source.add_argument("--graph", default=None, help="SNAP-style edge list to load")
    source.add_argument(
        "--synthetic", choices=["gnm", "skewed"], default="gnm", help="Synthetic graph kind"
    )
    p_gen.add_argument("--nodes", type=int, default=200)
    p_gen.add_argument("--edges", type=int, default=2000)
    p_gen.add_argument("--skew", type=float, default=1.0, help="Out-degree skew for 'skewed'")
    p_gen.add_argument("--graph-seed", type=int, default=0)
    p_gen.add_argument("--symmetrize", action="store_true")
    p_gen.add_argument("--mode", choices=list(GENERATION_MODES), default="uniform")
    p_gen.add_argument("--dim", type=int, default=20)
    p_gen.add_argument("--target-mean-p", type=float, default=None)
    p_gen.add_argument("--group-count", type=int, default=10)
    p_gen.add_argument("--seed", type=int, default=0, help="Ground-truth RNG seed")
    p_gen.add_argument("--type-one-fraction", type=float, default=0.1)
    p_gen.add_argument("--cross-type-removal", type=float, default=0.0)
    p_gen.add_argument("-o", "--out", required=True, help="Output directory")
    p_gen.set_defaults(func=cmd_generate)

    p_ins = sub.add_parser("inspect", help="Print graph statistics for an edge list")
    p_ins.add_argument("path", help="Edge list file")
    p_ins.add_argument("--symmetrize", action="store_true")
    p_ins.add_argument("--json", action="store_true", help="Emit JSON")
    p_ins.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    return int(args.func(args))


if __name__ == "__main__":
    raise SystemExit(main())
