#!/usr/bin/env python3
"""Experiment configuration: JSON files over a defaults table, dotted overrides.

Every key a config may carry is present in DEFAULTS; anything else is an
error. Validation collects all violations before reporting.
"""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from im_environment import (
    DEFAULT_ENUMERATION_CAP,
    MAX_ENUMERATION_CAP,
    GENERATION_MODES,
    GenerationSpec,
    PerturbationSpec,
)
from im_oracle import DEFAULT_GAMMA, DEFAULT_SUBSET_CAP, DEGREE_WEIGHTINGS, ORACLE_KINDS, OracleSpec
from imfb_policy import CB_VARIANTS, UPDATE_MODES, ImfbHyperparams

OUTPUT_DIR_ENV = "IMFB_LAB_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "results"

GRAPH_SOURCES = ("file", "synthetic")
SYNTHETIC_KINDS = ("gnm", "skewed")
POLICY_KINDS = ("imfb", "cucb", "eps-greedy", "imlinucb")

DEFAULTS: Dict[str, Any] = {
    "graph": {
        "source": "synthetic",
        "path": None,
        "symmetrize": False,
        "synthetic": {
            "kind": "gnm",
            "nodes": 200,
            "edges": 2000,
            "skew": 1.0,
            "seed": 0,
        },
    },
    "generation": {
        "mode": "uniform",
        "dim": 20,
        "target_mean_p": None,
        "group_count": 10,
        "rng_seed": None,
        "type_one_fraction": 0.1,
        "cross_type_removal": 0.0,
        "truth_path": None,
    },
    "perturbation": {
        "noise_halfwidth": 0.0,
        "scale": 1.0,
        "global_noise": False,
    },
    "policy": {
        "kind": "imfb",
        "imfb": {
            "dim": 20,
            "lambda1": 1.0,
            "lambda2": 1.0,
            "q": 0.9,
            "delta": 0.1,
            "update_mode": "incremental",
            "cb_variant": "cross",
            "exploration_scale": 1.0,
        },
        "cucb": {},
        "eps_greedy": {"epsilon": 0.1},
        "imlinucb": {"c_explore": 1.0, "lam": 1.0},
    },
    "oracle": {
        "kind": "degree-discount",
        "alpha": 1.0,
        "gamma": DEFAULT_GAMMA,
        "degree_weighting": "out-degree",
        "enumeration_cap": DEFAULT_ENUMERATION_CAP,
        "subset_cap": DEFAULT_SUBSET_CAP,
    },
    "K": 10,
    "T": 200,
    "runs": 5,
    "master_seed": 0,
    "workers": 1,
    "output_dir": None,
}


class ConfigError(ValueError):
    """Carries every `key.path: message` violation found."""

    def __init__(self, errors: Sequence[str]) -> None:
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class GraphSource:
    source: str
    path: Optional[Path]
    symmetrize: bool
    synthetic_kind: str
    nodes: int
    edges: int
    skew: float
    seed: int


@dataclass(frozen=True)
class ExperimentConfig:
    graph: GraphSource
    generation: GenerationSpec
    generation_seed: Optional[int]
    truth_path: Optional[Path]
    perturbation: PerturbationSpec
    policy_kind: str
    imfb: ImfbHyperparams
    epsilon: float
    c_explore: float
    lam: float
    oracle: OracleSpec
    K: int
    T: int
    runs: int
    master_seed: int
    workers: int
    output_dir: Path
    resolved: Mapping[str, Any]

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(dict(self.resolved))


def default_config(env: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    env = os.environ if env is None else env
    cfg = copy.deepcopy(DEFAULTS)
    cfg["output_dir"] = env.get(OUTPUT_DIR_ENV) or DEFAULT_OUTPUT_DIR
    return cfg


def load_config_file(path: Path) -> Dict[str, Any]:
    if not path.is_file():
        raise ConfigError([f"config file not found: {path}"])
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError([f"failed to read config: {path}: {exc}"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"invalid JSON in {path}: {exc}"]) from exc
    if not isinstance(data, dict):
        raise ConfigError([f"config root must be an object: {path}"])
    return data


def _merge(base: Dict[str, Any], overlay: Mapping[str, Any], prefix: str, errors: List[str]) -> None:
    for key, value in overlay.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            errors.append(f"{dotted}: unknown config key")
            continue
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                errors.append(f"{dotted}: must be an object")
                continue
            _merge(base[key], value, f"{dotted}.", errors)
        else:
            base[key] = value


def parse_override(text: str) -> Tuple[str, Any]:
    """`dotted.key=value`; the value is a JSON literal or else a plain string."""
    key, sep, raw = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError([f"override must look like key=value: {text!r}"])
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_override(cfg: Dict[str, Any], key: str, value: Any, errors: List[str]) -> None:
    node = cfg
    parts = key.split(".")
    for depth, part in enumerate(parts):
        if not isinstance(node, dict) or part not in node:
            errors.append(f"{key}: unknown config key")
            return
        if depth == len(parts) - 1:
            if isinstance(node[part], dict) and not isinstance(value, dict):
                errors.append(f"{key}: must be an object")
                return
            if isinstance(node[part], dict):
                _merge(node[part], value, f"{key}.", errors)
            else:
                node[part] = value
            return
        node = node[part]


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return (
        isinstance(value, (int, float))
        and not isinstance(value, bool)
        and math.isfinite(float(value))
    )


class _Checker:
    def __init__(self, cfg: Mapping[str, Any]) -> None:
        self.cfg = cfg
        self.errors: List[str] = []

    def get(self, key: str) -> Any:
        node: Any = self.cfg
        for part in key.split("."):
            node = node[part]
        return node

    def integer(
        self,
        key: str,
        minimum: int,
        nullable: bool = False,
        maximum: Optional[int] = None,
    ) -> None:
        value = self.get(key)
        if value is None and nullable:
            return
        if not _is_int(value):
            self.errors.append(f"{key}: must be an integer")
        elif value < minimum:
            self.errors.append(f"{key}: must be >= {minimum}")
        elif maximum is not None and value > maximum:
            self.errors.append(f"{key}: must be <= {maximum}")

    def number(
        self,
        key: str,
        low: Optional[float] = None,
        high: Optional[float] = None,
        open_low: bool = False,
        open_high: bool = False,
        nullable: bool = False,
    ) -> None:
        value = self.get(key)
        if value is None and nullable:
            return
        if not _is_number(value):
            self.errors.append(f"{key}: must be a number")
            return
        too_low = low is not None and (value <= low if open_low else value < low)
        too_high = high is not None and (value >= high if open_high else value > high)
        if too_low or too_high:
            lo = "(" if open_low else "["
            hi = ")" if open_high else "]"
            lo_v = "-inf" if low is None else f"{low:g}"
            hi_v = "inf" if high is None else f"{high:g}"
            self.errors.append(f"{key} must be in {lo}{lo_v}, {hi_v}{hi}, got {value}")

    def choice(self, key: str, allowed: Sequence[str]) -> None:
        value = self.get(key)
        if value not in allowed:
            self.errors.append(f"{key}: must be one of {list(allowed)}, got {value!r}")

    def boolean(self, key: str) -> None:
        if not isinstance(self.get(key), bool):
            self.errors.append(f"{key}: must be true or false")

    def path(self, key: str, nullable: bool = True) -> None:
        value = self.get(key)
        if value is None and nullable:
            return
        if not isinstance(value, str) or not value:
            self.errors.append(f"{key}: must be a non-empty path string")


def validate_config(cfg: Mapping[str, Any]) -> List[str]:
    c = _Checker(cfg)
    c.choice("graph.source", GRAPH_SOURCES)
    c.path("graph.path")
    c.boolean("graph.symmetrize")
    if cfg["graph"]["source"] == "file" and not cfg["graph"]["path"]:
        c.errors.append("graph.path: required when graph.source is 'file'")
    c.choice("graph.synthetic.kind", SYNTHETIC_KINDS)
    c.integer("graph.synthetic.nodes", 1)
    c.integer("graph.synthetic.edges", 0)
    c.number("graph.synthetic.skew", low=0.0)
    c.integer("graph.synthetic.seed", 0)

    c.choice("generation.mode", GENERATION_MODES)
    c.integer("generation.dim", 1)
    c.number("generation.target_mean_p", low=0.0, high=1.0, open_low=True, nullable=True)
    c.integer("generation.group_count", 1)
    c.integer("generation.rng_seed", 0, nullable=True)
    c.number("generation.type_one_fraction", low=0.0, high=1.0, open_low=True, open_high=True)
    c.number("generation.cross_type_removal", low=0.0, high=1.0)
    c.path("generation.truth_path")

    c.number("perturbation.noise_halfwidth", low=0.0)
    c.number("perturbation.scale", low=0.0)
    c.boolean("perturbation.global_noise")

    c.choice("policy.kind", POLICY_KINDS)
    c.integer("policy.imfb.dim", 1)
    c.number("policy.imfb.lambda1", low=0.0, open_low=True)
    c.number("policy.imfb.lambda2", low=0.0, open_low=True)
    c.number("policy.imfb.q", low=0.0, high=1.0, open_low=True, open_high=True)
    c.number("policy.imfb.delta", low=0.0, high=1.0, open_low=True, open_high=True)
    c.choice("policy.imfb.update_mode", UPDATE_MODES)
    c.choice("policy.imfb.cb_variant", CB_VARIANTS)
    c.number("policy.imfb.exploration_scale", low=0.0)
    c.number("policy.eps_greedy.epsilon", low=0.0, high=1.0)
    c.number("policy.imlinucb.c_explore", low=0.0)
    c.number("policy.imlinucb.lam", low=0.0, open_low=True)

    c.choice("oracle.kind", ORACLE_KINDS)
    c.number("oracle.alpha", low=0.0, high=1.0, open_low=True)
    c.number("oracle.gamma", low=0.0, high=1.0, open_low=True)
    c.choice("oracle.degree_weighting", DEGREE_WEIGHTINGS)
    c.integer("oracle.enumeration_cap", 0, maximum=MAX_ENUMERATION_CAP)
    c.integer("oracle.subset_cap", 1)

    c.integer("K", 0)
    c.integer("T", 1)
    c.integer("runs", 1)
    c.integer("master_seed", 0)
    c.integer("workers", 1)
    c.path("output_dir", nullable=False)
    return c.errors


def resolve_config(
    raw: Optional[Mapping[str, Any]] = None,
    overrides: Sequence[str] = (),
    env: Optional[Mapping[str, str]] = None,
) -> Dict[str, Any]:
    """Defaults <- file <- overrides, validated. Raises ConfigError with every violation."""
    cfg = default_config(env)
    errors: List[str] = []
    if raw:
        _merge(cfg, raw, "", errors)
    for text in overrides:
        key, value = parse_override(text)
        apply_override(cfg, key, value, errors)
    if errors:
        raise ConfigError(errors)
    errors = validate_config(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def _optional_path(value: Optional[str]) -> Optional[Path]:
    return Path(value) if value else None


def build_config(cfg: Mapping[str, Any]) -> ExperimentConfig:
    g = cfg["graph"]
    syn = g["synthetic"]
    gen = cfg["generation"]
    pert = cfg["perturbation"]
    pol = cfg["policy"]
    orc = cfg["oracle"]
    return ExperimentConfig(
        graph=GraphSource(
            source=g["source"],
            path=_optional_path(g["path"]),
            symmetrize=bool(g["symmetrize"]),
            synthetic_kind=syn["kind"],
            nodes=int(syn["nodes"]),
            edges=int(syn["edges"]),
            skew=float(syn["skew"]),
            seed=int(syn["seed"]),
        ),
        generation=GenerationSpec(
            mode=gen["mode"],
            dim=int(gen["dim"]),
            target_mean_p=None if gen["target_mean_p"] is None else float(gen["target_mean_p"]),
            group_count=int(gen["group_count"]),
            rng_seed=0 if gen["rng_seed"] is None else int(gen["rng_seed"]),
            type_one_fraction=float(gen["type_one_fraction"]),
            cross_type_removal=float(gen["cross_type_removal"]),
        ),
        generation_seed=gen["rng_seed"],
        truth_path=_optional_path(gen["truth_path"]),
        perturbation=PerturbationSpec(
            noise_halfwidth=float(pert["noise_halfwidth"]),
            scale=float(pert["scale"]),
            global_noise=bool(pert["global_noise"]),
        ),
        policy_kind=pol["kind"],
        imfb=ImfbHyperparams(
            dim=int(pol["imfb"]["dim"]),
            lambda1=float(pol["imfb"]["lambda1"]),
            lambda2=float(pol["imfb"]["lambda2"]),
            q=float(pol["imfb"]["q"]),
            delta=float(pol["imfb"]["delta"]),
            update_mode=pol["imfb"]["update_mode"],
            cb_variant=pol["imfb"]["cb_variant"],
            exploration_scale=float(pol["imfb"]["exploration_scale"]),
        ),
        epsilon=float(pol["eps_greedy"]["epsilon"]),
        c_explore=float(pol["imlinucb"]["c_explore"]),
        lam=float(pol["imlinucb"]["lam"]),
        oracle=OracleSpec(
            kind=orc["kind"],
            alpha=float(orc["alpha"]),
            gamma=float(orc["gamma"]),
            degree_weighting=orc["degree_weighting"],
            enumeration_cap=int(orc["enumeration_cap"]),
            subset_cap=int(orc["subset_cap"]),
        ),
        K=int(cfg["K"]),
        T=int(cfg["T"]),
        runs=int(cfg["runs"]),
        master_seed=int(cfg["master_seed"]),
        workers=int(cfg["workers"]),
        output_dir=Path(cfg["output_dir"]),
        resolved=copy.deepcopy(dict(cfg)),
    )


def load_experiment_config(
    path: Optional[Path],
    overrides: Sequence[str] = (),
    env: Optional[Mapping[str, str]] = None,
) -> ExperimentConfig:
    raw = load_config_file(path) if path is not None else None
    return build_config(resolve_config(raw, overrides, env))
