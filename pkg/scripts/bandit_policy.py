"""Shared policy interface for the online influence-maximization loop."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol, Tuple

import numpy as np
from im_environment import CascadeResult, Environment
from im_oracle import SeedOracle
from scipy.linalg import LinAlgError, cho_factor

CholeskyFactor = Tuple[np.ndarray, bool]


class InvariantError(RuntimeError):
    """A statistics matrix lost positive definiteness."""


def cholesky(matrix: np.ndarray, what: str) -> CholeskyFactor:
    try:
        return cho_factor(matrix, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise InvariantError(f"{what} is not symmetric positive definite") from exc


class BanditPolicy(Protocol):
    name: str

    def select_seeds(
        self, oracle: SeedOracle, k: int, rng: np.random.Generator
    ) -> Tuple[int, ...]: ...

    def observe(self, cascade: CascadeResult) -> None: ...

    def point_estimates(self) -> np.ndarray: ...

    def factor_estimates(self) -> Optional[Tuple[np.ndarray, np.ndarray]]: ...


@dataclass(frozen=True)
class RoundOutcome:
    seeds: Tuple[int, ...]
    cascade: CascadeResult


def play_policy_round(
    policy: BanditPolicy,
    environment: Environment,
    oracle: SeedOracle,
    k: int,
    select_rng: np.random.Generator,
    cascade_rng: np.random.Generator,
) -> RoundOutcome:
    """select -> cascade -> observe, the loop every policy shares."""
    seeds = policy.select_seeds(oracle, k, select_rng)
    cascade = environment.run_cascade(seeds, cascade_rng)
    policy.observe(cascade)
    return RoundOutcome(seeds=seeds, cascade=cascade)
