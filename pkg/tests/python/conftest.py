"""Pytest configuration for Python tests.

Adds the scripts directory to sys.path so the lab modules (im_graph,
imfb_policy, ...) import the same way the CLI imports them, and provides
the small graph fixtures most tests share.
"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Tuple

import numpy as np
import pytest

_REPO_ROOT = Path(__file__).resolve().parents[2]
_SCRIPTS_DIR = str(_REPO_ROOT / "scripts")

if _SCRIPTS_DIR not in sys.path:
    sys.path.insert(0, _SCRIPTS_DIR)

from im_graph import DirectedGraph  # noqa: E402


def pytest_configure() -> None:
    """Add scripts directory to sys.path once for all tests."""
    if _SCRIPTS_DIR not in sys.path:
        sys.path.insert(0, _SCRIPTS_DIR)


@pytest.fixture
def path_graph() -> Tuple[DirectedGraph, np.ndarray]:
    """0 -> 1 -> 2 with p* = (1.0, 0.5)."""
    graph = DirectedGraph.from_edges(3, [(0, 1), (1, 2)])
    return graph, np.array([1.0, 0.5])
