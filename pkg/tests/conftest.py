"""Shared fixtures and factories for the test suite.

Everything here is deterministic: fixed seeds, fixed graph shapes. The tiny
graph is session-scoped because generation is the slowest shared step.
"""

import numpy as np
import pytest

from prefetchsim.config import RunConfig
from prefetchsim.controller import RuntimeMetrics
from prefetchsim.graph import generate_graph


@pytest.fixture(scope="session")
def tiny_graph():
    """300 nodes, avg degree ~6: enough structure to partition 4 ways."""
    return generate_graph(300, 6.0, 2.0, seed=7)


@pytest.fixture(scope="session")
def medium_graph():
    """2k nodes for pipeline tests that need nontrivial remote traffic."""
    return generate_graph(2000, 8.0, 2.0, seed=13)


def make_cfg(**overrides) -> RunConfig:
    """Small, fast run: ~15 train nodes per trainer, 2 epochs, async."""
    base = dict(
        seed=11,
        num_nodes=300,
        avg_degree=6.0,
        skew=2.0,
        num_parts=4,
        partition_strategy="hash",
        train_fraction=0.5,
        batch_size=10,
        fanouts=[3, 3],
        epochs=2,
        buffer_pct=25.0,
        mode="async",
        controller="never",
    )
    base.update(overrides)
    return RunConfig.from_dict(base)


def make_metrics(**overrides) -> RuntimeMetrics:
    base = dict(
        pct_hits=50.0,
        comm_volume=100,
        nodes_replaced_pct=0.0,
        minibatch_index=10,
        minibatches_remaining=5,
        epochs_remaining=2,
        num_nodes=1000,
        num_edges=8000,
        partition_nodes=250,
        partition_edges=2000,
    )
    base.update(overrides)
    return RuntimeMetrics(**base)


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)
