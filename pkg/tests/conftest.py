"""Shared generators for the test suite."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from netcem import SpatialNetwork, partition_grow

settings.register_profile(
    "suite",
    max_examples=25,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


def random_network(
    rng: np.random.Generator,
    size: int | None = None,
    mass_free: bool = False,
    constrained: bool = False,
) -> SpatialNetwork:
    """Connected network with log-uniform weights and mixed masses.

    Built as a random spanning tree plus extra edges so connectivity is
    guaranteed by construction.
    """
    n = int(size) if size is not None else int(rng.integers(8, 41))
    order = rng.permutation(n)
    edges = set()
    for k in range(1, n):
        parent = order[rng.integers(0, k)]
        x, y = int(order[k]), int(parent)
        edges.add((min(x, y), max(x, y)))
    extra = int(rng.integers(0, n))
    for _ in range(extra):
        x, y = rng.integers(0, n, size=2)
        if x != y:
            edges.add((min(int(x), int(y)), max(int(x), int(y))))
    edge_arr = np.array(sorted(edges), dtype=np.int64)
    weights = 10.0 ** rng.uniform(-2.0, 2.0, size=edge_arr.shape[0])
    if mass_free:
        masses = np.zeros(n)
    else:
        masses = np.where(rng.random(n) < 0.7, rng.uniform(0.1, 3.0, size=n), 0.0)
        if masses.sum() == 0.0:
            masses[0] = 1.0
    fixed = None
    if constrained:
        count = int(rng.integers(1, max(2, n // 5)))
        fixed = rng.choice(n, size=count, replace=False)
    coords = rng.uniform(0.0, 1.0, size=(n, 2))
    return SpatialNetwork(
        node_count=n,
        edges=edge_arr,
        weights=weights,
        masses=masses,
        constrained=fixed,
        coords=coords,
    )


def random_partition(net: SpatialNetwork, rng: np.random.Generator, count: int | None = None):
    if count is None:
        count = int(rng.integers(2, min(6, max(3, net.node_count // 4))))
    return partition_grow(net, count, seed=int(rng.integers(0, 2**31)))


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)


@pytest.fixture
def small_net(rng):
    return random_network(rng, size=16)
