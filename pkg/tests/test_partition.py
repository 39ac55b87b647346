"""Partition growth, patch geometry, regularity, persistence."""

import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from netcem import PartitionError, Partition, partition_grow, regularity
from netcem.partition import load_partition, save_partition

from .conftest import random_network
from . import oracles


def make_path(n=9):
    from netcem import SpatialNetwork

    edges = np.column_stack([np.arange(n - 1), np.arange(1, n)])
    return SpatialNetwork(n, edges, np.ones(n - 1), np.ones(n))


class TestPartitionContainer:
    def test_rejects_incomplete_assignment(self):
        net = make_path(6)
        with pytest.raises(PartitionError):
            Partition(net, np.array([0, 0, 2, 2, 2, 2]))  # id 1 unused

    def test_rejects_wrong_length(self):
        net = make_path(6)
        with pytest.raises(PartitionError):
            Partition(net, np.array([0, 0, 1, 1]))

    def test_quotient_neighbors_on_path(self):
        net = make_path(9)
        part = Partition(net, np.repeat([0, 1, 2], 3))
        assert list(part.quotient_neighbors[0]) == [1]
        assert sorted(part.quotient_neighbors[1]) == [0, 2]

    def test_patch_layers_on_path(self):
        net = make_path(9)
        part = Partition(net, np.repeat([0, 1, 2], 3))
        assert np.array_equal(part.patch_nodes(0, 0), np.arange(3))
        assert np.array_equal(part.patch_nodes(0, 1), np.arange(6))
        assert np.array_equal(part.patch_nodes(0, 2), np.arange(9))
        # Saturation: more layers than the quotient diameter changes nothing.
        assert np.array_equal(part.patch_nodes(0, 5), np.arange(9))

    def test_regularity_table_on_path(self):
        # Middle subgraph touches both others: one layer covers all
        # three subgraphs, so the layer-1 patch count is 3.
        net = make_path(9)
        part = Partition(net, np.repeat([0, 1, 2], 3))
        rep = regularity(net, part, max_layers=2)
        assert rep.count_at(1) == 3

    def test_patch_matches_oracle(self, rng):
        for k in range(5):
            g = np.random.default_rng(300 + k)
            net = random_network(g, size=30)
            part = partition_grow(net, 4, seed=k)
            for layers in (0, 1, 2):
                for i in range(part.count):
                    mine = part.patch_nodes(i, layers)
                    ref = oracles.oracle_patch(net, part.assignment, i, layers)
                    assert np.array_equal(np.sort(mine), ref)


class TestGrowth:
    @given(st.integers(0, 5_000))
    def test_grown_partition_is_valid(self, seed):
        g = np.random.default_rng(seed)
        net = random_network(g, size=int(g.integers(10, 36)))
        count = int(g.integers(2, 6))
        part = partition_grow(net, count, seed=seed)
        assert part.count == count
        # Every subgraph connected and nonempty.
        for i in range(count):
            nodes = part.nodes_of(i)
            assert nodes.size > 0
            assert net.connected_on(nodes)

    def test_deterministic_for_fixed_seed(self, rng):
        net = random_network(rng, size=40)
        a = partition_grow(net, 5, seed=11).assignment
        b = partition_grow(net, 5, seed=11).assignment
        assert np.array_equal(a, b)

    def test_count_validation(self, rng):
        net = random_network(rng, size=10)
        from netcem import InvalidParameterError

        with pytest.raises(InvalidParameterError):
            partition_grow(net, 0, seed=0)
        with pytest.raises(InvalidParameterError):
            partition_grow(net, 11, seed=0)

    def test_balance_on_lattice(self):
        from netcem.problems import LatticeMedium, gen_lattice_network

        net, _ = gen_lattice_network(LatticeMedium(20, 20, (), 1.0))
        part = partition_grow(net, 8, seed=3)
        assert part.balance_ratio() <= 0.3 + 1e-9


class TestPersistence:
    def test_roundtrip(self, rng, tmp_path):
        net = random_network(rng, size=25)
        part = partition_grow(net, 4, seed=2)
        path = tmp_path / "part.txt"
        save_partition(part, path)
        back = load_partition(net, path)
        assert np.array_equal(back.assignment, part.assignment)

    def test_disconnected_part_repaired_with_warning(self, tmp_path):
        net = make_path(6)
        # id 0 on nodes {0, 4, 5} is disconnected: {0} and {4, 5}.
        bad = np.array([0, 1, 1, 1, 0, 0])
        path = tmp_path / "part.txt"
        with open(path, "w") as fh:
            fh.write("\n".join(str(x) for x in bad) + "\n")
        with pytest.warns(UserWarning, match="disconnected"):
            part = load_partition(net, path)
        # Largest component keeps the id; the singleton gets a fresh one.
        assert part.count == 3
        for i in range(part.count):
            assert net.connected_on(part.nodes_of(i))

    def test_wrong_length_rejected(self, tmp_path):
        net = make_path(6)
        path = tmp_path / "part.txt"
        path.write_text("0\n0\n1\n")
        with pytest.raises(PartitionError):
            load_partition(net, path)
