"""Graph partitioning into connected subgraphs and layered oversampling.

The coarse space is built per subgraph of a node partition.  Patches are
grown subgraph-by-subgraph: one oversampling layer adds every subgraph
adjacent to the current patch, which is a breadth-first ball on the
quotient graph of the partition.
"""

from __future__ import annotations

import heapq
import json
import os
import warnings
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError, PartitionError
from .network import SpatialNetwork


class Partition:
    """A disjoint cover of the node set by connected subgraphs.

    ``assignment[x]`` is the subgraph id of node ``x``; ids are dense in
    ``0..count-1`` and every subgraph is connected in its induced graph.
    The quotient adjacency (which subgraphs touch which) is precomputed
    because every oversampling query walks it.
    """

    __slots__ = ("assignment", "count", "part_nodes", "sizes", "quotient_neighbors")

    def __init__(self, net: SpatialNetwork, assignment: np.ndarray):
        assignment = np.asarray(assignment, dtype=np.int64).reshape(-1)
        if assignment.shape[0] != net.node_count:
            raise PartitionError(
                f"assignment length {assignment.shape[0]} != node count {net.node_count}"
            )
        if assignment.min(initial=0) < 0:
            raise PartitionError("negative subgraph id")
        count = int(assignment.max()) + 1 if assignment.size else 0
        present = np.bincount(assignment, minlength=count)
        if np.any(present == 0):
            missing = np.flatnonzero(present == 0)
            raise PartitionError(f"subgraph ids not dense: empty ids {missing.tolist()}")
        self.assignment = assignment
        self.count = count
        order = np.argsort(assignment, kind="stable")
        bounds = np.searchsorted(assignment[order], np.arange(count + 1))
        self.part_nodes = [np.sort(order[bounds[i] : bounds[i + 1]]) for i in range(count)]
        self.sizes = present
        for i in range(count):
            if not net.connected_on(self.part_nodes[i]):
                raise PartitionError(f"subgraph {i} is disconnected in its induced graph")
        self.quotient_neighbors = _quotient_adjacency(net, assignment, count)

    def nodes_of(self, i: int) -> np.ndarray:
        return self.part_nodes[i]

    def balance_ratio(self) -> float:
        """max deviation of subgraph size from the even split, as a fraction."""
        target = self.assignment.shape[0] / self.count
        return float(np.max(np.abs(self.sizes - target)) / target)

    def member_parts(self, i: int, layers: int) -> np.ndarray:
        """Subgraph ids within ``layers`` hops of ``i`` on the quotient graph."""
        if not 0 <= i < self.count:
            raise InvalidParameterError(f"subgraph id {i} outside [0, {self.count})")
        if layers < 0:
            raise InvalidParameterError("layer count must be >= 0")
        seen = {i}
        frontier = [i]
        for _ in range(layers):
            nxt = []
            for p in frontier:
                for q in self.quotient_neighbors[p]:
                    if q not in seen:
                        seen.add(q)
                        nxt.append(int(q))
            if not nxt:
                break
            frontier = nxt
        return np.array(sorted(seen), dtype=np.int64)

    def patch_nodes(self, i: int, layers: int) -> np.ndarray:
        """Sorted node indices of the ``layers``-fold oversampled patch of ``i``."""
        parts = self.member_parts(i, layers)
        if parts.size == 1:
            return self.part_nodes[i]
        return np.sort(np.concatenate([self.part_nodes[p] for p in parts]))


def _quotient_adjacency(
    net: SpatialNetwork, assignment: np.ndarray, count: int
) -> list[np.ndarray]:
    pe0 = assignment[net.edges[:, 0]]
    pe1 = assignment[net.edges[:, 1]]
    cross = pe0 != pe1
    pairs = np.column_stack([pe0[cross], pe1[cross]])
    if pairs.size:
        lo = pairs.min(axis=1)
        hi = pairs.max(axis=1)
        uniq = np.unique(np.column_stack([lo, hi]), axis=0)
    else:
        uniq = np.empty((0, 2), dtype=np.int64)
    out: list[list[int]] = [[] for _ in range(count)]
    for a, b in uniq:
        out[int(a)].append(int(b))
        out[int(b)].append(int(a))
    return [np.array(sorted(nbrs), dtype=np.int64) for nbrs in out]


@dataclass(frozen=True)
class RegularityReport:
    """Patch-growth bookkeeping for a partition.

    ``patch_counts[l]`` is the largest number of subgraphs contained in any
    ``l``-fold oversampled patch; ``quotient_max_degree`` bounds its growth
    per layer.
    """

    patch_counts: tuple[int, ...]
    quotient_max_degree: int
    balance_ratio: float

    def count_at(self, layers: int) -> int:
        if layers < len(self.patch_counts):
            return self.patch_counts[layers]
        return self.patch_counts[-1]


def regularity(net: SpatialNetwork, part: Partition, max_layers: int) -> RegularityReport:
    counts = []
    for l in range(max_layers + 1):
        counts.append(max(part.member_parts(i, l).size for i in range(part.count)))
    max_deg = max((nbrs.size for nbrs in part.quotient_neighbors), default=0)
    return RegularityReport(tuple(counts), int(max_deg), part.balance_ratio())


# ---------------------------------------------------------------------------
# Partition construction.


def partition_grow(
    net: SpatialNetwork,
    count: int,
    seed: int = 0,
    *,
    balance_tol: float = 0.3,
    smoothing_rounds: int = 3,
) -> Partition:
    """Grow ``count`` connected, roughly equal subgraphs.

    Deterministic for a fixed seed: farthest-point seeding, then balanced
    multi-source BFS (the smallest subgraph claims next), then a few
    recenter-and-regrow rounds, then local boundary moves that keep both
    donor and receiver connected.  Balance outside ``balance_tol`` of the
    even split only warns; adversarial graphs (stars) cannot satisfy it.
    """
    n = net.node_count
    if not 1 <= count <= n:
        raise InvalidParameterError(f"subgraph count {count} outside [1, {n}]")
    report = _components(net)
    if report > 1:
        raise PartitionError("partition_grow requires a connected network")
    if count == 1:
        return Partition(net, np.zeros(n, dtype=np.int64))

    rng = np.random.default_rng(seed)
    seeds = _farthest_point_seeds(net, count, int(rng.integers(n)))
    assignment = _balanced_bfs(net, seeds)
    for _ in range(smoothing_rounds):
        centers = _recenter(net, assignment, count)
        if centers == seeds:
            break
        seeds = centers
        assignment = _balanced_bfs(net, seeds)
    assignment = _rebalance(net, assignment, count, balance_tol)
    part = Partition(net, assignment)
    if part.balance_ratio() > balance_tol:
        warnings.warn(
            f"partition balance {part.balance_ratio():.2f} exceeds tolerance "
            f"{balance_tol:.2f}; sizes {part.sizes.min()}..{part.sizes.max()}",
            stacklevel=2,
        )
    return part


def _components(net: SpatialNetwork) -> int:
    import scipy.sparse.csgraph as csgraph

    ncomp, _ = csgraph.connected_components(net.adjacency(), directed=False)
    return int(ncomp)


def _bfs_hops(net: SpatialNetwork, sources: list[int]) -> np.ndarray:
    dist = np.full(net.node_count, -1, dtype=np.int64)
    queue: deque[int] = deque()
    for s in sources:
        dist[s] = 0
        queue.append(s)
    while queue:
        x = queue.popleft()
        for y in net.neighbors(x):
            if dist[y] < 0:
                dist[y] = dist[x] + 1
                queue.append(int(y))
    return dist


def _farthest_point_seeds(net: SpatialNetwork, count: int, first: int) -> list[int]:
    seeds = [first]
    while len(seeds) < count:
        dist = _bfs_hops(net, seeds)
        # argmax takes the lowest index on ties
        seeds.append(int(np.argmax(dist)))
    return seeds


def _balanced_bfs(net: SpatialNetwork, seeds: list[int]) -> np.ndarray:
    n = net.node_count
    assignment = np.full(n, -1, dtype=np.int64)
    frontiers = [deque([s]) for s in seeds]
    heap: list[tuple[int, int]] = []
    for p, s in enumerate(seeds):
        assignment[s] = p
        heap.append((1, p))
    heapq.heapify(heap)
    claimed = len(seeds)
    while heap and claimed < n:
        size, p = heapq.heappop(heap)
        fr = frontiers[p]
        grabbed = None
        while fr:
            x = fr.popleft()
            for y in net.neighbors(x):
                if assignment[y] < 0:
                    grabbed = int(y)
                    fr.appendleft(x)  # x may have more unclaimed neighbors
                    break
            if grabbed is not None:
                break
        if grabbed is None:
            continue  # subgraph is walled in; others absorb the rest
        assignment[grabbed] = p
        fr.append(grabbed)
        claimed += 1
        heapq.heappush(heap, (size + 1, p))
    return assignment


def _recenter(net: SpatialNetwork, assignment: np.ndarray, count: int) -> list[int]:
    """Per subgraph, the node farthest from the subgraph boundary (lowest index wins)."""
    e0, e1 = net.edges[:, 0], net.edges[:, 1]
    cross = assignment[e0] != assignment[e1]
    boundary = np.zeros(net.node_count, dtype=bool)
    boundary[e0[cross]] = True
    boundary[e1[cross]] = True
    dist = np.full(net.node_count, -1, dtype=np.int64)
    queue: deque[int] = deque()
    for x in np.flatnonzero(boundary):
        dist[x] = 0
        queue.append(int(x))
    while queue:
        x = queue.popleft()
        for y in net.neighbors(x):
            if dist[y] < 0 and assignment[y] == assignment[x]:
                dist[y] = dist[x] + 1
                queue.append(int(y))
    centers = []
    for p in range(count):
        nodes = np.flatnonzero(assignment == p)
        local = dist[nodes]
        centers.append(int(nodes[np.argmax(local)]))
    return centers


def _rebalance(
    net: SpatialNetwork,
    assignment: np.ndarray,
    count: int,
    balance_tol: float,
    max_passes: int = 8,
) -> np.ndarray:
    assignment = assignment.copy()
    n = assignment.shape[0]
    target = n / count
    hi = (1.0 + balance_tol) * target
    lo = (1.0 - balance_tol) * target
    sizes = np.bincount(assignment, minlength=count)
    for _ in range(max_passes):
        moved = False
        # Oversized subgraphs shed boundary nodes to their smallest neighbor.
        for p in range(count):
            if sizes[p] <= hi:
                continue
            for x in np.flatnonzero(assignment == p):
                nbr_parts = sorted(
                    {int(assignment[y]) for y in net.neighbors(x) if assignment[y] != p}
                )
                if not nbr_parts:
                    continue
                q = min(nbr_parts, key=lambda pid: (sizes[pid], pid))
                if sizes[q] + 1 >= sizes[p]:
                    continue
                if not _still_connected_without(net, assignment, p, int(x)):
                    continue
                assignment[x] = q
                sizes[p] -= 1
                sizes[q] += 1
                moved = True
                if sizes[p] <= hi:
                    break
        # Undersized subgraphs pull boundary nodes from larger neighbors.
        for p in range(count):
            while sizes[p] < lo:
                candidate = None
                boundary = np.flatnonzero(assignment == p)
                options: list[tuple[int, int]] = []
                for x in boundary:
                    for y in net.neighbors(int(x)):
                        q = int(assignment[y])
                        if q != p and sizes[q] - 1 > sizes[p]:
                            options.append((q, int(y)))
                # Take from the largest neighbor; lowest node index on ties.
                for q, y in sorted(options, key=lambda t: (-sizes[t[0]], t[1])):
                    if _still_connected_without(net, assignment, q, y):
                        candidate = (q, y)
                        break
                if candidate is None:
                    break
                q, y = candidate
                assignment[y] = p
                sizes[q] -= 1
                sizes[p] += 1
                moved = True
        if not moved:
            break
    return assignment


def _still_connected_without(
    net: SpatialNetwork, assignment: np.ndarray, p: int, x: int
) -> bool:
    nodes = np.flatnonzero(assignment == p)
    rest = nodes[nodes != x]
    if rest.size <= 1:
        return rest.size == 1
    keep = np.zeros(net.node_count, dtype=bool)
    keep[rest] = True
    seen = {int(rest[0])}
    stack = [int(rest[0])]
    while stack:
        z = stack.pop()
        for y in net.neighbors(z):
            yy = int(y)
            if keep[yy] and yy not in seen:
                seen.add(yy)
                stack.append(yy)
    return len(seen) == rest.size


# ---------------------------------------------------------------------------
# Partition file format: one subgraph id per line, line number = node index.


def save_partition(part: Partition, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        for pid in part.assignment:
            fh.write(f"{int(pid)}\n")


def load_partition(
    net: SpatialNetwork, path: str | os.PathLike, *, repair: bool = True
) -> Partition:
    """Read an assignment file; optionally split disconnected subgraphs.

    External partitioners may emit subgraphs whose induced graph falls into
    several components.  With ``repair`` each component becomes its own
    subgraph (new ids appended in node order) and a warning is issued.
    """
    raw = np.loadtxt(path, dtype=np.int64, ndmin=1)
    if raw.shape[0] != net.node_count:
        raise PartitionError(
            f"partition file has {raw.shape[0]} lines for {net.node_count} nodes"
        )
    uniq = np.unique(raw)
    dense = np.searchsorted(uniq, raw)  # compress ids to 0..k-1 preserving order
    if not repair:
        return Partition(net, dense)
    repaired, splits = _split_components(net, dense)
    if splits:
        warnings.warn(
            f"partition file {path}: split {splits} disconnected subgraph(s) "
            "into their components",
            stacklevel=2,
        )
    return Partition(net, repaired)


def _split_components(net: SpatialNetwork, assignment: np.ndarray) -> tuple[np.ndarray, int]:
    count = int(assignment.max()) + 1
    out = assignment.copy()
    next_id = count
    splits = 0
    for p in range(count):
        nodes = np.flatnonzero(assignment == p)
        comps = _induced_components(net, nodes)
        if len(comps) <= 1:
            continue
        splits += 1
        # Largest component keeps the id; ties break toward the one holding
        # the lowest node index.  Others get fresh ids in node order.
        comps.sort(key=lambda c: (-len(c), min(c)))
        for comp in comps[1:]:
            out[np.array(sorted(comp))] = next_id
            next_id += 1
    return out, splits


def _induced_components(net: SpatialNetwork, nodes: np.ndarray) -> list[set[int]]:
    keep = np.zeros(net.node_count, dtype=bool)
    keep[nodes] = True
    unvisited = set(int(x) for x in nodes)
    comps: list[set[int]] = []
    while unvisited:
        start = min(unvisited)
        comp = {start}
        stack = [start]
        unvisited.remove(start)
        while stack:
            z = stack.pop()
            for y in net.neighbors(z):
                yy = int(y)
                if keep[yy] and yy in unvisited:
                    unvisited.remove(yy)
                    comp.add(yy)
                    stack.append(yy)
        comps.append(comp)
    return comps


def dump_oversampling(
    part: Partition, layers: int, path: str | os.PathLike
) -> None:
    """Write the patch membership map (subgraph id -> member subgraph ids)."""
    payload = {
        "format_version": 1,
        "layers": layers,
        "members": {str(i): part.member_parts(i, layers).tolist() for i in range(part.count)},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
