"""Weighted spatial network, its energy forms, and the on-disk bundle format.

A network is an undirected graph with positive edge conductances and
non-negative nodal masses.  The system operator is the weighted graph
Laplacian plus the diagonal mass matrix; all localized inner products
used by the multiscale construction live here.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import (
    BundleFormatError,
    InvalidParameterError,
    NetworkValidationError,
)

BUNDLE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class WellPosednessReport:
    """Outcome of the solvability screen for the free-node system."""

    connected: bool
    has_mass: bool
    has_constraints: bool
    free_count: int
    passed: bool
    notes: tuple[str, ...] = ()

    def __str__(self) -> str:
        state = "well-posed" if self.passed else "NOT well-posed"
        lines = [
            f"{state}: connected={self.connected} mass={self.has_mass} "
            f"constraints={self.has_constraints} free_nodes={self.free_count}"
        ]
        lines.extend(f"  - {n}" for n in self.notes)
        return "\n".join(lines)


class SpatialNetwork:
    """Immutable weighted graph with masses and optional constrained nodes.

    Edges are stored once in canonical orientation (low index, high index),
    lexicographically sorted.  Derived operators (adjacency, Laplacian,
    combined operator, lumped edge weights) are built lazily and cached;
    the instance is safe to share across worker processes after a fork.
    """

    __slots__ = (
        "node_count",
        "edges",
        "weights",
        "masses",
        "constrained",
        "coords",
        "_adjacency",
        "_laplacian",
        "_operator",
        "_lumped",
        "_free_mask",
    )

    def __init__(
        self,
        node_count: int,
        edges: np.ndarray,
        weights: np.ndarray,
        masses: np.ndarray,
        constrained: np.ndarray | None = None,
        coords: np.ndarray | None = None,
    ):
        if node_count < 1:
            raise NetworkValidationError("network needs at least one node")
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        weights = np.asarray(weights, dtype=float).reshape(-1)
        masses = np.asarray(masses, dtype=float).reshape(-1)
        if edges.shape[0] != weights.shape[0]:
            raise NetworkValidationError(
                f"{edges.shape[0]} edges but {weights.shape[0]} weights"
            )
        if masses.shape[0] != node_count:
            raise NetworkValidationError(
                f"{masses.shape[0]} masses for {node_count} nodes"
            )
        if edges.size:
            if edges.min() < 0 or edges.max() >= node_count:
                raise NetworkValidationError("edge endpoint out of range")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise NetworkValidationError("self-loops are not allowed")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0.0):
            raise NetworkValidationError("edge weights must be finite and > 0")
        if not np.all(np.isfinite(masses)) or np.any(masses < 0.0):
            raise NetworkValidationError("masses must be finite and >= 0")

        # Canonical orientation + lexicographic order makes the storage
        # independent of input order and duplicates detectable.
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        order = np.lexsort((hi, lo))
        edges = np.column_stack([lo, hi])[order]
        weights = weights[order]
        if edges.shape[0] > 1 and np.any(np.all(np.diff(edges, axis=0) == 0, axis=1)):
            raise NetworkValidationError("duplicate edges are not allowed")

        if constrained is None:
            constrained = np.empty(0, dtype=np.int64)
        constrained = np.unique(np.asarray(constrained, dtype=np.int64))
        if constrained.size and (constrained.min() < 0 or constrained.max() >= node_count):
            raise NetworkValidationError("constrained node index out of range")
        if coords is not None:
            coords = np.asarray(coords, dtype=float)
            if coords.shape[0] != node_count:
                raise NetworkValidationError("coords row count must equal node count")

        object.__setattr__(self, "node_count", int(node_count))
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "constrained", constrained)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "_adjacency", None)
        object.__setattr__(self, "_laplacian", None)
        object.__setattr__(self, "_operator", None)
        object.__setattr__(self, "_lumped", None)
        object.__setattr__(self, "_free_mask", None)

    def __setattr__(self, name, value):  # pragma: no cover - defensive
        raise AttributeError("SpatialNetwork is immutable")

    def _cache(self, name, builder):
        value = object.__getattribute__(self, name)
        if value is None:
            value = builder()
            object.__setattr__(self, name, value)
        return value

    # -- derived operators -------------------------------------------------

    @property
    def edge_count(self) -> int:
        return self.edges.shape[0]

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric weighted adjacency matrix."""

        def build():
            i = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
            j = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
            w = np.concatenate([self.weights, self.weights])
            return sp.csr_matrix((w, (i, j)), shape=(self.node_count,) * 2)

        return self._cache("_adjacency", build)

    def laplacian(self) -> sp.csr_matrix:
        def build():
            adj = self.adjacency()
            deg = np.asarray(adj.sum(axis=1)).ravel()
            return (sp.diags(deg) - adj).tocsr()

        return self._cache("_laplacian", build)

    def operator(self) -> sp.csr_matrix:
        """Laplacian plus diagonal mass: the SPD system operator."""

        def build():
            return (self.laplacian() + sp.diags(self.masses)).tocsr()

        return self._cache("_operator", build)

    @property
    def lumped_weights(self) -> np.ndarray:
        """Per-node half-sum of incident edge weights (over all neighbors)."""

        def build():
            out = np.zeros(self.node_count)
            np.add.at(out, self.edges[:, 0], 0.5 * self.weights)
            np.add.at(out, self.edges[:, 1], 0.5 * self.weights)
            return out

        return self._cache("_lumped", build)

    @property
    def degrees(self) -> np.ndarray:
        adj = self.adjacency()
        return np.diff(adj.indptr)

    def neighbors(self, x: int) -> np.ndarray:
        adj = self.adjacency()
        return adj.indices[adj.indptr[x] : adj.indptr[x + 1]]

    @property
    def free_mask(self) -> np.ndarray:
        def build():
            mask = np.ones(self.node_count, dtype=bool)
            mask[self.constrained] = False
            return mask

        return self._cache("_free_mask", build)

    # -- energy forms ------------------------------------------------------

    def apply_operator(self, v: np.ndarray) -> np.ndarray:
        v = self._check_vector(v)
        return self.operator() @ v

    def inner_a(
        self,
        v: np.ndarray,
        w: np.ndarray | None = None,
        subset: np.ndarray | None = None,
    ) -> float:
        """Energy inner product, optionally localized to a node subset.

        The localized form charges each edge half its weight per endpoint
        inside the subset, so an edge crossing the subset boundary
        contributes at half weight and summing over a node partition
        recovers the global value exactly.
        """
        v = self._check_vector(v)
        w = v if w is None else self._check_vector(w)
        if subset is None:
            return float(v @ (self.operator() @ w))
        mask = self._subset_mask(subset)
        e0, e1 = self.edges[:, 0], self.edges[:, 1]
        share = 0.5 * (mask[e0].astype(float) + mask[e1].astype(float))
        dv = v[e0] - v[e1]
        dw = w[e0] - w[e1]
        edge_part = float(np.sum(self.weights * share * dv * dw))
        mass_part = float(np.sum(self.masses[mask] * v[mask] * w[mask]))
        return edge_part + mass_part

    def inner_s(
        self,
        v: np.ndarray,
        w: np.ndarray,
        subset: np.ndarray,
        c_po: float,
    ) -> float:
        """Scaled lumped inner product over a subset.

        Uses the per-node half-sum of all incident edge weights (boundary
        edges included) plus the mass, divided by the squared constant.
        """
        if not (np.isfinite(c_po) and c_po > 0.0):
            raise InvalidParameterError(f"inner_s: scaling constant must be > 0, got {c_po}")
        v = self._check_vector(v)
        w = self._check_vector(w)
        mask = self._subset_mask(subset)
        weight = (self.lumped_weights[mask] + self.masses[mask]) / (c_po * c_po)
        return float(np.sum(weight * v[mask] * w[mask]))

    def norm_a(self, v: np.ndarray, subset: np.ndarray | None = None) -> float:
        return float(np.sqrt(max(self.inner_a(v, v, subset), 0.0)))

    def volume(self, inner: np.ndarray, outer: np.ndarray | None = None) -> int:
        """Count of edge endpoints in ``inner`` whose neighbor lies in ``outer``.

        With ``outer`` omitted it is the total degree of ``inner`` in the
        whole network.
        """
        inner_mask = self._subset_mask(inner)
        e0, e1 = self.edges[:, 0], self.edges[:, 1]
        if outer is None:
            outer_mask = np.ones(self.node_count, dtype=bool)
        else:
            outer_mask = self._subset_mask(outer)
            if not np.all(outer_mask[inner_mask]):
                raise InvalidParameterError("volume: inner subset must lie inside outer")
        count = np.sum(inner_mask[e0] & outer_mask[e1]) + np.sum(inner_mask[e1] & outer_mask[e0])
        return int(count)

    # -- solvability and constraint elimination ----------------------------

    def check_well_posedness(self) -> WellPosednessReport:
        free = np.flatnonzero(self.free_mask)
        notes: list[str] = []
        if free.size == 0:
            return WellPosednessReport(False, False, True, 0, False, ("no free nodes",))
        connected = self._connected_on(free)
        if not connected:
            notes.append("free subgraph is disconnected")
        has_mass = bool(np.any(self.masses[free] > 0.0))
        has_constraints = self.constrained.size > 0
        if not has_mass and not has_constraints:
            notes.append("no mass on free nodes and no constrained nodes: operator is singular")
        if has_mass and has_constraints:
            notes.append("mixed regularization: both mass terms and constrained nodes present")
        passed = connected and (has_mass or has_constraints)
        return WellPosednessReport(
            connected, has_mass, has_constraints, int(free.size), passed, tuple(notes)
        )

    def connected_on(self, nodes: np.ndarray) -> bool:
        """True when the induced subgraph on ``nodes`` is connected."""
        return self._connected_on(np.asarray(nodes, dtype=np.int64))

    def _connected_on(self, nodes: np.ndarray) -> bool:
        if nodes.size <= 1:
            return True
        keep = np.zeros(self.node_count, dtype=bool)
        keep[nodes] = True
        seen = np.zeros(self.node_count, dtype=bool)
        stack = [int(nodes[0])]
        seen[nodes[0]] = True
        found = 1
        while stack:
            x = stack.pop()
            for y in self.neighbors(x):
                if keep[y] and not seen[y]:
                    seen[y] = True
                    found += 1
                    stack.append(int(y))
        return found == nodes.size

    def reduced(self) -> tuple["SpatialNetwork", np.ndarray]:
        """Eliminate constrained nodes (homogeneous constraints).

        Edges from a free node to a constrained node lose their neighbor but
        must keep contributing their full weight on the free side, so that
        the reduced operator equals the corresponding principal submatrix of
        the full operator.  That surplus is folded into the free node's mass.
        Returns the reduced network and the array of original indices of the
        free nodes.
        """
        if self.constrained.size == 0:
            return self, np.arange(self.node_count, dtype=np.int64)
        free = np.flatnonzero(self.free_mask)
        new_index = -np.ones(self.node_count, dtype=np.int64)
        new_index[free] = np.arange(free.size)
        e0, e1 = self.edges[:, 0], self.edges[:, 1]
        both_free = self.free_mask[e0] & self.free_mask[e1]
        kept_edges = np.column_stack([new_index[e0[both_free]], new_index[e1[both_free]]])
        kept_weights = self.weights[both_free]
        extra_mass = np.zeros(free.size)
        one_free = self.free_mask[e0] ^ self.free_mask[e1]
        free_end = np.where(self.free_mask[e0[one_free]], e0[one_free], e1[one_free])
        np.add.at(extra_mass, new_index[free_end], self.weights[one_free])
        return (
            SpatialNetwork(
                free.size,
                kept_edges,
                kept_weights,
                self.masses[free] + extra_mass,
                coords=None if self.coords is None else self.coords[free],
            ),
            free,
        )

    # -- helpers -----------------------------------------------------------

    def _check_vector(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.node_count,):
            raise InvalidParameterError(
                f"node function has shape {v.shape}, expected ({self.node_count},)"
            )
        return v

    def _subset_mask(self, subset: np.ndarray) -> np.ndarray:
        subset = np.asarray(subset)
        if subset.dtype == bool:
            if subset.shape != (self.node_count,):
                raise InvalidParameterError("boolean subset mask has wrong length")
            return subset
        idx = subset.astype(np.int64, copy=False)
        if idx.size and (idx.min() < 0 or idx.max() >= self.node_count):
            raise InvalidParameterError("subset index out of range")
        mask = np.zeros(self.node_count, dtype=bool)
        mask[idx] = True
        return mask

    def __repr__(self) -> str:
        return (
            f"SpatialNetwork(nodes={self.node_count}, edges={self.edge_count}, "
            f"constrained={self.constrained.size})"
        )


# ---------------------------------------------------------------------------
# Bundle I/O.
#
# A bundle directory holds the weighted adjacency in Matrix Market form plus
# plain-text vectors and a JSON manifest carrying counts, a content hash, and
# free-form provenance (seed, generator parameters).

_ADJ_FILE = "L.mtx"
_MASS_FILE = "M.txt"
_LOAD_FILE = "f.txt"
_CONSTRAINED_FILE = "dirichlet.txt"
_COORDS_FILE = "coords.txt"
_MANIFEST_FILE = "manifest.json"


def save_bundle(
    directory: str | os.PathLike,
    net: SpatialNetwork,
    load: np.ndarray | None = None,
    *,
    extras: dict | None = None,
    extra_matrices: dict[str, sp.spmatrix] | None = None,
) -> Path:
    """Write a network (and optional load vector) as a bundle directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    kernels.write_matrix_market(directory / _ADJ_FILE, net.adjacency())
    kernels.write_vector(directory / _MASS_FILE, net.masses)
    files = [_ADJ_FILE, _MASS_FILE]
    if load is not None:
        kernels.write_vector(directory / _LOAD_FILE, np.asarray(load, dtype=float))
        files.append(_LOAD_FILE)
    if net.constrained.size:
        with open(directory / _CONSTRAINED_FILE, "w") as fh:
            for idx in net.constrained:
                fh.write(f"{int(idx)}\n")
        files.append(_CONSTRAINED_FILE)
    if net.coords is not None:
        kernels.write_vector(directory / _COORDS_FILE, net.coords)
        files.append(_COORDS_FILE)
    for name, mat in (extra_matrices or {}).items():
        kernels.write_matrix_market(directory / name, mat)
        files.append(name)
    manifest = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "node_count": net.node_count,
        "edge_count": net.edge_count,
        "files": files,
        "content_hash": kernels.stable_file_digest([directory / f for f in files]),
    }
    manifest.update(extras or {})
    with open(directory / _MANIFEST_FILE, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def load_bundle(
    directory: str | os.PathLike,
    *,
    verify_hash: bool = True,
) -> tuple[SpatialNetwork, np.ndarray | None, dict]:
    """Read a bundle directory back into a network, load vector, manifest."""
    directory = Path(directory)
    manifest_path = directory / _MANIFEST_FILE
    if not manifest_path.is_file():
        raise BundleFormatError(f"missing {_MANIFEST_FILE} in {directory}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    for name in (_ADJ_FILE, _MASS_FILE):
        if not (directory / name).is_file():
            raise BundleFormatError(f"bundle {directory} is missing {name}")
    if verify_hash and "content_hash" in manifest and "files" in manifest:
        digest = kernels.stable_file_digest([directory / f for f in manifest["files"]])
        if digest != manifest["content_hash"]:
            raise BundleFormatError(
                f"bundle {directory} content hash mismatch: files were modified"
            )
    adj = kernels.read_matrix_market(directory / _ADJ_FILE).tocoo()
    upper = adj.row < adj.col
    edges = np.column_stack([adj.row[upper], adj.col[upper]])
    weights = adj.data[upper]
    masses = kernels.read_vector(directory / _MASS_FILE)
    node_count = int(manifest.get("node_count", masses.shape[0]))
    if masses.shape[0] != node_count:
        raise BundleFormatError(
            f"manifest says {node_count} nodes, {_MASS_FILE} has {masses.shape[0]}"
        )
    constrained = None
    if (directory / _CONSTRAINED_FILE).is_file():
        constrained = np.loadtxt(directory / _CONSTRAINED_FILE, dtype=np.int64, ndmin=1)
    coords = None
    if (directory / _COORDS_FILE).is_file():
        coords = kernels.read_vector(directory / _COORDS_FILE)
        coords = coords.reshape(node_count, -1)
    try:
        net = SpatialNetwork(node_count, edges, weights, masses, constrained, coords)
    except NetworkValidationError as exc:
        raise BundleFormatError(f"bundle {directory} failed validation: {exc}") from exc
    load = None
    if (directory / _LOAD_FILE).is_file():
        load = kernels.read_vector(directory / _LOAD_FILE)
        if load.shape[0] != node_count:
            raise BundleFormatError(f"{_LOAD_FILE} length does not match node count")
    return net, load, manifest


def load_extra_matrix(directory: str | os.PathLike, name: str) -> sp.csr_matrix:
    path = Path(directory) / name
    if not path.is_file():
        raise BundleFormatError(f"bundle matrix {name} not found in {directory}")
    return kernels.read_matrix_market(path)
