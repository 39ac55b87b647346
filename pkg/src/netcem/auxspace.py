"""Per-subgraph spectral auxiliary spaces and the associated projection.

Each subgraph gets a localized energy form (internal edges plus masses),
a diagonally-lumped scaled form, and the lowest eigenpairs of the pair.
The eigenvectors, extended by zero, span the auxiliary space; the
projection onto it is block-diagonal because subgraphs are disjoint.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import kernels, parallel
from .errors import InvalidParameterError, NumericalError
from .kernels import Tolerances, DEFAULT_TOL
from .network import SpatialNetwork
from .partition import Partition


@dataclass(frozen=True)
class CPoPolicy:
    """How the per-subgraph scaling constant is chosen.

    mode "computed": solve each subgraph's smallest lumped-weighted
    eigenvalue and take its inverse square root (the sharp constant).
    mode "uniform": one user-supplied value for every subgraph.
    mode "table": explicit per-subgraph values.
    """

    mode: str = "computed"
    value: float | None = None
    table: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.mode not in ("computed", "uniform", "table"):
            raise InvalidParameterError(f"unknown scaling policy mode {self.mode!r}")
        if self.mode == "uniform" and not (self.value and self.value > 0.0):
            raise InvalidParameterError("uniform scaling policy needs a positive value")
        if self.mode == "table" and not self.table:
            raise InvalidParameterError("table scaling policy needs values")


@dataclass
class LocalForms:
    """Localized energy matrix and lumped diagonal for one subgraph."""

    nodes: np.ndarray
    a_matrix: sp.csr_matrix
    s_diagonal: np.ndarray
    c_po: float


def internal_energy_matrix(net: SpatialNetwork, nodes: np.ndarray) -> sp.csr_matrix:
    """Laplacian of strictly internal edges plus masses, on ``nodes``."""
    nodes = np.asarray(nodes, dtype=np.int64)
    m = nodes.shape[0]
    local = -np.ones(net.node_count, dtype=np.int64)
    local[nodes] = np.arange(m)
    e0, e1 = net.edges[:, 0], net.edges[:, 1]
    keep = (local[e0] >= 0) & (local[e1] >= 0)
    le0 = local[e0[keep]]
    le1 = local[e1[keep]]
    w = net.weights[keep]
    i = np.concatenate([le0, le1, le0, le1])
    j = np.concatenate([le1, le0, le0, le1])
    vals = np.concatenate([-w, -w, w, w])
    lap = sp.csr_matrix((vals, (i, j)), shape=(m, m))
    return (lap + sp.diags(net.masses[nodes])).tocsr()


def lumped_diagonal(net: SpatialNetwork, nodes: np.ndarray) -> np.ndarray:
    """Half-sum of all incident edge weights plus mass, per node of the subgraph."""
    return net.lumped_weights[nodes] + net.masses[nodes]


def estimate_poincare(
    net: SpatialNetwork,
    nodes: np.ndarray,
    *,
    fallback: float = 1.0,
    tol: Tolerances = DEFAULT_TOL,
) -> float:
    """Sharp constant of the subgraph's lumped-vs-energy inequality.

    It is the inverse square root of the smallest eigenvalue of the
    localized energy matrix against the lumped diagonal.  When the energy
    matrix is singular (no mass anywhere on a connected subgraph) the
    kernel is the constants and the second eigenvalue is used.  A subgraph
    whose lumped diagonal vanishes (an isolated node with zero mass) is
    degenerate; the configured fallback is returned with a warning.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    m = nodes.shape[0]
    a = internal_energy_matrix(net, nodes)
    d = lumped_diagonal(net, nodes)
    if np.any(d <= 0.0):
        warnings.warn(
            "degenerate subgraph (zero lumped weight and mass); "
            f"using fallback constant {fallback}",
            stacklevel=2,
        )
        return float(fallback)
    # Exact-arithmetic singularity test: on a connected subgraph the energy
    # matrix is singular iff every mass vanishes.
    singular = float(np.sum(net.masses[nodes])) == 0.0
    if singular and m == 1:
        warnings.warn(
            "single-node subgraph with zero mass has no spectrum above the kernel; "
            f"using fallback constant {fallback}",
            stacklevel=2,
        )
        return float(fallback)
    want = 2 if singular else 1
    if m <= max(tol.dense_eig_limit, want + 1):
        w, _ = kernels.dense_sym_geig(a.toarray(), d, count=min(want, m))
    else:
        w, _ = kernels.sparse_smallest_geig(a, d, count=want)
    mu = float(w[want - 1])
    if mu <= 0.0:
        raise NumericalError(
            f"non-positive lumped eigenvalue {mu:.3e}; subgraph may be disconnected"
        )
    return 1.0 / np.sqrt(mu)


def build_local_forms(
    net: SpatialNetwork, nodes: np.ndarray, c_po: float
) -> LocalForms:
    if not (np.isfinite(c_po) and c_po > 0.0):
        raise InvalidParameterError(f"scaling constant must be positive, got {c_po}")
    nodes = np.asarray(nodes, dtype=np.int64)
    a = internal_energy_matrix(net, nodes)
    d = lumped_diagonal(net, nodes) / (c_po * c_po)
    if np.any(d <= 0.0):
        raise NumericalError("lumped diagonal must be strictly positive for the spectral solve")
    return LocalForms(nodes, a, d, float(c_po))


def solve_local_eigen(
    forms: LocalForms,
    nov: int,
    *,
    tol: Tolerances = DEFAULT_TOL,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Lowest ``nov`` eigenpairs of the local pair, plus the next eigenvalue.

    Eigenvalues ascend; vectors are orthonormal in the lumped inner
    product, sign-fixed, and deterministic: inside any numerically
    degenerate eigenvalue cluster the basis is re-chosen canonically
    (node-index-ordered orthonormalization of coordinate projections), so
    the output does not depend on LAPACK's arbitrary rotation.
    """
    m = forms.nodes.shape[0]
    if nov < 1:
        raise InvalidParameterError(f"per-subgraph eigencount must be >= 1, got {nov}")
    if nov > m:
        warnings.warn(
            f"requested {nov} eigenpairs from a {m}-node subgraph; clamping to {m}",
            stacklevel=2,
        )
        nov = m
    want = min(nov + 1, m)
    if m <= tol.dense_eig_limit or want >= m - 1:
        w, v = kernels.dense_sym_geig(forms.a_matrix.toarray(), forms.s_diagonal, count=want)
    else:
        w, v = kernels.sparse_smallest_geig(forms.a_matrix, forms.s_diagonal, count=want)
    lam = w[:nov].copy()
    vec = v[:, :nov].copy()
    lam_next = float(w[nov]) if want > nov else np.inf
    _canonicalize_clusters(lam, vec, forms.s_diagonal, lam_next)
    ok, worst = kernels.eig_residual_ok(forms.a_matrix, forms.s_diagonal, lam, vec, tol.eig_residual)
    if not ok:
        raise NumericalError(
            f"local eigensolve residual {worst:.3e} exceeds {tol.eig_residual:.1e}"
        )
    return lam, vec, lam_next


def _canonicalize_clusters(
    lam: np.ndarray, vec: np.ndarray, s_diag: np.ndarray, lam_next: float
) -> None:
    """Replace each degenerate cluster's basis with a canonical one, in place."""
    k = lam.shape[0]
    scale = max(float(abs(lam[-1])), float(abs(lam_next)) if np.isfinite(lam_next) else 0.0, 1e-300)
    gap_tol = 1e-12 * scale
    start = 0
    while start < k:
        end = start
        while end + 1 < k and (lam[end + 1] - lam[end]) <= gap_tol:
            end += 1
        if end > start:
            cluster = vec[:, start : end + 1]
            vec[:, start : end + 1] = _canonical_basis(cluster, s_diag)
        if end + 1 == k and np.isfinite(lam_next) and (lam_next - lam[end]) <= gap_tol:
            warnings.warn(
                "eigenvalue cutoff splits a degenerate cluster; the auxiliary "
                "space is an arbitrary (but deterministic) choice",
                stacklevel=3,
            )
        start = end + 1


def _canonical_basis(cluster: np.ndarray, s_diag: np.ndarray) -> np.ndarray:
    """Orthonormal basis of span(cluster) independent of the input rotation.

    Works in coefficient space: coordinates of the unit vectors in the
    cluster's own s-orthonormal frame are orthonormalized by modified
    Gram-Schmidt in node-index order.
    """
    c = cluster.shape[1]
    coeff = cluster.T * s_diag[None, :]  # row k = coords of unit vector e_k
    q: list[np.ndarray] = []
    for col in range(coeff.shape[1]):
        r = coeff[:, col].copy()
        base = float(np.linalg.norm(r))
        if base == 0.0:
            continue
        for qv in q:
            r -= (qv @ r) * qv
        norm = float(np.linalg.norm(r))
        if norm > 1e-8 * base:
            q.append(r / norm)
            if len(q) == c:
                break
    if len(q) < c:  # pragma: no cover - rank cannot actually drop
        raise NumericalError("cluster canonicalization lost rank")
    out = cluster @ np.column_stack(q)
    kernels.fix_eigvec_signs(out)
    return out


class AuxSpace:
    """Auxiliary spectral space over a partition.

    Holds, per subgraph: the scaling constant, the retained eigenpairs
    (vectors stored on the subgraph's own nodes), and the first discarded
    eigenvalue.  Globally it exposes the sparse eigenvector matrix, the
    lumped diagonal with per-subgraph scaling, and the projection.
    """

    def __init__(
        self,
        net: SpatialNetwork,
        part: Partition,
        c_po: np.ndarray,
        eigvals: list[np.ndarray],
        vectors: list[np.ndarray],
        lam_next: np.ndarray,
    ):
        self.net = net
        self.part = part
        self.c_po = np.asarray(c_po, dtype=float)
        self.eigvals = eigvals
        self.vectors = vectors
        self.lam_next = np.asarray(lam_next, dtype=float)
        self.nov = np.array([v.shape[1] for v in vectors], dtype=np.int64)

        s_diag = np.empty(net.node_count)
        for i in range(part.count):
            nodes = part.nodes_of(i)
            s_diag[nodes] = lumped_diagonal(net, nodes) / (self.c_po[i] ** 2)
        self.s_diag = s_diag

        self.labels: list[tuple[int, int]] = [
            (i, j) for i in range(part.count) for j in range(int(self.nov[i]))
        ]
        self.column_of = {lab: k for k, lab in enumerate(self.labels)}

        rows = np.concatenate(
            [np.repeat(part.nodes_of(i), self.nov[i]) for i in range(part.count)]
        ) if self.labels else np.empty(0, dtype=np.int64)
        cols_list = []
        data_list = []
        col0 = 0
        for i in range(part.count):
            m, k = vectors[i].shape
            cols_list.append((col0 + np.tile(np.arange(k), m)).ravel())
            data_list.append(vectors[i].ravel())
            col0 += k
        cols = np.concatenate(cols_list) if cols_list else np.empty(0, dtype=np.int64)
        data = np.concatenate(data_list) if data_list else np.empty(0)
        k_total = len(self.labels)
        self.phi = sp.csc_matrix((data, (rows, cols)), shape=(net.node_count, k_total))
        self.weighted_phi = sp.csc_matrix(self.phi.multiply(s_diag[:, None]))

    @property
    def dimension(self) -> int:
        return len(self.labels)

    @property
    def spectral_gap(self) -> float:
        """Smallest first-discarded eigenvalue across subgraphs."""
        return float(np.min(self.lam_next)) if self.lam_next.size else np.inf

    def project(self, v: np.ndarray) -> np.ndarray:
        """Projection onto the auxiliary space, orthogonal in the lumped form."""
        coeff = self.weighted_phi.T @ np.asarray(v, dtype=float)
        return self.phi @ coeff

    def coefficients(self, v: np.ndarray) -> np.ndarray:
        return self.weighted_phi.T @ np.asarray(v, dtype=float)

    def s_inner(
        self, v: np.ndarray, w: np.ndarray, subset: np.ndarray | None = None
    ) -> float:
        """Global lumped inner product (per-subgraph scaling), optionally localized."""
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        if subset is None:
            return float(np.sum(self.s_diag * v * w))
        subset = np.asarray(subset)
        if subset.dtype == bool:
            subset = np.flatnonzero(subset)
        return float(np.sum(self.s_diag[subset] * v[subset] * w[subset]))

    def s_norm(self, v: np.ndarray, subset: np.ndarray | None = None) -> float:
        return float(np.sqrt(max(self.s_inner(v, v, subset), 0.0)))

    def dual_s_norm(self, f: np.ndarray) -> float:
        """Norm of a load functional against the lumped form."""
        f = np.asarray(f, dtype=float)
        return float(np.sqrt(np.sum(f * f / self.s_diag)))

    def summary(self) -> dict:
        return {
            "format_version": 1,
            "subgraph_count": self.part.count,
            "dimension": self.dimension,
            "spectral_gap": None if not np.isfinite(self.spectral_gap) else self.spectral_gap,
            "c_po_max": float(np.max(self.c_po)),
            "c_po_min": float(np.min(self.c_po)),
            "nov": self.nov.tolist(),
            "first_discarded": [
                None if not np.isfinite(x) else float(x) for x in self.lam_next
            ],
        }

    # -- persistence -------------------------------------------------------

    def save(self, directory: str | os.PathLike) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        arrays = {
            "assignment": self.part.assignment,
            "c_po": self.c_po,
            "lam_next": self.lam_next,
            "nov": self.nov,
        }
        for i in range(self.part.count):
            arrays[f"lam_{i}"] = self.eigvals[i]
            arrays[f"vec_{i}"] = self.vectors[i]
        np.savez_compressed(directory / "auxspace.npz", **arrays)
        with open(directory / "aux_summary.json", "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return directory

    @classmethod
    def load(cls, directory: str | os.PathLike, net: SpatialNetwork) -> "AuxSpace":
        directory = Path(directory)
        with np.load(directory / "auxspace.npz") as data:
            part = Partition(net, data["assignment"])
            c_po = data["c_po"]
            lam_next = data["lam_next"]
            eigvals = [data[f"lam_{i}"] for i in range(part.count)]
            vectors = [data[f"vec_{i}"] for i in range(part.count)]
        return cls(net, part, c_po, eigvals, vectors, lam_next)


def resolve_scaling(
    net: SpatialNetwork,
    part: Partition,
    policy: CPoPolicy,
    *,
    tol: Tolerances = DEFAULT_TOL,
    workers: int = 1,
) -> np.ndarray:
    """Per-subgraph scaling constants under the given policy."""
    if policy.mode == "uniform":
        return np.full(part.count, float(policy.value))
    if policy.mode == "table":
        table = np.asarray(policy.table, dtype=float)
        if table.shape[0] != part.count:
            raise InvalidParameterError(
                f"scaling table has {table.shape[0]} entries for {part.count} subgraphs"
            )
        if np.any(table <= 0.0):
            raise InvalidParameterError("scaling table entries must be positive")
        return table
    values = parallel.parallel_map(
        _poincare_task,
        range(part.count),
        workers=workers,
        context=(net, part, tol),
    )
    return np.array(values, dtype=float)


def _poincare_task(i: int) -> float:
    net, part, tol = parallel.get_context()
    return estimate_poincare(net, part.nodes_of(i), tol=tol)


def build_aux_space(
    net: SpatialNetwork,
    part: Partition,
    nov: int | np.ndarray,
    *,
    policy: CPoPolicy = CPoPolicy(),
    tol: Tolerances = DEFAULT_TOL,
    workers: int = 1,
) -> AuxSpace:
    """Solve every subgraph's spectral problem and assemble the space.

    ``nov`` may be one integer for all subgraphs or a per-subgraph array.
    """
    nov_arr = np.broadcast_to(np.asarray(nov, dtype=np.int64), (part.count,)).copy()
    if np.any(nov_arr < 1):
        raise InvalidParameterError("per-subgraph eigencount must be >= 1")
    c_po = resolve_scaling(net, part, policy, tol=tol, workers=workers)
    results = parallel.parallel_map(
        _eigen_task,
        range(part.count),
        workers=workers,
        context=(net, part, c_po, nov_arr, tol),
    )
    eigvals = [r[0] for r in results]
    vectors = [r[1] for r in results]
    lam_next = np.array([r[2] for r in results])
    return AuxSpace(net, part, c_po, eigvals, vectors, lam_next)


def _eigen_task(i: int) -> tuple[np.ndarray, np.ndarray, float]:
    net, part, c_po, nov_arr, tol = parallel.get_context()
    forms = build_local_forms(net, part.nodes_of(i), float(c_po[i]))
    return solve_local_eigen(forms, int(nov_arr[i]), tol=tol)
