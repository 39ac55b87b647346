"""Localized energy-minimizing basis, coarse Galerkin system, multiscale solve.

Each auxiliary eigenvector spawns one basis function: the minimizer of
energy over the oversampled patch subject to prescribed auxiliary
moments.  The saddle point is solved in its penalty-free reduced form,
``(A_P + G_P G_P') x = g``, where ``G_P`` stacks the lumped-weighted
auxiliary columns living inside the patch.  The low-rank term is never
densified: direct solves use one sparse factorization of ``A_P`` plus a
rank-k correction, iterative solves apply it as two sparse products.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels, parallel
from .auxspace import AuxSpace
from .errors import CoarseRankError, InvalidParameterError, NumericalError
from .kernels import Tolerances, DEFAULT_TOL
from .network import SpatialNetwork


@dataclass
class CemBasis:
    """Multiscale basis: one sparse column per auxiliary eigenvector.

    ``layers`` is the oversampling depth; None marks the ideal basis
    computed on the whole network.
    """

    psi: sp.csc_matrix
    labels: list[tuple[int, int]]
    layers: int | None

    @property
    def dimension(self) -> int:
        return self.psi.shape[1]

    def column(self, i: int, j: int) -> np.ndarray:
        k = self.labels.index((i, j))
        return self.psi[:, k].toarray().ravel()


def _patch_solve(
    a_patch: sp.csr_matrix,
    g_patch: sp.csc_matrix,
    rhs: np.ndarray,
    tol: Tolerances,
) -> np.ndarray:
    """Solve ``(A + G G') X = rhs`` with the low-rank term kept factored.

    Direct path: one LU of A, then a dense rank-k correction solve.
    Above the direct size limit: Jacobi-preconditioned CG per column with
    matrix-free application of the low-rank term.
    """
    m = a_patch.shape[0]
    if rhs.ndim == 1:
        rhs = rhs[:, None]
    if m <= tol.direct_patch_limit:
        lu = spla.splu(a_patch.tocsc())
        w = lu.solve(rhs)
        k = g_patch.shape[1]
        if k == 0:
            return w
        y = lu.solve(g_patch.toarray())
        t = np.eye(k) + g_patch.T @ y
        t = 0.5 * (t + t.T)
        ct = scipy.linalg.cho_factor(t)
        return w - y @ scipy.linalg.cho_solve(ct, g_patch.T @ w)
    diag = a_patch.diagonal() + np.asarray(g_patch.multiply(g_patch).sum(axis=1)).ravel()
    inv_diag = 1.0 / diag

    def apply_op(v: np.ndarray) -> np.ndarray:
        return a_patch @ v + g_patch @ (g_patch.T @ v)

    out = np.empty_like(rhs)
    for col in range(rhs.shape[1]):
        res = kernels.cg_solve(
            apply_op,
            rhs[:, col],
            rtol=tol.cg_rel,
            maxit=tol.cg_maxit,
            apply_precond=lambda r: inv_diag * r,
        )
        out[:, col] = res.x
    return out


def _column_offsets(aux: AuxSpace) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(aux.nov)]).astype(np.int64)


def _basis_task(i: int) -> tuple[np.ndarray, np.ndarray]:
    net, aux, layers, tol, offsets, wphi_csr = parallel.get_context()
    part = aux.part
    patch = part.patch_nodes(i, layers)
    members = part.member_parts(i, layers)
    cols = np.concatenate([np.arange(offsets[p], offsets[p + 1]) for p in members])
    a_patch = net.operator()[patch, :][:, patch].tocsr()
    g_patch = sp.csc_matrix(wphi_csr[patch, :][:, cols])
    own = np.arange(offsets[i], offsets[i + 1])
    rhs = wphi_csr[patch, :][:, own].toarray()
    x = _patch_solve(a_patch, g_patch, rhs, tol)
    return patch, x


def build_basis(
    net: SpatialNetwork,
    aux: AuxSpace,
    layers: int,
    *,
    tol: Tolerances = DEFAULT_TOL,
    workers: int = 1,
) -> CemBasis:
    """Localized basis on ``layers``-fold oversampled patches, all subgraphs."""
    if layers < 0:
        raise InvalidParameterError("oversampling layer count must be >= 0")
    offsets = _column_offsets(aux)
    wphi_csr = aux.weighted_phi.tocsr()
    results = parallel.parallel_map(
        _basis_task,
        range(aux.part.count),
        workers=workers,
        context=(net, aux, layers, tol, offsets, wphi_csr),
    )
    n = net.node_count
    indptr = [0]
    indices: list[np.ndarray] = []
    data: list[np.ndarray] = []
    for i, (patch, x) in enumerate(results):
        for j in range(x.shape[1]):
            indices.append(patch)
            data.append(x[:, j])
            indptr.append(indptr[-1] + patch.shape[0])
    psi = sp.csc_matrix(
        (
            np.concatenate(data) if data else np.empty(0),
            np.concatenate(indices) if indices else np.empty(0, dtype=np.int64),
            np.array(indptr, dtype=np.int64),
        ),
        shape=(n, len(aux.labels)),
    )
    return CemBasis(psi, list(aux.labels), layers)


def build_global_basis(
    net: SpatialNetwork,
    aux: AuxSpace,
    *,
    tol: Tolerances = DEFAULT_TOL,
) -> CemBasis:
    """Ideal (unlocalized) basis: every patch is the whole network.

    One factorization of the full operator serves all columns at once.
    """
    g = sp.csc_matrix(aux.weighted_phi)
    rhs = g.toarray()
    x = _patch_solve(net.operator().tocsr(), g, rhs, tol)
    psi = sp.csc_matrix(x)
    return CemBasis(psi, list(aux.labels), None)


def build_local_basis(
    net: SpatialNetwork,
    aux: AuxSpace,
    i: int,
    j: int,
    layers: int,
    *,
    tol: Tolerances = DEFAULT_TOL,
) -> np.ndarray:
    """One basis column as a dense global vector (zero off its patch)."""
    if not 0 <= i < aux.part.count:
        raise InvalidParameterError(f"subgraph id {i} outside [0, {aux.part.count})")
    if not 0 <= j < int(aux.nov[i]):
        raise InvalidParameterError(f"eigenindex {j} outside [0, {int(aux.nov[i])})")
    offsets = _column_offsets(aux)
    wphi_csr = aux.weighted_phi.tocsr()
    parallel._set_context((net, aux, layers, tol, offsets, wphi_csr))
    try:
        patch, x = _basis_task(i)
    finally:
        parallel._set_context(None)
    out = np.zeros(net.node_count)
    out[patch] = x[:, j]
    return out


@dataclass
class CoarseSystem:
    """Dense coarse Galerkin system with its Cholesky factor."""

    matrix: np.ndarray
    rhs: np.ndarray
    basis: CemBasis
    _factor: tuple[np.ndarray, bool] | None = None

    def factorize(self) -> tuple[np.ndarray, bool]:
        if self._factor is None:
            try:
                self._factor = scipy.linalg.cho_factor(self.matrix)
            except scipy.linalg.LinAlgError as exc:
                label = _offending_label(str(exc), self.basis.labels)
                raise CoarseRankError(
                    f"coarse matrix is numerically rank deficient near basis column "
                    f"{label}: {exc}",
                    label=label,
                ) from exc
        return self._factor


def _offending_label(message: str, labels: list[tuple[int, int]]) -> tuple[int, int] | None:
    # cho_factor reports "k-th leading minor of the array is not positive definite"
    import re

    m = re.search(r"(\d+)-th leading minor", message)
    if not m:
        return None
    k = int(m.group(1)) - 1
    if 0 <= k < len(labels):
        return labels[k]
    return None


def assemble_coarse(
    net: SpatialNetwork,
    basis: CemBasis,
    f: np.ndarray,
    *,
    tol: Tolerances = DEFAULT_TOL,
) -> CoarseSystem:
    """Galerkin restriction of the operator and load onto the basis.

    The assembled matrix is checked for relative symmetry (scaled by its
    largest entry) and symmetrized by averaging before factorization.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (net.node_count,):
        raise InvalidParameterError("load vector length does not match node count")
    psi = basis.psi
    op_psi = net.operator() @ psi
    coarse = (psi.T @ op_psi).toarray()
    # Roundoff scale: the largest absolutized Galerkin diagonal.  At high
    # contrast the assembled entries are tiny differences of huge products,
    # so symmetry can only be expected relative to the cancelled magnitude.
    abs_psi = sp.csc_matrix(abs(psi))
    abs_prod = abs(net.operator()).tocsr() @ abs_psi
    scale_vec = np.asarray(abs_psi.multiply(abs_prod).sum(axis=0)).ravel()
    scale = float(scale_vec.max()) if scale_vec.size else 0.0
    asym = float(np.max(np.abs(coarse - coarse.T))) if coarse.size else 0.0
    if scale > 0.0 and asym > tol.symmetry_rel * scale:
        raise NumericalError(
            f"coarse matrix asymmetry {asym:.3e} exceeds {tol.symmetry_rel:.1e} "
            f"relative to the absolutized Galerkin scale {scale:.3e}"
        )
    coarse = 0.5 * (coarse + coarse.T)
    rhs = psi.T @ f
    return CoarseSystem(coarse, rhs, basis)


@dataclass
class MultiscaleSolution:
    """Coarse solve output with its Galerkin residual check."""

    u: np.ndarray
    coefficients: np.ndarray
    galerkin_residual: float
    rhs_norm: float


def solve_multiscale(
    net: SpatialNetwork,
    coarse: CoarseSystem,
    f: np.ndarray,
    *,
    tol: Tolerances = DEFAULT_TOL,
) -> MultiscaleSolution:
    """Solve the coarse system and expand through the basis.

    Verifies the defining Galerkin identity: the fine-scale residual of
    the expanded solution must be orthogonal to every basis function.
    """
    f = np.asarray(f, dtype=float)
    factor = coarse.factorize()
    coeff = scipy.linalg.cho_solve(factor, coarse.rhs)
    u = coarse.basis.psi @ coeff
    residual = coarse.basis.psi.T @ (f - net.apply_operator(u))
    res_max = float(np.max(np.abs(residual))) if residual.size else 0.0
    rhs_norm = float(np.linalg.norm(coarse.rhs))
    if res_max > tol.galerkin_rel * max(rhs_norm, 1e-300):
        raise NumericalError(
            f"Galerkin residual {res_max:.3e} exceeds {tol.galerkin_rel:.1e} "
            f"* rhs norm {rhs_norm:.3e}"
        )
    return MultiscaleSolution(u, coeff, res_max, rhs_norm)


# ---------------------------------------------------------------------------
# Persistence: one sparse text file per basis column plus an index, and
# Matrix Market / text for the coarse system.


def save_basis(basis: CemBasis, directory: str | os.PathLike) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    psi = basis.psi
    for k, (i, j) in enumerate(basis.labels):
        name = f"psi_{i:05d}_{j:03d}.txt"
        start, end = psi.indptr[k], psi.indptr[k + 1]
        with open(directory / name, "w") as fh:
            for row, val in zip(psi.indices[start:end], psi.data[start:end]):
                fh.write(f"{int(row)} {kernels.format_float(float(val))}\n")
        entries.append({"subgraph": int(i), "index": int(j), "file": name})
    index = {
        "format_version": 1,
        "node_count": int(psi.shape[0]),
        "layers": basis.layers,
        "columns": entries,
    }
    with open(directory / "basis_index.json", "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def load_basis(directory: str | os.PathLike) -> CemBasis:
    directory = Path(directory)
    with open(directory / "basis_index.json") as fh:
        index = json.load(fh)
    n = int(index["node_count"])
    labels: list[tuple[int, int]] = []
    indptr = [0]
    rows: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    for entry in index["columns"]:
        labels.append((int(entry["subgraph"]), int(entry["index"])))
        raw = np.loadtxt(directory / entry["file"], ndmin=2)
        if raw.size == 0:
            raw = raw.reshape(0, 2)
        rows.append(raw[:, 0].astype(np.int64))
        vals.append(raw[:, 1])
        indptr.append(indptr[-1] + raw.shape[0])
    psi = sp.csc_matrix(
        (
            np.concatenate(vals) if vals else np.empty(0),
            np.concatenate(rows) if rows else np.empty(0, dtype=np.int64),
            np.array(indptr, dtype=np.int64),
        ),
        shape=(n, len(labels)),
    )
    return CemBasis(psi, labels, index.get("layers"))


def save_coarse(coarse: CoarseSystem, directory: str | os.PathLike) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    kernels.write_matrix_market(directory / "coarse_A.mtx", sp.coo_matrix(coarse.matrix))
    kernels.write_vector(directory / "coarse_b.txt", coarse.rhs)
    return directory
