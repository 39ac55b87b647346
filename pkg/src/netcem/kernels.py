"""Shared numerical kernels: solvers, eigenroutines, matrix I/O.

All tolerance defaults live in one place (``Tolerances``) so the rest of
the package never hard-codes numeric thresholds inline.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, InvalidParameterError, NumericalError


@dataclass(frozen=True)
class Tolerances:
    """Centralized numeric thresholds.

    cg_rel: relative residual target for conjugate gradients.
    eig_residual: relative eigenpair residual accepted after a local solve.
    symmetry_rel: relative asymmetry accepted before symmetrizing a Galerkin
        matrix (scaled by the largest entry magnitude; an absolute test is
        meaningless at contrast 1e6).
    galerkin_rel: relative coarse residual accepted after a multiscale solve.
    dense_eig_limit: largest local problem solved with dense LAPACK before
        switching to shift-invert Lanczos.
    direct_patch_limit: largest patch system factorized directly before
        falling back to preconditioned CG.
    """

    cg_rel: float = 1.0e-10
    cg_maxit: int = 20000
    eig_residual: float = 1.0e-9
    symmetry_rel: float = 1.0e-12
    galerkin_rel: float = 1.0e-8
    dense_eig_limit: int = 600
    direct_patch_limit: int = 20000


DEFAULT_TOL = Tolerances()


@dataclass
class CgResult:
    """Outcome of a conjugate-gradient run."""

    x: np.ndarray
    iterations: int
    relative_residual: float
    residual_history: list[float] = field(default_factory=list)


def cg_solve(
    apply_a: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    *,
    rtol: float = DEFAULT_TOL.cg_rel,
    maxit: int = DEFAULT_TOL.cg_maxit,
    apply_precond: Callable[[np.ndarray], np.ndarray] | None = None,
    x0: np.ndarray | None = None,
) -> CgResult:
    """Preconditioned conjugate gradients for an SPD operator.

    ``apply_a`` and ``apply_precond`` are matvec callables; the operator is
    never materialized.  Raises ConvergenceError with the trailing residual
    history if the budget is exhausted.
    """
    b = np.asarray(b, dtype=float)
    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        return CgResult(np.zeros_like(b), 0, 0.0, [0.0])
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - apply_a(x) if x.any() else b.copy()
    z = apply_precond(r) if apply_precond is not None else r
    p = z.copy()
    rz = float(r @ z)
    history = [float(np.linalg.norm(r)) / norm_b]
    for it in range(1, maxit + 1):
        ap = apply_a(p)
        pap = float(p @ ap)
        if pap <= 0.0:
            raise NumericalError(
                f"cg_solve: non-positive curvature p'Ap={pap:.3e} at iteration {it}; "
                "operator is not SPD"
            )
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        rel = float(np.linalg.norm(r)) / norm_b
        history.append(rel)
        if rel <= rtol:
            return CgResult(x, it, rel, history)
        z = apply_precond(r) if apply_precond is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"cg_solve: no convergence in {maxit} iterations "
        f"(relative residual {history[-1]:.3e}, target {rtol:.1e})",
        residuals=history[-10:],
    )


def dense_sym_geig(
    a: np.ndarray,
    d: np.ndarray,
    count: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Smallest eigenpairs of ``a v = lam * diag(d) v`` with ``d > 0``.

    Reduces to a standard symmetric problem through the diagonal square
    root, so only ``eigh`` is needed.  Returned vectors are d-orthonormal
    and sign-fixed (largest-magnitude entry positive; ties at equal
    magnitude break toward the lowest node index).
    """
    a = np.asarray(a, dtype=float)
    d = np.asarray(d, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise InvalidParameterError(f"dense_sym_geig: matrix must be square, got {a.shape}")
    if d.shape != (n,):
        raise InvalidParameterError(
            f"dense_sym_geig: diagonal length {d.shape} does not match matrix order {n}"
        )
    if not np.all(np.isfinite(d)) or np.any(d <= 0.0):
        raise InvalidParameterError("dense_sym_geig: diagonal weights must be finite and > 0")
    if count is None:
        count = n
    if not 1 <= count <= n:
        raise InvalidParameterError(f"dense_sym_geig: count {count} outside [1, {n}]")
    root = np.sqrt(d)
    b = a / root[:, None] / root[None, :]
    b = 0.5 * (b + b.T)
    w, u = scipy.linalg.eigh(b, subset_by_index=[0, count - 1])
    v = u / root[:, None]
    fix_eigvec_signs(v)
    return w, v


def fix_eigvec_signs(v: np.ndarray) -> np.ndarray:
    """Flip each column in place so its largest-|entry| is positive.

    Ties at identical magnitude resolve to the lowest row index, which
    keeps the convention reproducible across BLAS builds.
    """
    for k in range(v.shape[1]):
        col = v[:, k]
        idx = int(np.argmax(np.abs(col)))
        if col[idx] < 0.0:
            np.negative(col, out=col)
    return v


def sparse_smallest_geig(
    a: sp.spmatrix,
    d: np.ndarray,
    count: int,
    *,
    tol: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Smallest ``count`` eigenpairs of ``a v = lam * diag(d) v`` for large sparse a.

    Shift-invert Lanczos at sigma=0 with a tiny positive shift retry when
    the matrix is exactly singular.  Vectors come back d-orthonormal and
    sign-fixed, eigenvalues ascending.
    """
    n = a.shape[0]
    if count >= n - 1:
        return dense_sym_geig(a.toarray(), d, count=min(count, n))
    dmat = sp.diags(d).tocsc()
    a = a.tocsc()
    try:
        w, v = spla.eigsh(a, k=count, M=dmat, sigma=0.0, which="LM", tol=tol)
    except RuntimeError:
        # Singular at sigma=0 (pure Neumann block); nudge the shift.
        w, v = spla.eigsh(a, k=count, M=dmat, sigma=-1.0e-10, which="LM", tol=tol)
    order = np.argsort(w)
    w = w[order]
    v = v[:, order]
    fix_eigvec_signs(v)
    return w, v


def eig_residual_ok(
    a: sp.spmatrix | np.ndarray,
    d: np.ndarray,
    w: np.ndarray,
    v: np.ndarray,
    rel: float = DEFAULT_TOL.eig_residual,
) -> tuple[bool, float]:
    """Backward-error test per eigenpair.

    ``||a v - w d v|| <= rel * (||a||_inf + |w| max d) * ||v||`` — the
    denominator is the perturbation scale of the pencil, so the test stays
    meaningful for tiny eigenvalues where the residual itself is tiny.
    """
    av = a @ v
    dv = v * d[:, None]
    if sp.issparse(a):
        norm_a = float(np.max(np.abs(a).sum(axis=1))) if a.nnz else 0.0
    else:
        norm_a = float(np.max(np.sum(np.abs(a), axis=1))) if a.size else 0.0
    max_d = float(np.max(np.abs(d)))
    worst = 0.0
    for k in range(v.shape[1]):
        num = float(np.linalg.norm(av[:, k] - w[k] * dv[:, k]))
        den = (norm_a + abs(float(w[k])) * max_d) * float(np.linalg.norm(v[:, k]))
        worst = max(worst, num / max(den, 1e-300))
    return worst <= rel, worst


# ---------------------------------------------------------------------------
# Matrix and vector file formats.
#
# Sparse symmetric matrices go through Matrix Market; vectors are plain text,
# one value per line, printed with 17 significant digits so a write/read
# round trip is bit-exact for doubles.


def write_matrix_market(path: str | os.PathLike, mat: sp.spmatrix, *, symmetric: bool = True) -> None:
    mat = sp.coo_matrix(mat)
    scipy.io.mmwrite(str(path), mat, symmetry="symmetric" if symmetric else "general")


def read_matrix_market(path: str | os.PathLike) -> sp.csr_matrix:
    return sp.csr_matrix(scipy.io.mmread(str(path)))


def write_vector(path: str | os.PathLike, vec: np.ndarray) -> None:
    vec = np.asarray(vec)
    with open(path, "w") as fh:
        if vec.ndim == 1:
            for val in vec:
                fh.write(format_float(float(val)) + "\n")
        elif vec.ndim == 2:
            for row in vec:
                fh.write(" ".join(format_float(float(v)) for v in row) + "\n")
        else:
            raise InvalidParameterError("write_vector handles 1-d and 2-d arrays only")


def read_vector(path: str | os.PathLike) -> np.ndarray:
    data = np.loadtxt(path, dtype=float, ndmin=1)
    return data


def format_float(value: float) -> str:
    """Serialize a double with enough digits to round-trip exactly."""
    return format(value, ".17g")


def vector_digest(*arrays: np.ndarray) -> str:
    """SHA-256 over the exact little-endian float64 bytes of the arrays."""
    import hashlib

    h = hashlib.sha256()
    for arr in arrays:
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        h.update(a.tobytes())
    return h.hexdigest()


def stable_file_digest(paths: Sequence[str | os.PathLike]) -> str:
    """SHA-256 over the concatenated bytes of files, in the given order."""
    import hashlib

    h = hashlib.sha256()
    for path in paths:
        with open(path, "rb") as fh:
            while True:
                chunk = fh.read(1 << 20)
                if not chunk:
                    break
                h.update(chunk)
    return h.hexdigest()
