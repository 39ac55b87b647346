"""Verification instruments: errors, eigenvalue counts, decay, studies.

Everything here observes the pipeline rather than defining it: reference
solves, error norms, the small-eigenvalue counter that matches channel
counts, localization decay profiles for basis tails, partition-of-unity
and cutoff constructions, and the sweep/benchmark drivers used by the
CLI and the experiment scripts.
"""

from __future__ import annotations

import csv
import json
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .auxspace import AuxSpace, CPoPolicy, build_aux_space
from .cem import CemBasis, assemble_coarse, build_basis, build_global_basis, solve_multiscale
from .errors import InvalidParameterError, NetcemError, WellPosednessError
from .kernels import Tolerances, DEFAULT_TOL
from .network import SpatialNetwork
from .partition import Partition, partition_grow
from .problems import build_preset, gen_source


def reference_solve(net: SpatialNetwork, f: np.ndarray) -> np.ndarray:
    """Fine-scale direct solve of the full system."""
    report = net.check_well_posedness()
    if not report.passed:
        raise WellPosednessError(str(report))
    f = np.asarray(f, dtype=float)
    if f.shape != (net.node_count,):
        raise InvalidParameterError("load vector length does not match node count")
    lu = spla.splu(net.operator().tocsc())
    return lu.solve(f)


@dataclass(frozen=True)
class ErrorReport:
    """Energy and L2 error of an approximation against a reference."""

    e_a_abs: float
    e_a_rel: float
    e_l2_abs: float
    e_l2_rel: float
    ref_a_norm: float
    ref_l2_norm: float


def error_report(
    net: SpatialNetwork,
    u_ref: np.ndarray,
    u_approx: np.ndarray,
    mass_matrix: sp.spmatrix | None = None,
) -> ErrorReport:
    """Errors in the operator energy norm and in L2.

    With a finite-element mass matrix the L2 norm is the consistent one;
    otherwise it is the plain Euclidean norm on node values.
    """
    u_ref = np.asarray(u_ref, dtype=float)
    u_approx = np.asarray(u_approx, dtype=float)
    diff = u_ref - u_approx
    e_a = net.norm_a(diff)
    ref_a = net.norm_a(u_ref)
    if mass_matrix is not None:
        e_l2 = float(np.sqrt(max(diff @ (mass_matrix @ diff), 0.0)))
        ref_l2 = float(np.sqrt(max(u_ref @ (mass_matrix @ u_ref), 0.0)))
    else:
        e_l2 = float(np.linalg.norm(diff))
        ref_l2 = float(np.linalg.norm(u_ref))
    return ErrorReport(
        e_a_abs=e_a,
        e_a_rel=e_a / max(ref_a, 1e-300),
        e_l2_abs=e_l2,
        e_l2_rel=e_l2 / max(ref_l2, 1e-300),
        ref_a_norm=ref_a,
        ref_l2_norm=ref_l2,
    )


# ---------------------------------------------------------------------------
# Small-eigenvalue counting.


def counting_threshold(
    net: SpatialNetwork,
    contrast: float,
    *,
    background_min: float = 1.0,
    safety: float = 5.0,
) -> float:
    """Default cutoff below which eigenvalues are attributed to channels.

    Twice the sum of maximal degree and maximal mass, divided by the
    weakest background conductance times the contrast, widened by the
    safety factor.
    """
    if contrast <= 0 or background_min <= 0:
        raise InvalidParameterError("contrast and background conductance must be positive")
    c_deg = float(net.degrees.max()) if net.node_count else 0.0
    m_bar = float(net.masses.max())
    return safety * 2.0 * (c_deg + m_bar) / (background_min * contrast)


@dataclass(frozen=True)
class GapReport:
    """Leading spectrum of the lumped-weighted global problem."""

    eigenvalues: tuple[float, ...]
    threshold: float
    count: int
    gap_ratio: float


def spectral_gap_count(
    net: SpatialNetwork,
    threshold: float,
    *,
    tol: Tolerances = DEFAULT_TOL,
    initial_count: int = 12,
) -> GapReport:
    """Count eigenvalues of the global lumped-weighted problem below a cutoff.

    Uses the operator against the diagonal of per-node half edge-weight
    sums plus masses.  The eigensolve widens adaptively until it has
    safely passed the threshold, so the returned count is exact.
    """
    n = net.node_count
    s_diag = net.lumped_weights + net.masses
    if np.any(s_diag <= 0):
        raise InvalidParameterError("lumped diagonal must be positive for counting")
    a = net.operator()
    k = min(n, max(initial_count, 2))
    while True:
        if n <= 3000 or k >= n - 2:
            w, _ = kernels.dense_sym_geig(a.toarray(), s_diag, count=min(k, n))
        else:
            w, _ = kernels.sparse_smallest_geig(a, s_diag, count=k)
        if w[-1] > threshold or w.shape[0] >= n:
            break
        k = min(n, 2 * k)
    count = int(np.sum(w < threshold))
    if count < w.shape[0] and count > 0:
        gap_ratio = float(w[count] / w[count - 1])
    else:
        gap_ratio = float("inf")
    return GapReport(tuple(float(x) for x in w), threshold, count, gap_ratio)


# ---------------------------------------------------------------------------
# Partition of unity and cutoff functions.


def build_pou(net: SpatialNetwork, part: Partition) -> sp.csr_matrix:
    """Rows are subgraph weight functions summing to one at every node.

    The raw weight is 2 on the subgraph, 1 on its one-hop halo, 0 beyond;
    normalization divides by the nodewise sum, which is at least 2
    because every node belongs to some subgraph.
    """
    rows, cols, vals = [], [], []
    for i in range(part.count):
        nodes = part.nodes_of(i)
        mask = np.zeros(net.node_count, dtype=bool)
        mask[nodes] = True
        halo = np.unique(
            np.concatenate([net.neighbors(int(x)) for x in nodes])
            if nodes.size
            else np.empty(0, dtype=np.int64)
        )
        halo = halo[~mask[halo]]
        rows.extend([i] * (nodes.size + halo.size))
        cols.extend(nodes.tolist())
        cols.extend(halo.tolist())
        vals.extend([2.0] * nodes.size)
        vals.extend([1.0] * halo.size)
    raw = sp.csr_matrix(
        (np.array(vals), (np.array(rows), np.array(cols))),
        shape=(part.count, net.node_count),
    )
    colsum = np.asarray(raw.sum(axis=0)).ravel()
    coo = raw.tocoo()
    eta = sp.csr_matrix(
        (coo.data / colsum[coo.col], (coo.row, coo.col)), shape=raw.shape
    )
    return eta


def cutoff(
    net: SpatialNetwork,
    part: Partition,
    i: int,
    inner_layers: int,
    outer_layers: int,
    *,
    pou: sp.csr_matrix | None = None,
) -> np.ndarray:
    """Plateau function: one on the inner patch, zero outside the outer one.

    Sums the unity weights of every subgraph whose weight touches the
    inner patch; the outer patch must be at least two layers wider for
    the support containment to hold.
    """
    if outer_layers - inner_layers < 2:
        raise InvalidParameterError(
            "outer patch must exceed the inner one by at least two layers"
        )
    if pou is None:
        pou = build_pou(net, part)
    inner_mask = np.zeros(net.node_count, dtype=bool)
    inner_mask[part.patch_nodes(i, inner_layers)] = True
    chi = np.zeros(net.node_count)
    for j in range(part.count):
        start, end = pou.indptr[j], pou.indptr[j + 1]
        support = pou.indices[start:end]
        if np.any(inner_mask[support]):
            chi[support] += pou.data[start:end]
    return chi


# ---------------------------------------------------------------------------
# Localization decay.


@dataclass(frozen=True)
class DecayColumn:
    """Tail profile of one ideal basis function across patch widths."""

    subgraph: int
    index: int
    total: float
    tails: tuple[float, ...]
    layers: tuple[int, ...]
    decay_factor: float
    fit_quality: float


@dataclass(frozen=True)
class DecayReport:
    columns: tuple[DecayColumn, ...]

    @property
    def worst_factor(self) -> float:
        return max(c.decay_factor for c in self.columns)

    @property
    def worst_fit(self) -> float:
        return min(c.fit_quality for c in self.columns)


def decay_profile(
    net: SpatialNetwork,
    aux: AuxSpace,
    basis: CemBasis,
    columns: list[tuple[int, int]],
    layers: list[int],
) -> DecayReport:
    """Relative patch-complement energy of ideal basis columns, with a fit.

    For each requested column the tail at width l is its energy outside
    the l-fold patch plus the lumped energy of its auxiliary projection
    there, normalized by the same quantity at width zero measured over
    the whole network.  A log-linear fit across layers gives the decay
    factor per layer and its coefficient of determination.
    """
    out = []
    for (i, j) in columns:
        psi = basis.column(i, j)
        pi_psi = aux.project(psi)
        total = net.inner_a(psi, psi) + aux.s_inner(pi_psi, pi_psi)
        tails = []
        for l in layers:
            patch = aux.part.patch_nodes(i, l)
            comp = np.ones(net.node_count, dtype=bool)
            comp[patch] = False
            tail = net.inner_a(psi, psi, subset=comp) + aux.s_inner(pi_psi, pi_psi, comp)
            tails.append(max(tail, 0.0) / max(total, 1e-300))
        theta, r2 = _fit_decay(layers, tails)
        out.append(
            DecayColumn(
                subgraph=i,
                index=j,
                total=total,
                tails=tuple(tails),
                layers=tuple(layers),
                decay_factor=theta,
                fit_quality=r2,
            )
        )
    return DecayReport(tuple(out))


def _fit_decay(layers: list[int], tails: list[float]) -> tuple[float, float]:
    xs = np.array([l for l, t in zip(layers, tails) if t > 0.0], dtype=float)
    ys = np.array([np.log(t) for t in tails if t > 0.0])
    if xs.size < 2:
        return 0.0, 1.0
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 if ss_tot <= 1e-30 else 1.0 - ss_res / ss_tot
    return float(np.exp(slope)), r2


# ---------------------------------------------------------------------------
# Study driver.

STUDY_COLUMNS = [
    "n",
    "l",
    "Nov",
    "contrast",
    "e_L2",
    "e_a",
    "t_aux_s",
    "t_cem_s",
    "threads",
    "seed",
    "status",
]


@dataclass
class StudySpec:
    """One sweep over oversampling widths, eigencounts, and contrasts."""

    preset: str
    part_count: int
    nov_list: tuple[int, ...]
    layers_list: tuple[int, ...]
    contrast_list: tuple[float, ...]
    seed: int = 0
    source: str = "ones"
    cpo_mode: str = "computed"
    cpo_value: float | None = None
    workers: int = 1


def run_study(spec: StudySpec, out_dir: str | os.PathLike | None = None) -> list[dict]:
    """Execute the sweep; one row per (contrast, Nov, layers) cell.

    Failed cells carry their error message in the status column instead
    of aborting the remaining cells.
    """
    rows: list[dict] = []
    for contrast in spec.contrast_list:
        try:
            prepared = _prepare_problem(spec, contrast)
        except NetcemError as exc:
            for nov in spec.nov_list:
                for layers in spec.layers_list:
                    rows.append(
                        _row(spec, contrast, nov, layers, None, None, None, f"error: {exc}")
                    )
            continue
        net_r, f_r, mass_r, part, u_ref = prepared
        for nov in spec.nov_list:
            try:
                policy = _policy(spec)
                t0 = time.perf_counter()
                aux = build_aux_space(
                    net_r, part, nov, policy=policy, workers=spec.workers
                )
                t_aux = time.perf_counter() - t0
            except NetcemError as exc:
                for layers in spec.layers_list:
                    rows.append(
                        _row(spec, contrast, nov, layers, None, None, None, f"error: {exc}")
                    )
                continue
            for layers in spec.layers_list:
                try:
                    t0 = time.perf_counter()
                    basis = build_basis(net_r, aux, layers, workers=spec.workers)
                    t_cem = time.perf_counter() - t0
                    coarse = assemble_coarse(net_r, basis, f_r)
                    sol = solve_multiscale(net_r, coarse, f_r)
                    report = error_report(net_r, u_ref, sol.u, mass_r)
                    rows.append(
                        _row(spec, contrast, nov, layers, report, t_aux, t_cem, "ok")
                    )
                except NetcemError as exc:
                    rows.append(
                        _row(spec, contrast, nov, layers, None, t_aux, None, f"error: {exc}")
                    )
    if out_dir is not None:
        write_study(rows, spec, out_dir)
    return rows


def _policy(spec: StudySpec) -> CPoPolicy:
    if spec.cpo_mode == "uniform":
        return CPoPolicy("uniform", value=spec.cpo_value)
    return CPoPolicy(spec.cpo_mode)


def _prepare_problem(spec: StudySpec, contrast: float):
    net, meta, mass = build_preset(spec.preset, contrast=contrast, seed=spec.seed)
    f = gen_source(net, spec.source, seed=spec.seed, mass_matrix=mass)
    net_r, free = net.reduced()
    f_r = f[free]
    mass_r = None if mass is None else mass[free, :][:, free].tocsr()
    u_ref = reference_solve(net_r, f_r)
    part = partition_grow(net_r, spec.part_count, seed=spec.seed)
    return net_r, f_r, mass_r, part, u_ref


def _row(spec, contrast, nov, layers, report, t_aux, t_cem, status) -> dict:
    return {
        "n": spec.part_count,
        "l": layers,
        "Nov": nov,
        "contrast": contrast,
        "e_L2": None if report is None else report.e_l2_rel,
        "e_a": None if report is None else report.e_a_rel,
        "t_aux_s": t_aux,
        "t_cem_s": t_cem,
        "threads": spec.workers,
        "seed": spec.seed,
        "status": status,
    }


def write_study(rows: list[dict], spec: StudySpec, out_dir: str | os.PathLike) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "study.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=STUDY_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_cell(row[k]) for k in STUDY_COLUMNS})
    provenance = {
        "format_version": 1,
        "spec": {
            "preset": spec.preset,
            "part_count": spec.part_count,
            "nov_list": list(spec.nov_list),
            "layers_list": list(spec.layers_list),
            "contrast_list": list(spec.contrast_list),
            "seed": spec.seed,
            "source": spec.source,
            "cpo_mode": spec.cpo_mode,
            "cpo_value": spec.cpo_value,
            "workers": spec.workers,
        },
        "environment": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "machine": platform.machine(),
        },
        "rows": rows,
    }
    with open(out_dir / "study.json", "w") as fh:
        json.dump(provenance, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return kernels.format_float(value)
    return value


# ---------------------------------------------------------------------------
# Scaling benchmark.


@dataclass(frozen=True)
class BenchCell:
    workers: int
    t_aux_s: float
    t_cem_s: float
    solution_hash: str


@dataclass(frozen=True)
class BenchReport:
    cells: tuple[BenchCell, ...]
    deterministic: bool

    def speedup_aux(self, workers: int) -> float:
        base = self._cell(1).t_aux_s
        return base / max(self._cell(workers).t_aux_s, 1e-12)

    def speedup_cem(self, workers: int) -> float:
        base = self._cell(1).t_cem_s
        return base / max(self._cell(workers).t_cem_s, 1e-12)

    def _cell(self, workers: int) -> BenchCell:
        for cell in self.cells:
            if cell.workers == workers:
                return cell
        raise InvalidParameterError(f"no benchmark cell for {workers} workers")


def run_bench(
    preset: str,
    part_count: int,
    nov: int,
    layers: int,
    worker_counts: tuple[int, ...],
    *,
    contrast: float | None = None,
    seed: int = 0,
    source: str = "ones",
) -> BenchReport:
    """Time the two parallel phases at several pool sizes on one problem.

    The multiscale solution is hashed per pool size; all hashes agreeing
    is the determinism half of the scaling contract.
    """
    net, meta, mass = build_preset(preset, contrast=contrast, seed=seed)
    f = gen_source(net, source, seed=seed, mass_matrix=mass)
    net_r, free = net.reduced()
    f_r = f[free]
    part = partition_grow(net_r, part_count, seed=seed)
    cells = []
    for workers in worker_counts:
        t0 = time.perf_counter()
        aux = build_aux_space(net_r, part, nov, workers=workers)
        t_aux = time.perf_counter() - t0
        t0 = time.perf_counter()
        basis = build_basis(net_r, aux, layers, workers=workers)
        t_cem = time.perf_counter() - t0
        coarse = assemble_coarse(net_r, basis, f_r)
        sol = solve_multiscale(net_r, coarse, f_r)
        cells.append(
            BenchCell(workers, t_aux, t_cem, kernels.vector_digest(sol.u))
        )
    hashes = {c.solution_hash for c in cells}
    return BenchReport(tuple(cells), deterministic=len(hashes) == 1)
