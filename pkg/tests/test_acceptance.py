"""Acceptance gate: one test per contract criterion, stated tolerances.

Each test prints a single summary line (visible with ``pytest -s`` and in
the captured output of failures); the authoritative pass/fail record is
the per-test verdict of ``pytest -v``.  Expensive problem setups are
shared through module-scoped fixtures.  Nothing here relaxes a tolerance
to fit the host: a criterion that cannot hold in this environment fails
with the measurement in its message.
"""

import os
import time
import warnings

import numpy as np
import pytest

from netcem import (
    Partition,
    assemble_coarse,
    build_aux_space,
    build_basis,
    build_global_basis,
    partition_grow,
    solve_multiscale,
)
from netcem.auxspace import internal_energy_matrix
from netcem.diagnostics import (
    build_pou,
    counting_threshold,
    decay_profile,
    error_report,
    reference_solve,
    run_bench,
    spectral_gap_count,
)
from netcem.problems import build_preset, gen_source

from .conftest import random_network
from . import oracles


def _report(criterion: str, verdict: str, detail: str) -> None:
    print(f"[{criterion}] {verdict}: {detail}")


# ---------------------------------------------------------------------------
# Shared expensive fixtures.


@pytest.fixture(scope="module")
def fem_xi4():
    """23k-element FEM problem at contrast 1e4: reduced net, load, reference."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        net, meta, mass = build_preset("fem-square-23k", contrast=1e4)
        f = gen_source(net, "sin")
        net_r, free = net.reduced()
        f_r = f[free]
        mass_r = mass[free, :][:, free].tocsr()
        u_ref = reference_solve(net_r, f_r)
        part = partition_grow(net_r, 100, seed=0)
    return {
        "net_r": net_r,
        "f_r": f_r,
        "mass_r": mass_r,
        "u_ref": u_ref,
        "part": part,
    }


@pytest.fixture(scope="module")
def bench_report():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run_bench("bench-500", 500, 3, 2, (1, 2, 8))


def _fem_errors(ctx, nov, layers):
    aux = build_aux_space(ctx["net_r"], ctx["part"], nov)
    basis = build_basis(ctx["net_r"], aux, layers)
    coarse = assemble_coarse(ctx["net_r"], basis, ctx["f_r"])
    sol = solve_multiscale(ctx["net_r"], coarse, ctx["f_r"])
    rep = error_report(ctx["net_r"], ctx["u_ref"], sol.u, mass_matrix=ctx["mass_r"])
    return rep.e_l2_rel, rep.e_a_rel


# ---------------------------------------------------------------------------
# Criterion 1: the sparse pipeline reproduces a from-scratch dense
# implementation on at least 20 random small networks.


def test_criterion_01_oracle_equivalence():
    cases = 0
    worst = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for k in range(24):
            g = np.random.default_rng(1000 + k)
            net = random_network(g, size=int(g.integers(8, 41)))
            parts = int(g.integers(2, min(6, max(3, net.node_count // 4))))
            part = partition_grow(net, parts, seed=k)
            nov = 1 + (k % 2)
            layers = k % 3
            f = g.standard_normal(net.node_count)
            aux = build_aux_space(net, part, nov)
            basis = build_basis(net, aux, layers)
            coarse = assemble_coarse(net, basis, f)
            sol = solve_multiscale(net, coarse, f)
            u_ref, _ = oracles.oracle_multiscale(net, part.assignment, nov, layers, f)
            rel = net.norm_a(sol.u - u_ref) / max(net.norm_a(u_ref), 1e-30)
            worst = max(worst, rel)
            cases += 1
            assert rel <= 1e-8, (
                f"case {k} (n={net.node_count}, subgraphs={parts}, Nov={nov}, "
                f"l={layers}): relative energy mismatch {rel:.3e} > 1e-8"
            )
    assert cases >= 20
    _report("criterion 1", "PASS", f"{cases} random networks, worst relative gap {worst:.3e} <= 1e-8")


# ---------------------------------------------------------------------------
# Criterion 2: with one subgraph spanning everything, every eigenvector
# kept, and no localization, the multiscale solution is the fine solution.


def test_criterion_02_full_space_limit():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        net, _, _ = build_preset("lattice-2ch-100", contrast=1e4)
        f = gen_source(net, "normal", seed=3)
        part = Partition(net, np.zeros(net.node_count, dtype=np.int64))
        aux = build_aux_space(net, part, net.node_count)
        basis = build_basis(net, aux, 0)
        coarse = assemble_coarse(net, basis, f)
        sol = solve_multiscale(net, coarse, f)
        u_ref = reference_solve(net, f)
    rel = net.norm_a(sol.u - u_ref) / net.norm_a(u_ref)
    assert rel <= 1e-8, f"full-space limit error {rel:.3e} > 1e-8"
    _report("criterion 2", "PASS", f"degenerate-limit relative energy error {rel:.3e} <= 1e-8")


# ---------------------------------------------------------------------------
# Criterion 3: the number of eigenvalues under the counting threshold
# equals the channel count; channel eigenvalues scale like 1/contrast
# (within 20%), and the first non-channel eigenvalue is contrast-robust
# (under 10% variation).


def test_criterion_03_eigenvalue_counting():
    contrasts = (1e3, 1e4, 1e5, 1e6)
    lines = []
    for channels, preset in ((1, "lattice-1ch-2500"), (2, "lattice-2ch-2500"), (3, "lattice-3ch-2500")):
        scaled_channel = []
        robust_next = []
        for xi in contrasts:
            net, _, _ = build_preset(preset, contrast=xi)
            thr = counting_threshold(net, xi)
            rep = spectral_gap_count(net, thr)
            assert rep.count == channels, (
                f"{preset} at contrast {xi:.0e}: counted {rep.count} eigenvalues "
                f"below {thr:.3e}, expected {channels}"
            )
            scaled_channel.append(rep.eigenvalues[channels - 1] * xi)
            robust_next.append(rep.eigenvalues[channels])
        spread = max(scaled_channel) / min(scaled_channel)
        assert spread <= 1.2, (
            f"{preset}: channel eigenvalue * contrast varies by factor {spread:.3f} > 1.2, "
            "breaking the 1/contrast law"
        )
        drift = max(robust_next) / min(robust_next)
        assert drift <= 1.1, (
            f"{preset}: first non-channel eigenvalue varies by factor {drift:.3f} > 1.1 "
            "across contrasts"
        )
        lines.append(f"{channels}ch spread {spread:.3f} drift {drift:.3f}")
    _report(
        "criterion 3",
        "PASS",
        f"counts exact for 1/2/3 channels over contrast 1e3..1e6; {'; '.join(lines)}",
    )


# ---------------------------------------------------------------------------
# Criterion 4: ideal basis functions decay exponentially in patch layers.


def test_criterion_04_exponential_decay():
    from netcem.cli import _sample_columns

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        net, _, _ = build_preset("lattice-2ch-2500", contrast=1e4)
        part = partition_grow(net, 25, seed=0)
        aux = build_aux_space(net, part, 3)
        basis = build_global_basis(net, aux)
        columns = _sample_columns(aux, 5)
        rep = decay_profile(net, aux, basis, columns, layers=[1, 2, 3, 4])
    assert rep.worst_factor <= 0.8, (
        f"slowest per-layer decay factor {rep.worst_factor:.3f} > 0.8"
    )
    assert rep.worst_fit >= 0.9, (
        f"poorest log-linear fit R^2 {rep.worst_fit:.3f} < 0.9"
    )
    _report(
        "criterion 4",
        "PASS",
        f"5 columns, layers 1..4: decay factor <= {rep.worst_factor:.2e}, "
        f"fit R^2 >= {rep.worst_fit:.3f}",
    )


# ---------------------------------------------------------------------------
# Criterion 5: FEM bridge accuracy at 23k elements, 100 subgraphs, Nov=4.


def test_criterion_05_fem_accuracy(fem_xi4):
    e_l2 = {}
    e_a = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for layers in (2, 3, 4, 5):
            e_l2[layers], e_a[layers] = _fem_errors(fem_xi4, 4, layers)
    for a, b in zip((2, 3, 4), (3, 4, 5)):
        assert e_a[b] <= e_a[a] * 1.02, (
            f"energy error grew from l={a} ({e_a[a]:.3e}) to l={b} ({e_a[b]:.3e})"
        )
    assert e_l2[4] <= 0.05, f"relative L2 error at l=4 is {e_l2[4]:.3e} > 5%"
    assert e_a[4] <= 0.25, f"relative energy error at l=4 is {e_a[4]:.3e} > 25%"
    _report(
        "criterion 5",
        "PASS",
        "errors over l=2..5: "
        + ", ".join(f"l={l}: L2 {e_l2[l]:.2e} / energy {e_a[l]:.2e}" for l in (2, 3, 4, 5))
        + f"; l=4 meets L2<=5% and energy<=25%",
    )


# ---------------------------------------------------------------------------
# Criterion 6: accuracy is contrast-robust from 1e5 to 1e6.


def test_criterion_06_contrast_robustness():
    results = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for xi in (1e5, 1e6):
            net, _, mass = build_preset("fem-square-23k", contrast=xi)
            f = gen_source(net, "sin")
            net_r, free = net.reduced()
            f_r = f[free]
            mass_r = mass[free, :][:, free].tocsr()
            u_ref = reference_solve(net_r, f_r)
            part = partition_grow(net_r, 100, seed=0)
            ctx = {"net_r": net_r, "f_r": f_r, "mass_r": mass_r, "u_ref": u_ref, "part": part}
            results[xi] = _fem_errors(ctx, 4, 4)
    l2_growth = results[1e6][0] / results[1e5][0]
    a_growth = results[1e6][1] / results[1e5][1]
    assert l2_growth <= 1.10, (
        f"L2 error grew by {100 * (l2_growth - 1):.1f}% from contrast 1e5 to 1e6"
    )
    assert a_growth <= 1.10, (
        f"energy error grew by {100 * (a_growth - 1):.1f}% from contrast 1e5 to 1e6"
    )
    _report(
        "criterion 6",
        "PASS",
        f"contrast 1e5->1e6: L2 {results[1e5][0]:.2e}->{results[1e6][0]:.2e} "
        f"({100 * (l2_growth - 1):+.1f}%), energy {results[1e5][1]:.2e}->{results[1e6][1]:.2e} "
        f"({100 * (a_growth - 1):+.1f}%), both within 10%",
    )


# ---------------------------------------------------------------------------
# Criterion 7: enriching the auxiliary space does not hurt.


def test_criterion_07_spectral_enrichment(fem_xi4):
    errors = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for nov in (3, 4, 5, 6):
            errors[nov] = _fem_errors(fem_xi4, nov, 4)[1]
    for a, b in zip((3, 4, 5), (4, 5, 6)):
        assert errors[b] <= errors[a] * 1.02, (
            f"energy error grew from Nov={a} ({errors[a]:.3e}) to Nov={b} ({errors[b]:.3e})"
        )
    _report(
        "criterion 7",
        "PASS",
        "energy error over Nov=3..6: "
        + ", ".join(f"{errors[n]:.2e}" for n in (3, 4, 5, 6))
        + " (non-increasing within 2%)",
    )


# ---------------------------------------------------------------------------
# Criterion 8: structural invariants at solver tolerances.


def test_criterion_08_invariants():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        net, _, _ = build_preset("lattice-2ch-100", contrast=1e4)
        f = gen_source(net, "normal", seed=5)
        part = partition_grow(net, 10, seed=0)
        aux = build_aux_space(net, part, 2)
        basis = build_basis(net, aux, 2)
        coarse = assemble_coarse(net, basis, f)
        sol = solve_multiscale(net, coarse, f)
        glob = build_global_basis(net, aux)

    # (a) Partition of unity: exact row sums, nonnegative, local support.
    pou = build_pou(net, part)
    sums = np.asarray(pou.sum(axis=0)).ravel()
    assert np.max(np.abs(sums - 1.0)) <= 1e-14, "partition of unity does not sum to one"
    assert pou.toarray().min() >= 0.0

    # (b) Projection algebra: idempotency and s-self-adjointness at 1e-10.
    g = np.random.default_rng(8)
    worst_idem, worst_sym = 0.0, 0.0
    for _ in range(20):
        v = g.standard_normal(net.node_count)
        w = g.standard_normal(net.node_count)
        pv = aux.project(v)
        worst_idem = max(
            worst_idem,
            np.linalg.norm(aux.project(pv) - pv) / max(np.linalg.norm(pv), 1e-30),
        )
        num = abs(aux.s_inner(pv, w) - aux.s_inner(v, aux.project(w)))
        den = max(aux.s_norm(v) * aux.s_norm(w), 1e-30)
        worst_sym = max(worst_sym, num / den)
    assert worst_idem <= 1e-10, f"projection idempotency defect {worst_idem:.3e} > 1e-10"
    assert worst_sym <= 1e-10, f"projection s-symmetry defect {worst_sym:.3e} > 1e-10"

    # (c) Spectral tail estimate on 100 draws: the unresolved part is
    # controlled by the localized energies over the spectral gap.
    gap = aux.spectral_gap
    internal = [
        internal_energy_matrix(net, part.nodes_of(i)) for i in range(part.count)
    ]
    for _ in range(100):
        u = g.standard_normal(net.node_count)
        tail = u - aux.project(u)
        lhs = aux.s_norm(tail) ** 2
        rhs = sum(
            float(u[part.nodes_of(i)] @ (internal[i] @ u[part.nodes_of(i)]))
            for i in range(part.count)
        )
        assert lhs <= rhs / gap * (1 + 1e-8) + 1e-12, (
            f"tail energy {lhs:.6e} exceeds localized bound {rhs / gap:.6e}"
        )

    # (d) Galerkin residual of the coarse solve.
    resid = basis.psi.T @ (f - net.apply_operator(sol.u))
    rel_resid = np.max(np.abs(resid)) / max(np.linalg.norm(coarse.rhs), 1e-30)
    assert rel_resid <= 1e-8, f"Galerkin residual {rel_resid:.3e} > 1e-8"

    # (e) Variational optimality: each basis column satisfies its
    # defining equation on its patch to 1e-9 (energy-orthogonality to
    # the projection kernel).
    op = net.operator()
    wphi = aux.weighted_phi
    worst_opt = 0.0
    for col, (i, j) in enumerate(aux.labels):
        for psi_col, patch in (
            (basis.column(i, j), part.patch_nodes(i, 2)),
            (glob.column(i, j), np.arange(net.node_count)),
        ):
            g_col = wphi[:, col].toarray().ravel()
            r = op @ psi_col + wphi @ (wphi.T @ psi_col) - g_col
            scale = max(np.linalg.norm(op @ psi_col), np.linalg.norm(g_col))
            worst_opt = max(worst_opt, np.linalg.norm(r[patch]) / max(scale, 1e-30))
    assert worst_opt <= 1e-9, f"basis optimality residual {worst_opt:.3e} > 1e-9"

    # (f) Energy bound for the unlocalized method through the gap and
    # the dual norm of the load.
    coarse_g = assemble_coarse(net, glob, f)
    sol_g = solve_multiscale(net, coarse_g, f)
    u_ref = reference_solve(net, f)
    lhs = net.norm_a(u_ref - sol_g.u)
    bound = aux.dual_s_norm(f) / np.sqrt(gap)
    assert lhs <= bound + 1e-8, (
        f"global-basis energy error {lhs:.6e} exceeds dual-norm bound {bound:.6e}"
    )

    _report(
        "criterion 8",
        "PASS",
        f"unity partition exact; projection defects <= {max(worst_idem, worst_sym):.1e}; "
        f"100 tail draws bounded; Galerkin {rel_resid:.1e}; optimality {worst_opt:.1e}; "
        f"energy bound {lhs:.3e} <= {bound:.3e}",
    )


# ---------------------------------------------------------------------------
# Criterion 9: parallel runs are bitwise deterministic, and basis
# construction reaches 2x speedup at 8 workers.


def test_criterion_09_determinism(bench_report):
    hashes = [c.solution_hash for c in bench_report.cells]
    assert bench_report.deterministic, (
        "solution hashes differ across pool sizes 1/2/8: " + ", ".join(hashes)
    )
    _report(
        "criterion 9 (determinism)",
        "PASS",
        f"identical solution hash {hashes[0][:16]}... across pool sizes 1/2/8",
    )


def test_criterion_09_speedup(bench_report):
    s2 = bench_report.speedup_cem(2)
    s8 = bench_report.speedup_cem(8)
    cpus = os.cpu_count()
    try:
        usable = len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover
        usable = cpus
    detail = (
        f"basis-construction speedup: {s2:.2f}x at 2 workers, {s8:.2f}x at 8 workers "
        f"(host reports {cpus} CPUs, {usable} usable)"
    )
    assert s8 >= 2.0, (
        f"{detail}; the 2x-at-8-workers contract cannot hold on a single-core host, "
        "where process pools only add overhead - see the scaling entry in the "
        "decisions ledger for the measured evidence"
    )
    _report("criterion 9 (speedup)", "PASS", detail)
