"""Command-line interface.

Subcommands mirror the pipeline stages: generate a problem, partition
it, build the auxiliary space, build the basis, solve end to end, then
analyze, benchmark, or sweep.  Exit codes: 0 success, 2 configuration
or usage error, 3 numerical failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels, parallel
from .auxspace import AuxSpace, CPoPolicy, build_aux_space
from .cem import (
    assemble_coarse,
    build_basis,
    build_global_basis,
    save_basis,
    save_coarse,
    solve_multiscale,
)
from .config import RunConfig, resolve_config
from .diagnostics import (
    counting_threshold,
    decay_profile,
    error_report,
    reference_solve,
    run_bench,
    run_study,
    spectral_gap_count,
    StudySpec,
)
from .errors import (
    BundleFormatError,
    ConfigError,
    ConvergenceError,
    InvalidParameterError,
    NetcemError,
    NetworkValidationError,
    NumericalError,
    PartitionError,
    WellPosednessError,
)
from .network import SpatialNetwork, load_bundle, load_extra_matrix, save_bundle
from .partition import (
    Partition,
    dump_oversampling,
    load_partition,
    partition_grow,
    regularity,
    save_partition,
)
from .problems import PRESETS, build_preset, gen_source

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, InvalidParameterError, PartitionError, NetworkValidationError) as exc:
        print(f"error (configuration): {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ConvergenceError, WellPosednessError) as exc:
        print(f"error (numerical): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BundleFormatError as exc:
        print(f"error (i/o): {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error (i/o): {exc}", file=sys.stderr)
        return EXIT_IO
    except NetcemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netcem",
        description="Multiscale solver for high-contrast spatial networks",
    )
    parser.add_argument("--version", action="version", version=f"netcem {__version__}")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("generate", help="build a problem bundle from a preset")
    _common_flags(p)
    p.add_argument("--preset", help="preset name (see --list)")
    p.add_argument("--list", action="store_true", help="list available presets")
    p.add_argument("--contrast", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--source", help="load kind: ones|normal|uniform|sin|assembled-sin|point")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("partition", help="partition a bundle's free nodes")
    _common_flags(p)
    p.add_argument("--bundle", help="bundle directory")
    p.add_argument("--count", type=int, dest="part_count", help="number of subgraphs")
    p.add_argument("--seed", type=int)
    p.add_argument("--balance-tol", type=float, dest="balance_tol")
    p.add_argument("--report-layers", type=int, default=3, help="layer depth for the regularity report")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("aux", help="build the auxiliary spectral space")
    _common_flags(p)
    _pipeline_flags(p)
    p.set_defaults(func=cmd_aux)

    p = sub.add_parser("basis", help="build the localized multiscale basis")
    _common_flags(p)
    _pipeline_flags(p)
    p.add_argument("--aux-dir", help="reuse a saved auxiliary space")
    p.set_defaults(func=cmd_basis)

    p = sub.add_parser("solve", help="end-to-end multiscale solve")
    _common_flags(p)
    _pipeline_flags(p)
    p.add_argument("--save-basis", action="store_true", help="also export basis columns")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("analyze", help="diagnostics on a bundle or solution")
    _common_flags(p)
    _pipeline_flags(p)
    p.add_argument(
        "--mode",
        required=True,
        choices=["errors", "eigencount", "decay"],
    )
    p.add_argument("--solution", help="solution vector file (mode=errors)")
    p.add_argument("--threshold", type=float, help="override the counting threshold")
    p.add_argument("--safety", type=float, default=5.0, help="counting threshold safety factor")
    p.add_argument("--columns", type=int, default=5, help="basis columns to sample (mode=decay)")
    p.add_argument(
        "--decay-layers",
        default="1,2,3,4",
        help="comma-separated patch widths for the decay fit",
    )
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bench", help="time the parallel phases at several pool sizes")
    _common_flags(p)
    p.add_argument("--preset")
    p.add_argument("--contrast", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int, dest="part_count")
    p.add_argument("--nov", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--threads-list", dest="threads_list", help="comma-separated pool sizes")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("study", help="run a parameter sweep to CSV")
    _common_flags(p)
    p.add_argument("--preset")
    p.add_argument("--count", type=int, dest="part_count")
    p.add_argument("--seed", type=int)
    p.add_argument("--source")
    p.set_defaults(func=cmd_study)

    return parser


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file")
    p.add_argument("-o", "--out", help="output directory or file")
    p.add_argument("--threads", type=int, help="worker process count (or NETCEM_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true", default=None)


def _pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bundle", help="bundle directory")
    p.add_argument("--preset", help="generate the problem in memory instead")
    p.add_argument("--contrast", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--source")
    p.add_argument("--count", type=int, dest="part_count", help="number of subgraphs")
    p.add_argument("--partition-file", dest="partition_file")
    p.add_argument("--nov", type=int, help="eigenpairs kept per subgraph")
    p.add_argument("--layers", type=int, help="oversampling layers")
    p.add_argument("--cpo-mode", dest="cpo_mode", choices=["computed", "uniform"])
    p.add_argument("--cpo-value", dest="cpo_value", type=float)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    for field in (
        "preset",
        "bundle",
        "contrast",
        "seed",
        "source",
        "part_count",
        "balance_tol",
        "partition_file",
        "nov",
        "layers",
        "cpo_mode",
        "cpo_value",
        "threads",
        "verbose",
    ):
        if hasattr(args, field):
            overrides[field] = getattr(args, field)
    if getattr(args, "out", None) is not None:
        overrides["output"] = args.out
    if getattr(args, "threads_list", None) is not None:
        overrides["threads_list"] = tuple(
            int(tok) for tok in str(args.threads_list).replace(",", " ").split()
        )
    if getattr(args, "seed", None) is not None:
        overrides["part_seed"] = args.seed
    return resolve_config(getattr(args, "config", None), overrides)


def _load_problem(cfg: RunConfig):
    """Problem from a bundle directory or an in-memory preset."""
    if cfg.bundle:
        net, f, manifest = load_bundle(cfg.bundle)
        mass = None
        if "Mh.mtx" in manifest.get("files", ()):
            mass = load_extra_matrix(cfg.bundle, "Mh.mtx")
        if f is None:
            f = gen_source(net, cfg.source, seed=cfg.seed, mass_matrix=mass)
        return net, f, mass, manifest
    if cfg.preset:
        net, meta, mass = build_preset(cfg.preset, contrast=cfg.contrast, seed=cfg.seed)
        f = gen_source(net, cfg.source, seed=cfg.seed, mass_matrix=mass)
        return net, f, mass, meta
    raise ConfigError("either a bundle directory or a preset name is required")


def _reduced_problem(cfg: RunConfig):
    net, f, mass, meta = _load_problem(cfg)
    report = net.check_well_posedness()
    if not report.passed:
        raise WellPosednessError(str(report))
    net_r, free = net.reduced()
    f_r = f[free]
    mass_r = None if mass is None else mass[free, :][:, free].tocsr()
    return net, net_r, free, f_r, mass_r, meta


def _get_partition(cfg: RunConfig, net_r: SpatialNetwork) -> Partition:
    if cfg.partition_file:
        return load_partition(net_r, cfg.partition_file)
    return partition_grow(
        net_r, cfg.part_count, seed=cfg.part_seed, balance_tol=cfg.balance_tol
    )


def _policy(cfg: RunConfig) -> CPoPolicy:
    if cfg.cpo_mode == "uniform":
        return CPoPolicy("uniform", value=cfg.cpo_value)
    return CPoPolicy(cfg.cpo_mode)


def _outdir(cfg: RunConfig) -> Path:
    path = Path(cfg.output)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(path: Path, cfg: RunConfig, payload: dict) -> None:
    doc = {
        "netcem_version": __version__,
        "config": cfg.as_dict(),
        "config_hash": cfg.digest(),
    }
    doc.update(payload)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


# ---------------------------------------------------------------------------
# Subcommands.


def cmd_generate(args: argparse.Namespace) -> int:
    if getattr(args, "list", False):
        for name in sorted(PRESETS):
            print(f"{name:22s} {PRESETS[name].description}")
        return EXIT_OK
    cfg = _config_from_args(args)
    if not cfg.preset:
        raise ConfigError("generate needs --preset (or --list)")
    net, meta, mass = build_preset(cfg.preset, contrast=cfg.contrast, seed=cfg.seed)
    f = gen_source(net, cfg.source, seed=cfg.seed, mass_matrix=mass)
    out = _outdir(cfg)
    extras = {"generator": meta, "source": cfg.source, "seed": cfg.seed}
    extra_matrices = {} if mass is None else {"Mh.mtx": mass}
    save_bundle(out, net, f, extras=extras, extra_matrices=extra_matrices)
    report = net.check_well_posedness()
    print(f"bundle written to {out}")
    print(f"nodes={net.node_count} edges={net.edge_count} constrained={net.constrained.size}")
    print(report)
    return EXIT_OK


def cmd_partition(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    net, net_r, free, f_r, mass_r, meta = _reduced_problem(cfg)
    part = partition_grow(
        net_r, cfg.part_count, seed=cfg.part_seed, balance_tol=cfg.balance_tol
    )
    out = _outdir(cfg)
    save_partition(part, out / "partition.txt")
    layers = int(getattr(args, "report_layers", 3))
    report = regularity(net_r, part, layers)
    dump_oversampling(part, layers, out / "oversampling.json")
    _write_manifest(
        out / "partition_manifest.json",
        cfg,
        {
            "subgraphs": part.count,
            "free_nodes": net_r.node_count,
            "balance_ratio": report.balance_ratio,
            "quotient_max_degree": report.quotient_max_degree,
            "patch_counts": list(report.patch_counts),
        },
    )
    print(
        f"partition written to {out / 'partition.txt'}: {part.count} subgraphs, "
        f"sizes {part.sizes.min()}..{part.sizes.max()}, "
        f"balance {report.balance_ratio:.2f}, quotient degree {report.quotient_max_degree}"
    )
    return EXIT_OK


def cmd_aux(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    workers = parallel.resolve_workers(cfg.threads)
    net, net_r, free, f_r, mass_r, meta = _reduced_problem(cfg)
    part = _get_partition(cfg, net_r)
    t0 = time.perf_counter()
    aux = build_aux_space(net_r, part, cfg.nov, policy=_policy(cfg), workers=workers)
    dt = time.perf_counter() - t0
    out = _outdir(cfg)
    aux.save(out)
    _write_manifest(
        out / "aux_manifest.json",
        cfg,
        {"seconds": dt, "threads": workers, "summary": aux.summary()},
    )
    gap = aux.spectral_gap
    gap_text = "inf" if not np.isfinite(gap) else f"{gap:.6g}"
    print(
        f"auxiliary space written to {out}: dimension {aux.dimension}, "
        f"spectral gap {gap_text}, {dt:.2f}s"
    )
    return EXIT_OK


def cmd_basis(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    workers = parallel.resolve_workers(cfg.threads)
    net, net_r, free, f_r, mass_r, meta = _reduced_problem(cfg)
    if getattr(args, "aux_dir", None):
        aux = AuxSpace.load(args.aux_dir, net_r)
    else:
        part = _get_partition(cfg, net_r)
        aux = build_aux_space(net_r, part, cfg.nov, policy=_policy(cfg), workers=workers)
    t0 = time.perf_counter()
    basis = build_basis(net_r, aux, cfg.layers, workers=workers)
    dt = time.perf_counter() - t0
    out = _outdir(cfg)
    save_basis(basis, out)
    _write_manifest(
        out / "basis_manifest.json",
        cfg,
        {"seconds": dt, "threads": workers, "columns": basis.dimension, "layers": cfg.layers},
    )
    print(f"basis written to {out}: {basis.dimension} columns, layers={cfg.layers}, {dt:.2f}s")
    return EXIT_OK


def cmd_solve(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    workers = parallel.resolve_workers(cfg.threads)
    net, net_r, free, f_r, mass_r, meta = _reduced_problem(cfg)
    part = _get_partition(cfg, net_r)
    t0 = time.perf_counter()
    aux = build_aux_space(net_r, part, cfg.nov, policy=_policy(cfg), workers=workers)
    t_aux = time.perf_counter() - t0
    t0 = time.perf_counter()
    basis = build_basis(net_r, aux, cfg.layers, workers=workers)
    t_cem = time.perf_counter() - t0
    coarse = assemble_coarse(net_r, basis, f_r)
    sol = solve_multiscale(net_r, coarse, f_r)
    out = _outdir(cfg)
    u_full = np.zeros(net.node_count)
    u_full[free] = sol.u
    kernels.write_vector(out / "u_ms.txt", u_full)
    save_coarse(coarse, out)
    if getattr(args, "save_basis", False):
        save_basis(basis, out / "basis")
    _write_manifest(
        out / "solve_manifest.json",
        cfg,
        {
            "threads": workers,
            "t_aux_s": t_aux,
            "t_cem_s": t_cem,
            "coarse_dimension": basis.dimension,
            "galerkin_residual": sol.galerkin_residual,
            "coarse_rhs_norm": sol.rhs_norm,
            "solution_hash": kernels.vector_digest(u_full),
        },
    )
    print(
        f"solution written to {out / 'u_ms.txt'}: coarse dimension {basis.dimension}, "
        f"galerkin residual {sol.galerkin_residual:.3e}, "
        f"aux {t_aux:.2f}s, basis {t_cem:.2f}s"
    )
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    mode = args.mode
    if mode == "errors":
        return _analyze_errors(args, cfg)
    if mode == "eigencount":
        return _analyze_eigencount(args, cfg)
    return _analyze_decay(args, cfg)


def _analyze_errors(args: argparse.Namespace, cfg: RunConfig) -> int:
    net, net_r, free, f_r, mass_r, meta = _reduced_problem(cfg)
    u_ref = reference_solve(net_r, f_r)
    if getattr(args, "solution", None):
        u_full = kernels.read_vector(args.solution)
        if u_full.shape[0] != net.node_count:
            raise BundleFormatError(
                f"solution has {u_full.shape[0]} values for {net.node_count} nodes"
            )
        u = u_full[free]
    else:
        workers = parallel.resolve_workers(cfg.threads)
        part = _get_partition(cfg, net_r)
        aux = build_aux_space(net_r, part, cfg.nov, policy=_policy(cfg), workers=workers)
        basis = build_basis(net_r, aux, cfg.layers, workers=workers)
        coarse = assemble_coarse(net_r, basis, f_r)
        u = solve_multiscale(net_r, coarse, f_r).u
    report = error_report(net_r, u_ref, u, mass_r)
    out = _outdir(cfg)
    _write_manifest(
        out / "errors.json",
        cfg,
        {
            "e_a_rel": report.e_a_rel,
            "e_a_abs": report.e_a_abs,
            "e_L2_rel": report.e_l2_rel,
            "e_L2_abs": report.e_l2_abs,
        },
    )
    print(f"e_a_rel={report.e_a_rel:.6e} e_L2_rel={report.e_l2_rel:.6e}")
    return EXIT_OK


def _analyze_eigencount(args: argparse.Namespace, cfg: RunConfig) -> int:
    net, net_r, free, f_r, mass_r, meta = _reduced_problem(cfg)
    threshold = getattr(args, "threshold", None)
    if threshold is None:
        contrast = cfg.contrast or float(meta.get("contrast") or meta.get("generator", {}).get("contrast", 0))
        if not contrast or contrast <= 0:
            raise ConfigError(
                "cannot infer the contrast for the counting threshold; pass --threshold"
            )
        background = float(
            meta.get("min_background_weight")
            or meta.get("generator", {}).get("min_background_weight", 1.0)
        )
        threshold = counting_threshold(
            net_r, contrast, background_min=background, safety=args.safety
        )
    report = spectral_gap_count(net_r, threshold)
    out = _outdir(cfg)
    _write_manifest(
        out / "eigencount.json",
        cfg,
        {
            "threshold": report.threshold,
            "count": report.count,
            "gap_ratio": report.gap_ratio,
            "eigenvalues": list(report.eigenvalues),
        },
    )
    print(
        f"count={report.count} below threshold {report.threshold:.6e}, "
        f"gap ratio {report.gap_ratio:.3g}"
    )
    return EXIT_OK


def _analyze_decay(args: argparse.Namespace, cfg: RunConfig) -> int:
    workers = parallel.resolve_workers(cfg.threads)
    net, net_r, free, f_r, mass_r, meta = _reduced_problem(cfg)
    part = _get_partition(cfg, net_r)
    aux = build_aux_space(net_r, part, cfg.nov, policy=_policy(cfg), workers=workers)
    basis = build_global_basis(net_r, aux)
    layers = [int(tok) for tok in str(args.decay_layers).replace(",", " ").split()]
    columns = _sample_columns(aux, int(args.columns))
    report = decay_profile(net_r, aux, basis, columns, layers)
    out = _outdir(cfg)
    _write_manifest(
        out / "decay.json",
        cfg,
        {
            "layers": layers,
            "columns": [
                {
                    "subgraph": c.subgraph,
                    "index": c.index,
                    "tails": list(c.tails),
                    "decay_factor": c.decay_factor,
                    "fit_quality": c.fit_quality,
                }
                for c in report.columns
            ],
            "worst_factor": report.worst_factor,
            "worst_fit": report.worst_fit,
        },
    )
    print(
        f"decay over layers {layers}: worst factor {report.worst_factor:.3f}, "
        f"worst fit {report.worst_fit:.3f}"
    )
    return EXIT_OK


def _sample_columns(aux: AuxSpace, count: int) -> list[tuple[int, int]]:
    """Spread sampled subgraphs across the quotient graph's periphery.

    Eccentric subgraphs keep nonempty patch complements at larger widths,
    so their tails stay measurable; take the most eccentric ids first.
    """
    part = aux.part
    ecc = []
    for i in range(part.count):
        grown = 0
        while part.member_parts(i, grown).size < part.count:
            grown += 1
            if grown > part.count:
                break
        ecc.append((grown, i))
    ecc.sort(key=lambda t: (-t[0], t[1]))
    picks = [i for (_, i) in ecc[: max(1, count)]]
    return [(i, 0) for i in picks]


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    if not cfg.preset:
        raise ConfigError("bench needs --preset")
    nov = cfg.nov
    layers = cfg.layers
    report = run_bench(
        cfg.preset,
        cfg.part_count,
        nov,
        layers,
        tuple(cfg.threads_list),
        contrast=cfg.contrast,
        seed=cfg.seed,
        source=cfg.source,
    )
    out = _outdir(cfg)
    _write_manifest(
        out / "bench.json",
        cfg,
        {
            "deterministic": report.deterministic,
            "cells": [
                {
                    "workers": c.workers,
                    "t_aux_s": c.t_aux_s,
                    "t_cem_s": c.t_cem_s,
                    "solution_hash": c.solution_hash,
                }
                for c in report.cells
            ],
            "speedup_aux": {
                str(c.workers): report.speedup_aux(c.workers) for c in report.cells
            },
            "speedup_cem": {
                str(c.workers): report.speedup_cem(c.workers) for c in report.cells
            },
        },
    )
    for c in report.cells:
        print(
            f"workers={c.workers:2d} aux={c.t_aux_s:8.3f}s basis={c.t_cem_s:8.3f}s "
            f"S_aux={report.speedup_aux(c.workers):5.2f} "
            f"S_cem={report.speedup_cem(c.workers):5.2f}"
        )
    print(f"deterministic={report.deterministic}")
    return EXIT_OK


def cmd_study(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    if not cfg.preset:
        raise ConfigError("study needs a preset (flag or [problem] section)")
    if not cfg.contrast_list:
        base = cfg.contrast
        if base is None:
            raise ConfigError("study needs contrast_list (or --contrast)")
        contrast_list = (base,)
    else:
        contrast_list = cfg.contrast_list
    workers = parallel.resolve_workers(cfg.threads)
    spec = StudySpec(
        preset=cfg.preset,
        part_count=cfg.part_count,
        nov_list=tuple(cfg.nov_list),
        layers_list=tuple(cfg.layers_list),
        contrast_list=contrast_list,
        seed=cfg.seed,
        source=cfg.source,
        cpo_mode=cfg.cpo_mode,
        cpo_value=cfg.cpo_value,
        workers=workers,
    )
    out = _outdir(cfg)
    rows = run_study(spec, out)
    ok = sum(1 for r in rows if r["status"] == "ok")
    print(f"study written to {out / 'study.csv'}: {ok}/{len(rows)} cells ok")
    for row in rows:
        if row["status"] != "ok":
            print(f"  failed cell l={row['l']} Nov={row['Nov']} contrast={row['contrast']}: {row['status']}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
