"""Multiscale solver for high-contrast spatial networks.

Builds coarse spaces by constrained energy minimization over an
algebraically partitioned network: per-subgraph spectral auxiliary
spaces, localized basis functions on oversampled patches, and a coarse
Galerkin solve, with diagnostics for eigenvalue counting, localization
decay, and convergence studies.
"""

__version__ = "0.1.0"

from .auxspace import (
    AuxSpace,
    CPoPolicy,
    build_aux_space,
    build_local_forms,
    estimate_poincare,
    solve_local_eigen,
)
from .cem import (
    CemBasis,
    CoarseSystem,
    MultiscaleSolution,
    assemble_coarse,
    build_basis,
    build_global_basis,
    build_local_basis,
    solve_multiscale,
)
from .diagnostics import (
    BenchReport,
    DecayReport,
    ErrorReport,
    GapReport,
    StudySpec,
    build_pou,
    counting_threshold,
    cutoff,
    decay_profile,
    error_report,
    reference_solve,
    run_bench,
    run_study,
    spectral_gap_count,
)
from .errors import (
    BundleFormatError,
    ConfigError,
    ConvergenceError,
    CoarseRankError,
    InvalidParameterError,
    NetcemError,
    NetworkValidationError,
    NumericalError,
    PartitionError,
    WellPosednessError,
)
from .kernels import Tolerances, DEFAULT_TOL
from .network import SpatialNetwork, WellPosednessReport, load_bundle, save_bundle
from .partition import (
    Partition,
    RegularityReport,
    load_partition,
    partition_grow,
    regularity,
    save_partition,
)
from .problems import (
    ChannelSpec,
    FemProblem,
    LatticeMedium,
    PRESETS,
    build_preset,
    fem_lshape,
    fem_square,
    gen_fem_p1,
    gen_lattice_network,
    gen_source,
    network_from_operator,
)

__all__ = [
    "AuxSpace",
    "BenchReport",
    "BundleFormatError",
    "CPoPolicy",
    "CemBasis",
    "ChannelSpec",
    "CoarseRankError",
    "CoarseSystem",
    "ConfigError",
    "ConvergenceError",
    "DEFAULT_TOL",
    "DecayReport",
    "ErrorReport",
    "FemProblem",
    "GapReport",
    "InvalidParameterError",
    "LatticeMedium",
    "MultiscaleSolution",
    "NetcemError",
    "NetworkValidationError",
    "NumericalError",
    "PRESETS",
    "Partition",
    "PartitionError",
    "RegularityReport",
    "SpatialNetwork",
    "StudySpec",
    "Tolerances",
    "WellPosednessError",
    "WellPosednessReport",
    "assemble_coarse",
    "build_aux_space",
    "build_basis",
    "build_global_basis",
    "build_local_basis",
    "build_local_forms",
    "build_pou",
    "build_preset",
    "counting_threshold",
    "cutoff",
    "decay_profile",
    "error_report",
    "estimate_poincare",
    "fem_lshape",
    "fem_square",
    "gen_fem_p1",
    "gen_lattice_network",
    "gen_source",
    "load_bundle",
    "load_partition",
    "network_from_operator",
    "partition_grow",
    "reference_solve",
    "regularity",
    "run_bench",
    "run_study",
    "save_bundle",
    "save_partition",
    "solve_local_eigen",
    "solve_multiscale",
    "spectral_gap_count",
]
