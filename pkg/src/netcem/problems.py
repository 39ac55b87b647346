"""Problem generators: high-contrast lattices, P1 finite-element networks, loads.

Lattice media place axis-aligned high-conductance channel rectangles in a
unit-weight grid.  The finite-element bridge assembles linear elements on
a structured triangulation (every quad cell split along the same
diagonal), whose stiffness matrix is exactly a network operator: the
right-angle geometry zeroes the hypotenuse coupling and every remaining
off-diagonal is nonpositive, so edge weights and masses can be read off
directly and constrained boundary nodes are eliminated without error.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import InvalidParameterError, NetworkValidationError
from .network import SpatialNetwork


# ---------------------------------------------------------------------------
# Lattice media.


@dataclass(frozen=True)
class ChannelSpec:
    """Inclusive node-coordinate rectangle of high-conductance nodes."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise InvalidParameterError(f"empty channel rectangle {self}")

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)


@dataclass(frozen=True)
class LatticeMedium:
    """Grid dimensions, channel layout, and coefficient levels."""

    width: int
    height: int
    channels: tuple[ChannelSpec, ...] = ()
    contrast: float = 1.0
    background_weight: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise InvalidParameterError("lattice needs at least 2x2 nodes")
        if not np.isfinite(self.contrast) or self.contrast < 1.0:
            raise InvalidParameterError(f"contrast must be >= 1, got {self.contrast}")
        if self.background_weight <= 0.0:
            raise InvalidParameterError("background weight must be positive")
        if self.mass < 0.0:
            raise InvalidParameterError("mass must be nonnegative")
        for ch in self.channels:
            if ch.x0 < 0 or ch.y0 < 0 or ch.x1 >= self.width or ch.y1 >= self.height:
                raise InvalidParameterError(f"channel {ch} leaves the {self.width}x{self.height} grid")
        for a in range(len(self.channels)):
            for b in range(a + 1, len(self.channels)):
                ca, cb = self.channels[a], self.channels[b]
                if not (
                    ca.x1 < cb.x0 or cb.x1 < ca.x0 or ca.y1 < cb.y0 or cb.y1 < ca.y0
                ):
                    raise InvalidParameterError(f"channels {ca} and {cb} overlap")


def gen_lattice_network(medium: LatticeMedium) -> tuple[SpatialNetwork, dict]:
    """Grid graph whose edges inside a channel get the contrast weight.

    An edge is high-conductance only when both endpoints lie in the same
    channel rectangle; edges crossing a channel boundary stay at the
    background weight, which keeps channels cleanly delimited.
    """
    w, h = medium.width, medium.height
    xs, ys = np.meshgrid(np.arange(w), np.arange(h), indexing="xy")
    xs = xs.ravel()
    ys = ys.ravel()
    node_of = lambda x, y: y * w + x

    edge_list = []
    # horizontal edges
    ex, ey = np.meshgrid(np.arange(w - 1), np.arange(h), indexing="xy")
    edge_list.append((node_of(ex.ravel(), ey.ravel()), node_of(ex.ravel() + 1, ey.ravel())))
    # vertical edges
    ex, ey = np.meshgrid(np.arange(w), np.arange(h - 1), indexing="xy")
    edge_list.append((node_of(ex.ravel(), ey.ravel()), node_of(ex.ravel(), ey.ravel() + 1)))
    e0 = np.concatenate([e[0] for e in edge_list])
    e1 = np.concatenate([e[1] for e in edge_list])

    weights = np.full(e0.shape[0], medium.background_weight)
    in_channel = np.zeros(e0.shape[0], dtype=bool)
    for ch in medium.channels:
        inside = ch.contains(xs[e0], ys[e0]) & ch.contains(xs[e1], ys[e1])
        weights[inside] = medium.background_weight * medium.contrast
        in_channel |= inside
    masses = np.full(w * h, medium.mass)
    coords = np.column_stack([xs.astype(float), ys.astype(float)])
    net = SpatialNetwork(w * h, np.column_stack([e0, e1]), weights, masses, coords=coords)
    meta = {
        "kind": "lattice",
        "width": w,
        "height": h,
        "contrast": medium.contrast,
        "background_weight": medium.background_weight,
        "min_background_weight": medium.background_weight,
        "mass": medium.mass,
        "channels": [[ch.x0, ch.y0, ch.x1, ch.y1] for ch in medium.channels],
        "channel_edge_count": int(in_channel.sum()),
    }
    return net, meta


# ---------------------------------------------------------------------------
# P1 finite elements on structured tensor-product triangulations.


@dataclass(frozen=True)
class FemProblem:
    """Assembled finite-element network with its mesh data.

    The network is the full one (zero masses, boundary nodes constrained);
    eliminate constraints with ``net.reduced()`` before solving.  The
    consistent mass matrix covers all nodes and is used for L2 errors.
    """

    net: SpatialNetwork
    mass_matrix: sp.csr_matrix
    element_count: int
    cell_alpha: np.ndarray
    meta: dict


def _graded_sizes(count: int, ratio: float, fine_at_end: bool) -> np.ndarray:
    """Geometric cell widths over a half-interval of length 1/2."""
    if count < 1:
        raise InvalidParameterError("need at least one cell per half-side")
    if ratio < 1.0:
        raise InvalidParameterError("grading ratio must be >= 1")
    if count == 1:
        return np.array([0.5])
    q = ratio ** (1.0 / (count - 1))
    sizes = q ** (-np.arange(count, dtype=float))
    if not fine_at_end:
        sizes = sizes[::-1]
    return 0.5 * sizes / sizes.sum()


def gen_fem_p1(
    cells_x: int,
    cells_y: int,
    *,
    cell_alpha: np.ndarray | None = None,
    cell_mask: np.ndarray | None = None,
    dx: np.ndarray | None = None,
    dy: np.ndarray | None = None,
    meta_extra: dict | None = None,
) -> FemProblem:
    """Assemble linear elements on a structured grid of right triangles.

    ``cell_alpha`` is the per-cell diffusion coefficient (both triangles
    of a cell share it); ``cell_mask`` deactivates cells (non-rectangular
    domains); ``dx``/``dy`` are cell widths (uniform unit-square default).
    Homogeneous boundary values are imposed on every node of the domain
    boundary via the constrained-node mechanism.
    """
    if cells_x < 1 or cells_y < 1:
        raise InvalidParameterError("need at least one cell in each direction")
    if dx is None:
        dx = np.full(cells_x, 1.0 / cells_x)
    if dy is None:
        dy = np.full(cells_y, 1.0 / cells_y)
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    if dx.shape != (cells_x,) or dy.shape != (cells_y,):
        raise InvalidParameterError("cell width arrays do not match cell counts")
    if np.any(dx <= 0) or np.any(dy <= 0):
        raise InvalidParameterError("cell widths must be positive")
    if cell_alpha is None:
        cell_alpha = np.ones((cells_y, cells_x))
    cell_alpha = np.asarray(cell_alpha, dtype=float)
    if cell_alpha.shape != (cells_y, cells_x):
        raise InvalidParameterError(
            f"cell_alpha shape {cell_alpha.shape} != {(cells_y, cells_x)}"
        )
    if np.any(cell_alpha <= 0):
        raise InvalidParameterError("diffusion coefficients must be positive")
    if cell_mask is None:
        cell_mask = np.ones((cells_y, cells_x), dtype=bool)
    cell_mask = np.asarray(cell_mask, dtype=bool)

    ci, cj = np.meshgrid(np.arange(cells_x), np.arange(cells_y), indexing="xy")
    keep = cell_mask[cj, ci]
    ci = ci.ravel()[keep.ravel()]
    cj = cj.ravel()[keep.ravel()]
    alpha = cell_alpha[cj, ci]
    hx = dx[ci]
    hy = dy[cj]

    stride = cells_x + 1
    na = cj * stride + ci
    nb = na + 1
    nc = na + stride
    nd = nc + 1

    # Right triangles with axis-aligned legs: the hypotenuse coupling is
    # exactly zero, each leg edge carries alpha * (opposite leg / 2*leg).
    w_horiz = alpha * hy / (2.0 * hx)
    w_vert = alpha * hx / (2.0 * hy)
    edge_u = np.concatenate([na, nc, na, nb])
    edge_v = np.concatenate([nb, nd, nc, nd])
    edge_w = np.concatenate([w_horiz, w_horiz, w_vert, w_vert])

    key = edge_u.astype(np.int64) * (stride * (cells_y + 1)) + edge_v
    uniq, inv = np.unique(key, return_inverse=True)
    acc_w = np.zeros(uniq.shape[0])
    np.add.at(acc_w, inv, edge_w)
    grid_u = (uniq // (stride * (cells_y + 1))).astype(np.int64)
    grid_v = (uniq % (stride * (cells_y + 1))).astype(np.int64)

    used = np.zeros(stride * (cells_y + 1), dtype=bool)
    for arr in (na, nb, nc, nd):
        used[arr] = True
    new_id = -np.ones(used.shape[0], dtype=np.int64)
    new_id[used] = np.arange(int(used.sum()))
    n_nodes = int(used.sum())

    # Boundary nodes: a node is interior only when all four surrounding
    # cells are active.
    active = np.zeros((cells_y + 2, cells_x + 2), dtype=bool)
    active[1:-1, 1:-1] = cell_mask
    gx = np.arange(stride)
    gy = np.arange(cells_y + 1)
    gxx, gyy = np.meshgrid(gx, gy, indexing="xy")
    interior = (
        active[gyy, gxx]
        & active[gyy + 1, gxx]
        & active[gyy, gxx + 1]
        & active[gyy + 1, gxx + 1]
    )
    boundary_grid = used & ~interior.ravel()
    constrained = new_id[boundary_grid]

    xcoord = np.concatenate([[0.0], np.cumsum(dx)])
    ycoord = np.concatenate([[0.0], np.cumsum(dy)])
    coords_all = np.column_stack([xcoord[gxx.ravel()], ycoord[gyy.ravel()]])
    coords = coords_all[used]

    net = SpatialNetwork(
        n_nodes,
        np.column_stack([new_id[grid_u], new_id[grid_v]]),
        acc_w,
        np.zeros(n_nodes),
        constrained=constrained,
        coords=coords,
    )

    mass = _consistent_mass(na, nb, nc, nd, hx, hy, new_id, n_nodes)
    meta = {
        "kind": "fem-p1",
        "cells_x": cells_x,
        "cells_y": cells_y,
        "element_count": int(2 * ci.shape[0]),
        "contrast": float(cell_alpha.max() / cell_alpha.min()),
        "min_background_weight": float(cell_alpha.min()),
    }
    meta.update(meta_extra or {})
    return FemProblem(net, mass, int(2 * ci.shape[0]), cell_alpha, meta)


def _consistent_mass(na, nb, nc, nd, hx, hy, new_id, n_nodes) -> sp.csr_matrix:
    area = hx * hy / 2.0
    rows, cols, vals = [], [], []
    for tri in ((na, nb, nd), (na, nc, nd)):
        for p in range(3):
            for q in range(3):
                rows.append(tri[p])
                cols.append(tri[q])
                vals.append(area * (2.0 if p == q else 1.0) / 12.0)
    rows = new_id[np.concatenate(rows)]
    cols = new_id[np.concatenate(cols)]
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_nodes, n_nodes))


def fem_square(
    cells: int,
    *,
    contrast: float = 1.0,
    inclusion_coverage: float = 0.2,
    seed: int = 7,
) -> FemProblem:
    """Unit square with randomly scattered high-coefficient cell blocks."""
    alpha, blocks = _inclusion_field(cells, cells, contrast, inclusion_coverage, seed)
    prob = gen_fem_p1(
        cells,
        cells,
        cell_alpha=alpha,
        meta_extra={
            "mesh": "square",
            "seed": seed,
            "inclusion_coverage": inclusion_coverage,
            "inclusion_blocks": blocks,
        },
    )
    return prob


def fem_lshape(
    cells_per_half: int,
    *,
    grading_ratio: float = 10.0,
    contrast: float = 1.0,
    inclusion_coverage: float = 0.0,
    seed: int = 7,
) -> FemProblem:
    """L-shaped domain (unit square minus its upper-right quadrant).

    Cell widths grade geometrically toward the reentrant corner at
    (1/2, 1/2) with the given coarsest-to-finest ratio.
    """
    half = _graded_sizes(cells_per_half, grading_ratio, fine_at_end=True)
    sizes = np.concatenate([half, half[::-1]])
    n = 2 * cells_per_half
    centers_x = np.cumsum(sizes) - sizes / 2.0
    centers_y = centers_x.copy()
    cx, cy = np.meshgrid(centers_x, centers_y, indexing="xy")
    mask = ~((cx > 0.5) & (cy > 0.5))
    if contrast > 1.0 and inclusion_coverage > 0.0:
        alpha, blocks = _inclusion_field(n, n, contrast, inclusion_coverage, seed)
        alpha[~mask] = 1.0
    else:
        alpha, blocks = np.ones((n, n)), []
    return gen_fem_p1(
        n,
        n,
        cell_alpha=alpha,
        cell_mask=mask,
        dx=sizes,
        dy=sizes,
        meta_extra={
            "mesh": "lshape",
            "grading_ratio": grading_ratio,
            "seed": seed,
            "inclusion_blocks": blocks,
        },
    )


def _inclusion_field(
    nx: int, ny: int, contrast: float, coverage: float, seed: int
) -> tuple[np.ndarray, list[list[int]]]:
    """Paint random rectangular cell blocks with the contrast value."""
    if contrast < 1.0:
        raise InvalidParameterError("contrast must be >= 1")
    if not 0.0 <= coverage < 0.9:
        raise InvalidParameterError("inclusion coverage must lie in [0, 0.9)")
    alpha = np.ones((ny, nx))
    blocks: list[list[int]] = []
    if contrast == 1.0 or coverage == 0.0:
        return alpha, blocks
    rng = np.random.default_rng(seed)
    painted = np.zeros((ny, nx), dtype=bool)
    target = coverage * nx * ny
    guard = 0
    while painted.sum() < target and guard < 10000:
        guard += 1
        bw = int(rng.integers(max(1, nx // 30), max(2, nx // 8)))
        bh = int(rng.integers(max(1, ny // 30), max(2, ny // 8)))
        x0 = int(rng.integers(0, nx - bw + 1))
        y0 = int(rng.integers(0, ny - bh + 1))
        painted[y0 : y0 + bh, x0 : x0 + bw] = True
        blocks.append([x0, y0, bw, bh])
    alpha[painted] = contrast
    return alpha, blocks


# ---------------------------------------------------------------------------
# Load vectors.


def gen_source(
    net: SpatialNetwork,
    kind: str = "ones",
    *,
    seed: int = 0,
    mass_matrix: sp.spmatrix | None = None,
    node: int | None = None,
) -> np.ndarray:
    """Node load vector of the requested kind.

    "sin" evaluates 2*pi^2*sin(pi x)sin(pi y) at the nodes (coordinates
    normalized to the unit square); "assembled-sin" additionally applies
    the consistent mass matrix.  "normal"/"uniform" draw from a seeded
    generator; "point" is a unit load at one node.
    """
    n = net.node_count
    if kind == "ones":
        return np.ones(n)
    if kind == "normal":
        return np.random.default_rng(seed).standard_normal(n)
    if kind == "uniform":
        return np.random.default_rng(seed).random(n)
    if kind == "point":
        idx = n // 2 if node is None else int(node)
        if not 0 <= idx < n:
            raise InvalidParameterError(f"point load node {idx} outside [0, {n})")
        f = np.zeros(n)
        f[idx] = 1.0
        return f
    if kind in ("sin", "assembled-sin"):
        if net.coords is None:
            raise InvalidParameterError(f"source kind {kind!r} needs node coordinates")
        xy = net.coords[:, :2]
        span = xy.max(axis=0) - xy.min(axis=0)
        span[span == 0.0] = 1.0
        unit = (xy - xy.min(axis=0)) / span
        f = 2.0 * np.pi**2 * np.sin(np.pi * unit[:, 0]) * np.sin(np.pi * unit[:, 1])
        if kind == "assembled-sin":
            if mass_matrix is None:
                raise InvalidParameterError("assembled-sin needs the mass matrix")
            f = np.asarray(mass_matrix @ f).ravel()
        return f
    raise InvalidParameterError(f"unknown source kind {kind!r}")


# ---------------------------------------------------------------------------
# Operator-to-network conversion for externally assembled matrices.


def network_from_operator(
    a: sp.spmatrix,
    *,
    coords: np.ndarray | None = None,
    drop_rel: float = 0.0,
) -> tuple[SpatialNetwork, dict]:
    """Split a symmetric matrix into edge weights and masses.

    Off-diagonal entries must be nonpositive for an exact split; positive
    couplings are flagged, their magnitudes are used as weights, and any
    resulting negative mass is clamped to zero (also flagged).  Entries
    with magnitude below ``drop_rel`` times the largest are dropped.
    """
    a = sp.coo_matrix(a)
    n = a.shape[0]
    if a.shape[0] != a.shape[1]:
        raise InvalidParameterError("operator matrix must be square")
    sym_gap = abs(a - a.T).max() if a.nnz else 0.0
    scale = np.abs(a.data).max() if a.nnz else 0.0
    if scale > 0 and sym_gap > 1e-12 * scale:
        raise InvalidParameterError("operator matrix must be symmetric")
    off = a.row != a.col
    rows, cols, vals = a.row[off], a.col[off], a.data[off]
    if drop_rel > 0.0 and vals.size:
        keepers = np.abs(vals) > drop_rel * scale
        rows, cols, vals = rows[keepers], cols[keepers], vals[keepers]
    upper = rows < cols
    rows, cols, vals = rows[upper], cols[upper], vals[upper]
    flags: list[str] = []
    positive = vals > 0
    if np.any(positive):
        flags.append(f"{int(positive.sum())} positive off-diagonal couplings folded by magnitude")
        warnings.warn(
            "operator is not an M-matrix; using coupling magnitudes as edge weights",
            stacklevel=2,
        )
    weights = np.abs(vals)
    keep = weights > 0
    edges = np.column_stack([rows[keep], cols[keep]])
    weights = weights[keep]
    diag = np.zeros(n)
    diag_entries = a.row == a.col
    np.add.at(diag, a.row[diag_entries], a.data[diag_entries])
    weight_sum = np.zeros(n)
    np.add.at(weight_sum, edges[:, 0], weights)
    np.add.at(weight_sum, edges[:, 1], weights)
    masses = diag - weight_sum
    negative = masses < 0
    if np.any(negative):
        worst = float(masses.min())
        if scale > 0 and -worst > 1e-10 * scale:
            flags.append(f"clamped {int(negative.sum())} negative masses (worst {worst:.3e})")
            warnings.warn(
                "operator diagonal is smaller than its row weight sum; clamping masses at zero",
                stacklevel=2,
            )
        masses = np.maximum(masses, 0.0)
    net = SpatialNetwork(n, edges, weights, masses, coords=coords)
    return net, {"kind": "operator", "flags": flags, "exact": not flags}


# ---------------------------------------------------------------------------
# Presets.


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    builder: Callable[..., tuple[SpatialNetwork, dict, sp.csr_matrix | None]]
    defaults: dict = field(default_factory=dict)


def _lattice_channel_preset(
    width: int, height: int, channels: tuple[ChannelSpec, ...]
) -> Callable[..., tuple[SpatialNetwork, dict, None]]:
    def build(contrast: float, seed: int):
        medium = LatticeMedium(width, height, channels, contrast=contrast)
        net, meta = gen_lattice_network(medium)
        meta["seed"] = seed
        return net, meta, None

    return build


def _fem_square_preset(cells: int, coverage: float):
    def build(contrast: float, seed: int):
        prob = fem_square(cells, contrast=contrast, inclusion_coverage=coverage, seed=seed)
        return prob.net, prob.meta, prob.mass_matrix

    return build


def _fem_lshape_preset(cells_per_half: int, ratio: float):
    def build(contrast: float, seed: int):
        prob = fem_lshape(
            cells_per_half,
            grading_ratio=ratio,
            contrast=contrast,
            inclusion_coverage=0.2 if contrast > 1 else 0.0,
            seed=seed,
        )
        return prob.net, prob.meta, prob.mass_matrix

    return build


def _channels_2500(count: int) -> tuple[ChannelSpec, ...]:
    rows = {1: (25,), 2: (12, 37), 3: (12, 25, 37)}[count]
    return tuple(ChannelSpec(22, r, 27, r) for r in rows)


PRESETS: dict[str, Preset] = {
    "lattice-2ch-100": Preset(
        "lattice-2ch-100",
        "10x10 unit lattice, two 1x4 channels, unit masses",
        _lattice_channel_preset(10, 10, (ChannelSpec(3, 2, 6, 2), ChannelSpec(3, 7, 6, 7))),
        {"contrast": 1.0e6, "seed": 0},
    ),
    "lattice-1ch-2500": Preset(
        "lattice-1ch-2500",
        "50x50 unit lattice, one 1x6 channel, unit masses",
        _lattice_channel_preset(50, 50, _channels_2500(1)),
        {"contrast": 1.0e4, "seed": 0},
    ),
    "lattice-2ch-2500": Preset(
        "lattice-2ch-2500",
        "50x50 unit lattice, two 1x6 channels, unit masses",
        _lattice_channel_preset(50, 50, _channels_2500(2)),
        {"contrast": 1.0e4, "seed": 0},
    ),
    "lattice-3ch-2500": Preset(
        "lattice-3ch-2500",
        "50x50 unit lattice, three 1x6 channels, unit masses",
        _lattice_channel_preset(50, 50, _channels_2500(3)),
        {"contrast": 1.0e4, "seed": 0},
    ),
    "bench-500": Preset(
        "bench-500",
        "100x100 unit lattice, five 1x60 channels, unit masses",
        _lattice_channel_preset(
            100,
            100,
            tuple(ChannelSpec(20, r, 79, r) for r in (16, 33, 50, 66, 83)),
        ),
        {"contrast": 1.0e4, "seed": 0},
    ),
    "fem-square-23k": Preset(
        "fem-square-23k",
        "unit square, 109x109 cells (23762 linear elements), random inclusions",
        _fem_square_preset(109, 0.2),
        {"contrast": 1.0e4, "seed": 7},
    ),
    "fem-square-800": Preset(
        "fem-square-800",
        "unit square, 20x20 cells (800 linear elements), random inclusions",
        _fem_square_preset(20, 0.2),
        {"contrast": 1.0e4, "seed": 7},
    ),
    "fem-lshape-graded": Preset(
        "fem-lshape-graded",
        "L-shaped domain, geometric grading toward the reentrant corner",
        _fem_lshape_preset(24, 10.0),
        {"contrast": 1.0, "seed": 7},
    ),
}


def build_preset(
    name: str, *, contrast: float | None = None, seed: int | None = None
) -> tuple[SpatialNetwork, dict, sp.csr_matrix | None]:
    if name not in PRESETS:
        known = ", ".join(sorted(PRESETS))
        raise InvalidParameterError(f"unknown preset {name!r}; available: {known}")
    preset = PRESETS[name]
    kwargs = dict(preset.defaults)
    if contrast is not None:
        kwargs["contrast"] = contrast
    if seed is not None:
        kwargs["seed"] = seed
    net, meta, mass = preset.builder(**kwargs)
    meta["preset"] = name
    return net, meta, mass
