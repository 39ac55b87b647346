"""From-scratch dense reference implementation used to validate the pipeline.

Everything here is deliberately naive: dense matrices, explicit loops,
LAPACK generalized eigensolves, boolean matrix powers for patch growth,
and the saddle-point variational equation assembled literally.  No code
is shared with the package beyond numpy/scipy primitives, and the
algorithmic routes differ (generalized eigh instead of a diagonal
square-root reduction, dense solves instead of sparse factorization plus
low-rank correction), so agreement is meaningful evidence.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg


def dense_operator(net) -> np.ndarray:
    """Laplacian plus masses, assembled entry by entry."""
    n = net.node_count
    a = np.zeros((n, n))
    for (x, y), w in zip(net.edges, net.weights):
        a[x, x] += w
        a[y, y] += w
        a[x, y] -= w
        a[y, x] -= w
    a[np.diag_indices(n)] += net.masses
    return a


def dense_lumped(net) -> np.ndarray:
    """Per-node half-sum of incident edge weights, by loop."""
    out = np.zeros(net.node_count)
    for (x, y), w in zip(net.edges, net.weights):
        out[x] += 0.5 * w
        out[y] += 0.5 * w
    return out


def energy_on_subset(net, v, w, subset) -> float:
    """Localized energy form, node by node (half weight per endpoint)."""
    inside = np.zeros(net.node_count, dtype=bool)
    inside[np.asarray(subset)] = True
    total = 0.0
    for (x, y), wt in zip(net.edges, net.weights):
        share = (0.5 if inside[x] else 0.0) + (0.5 if inside[y] else 0.0)
        total += wt * share * (v[x] - v[y]) * (w[x] - w[y])
    for x in np.flatnonzero(inside):
        total += net.masses[x] * v[x] * w[x]
    return total


def local_energy_matrix(net, nodes) -> np.ndarray:
    """Internal-edge Laplacian plus masses on the subgraph, dense."""
    nodes = np.asarray(nodes)
    pos = {int(x): k for k, x in enumerate(nodes)}
    m = nodes.shape[0]
    a = np.zeros((m, m))
    for (x, y), w in zip(net.edges, net.weights):
        if int(x) in pos and int(y) in pos:
            i, j = pos[int(x)], pos[int(y)]
            a[i, i] += w
            a[j, j] += w
            a[i, j] -= w
            a[j, i] -= w
    for k, x in enumerate(nodes):
        a[k, k] += net.masses[x]
    return a


def oracle_cpo(net, nodes) -> float:
    """Scaling constant via a LAPACK generalized eigensolve."""
    nodes = np.asarray(nodes)
    a = local_energy_matrix(net, nodes)
    d = dense_lumped(net)[nodes] + net.masses[nodes]
    w = scipy.linalg.eigh(a, np.diag(d), eigvals_only=True)
    singular = float(np.sum(net.masses[nodes])) == 0.0
    mu = w[1] if singular else w[0]
    return 1.0 / np.sqrt(mu)


def oracle_aux(net, part_nodes: list[np.ndarray], nov: int, cpo: np.ndarray | None = None):
    """Per-subgraph eigenpairs and the global scaled lumped diagonal.

    Returns (cpo, lam_list, vec_list, sdiag, phi) where phi is the dense
    zero-extended eigenvector matrix with subgraph-major columns.
    """
    count = len(part_nodes)
    if cpo is None:
        cpo = np.array([oracle_cpo(net, nodes) for nodes in part_nodes])
    lumped = dense_lumped(net)
    sdiag = np.zeros(net.node_count)
    lam_list, vec_list = [], []
    for i, nodes in enumerate(part_nodes):
        d = (lumped[nodes] + net.masses[nodes]) / cpo[i] ** 2
        sdiag[nodes] = d
        a = local_energy_matrix(net, nodes)
        w, v = scipy.linalg.eigh(a, np.diag(d))
        keep = min(nov, nodes.shape[0])
        lam_list.append(w[:keep])
        vec_list.append(v[:, :keep])
    k_total = sum(v.shape[1] for v in vec_list)
    phi = np.zeros((net.node_count, k_total))
    col = 0
    for nodes, v in zip(part_nodes, vec_list):
        for j in range(v.shape[1]):
            phi[nodes, col] = v[:, j]
            col += 1
    return cpo, lam_list, vec_list, sdiag, phi


def oracle_projection(phi: np.ndarray, sdiag: np.ndarray) -> np.ndarray:
    """Dense projection matrix onto the auxiliary space."""
    return phi @ (phi.T * sdiag[None, :])


def part_adjacency(net, assignment: np.ndarray) -> np.ndarray:
    count = int(assignment.max()) + 1
    adj = np.zeros((count, count), dtype=bool)
    for (x, y) in net.edges:
        px, py = int(assignment[x]), int(assignment[y])
        if px != py:
            adj[px, py] = adj[py, px] = True
    return adj


def oracle_patch(net, assignment: np.ndarray, i: int, layers: int) -> np.ndarray:
    """Patch nodes via boolean reachability on the subgraph adjacency."""
    adj = part_adjacency(net, assignment)
    count = adj.shape[0]
    reach = np.zeros(count, dtype=bool)
    reach[i] = True
    for _ in range(layers):
        reach = reach | (adj @ reach)
    return np.flatnonzero(np.isin(assignment, np.flatnonzero(reach)))


def oracle_basis_column(
    net,
    assignment: np.ndarray,
    phi: np.ndarray,
    sdiag: np.ndarray,
    column: int,
    i: int,
    layers: int | None,
) -> np.ndarray:
    """One minimizer column by literally solving its variational equation.

    Assembles the dense patch matrix of the energy form plus the projected
    lumped form and the right-hand side through the full projection matrix,
    with no orthonormality shortcuts.
    """
    n = net.node_count
    if layers is None:
        patch = np.arange(n)
    else:
        patch = oracle_patch(net, assignment, i, layers)
    a = dense_operator(net)
    proj = oracle_projection(phi, sdiag)
    quad = proj.T @ np.diag(sdiag) @ proj
    system = a[np.ix_(patch, patch)] + quad[np.ix_(patch, patch)]
    rhs = (proj.T @ (sdiag * phi[:, column]))[patch]
    x = np.linalg.solve(system, rhs)
    out = np.zeros(n)
    out[patch] = x
    return out


def oracle_multiscale(net, assignment: np.ndarray, nov: int, layers: int | None, f: np.ndarray):
    """End-to-end dense pipeline: aux, basis, coarse Galerkin, expansion."""
    count = int(assignment.max()) + 1
    part_nodes = [np.flatnonzero(assignment == i) for i in range(count)]
    cpo, lam_list, vec_list, sdiag, phi = oracle_aux(net, part_nodes, nov)
    columns = []
    col = 0
    for i, vecs in enumerate(vec_list):
        for j in range(vecs.shape[1]):
            columns.append(
                oracle_basis_column(net, assignment, phi, sdiag, col, i, layers)
            )
            col += 1
    psi = np.column_stack(columns)
    a = dense_operator(net)
    coarse = psi.T @ a @ psi
    rhs = psi.T @ f
    coeff = np.linalg.solve(coarse, rhs)
    return psi @ coeff, psi
