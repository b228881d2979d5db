"""P1 finite element machinery on triangular meshes.

Weighted stiffness assembly, boundary load vectors, conjugate gradients and
the pure-Neumann solve with the zero-boundary-mean gauge.  All assembly is
vectorized over elements; matrices are scipy CSR.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh


class SolverError(RuntimeError):
    """Conjugate gradient iteration produced a non-finite residual."""


def nodal_to_element(mesh: Mesh, nodal) -> np.ndarray:
    """Vertex mean per triangle (mass-consistent midpoint rule for P1)."""
    nodal = np.asarray(nodal, dtype=np.float64)
    return nodal[mesh.triangles].mean(axis=1)


def element_gradients(mesh: Mesh, nodal) -> np.ndarray:
    """(m, 2) constant gradient of a P1 field per triangle.

    The vertex mean is subtracted first so constant fields give exactly
    zero (the per-element basis gradients only cancel up to round-off).
    """
    nodal = np.asarray(nodal, dtype=np.float64)
    vals = nodal[mesh.triangles]  # (m, 3)
    vals = vals - vals.mean(axis=1, keepdims=True)
    return np.einsum("ma,mad->md", vals, mesh.basis_gradients)


def assemble_stiffness(mesh: Mesh, coeff) -> sp.csr_matrix:
    """Stiffness matrix with an element-wise coefficient.

    Entry (i, j) is ``sum_T coeff_T * area_T * grad(phi_i) . grad(phi_j)``,
    exact for P1 since the basis gradients are constant per element.  The
    result is symmetric positive semidefinite with the constants in its
    kernel.  Nonpositive coefficients are rejected.
    """
    coeff = np.asarray(coeff, dtype=np.float64)
    if coeff.shape != (mesh.n_triangles,):
        raise ValueError("coefficient length does not match triangle count")
    if (coeff <= 0.0).any() or not np.isfinite(coeff).all():
        bad = int(np.argmax(~(coeff > 0.0) | ~np.isfinite(coeff)))
        raise ValueError(
            f"stiffness coefficient must be positive and finite; "
            f"triangle {bad} has value {coeff[bad]:g}")
    g = mesh.basis_gradients                       # (m, 3, 2)
    w = coeff * mesh.areas                         # (m,)
    local = np.einsum("m,mad,mbd->mab", w, g, g)   # (m, 3, 3)
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()         # i index, a-major
    cols = np.tile(t, (1, 3)).ravel()              # j index
    mat = sp.coo_matrix(
        (local.ravel(), (rows, cols)),
        shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    mat.sum_duplicates()
    return mat


def assemble_lumped_boundary_mass(mesh: Mesh) -> np.ndarray:
    """Per-node half-sum of adjacent boundary edge lengths (zero inside).

    The vector represents the discrete boundary measure used by the
    zero-boundary-mean gauge; its entries sum to the polygon perimeter.
    """
    a = mesh.nodes[mesh.boundary_edges[:, 0]]
    b = mesh.nodes[mesh.boundary_edges[:, 1]]
    lengths = np.sqrt(((b - a) ** 2).sum(axis=1))
    m = np.zeros(mesh.n_nodes)
    np.add.at(m, mesh.boundary_edges[:, 0], 0.5 * lengths)
    np.add.at(m, mesh.boundary_edges[:, 1], 0.5 * lengths)
    return m


def assemble_flux_load(mesh: Mesh, flux) -> np.ndarray:
    """Load vector of a prescribed boundary flux.

    ``flux`` maps an (k, 2) array of boundary points to values.  Each
    boundary edge is integrated with 2-point Gauss quadrature, then the
    vector is compatibility-corrected along the lumped boundary mass so
    that its entries sum to zero exactly (pure Neumann solvability).
    """
    a = mesh.nodes[mesh.boundary_edges[:, 0]]
    b = mesh.nodes[mesh.boundary_edges[:, 1]]
    lengths = np.sqrt(((b - a) ** 2).sum(axis=1))
    s = 0.5 / np.sqrt(3.0)
    load = np.zeros(mesh.n_nodes)
    for t in (0.5 - s, 0.5 + s):
        pts = (1.0 - t) * a + t * b
        vals = np.asarray(flux(pts), dtype=np.float64)
        np.add.at(load, mesh.boundary_edges[:, 0], 0.5 * lengths * (1.0 - t) * vals)
        np.add.at(load, mesh.boundary_edges[:, 1], 0.5 * lengths * t * vals)
    m = assemble_lumped_boundary_mass(mesh)
    load -= (load.sum() / m.sum()) * m
    return load


@dataclass
class CgReport:
    """Iteration count, convergence flag and relative residual history."""

    iterations: int
    converged: bool
    residual: float
    residuals: list[float] = field(default_factory=list)


def cg_solve(apply_op, rhs, tol=1e-10, maxit=None, x0=None,
             project=None, precond_diag=None, callback=None):
    """Conjugate gradients on a symmetric positive (semi)definite operator.

    Parameters
    ----------
    apply_op : callable
        Matrix-vector product.
    rhs : array
        Right-hand side; must be orthogonal to the operator kernel when
        the operator is singular.
    tol : float
        Relative residual target ``|rhs - A x| <= tol * |rhs|``.
    maxit : int, optional
        Iteration cap (default ``10 * sqrt(n)``).  On hitting the cap the
        current iterate is returned with ``converged=False``.
    x0 : array, optional
        Warm start (defaults to zero, which skips one operator call).
    project : callable, optional
        Applied to residual and search direction every 20 iterations to
        strip kernel components that accumulate from round-off.
    precond_diag : array, optional
        Diagonal (Jacobi) preconditioner.
    callback : callable, optional
        Called with the iterate after each update.

    Returns
    -------
    (x, CgReport)
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    n = len(rhs)
    if maxit is None:
        maxit = max(50, int(10 * np.sqrt(n)))
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
        return x, CgReport(0, True, 0.0, [])
    if x0 is None:
        x = np.zeros(n)
        r = rhs.copy()
    else:
        x = np.array(x0, dtype=np.float64)
        r = rhs - apply_op(x)
    if project is not None:
        project(r)
    z = r / precond_diag if precond_diag is not None else r
    p = z.copy()
    rz = float(r @ z)
    history = []
    res = float(np.linalg.norm(r)) / rhs_norm
    for it in range(1, maxit + 1):
        if res <= tol:
            return x, CgReport(it - 1, True, res, history)
        ap = apply_op(p)
        denom = float(p @ ap)
        if not np.isfinite(denom) or denom <= 0.0:
            if denom == 0.0:
                return x, CgReport(it - 1, res <= tol, res, history)
            raise SolverError(
                f"cg breakdown at iteration {it}: p.Ap = {denom:g}")
        alpha = rz / denom
        x += alpha * p
        r -= alpha * ap
        if project is not None and it % 20 == 0:
            project(r)
            project(p)
        res = float(np.linalg.norm(r)) / rhs_norm
        if not np.isfinite(res):
            raise SolverError(f"cg diverged at iteration {it}")
        history.append(res)
        if callback is not None:
            callback(x)
        z = r / precond_diag if precond_diag is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, CgReport(maxit, res <= tol, res, history)


def solve_neumann(stiffness, load, boundary_mass, tol=1e-10, maxit=None,
                  jacobi=False):
    """Solve the singular Neumann system and fix the boundary-mean gauge.

    The load must already be compatibility-corrected (entries summing to
    zero), which keeps plain CG on the singular stiffness well defined;
    residual and direction are re-projected onto the zero-mean complement
    every 20 iterations.  The solution is shifted so its lumped boundary
    mean vanishes.
    """
    def strip_constants(v):
        v -= v.mean()

    diag = stiffness.diagonal() if jacobi else None
    u, report = cg_solve(
        lambda v: stiffness @ v, load, tol=tol, maxit=maxit,
        project=strip_constants, precond_diag=diag)
    u -= (boundary_mass @ u) / boundary_mass.sum()
    return u, report


# ---------------------------------------------------------------------------
# quadrature of absolute values

# All L1-type integrals in the project use the 3-point edge-midpoint rule,
# which is exact for products of P1 functions wherever the integrand does
# not change sign inside an element.

_EDGE_PAIRS = ((0, 1), (1, 2), (2, 0))


def _edge_midpoint_values(mesh: Mesh, nodal):
    vals = np.asarray(nodal, dtype=np.float64)[mesh.triangles]  # (m, 3)
    return np.stack([0.5 * (vals[:, a] + vals[:, b])
                     for a, b in _EDGE_PAIRS], axis=1)           # (m, 3)


def l1_norm(mesh: Mesh, nodal, mask=None) -> float:
    """Integral of ``|field|`` by the edge-midpoint rule, optionally masked."""
    mids = np.abs(_edge_midpoint_values(mesh, nodal)).sum(axis=1)
    w = mesh.areas / 3.0
    if mask is not None:
        w = w * np.asarray(mask, dtype=np.float64)
    return float(w @ mids)


def l1_norm_smoothed(mesh: Mesh, nodal, eps: float, mask=None) -> float:
    """Integral of ``sqrt(field**2 + eps**2)`` by the edge-midpoint rule."""
    mids = _edge_midpoint_values(mesh, nodal)
    vals = np.sqrt(mids * mids + eps * eps).sum(axis=1)
    w = mesh.areas / 3.0
    if mask is not None:
        w = w * np.asarray(mask, dtype=np.float64)
    return float(w @ vals)
