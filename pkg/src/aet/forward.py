"""Power-density forward map, its linearization and adjoint.

For a conductivity ``sigma`` and boundary flux ``f`` the potential ``u``
solves the pure Neumann problem ``-div(sigma grad u) = 0`` with
``sigma du/dn = f`` and zero boundary mean.  The interior datum is
``H = sigma |grad u|^2``.

Discrete conventions
--------------------
Nodal coefficients enter element integrals through vertex averaging; the
element-wise ``|grad u|^2`` becomes nodal through the area-weighted patch
average ``r_i = sum_{T~i} |T| |grad u|_T^2 / sum_{T~i} |T|`` (exact for
affine potentials).  The linearization below is the exact derivative of
this discrete forward map, and the adjoint is its exact adjoint in the
lumped-mass inner product, so optimizer gradients are consistent with the
discrete objective to solver tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import fem
from .mesh import Mesh

# Permissive conductivity guard for standalone solves; the reconstruction
# passes its own, tighter admissible box.
DEFAULT_BOX = (0.05, 20.0)


@dataclass
class ForwardSolution:
    """Solved state for one (sigma, flux) pair.

    Carries the gauge-fixed potential, its element gradients, the nodal
    power density, and the assembled operator so that sensitivity and
    adjoint solves can reuse it.
    """

    mesh: Mesh
    sigma: np.ndarray            # nodal conductivity
    sigma_elem: np.ndarray       # vertex-averaged per element
    u: np.ndarray                # potential, zero lumped boundary mean
    grad_u: np.ndarray           # (m, 2)
    gradsq_nodal: np.ndarray     # patch-recovered |grad u|^2
    H: np.ndarray                # sigma * gradsq_nodal
    stiffness: sp.csr_matrix
    boundary_mass: np.ndarray
    load: np.ndarray
    pde_tol: float
    pde_maxit: int | None
    report: fem.CgReport


def recover_to_nodes(mesh: Mesh, element_values) -> np.ndarray:
    """Area-weighted patch average of an element field at the nodes."""
    element_values = np.asarray(element_values, dtype=np.float64)
    acc = np.bincount(mesh.triangles.ravel(),
                      weights=np.repeat(mesh.areas * element_values, 3),
                      minlength=mesh.n_nodes)
    return acc / mesh.patch_areas


def check_box(sigma, box, what="sigma") -> None:
    sigma = np.asarray(sigma)
    low, high = box
    bad = (sigma < low) | (sigma > high) | ~np.isfinite(sigma)
    if bad.any():
        i = int(np.argmax(bad))
        raise ValueError(
            f"{what}[{i}] = {sigma[i]:g} outside admissible box [{low:g}, {high:g}]")


def solve_forward(mesh: Mesh, sigma, flux, box=DEFAULT_BOX,
                  tol=1e-10, maxit=None, load=None) -> ForwardSolution:
    """Solve the conductivity problem and evaluate the power density.

    ``flux`` maps boundary points (k, 2) to flux values; ``load`` may pass
    a precomputed load vector for the same flux to skip its assembly.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape != (mesh.n_nodes,):
        raise ValueError("sigma length does not match mesh node count")
    check_box(sigma, box)
    sigma_elem = fem.nodal_to_element(mesh, sigma)
    stiffness = fem.assemble_stiffness(mesh, sigma_elem)
    boundary_mass = fem.assemble_lumped_boundary_mass(mesh)
    if load is None:
        load = fem.assemble_flux_load(mesh, flux)
    u, report = fem.solve_neumann(stiffness, load, boundary_mass,
                                  tol=tol, maxit=maxit)
    grad_u = fem.element_gradients(mesh, u)
    gradsq = recover_to_nodes(mesh, (grad_u ** 2).sum(axis=1))
    return ForwardSolution(
        mesh=mesh, sigma=sigma, sigma_elem=sigma_elem, u=u, grad_u=grad_u,
        gradsq_nodal=gradsq, H=sigma * gradsq, stiffness=stiffness,
        boundary_mass=boundary_mass, load=np.asarray(load), pde_tol=tol,
        pde_maxit=maxit, report=report)


def _coupling_load(mesh: Mesh, grad_u, coeff_elem) -> np.ndarray:
    """Load vector with entries ``-sum_T |T| c_T grad(u)_T . grad(phi_i)``."""
    dots = np.einsum("md,mad->ma", grad_u, mesh.basis_gradients)  # (m, 3)
    w = -mesh.areas * np.asarray(coeff_elem, dtype=np.float64)
    return np.bincount(mesh.triangles.ravel(),
                       weights=(w[:, None] * dots).ravel(),
                       minlength=mesh.n_nodes)


def _gauge_solve(fs: ForwardSolution, load):
    return fem.solve_neumann(fs.stiffness, load, fs.boundary_mass,
                             tol=fs.pde_tol, maxit=fs.pde_maxit)


def linearized_forward(fs: ForwardSolution, kappa) -> np.ndarray:
    """Derivative of the power density in direction ``kappa``.

    Solves the sensitivity problem
    ``(sigma grad du, grad phi) = -(kappa grad u, grad phi)`` and returns
    the exact derivative of the discrete forward map,
    ``kappa * r + sigma * recover(2 grad u . grad du)`` with ``r`` the
    recovered ``|grad u|^2``.
    """
    kappa = np.asarray(kappa, dtype=np.float64)
    kappa_elem = fem.nodal_to_element(fs.mesh, kappa)
    du, _ = _gauge_solve(fs, _coupling_load(fs.mesh, fs.grad_u, kappa_elem))
    grad_du = fem.element_gradients(fs.mesh, du)
    cross = recover_to_nodes(fs.mesh, 2.0 * (fs.grad_u * grad_du).sum(axis=1))
    return kappa * fs.gradsq_nodal + fs.sigma * cross


def adjoint_applied(fs: ForwardSolution, zeta) -> np.ndarray:
    """Adjoint of :func:`linearized_forward` in the lumped-mass pairing.

    Solves ``(sigma grad v, grad phi) = -(c grad u, grad phi)`` with the
    element coefficient ``c`` the vertex average of the nodal product
    ``sigma * zeta``, and returns ``zeta * r + recover(2 grad u . grad v)``.
    With exact linear solves this satisfies
    ``<linearized_forward(k), z>_M == <k, adjoint_applied(z)>_M``.
    """
    zeta = np.asarray(zeta, dtype=np.float64)
    coeff = fem.nodal_to_element(fs.mesh, fs.sigma * zeta)
    v, _ = _gauge_solve(fs, _coupling_load(fs.mesh, fs.grad_u, coeff))
    grad_v = fem.element_gradients(fs.mesh, v)
    cross = recover_to_nodes(fs.mesh, 2.0 * (fs.grad_u * grad_v).sum(axis=1))
    return zeta * fs.gradsq_nodal + cross


def linearized_transpose(fs: ForwardSolution, y) -> np.ndarray:
    """Euclidean transpose of :func:`linearized_forward`.

    Related to the lumped-mass adjoint by conjugation with the mass
    vector; this is the form the normal equations need.
    """
    mass = fs.mesh.lumped_mass
    return mass * adjoint_applied(fs, np.asarray(y, dtype=np.float64) / mass)
