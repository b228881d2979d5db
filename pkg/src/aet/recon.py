"""Total-variation regularized conductivity reconstruction.

Minimizes ``sum_j int mask_j |H_j(sigma) - z_j| dx + beta |sigma|_TV`` over
a box of admissible conductivities by an outer recursive linearization:
around the current iterate the forward maps are replaced by their
derivatives, the L1 and TV terms are smoothed and quadraticized by frozen
reweighing, and each weighted quadratic subproblem is solved matrix-free
with a few conjugate gradient steps.  Every operator application costs one
sensitivity and one adjoint PDE solve per dataset.

The box constraint is enforced by clipping the updated iterate; the
subproblem CG itself is unconstrained.

With partial data the increment is restricted to the nodes carrying data
(see ``ReconConfig.restrict_updates_to_data``): the exterior keeps the
initial guess, and the band just inside the data boundary absorbs the
compensation for the frozen exterior.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import fem, forward
from .mesh import Mesh


@dataclass
class ReconConfig:
    """Parameters of the outer/inner iteration.

    ``delta = None`` picks the stabilization shift automatically from the
    scale of the normal operator's diagonal.  ``stop_tol_inner`` doubles as
    the relative-residual target of the subproblem CG and as the
    relative-change threshold that ends the reweighing passes early.
    ``restrict_updates_to_data`` freezes nodes that touch no masked
    element (a no-op for full-coverage masks).
    """

    beta: float = 3.5e-2
    eps: float = 1e-4
    box_low: float = 0.2
    box_high: float = 1.5
    outer_iters: int = 50
    inner_iters: int = 3
    cg_iters: int = 3
    delta: float | None = None
    warm_start_factor: float = 1.0
    stop_tol_outer: float = 1e-4
    stop_tol_inner: float = 1e-3
    pde_tol: float = 1e-10
    pde_maxit: int | None = None
    restrict_updates_to_data: bool = True
    seed: int = 0

    def validate(self) -> None:
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 < self.box_low <= self.box_high:
            raise ValueError("need 0 < box_low <= box_high")
        for name in ("outer_iters", "inner_iters", "cg_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.delta is not None and self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.pde_tol <= 0:
            raise ValueError("pde_tol must be positive")

    @property
    def box(self) -> tuple[float, float]:
        return (self.box_low, self.box_high)


@dataclass
class Dataset:
    """One boundary flux with its measured power density on the mesh."""

    flux_index: int
    flux: object                 # callable mapping (k, 2) points to values
    z: np.ndarray                # nodal data
    mask: np.ndarray             # element-wise 0/1, 1 = data available


@dataclass
class IterationRecord:
    k: int
    j_beta: float
    fit: float
    tv: float
    e_l1: float
    e_tv: float
    e_dbv: float
    update_norm: float
    seconds: float
    cg_reports: list = field(default_factory=list, repr=False)


@dataclass
class ObjectiveParts:
    total: float
    fit: float
    tv: float


# ---------------------------------------------------------------------------
# functionals


def tv_seminorm(mesh: Mesh, sigma) -> float:
    """Total variation of a P1 field; exact, ``sum_T |T| |grad sigma|_T``."""
    g = fem.element_gradients(mesh, sigma)
    return float(mesh.areas @ np.sqrt((g ** 2).sum(axis=1)))


def tv_smoothed(mesh: Mesh, sigma, eps: float) -> float:
    """Smoothed total variation ``sum_T |T| sqrt(|grad sigma|_T^2 + eps^2)``."""
    g = fem.element_gradients(mesh, sigma)
    return float(mesh.areas @ np.sqrt((g ** 2).sum(axis=1) + eps * eps))


def _fit_parts(mesh, fs_list, datasets, smoothing_eps=None):
    total = 0.0
    for fs, ds in zip(fs_list, datasets):
        diff = fs.H - ds.z
        if smoothing_eps is None:
            total += fem.l1_norm(mesh, diff, mask=ds.mask)
        else:
            total += fem.l1_norm_smoothed(mesh, diff, smoothing_eps, mask=ds.mask)
    return total


def objective(mesh: Mesh, sigma, datasets, beta, box=forward.DEFAULT_BOX,
              tol=1e-10) -> ObjectiveParts:
    """Masked L1 data misfit plus ``beta`` times the TV seminorm."""
    fs_list = [forward.solve_forward(mesh, sigma, ds.flux, box=box, tol=tol)
               for ds in datasets]
    fit = _fit_parts(mesh, fs_list, datasets)
    tv = tv_seminorm(mesh, sigma)
    return ObjectiveParts(fit + beta * tv, fit, tv)


def objective_smoothed(mesh: Mesh, sigma, datasets, beta, eps,
                       box=forward.DEFAULT_BOX, tol=1e-10) -> ObjectiveParts:
    """Objective with both absolute values smoothed at level ``eps``."""
    fs_list = [forward.solve_forward(mesh, sigma, ds.flux, box=box, tol=tol)
               for ds in datasets]
    fit = _fit_parts(mesh, fs_list, datasets, smoothing_eps=eps)
    tv = tv_smoothed(mesh, sigma, eps)
    return ObjectiveParts(fit + beta * tv, fit, tv)


# ---------------------------------------------------------------------------
# reweighed quadratic subproblem


def compute_weights(residual, grad_norm_elem, eps):
    """Reweighing factors frozen from the previous inner iterate.

    Returns the nodal data weight ``1 / sqrt(residual^2 + eps^2)`` and the
    element gradient weight ``1 / sqrt(grad_norm^2 + eps^2)``; both lie in
    ``(0, 1/eps]``.
    """
    residual = np.asarray(residual, dtype=np.float64)
    grad_norm_elem = np.asarray(grad_norm_elem, dtype=np.float64)
    w = 1.0 / np.sqrt(residual ** 2 + eps * eps)
    w0 = 1.0 / np.sqrt(grad_norm_elem ** 2 + eps * eps)
    return w, w0


def masked_lumped_mass(mesh: Mesh, mask) -> np.ndarray:
    """Lumped mass restricted to elements with ``mask == 1``."""
    w = mesh.areas * np.asarray(mask, dtype=np.float64) / 3.0
    return np.bincount(mesh.triangles.ravel(), weights=np.repeat(w, 3),
                       minlength=mesh.n_nodes)


def apply_normal_operator(fs_list, kappa, weight_list, penalty_stiffness,
                          beta, delta, masked_mass_list, pool=None):
    """Matrix-free normal operator of the weighted quadratic subproblem.

    ``sum_j Jt_j(mm_j * w_j * J_j kappa) + beta * K_w0 kappa + delta * kappa``
    with ``J`` the forward linearization and ``Jt`` its Euclidean
    transpose; symmetric, and positive definite for ``delta > 0``.
    """
    def one(args):
        fs, w, mm = args
        return forward.linearized_transpose(
            fs, mm * w * forward.linearized_forward(fs, kappa))

    jobs = list(zip(fs_list, weight_list, masked_mass_list))
    results = pool.map(one, jobs) if pool is not None else map(one, jobs)
    out = (beta * (penalty_stiffness @ kappa)) + delta * kappa
    for r in results:
        out += r
    return out


def _auto_delta(fs_list, weight_list, masked_mass_list, penalty_stiffness, beta):
    # scale estimate of the normal operator diagonal: penalty part exactly,
    # data part through the zeroth-order term of the linearization
    scale = beta * penalty_stiffness.diagonal().mean()
    for fs, w, mm in zip(fs_list, weight_list, masked_mass_list):
        scale += float(np.mean(mm * w * fs.gradsq_nodal ** 2))
    return 1e-10 * scale


def solve_linearized_step(fs_list, datasets, sigma, kappa_prev, config,
                          free=None, pool=None):
    """One reweigh-and-solve pass for the increment.

    Freezes the weights at ``kappa_prev``, assembles the gradient-weighted
    stiffness, and runs at most ``config.cg_iters`` conjugate gradient
    steps on the normal equations, warm started from
    ``warm_start_factor * kappa_prev``.  A 0/1 nodal vector ``free``
    restricts the increment to its support (Galerkin restriction of the
    normal equations; CG iterates never leave the subspace).
    """
    mesh = fs_list[0].mesh
    kappa_prev = np.asarray(kappa_prev, dtype=np.float64)
    have_prev = bool(np.any(kappa_prev))

    grad = fem.element_gradients(mesh, sigma + kappa_prev)
    grad_norm = np.sqrt((grad ** 2).sum(axis=1))
    weight_list = []
    w0 = None
    for fs, ds in zip(fs_list, datasets):
        d = ds.z - fs.H
        residual = -d
        if have_prev:
            residual = forward.linearized_forward(fs, kappa_prev) - d
        w, w0 = compute_weights(residual, grad_norm, config.eps)
        weight_list.append(w)
    penalty_stiffness = fem.assemble_stiffness(mesh, w0)
    masked_mass_list = [masked_lumped_mass(mesh, ds.mask) for ds in datasets]

    delta = config.delta
    if delta is None:
        delta = _auto_delta(fs_list, weight_list, masked_mass_list,
                            penalty_stiffness, beta=config.beta)

    rhs = -config.beta * (penalty_stiffness @ sigma)
    for fs, ds, w, mm in zip(fs_list, datasets, weight_list, masked_mass_list):
        rhs += forward.linearized_transpose(fs, mm * w * (ds.z - fs.H))

    if free is not None:
        rhs *= free

    def apply_op(v):
        out = apply_normal_operator(
            fs_list, v, weight_list, penalty_stiffness,
            config.beta, delta, masked_mass_list, pool=pool)
        return out * free if free is not None else out

    x0 = config.warm_start_factor * kappa_prev if have_prev else None
    kappa, report = fem.cg_solve(apply_op, rhs, tol=config.stop_tol_inner,
                                 maxit=config.cg_iters, x0=x0)
    return kappa, report


# ---------------------------------------------------------------------------
# outer iteration


def _solve_all(mesh, sigma, datasets, config, loads, pool=None):
    def one(args):
        ds, load = args
        return forward.solve_forward(
            mesh, sigma, ds.flux, box=config.box,
            tol=config.pde_tol, maxit=config.pde_maxit, load=load)

    jobs = list(zip(datasets, loads))
    if pool is not None:
        return list(pool.map(one, jobs))
    return [one(j) for j in jobs]


def reconstruct(mesh: Mesh, datasets, sigma0, config: ReconConfig,
                truth=None, n_threads=1, progress=None):
    """Run the full outer iteration from ``sigma0``.

    Per outer iteration: reset the increment, run up to ``inner_iters``
    reweigh-and-solve passes, add the increment, clip to the admissible
    box, then re-solve the forward problems and log objective value,
    error metrics against ``truth`` (NaN when absent) and timing.  Stops
    early once the relative update drops below ``stop_tol_outer``.

    Returns the final iterate and the list of :class:`IterationRecord`.
    """
    config.validate()
    sigma = np.array(sigma0, dtype=np.float64)
    forward.check_box(sigma, config.box, what="sigma0")
    for ds in datasets:
        if ds.z.shape != (mesh.n_nodes,) or not np.isfinite(ds.z).all():
            raise ValueError(f"dataset {ds.flux_index}: bad data vector")
        if ds.mask.shape != (mesh.n_triangles,):
            raise ValueError(f"dataset {ds.flux_index}: bad mask length")

    loads = [fem.assemble_flux_load(mesh, ds.flux) for ds in datasets]
    free = None
    if config.restrict_updates_to_data:
        covered = np.zeros(mesh.n_triangles, dtype=bool)
        for ds in datasets:
            covered |= np.asarray(ds.mask, dtype=bool)
        if not covered.all():
            free = np.zeros(mesh.n_nodes)
            free[np.unique(mesh.triangles[covered])] = 1.0
    pool = ThreadPoolExecutor(n_threads) if n_threads > 1 else None
    history: list[IterationRecord] = []
    try:
        fs_list = _solve_all(mesh, sigma, datasets, config, loads, pool)
        for k in range(1, config.outer_iters + 1):
            tic = time.perf_counter()
            try:
                kappa = np.zeros(mesh.n_nodes)
                cg_reports = []
                for _ in range(config.inner_iters):
                    new_kappa, report = solve_linearized_step(
                        fs_list, datasets, sigma, kappa, config,
                        free=free, pool=pool)
                    cg_reports.append(report)
                    change = fem.l1_norm(mesh, new_kappa - kappa)
                    scale = fem.l1_norm(mesh, new_kappa)
                    kappa = new_kappa
                    if scale > 0 and change / scale < config.stop_tol_inner:
                        break
                sigma = np.clip(sigma + kappa, config.box_low, config.box_high)
                fs_list = _solve_all(mesh, sigma, datasets, config, loads, pool)
            except fem.SolverError as exc:
                raise fem.SolverError(f"outer iteration {k}: {exc}") from exc

            fit = _fit_parts(mesh, fs_list, datasets)
            tv = tv_seminorm(mesh, sigma)
            update_norm = fem.l1_norm(mesh, kappa)
            if truth is not None:
                e_l1 = fem.l1_norm(mesh, sigma - truth)
                e_tv = abs(tv - tv_seminorm(mesh, truth))
                e_dbv = e_l1 + e_tv
            else:
                e_l1 = e_tv = e_dbv = float("nan")
            rec = IterationRecord(
                k=k, j_beta=fit + config.beta * tv, fit=fit, tv=tv,
                e_l1=e_l1, e_tv=e_tv, e_dbv=e_dbv, update_norm=update_norm,
                seconds=time.perf_counter() - tic, cg_reports=cg_reports)
            history.append(rec)
            if progress is not None:
                progress(rec)
            if update_norm / max(fem.l1_norm(mesh, sigma), 1e-300) \
                    < config.stop_tol_outer:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return sigma, history
