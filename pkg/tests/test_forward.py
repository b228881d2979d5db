import numpy as np
import pytest

from aet import fem, forward
from aet.mesh import Mesh
from aet.phantoms import boundary_flux


def smooth_sigma(mesh):
    p = mesh.nodes
    return 1.0 + 0.3 * np.sin(2.0 * p[:, 0]) * np.cos(p[:, 1])


# -- power density ------------------------------------------------------------

@pytest.mark.parametrize("flux_index", [1, 3])
def test_unit_conductivity_recovers_constant_density(flux_index, disk_h01,
                                                     disk_h005):
    # exact solution for sigma = 1 and these fluxes is affine, so H = 1
    for mesh in (disk_h01, disk_h005):
        fs = forward.solve_forward(mesh, np.ones(mesh.n_nodes),
                                   boundary_flux(flux_index))
        assert np.abs(fs.H - 1.0).max() <= 3.0 * mesh.h


def test_conductivity_scaling_law(disk_h01):
    # u(a * sigma) = u(sigma) / a, hence H(a * sigma) = H(sigma) / a
    sigma = np.ones(disk_h01.n_nodes)
    base = forward.solve_forward(disk_h01, sigma, boundary_flux(1))
    for alpha in (0.5, 2.0):
        scaled = forward.solve_forward(disk_h01, alpha * sigma, boundary_flux(1))
        assert np.abs(scaled.u - base.u / alpha).max() \
            <= 1e-8 * np.abs(base.u).max()
        assert np.abs(scaled.H - base.H / alpha).max() \
            <= 1e-8 * np.abs(base.H).max()


def test_forward_rejects_sigma_outside_box(disk_h02):
    sigma = np.ones(disk_h02.n_nodes)
    sigma[5] = 99.0
    with pytest.raises(ValueError, match=r"sigma\[5\]"):
        forward.solve_forward(disk_h02, sigma, boundary_flux(1), box=(0.2, 1.5))


def test_recovery_is_exact_for_patchwise_constant_data(disk_h02):
    const = forward.recover_to_nodes(disk_h02, np.full(disk_h02.n_triangles, 2.5))
    assert np.abs(const - 2.5).max() <= 1e-14


def test_recovery_matches_bruteforce_patch_average(disk_h02):
    rng = np.random.default_rng(0)
    vals = rng.standard_normal(disk_h02.n_triangles)
    got = forward.recover_to_nodes(disk_h02, vals)
    for i in range(0, disk_h02.n_nodes, 37):
        patch = np.where((disk_h02.triangles == i).any(axis=1))[0]
        want = (disk_h02.areas[patch] * vals[patch]).sum() \
            / disk_h02.areas[patch].sum()
        assert got[i] == pytest.approx(want, rel=1e-13)


# -- linearization ------------------------------------------------------------

def test_linearization_of_zero_direction(disk_h02):
    fs = forward.solve_forward(disk_h02, smooth_sigma(disk_h02), boundary_flux(2))
    out = forward.linearized_forward(fs, np.zeros(disk_h02.n_nodes))
    assert np.abs(out).max() <= 1e-12


def test_linearization_is_linear(disk_h02):
    fs = forward.solve_forward(disk_h02, smooth_sigma(disk_h02),
                               boundary_flux(1), tol=1e-12)
    rng = np.random.default_rng(1)
    k1 = rng.standard_normal(disk_h02.n_nodes)
    k2 = rng.standard_normal(disk_h02.n_nodes)
    lhs = forward.linearized_forward(fs, 0.6 * k1 - 1.1 * k2)
    rhs = 0.6 * forward.linearized_forward(fs, k1) \
        - 1.1 * forward.linearized_forward(fs, k2)
    assert np.abs(lhs - rhs).max() <= 1e-9 * np.abs(lhs).max()


def test_finite_difference_check(disk_h01):
    sigma = smooth_sigma(disk_h01)
    p = disk_h01.nodes
    kappa = 0.1 * np.cos(np.pi * p[:, 0]) * np.cos(np.pi * p[:, 1])
    fs = forward.solve_forward(disk_h01, sigma, boundary_flux(1), tol=1e-12)
    derivative = forward.linearized_forward(fs, kappa)
    steps = (1e-2, 1e-3, 1e-4)
    defects = []
    for t in steps:
        fs_t = forward.solve_forward(disk_h01, sigma + t * kappa,
                                     boundary_flux(1), tol=1e-12)
        defects.append(fem.l1_norm(disk_h01, (fs_t.H - fs.H) / t - derivative))
    # first order in t: one decade per decade
    for a, b in zip(defects, defects[1:]):
        assert 5.0 <= a / b <= 20.0
    slope = np.polyfit(np.log(steps), np.log(defects), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.2)


# -- adjoint ------------------------------------------------------------------

def test_adjoint_of_zero(disk_h02):
    fs = forward.solve_forward(disk_h02, smooth_sigma(disk_h02), boundary_flux(4))
    assert np.abs(forward.adjoint_applied(fs, np.zeros(disk_h02.n_nodes))).max() \
        <= 1e-12


def test_adjoint_consistency_lumped_mass_pairing(disk_h01):
    fs = forward.solve_forward(disk_h01, smooth_sigma(disk_h01),
                               boundary_flux(1), tol=1e-12)
    mass = disk_h01.lumped_mass
    rng = np.random.default_rng(2)
    for _ in range(10):
        kappa = rng.standard_normal(disk_h01.n_nodes)
        zeta = rng.standard_normal(disk_h01.n_nodes)
        jk = forward.linearized_forward(fs, kappa)
        lhs = (jk * mass) @ zeta
        rhs = (kappa * mass) @ forward.adjoint_applied(fs, zeta)
        scale = np.linalg.norm(np.sqrt(mass) * jk) \
            * np.linalg.norm(np.sqrt(mass) * zeta)
        assert abs(lhs - rhs) <= 1e-8 * scale


def test_adjoint_against_finite_difference_jacobian():
    # dense finite-difference Jacobian on the 2-triangle square: fully
    # independent of both the linearization and the adjoint code paths
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    mesh = Mesh(nodes, np.array([[0, 1, 2], [0, 2, 3]]))
    flux = lambda p: p[:, 0] - 0.5
    sigma = np.array([1.0, 1.2, 0.9, 1.1])
    fs = forward.solve_forward(mesh, sigma, flux, tol=1e-14)
    t = 1e-6
    jac = np.zeros((4, 4))
    for i in range(4):
        e = np.zeros(4)
        e[i] = t
        plus = forward.solve_forward(mesh, sigma + e, flux, tol=1e-14).H
        minus = forward.solve_forward(mesh, sigma - e, flux, tol=1e-14).H
        jac[:, i] = (plus - minus) / (2 * t)
    mass = mesh.lumped_mass
    zeta = np.array([0.3, -0.7, 1.1, 0.4])
    want = (jac.T @ (mass * zeta)) / mass
    got = forward.adjoint_applied(fs, zeta)
    assert np.abs(got - want).max() <= 1e-6 * np.abs(want).max()


def test_transpose_matches_adjoint_conjugation(disk_h02):
    fs = forward.solve_forward(disk_h02, smooth_sigma(disk_h02),
                               boundary_flux(2), tol=1e-12)
    rng = np.random.default_rng(3)
    kappa = rng.standard_normal(disk_h02.n_nodes)
    y = rng.standard_normal(disk_h02.n_nodes)
    lhs = forward.linearized_forward(fs, kappa) @ y
    rhs = kappa @ forward.linearized_transpose(fs, y)
    assert lhs == pytest.approx(rhs, rel=1e-8)
