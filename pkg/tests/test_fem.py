import numpy as np
import pytest

from aet import fem
from aet.mesh import generate_disk_mesh


def dense_stiffness_oracle(mesh, coeff):
    """Hand assembly from vertex coordinates, independent of aet.fem."""
    n = mesh.n_nodes
    out = np.zeros((n, n))
    for t, tri in enumerate(mesh.triangles):
        x = mesh.nodes[tri]
        e1, e2 = x[1] - x[0], x[2] - x[0]
        area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
        grads = []
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            e = x[c] - x[b]
            grads.append(np.array([-e[1], e[0]]) / (2 * area))
        for a in range(3):
            for b in range(3):
                out[tri[a], tri[b]] += coeff[t] * area * grads[a] @ grads[b]
    return out


# -- assembly -----------------------------------------------------------------

def test_square_stiffness_matches_hand_assembly(square_mesh):
    coeff = np.ones(2)
    mat = fem.assemble_stiffness(square_mesh, coeff).toarray()
    oracle = dense_stiffness_oracle(square_mesh, coeff)
    assert np.abs(mat - oracle).max() <= 1e-14
    assert np.allclose(np.diag(mat), 1.0)
    assert np.abs(mat.sum(axis=1)).max() <= 1e-14


def test_stiffness_scales_with_constant_coefficient(disk_h02):
    base = fem.assemble_stiffness(disk_h02, np.ones(disk_h02.n_triangles))
    scaled = fem.assemble_stiffness(disk_h02, np.full(disk_h02.n_triangles, 2.5))
    assert np.abs(scaled.toarray() - 2.5 * base.toarray()).max() <= 1e-14


def test_stiffness_linearity_in_coefficient(disk_h02):
    rng = np.random.default_rng(0)
    c1 = rng.uniform(0.5, 2.0, disk_h02.n_triangles)
    c2 = rng.uniform(0.5, 2.0, disk_h02.n_triangles)
    lhs = fem.assemble_stiffness(disk_h02, 0.3 * c1 + 1.7 * c2).toarray()
    rhs = (0.3 * fem.assemble_stiffness(disk_h02, c1)
           + 1.7 * fem.assemble_stiffness(disk_h02, c2)).toarray()
    scale = np.abs(lhs).max()
    assert np.abs(lhs - rhs).max() <= 1e-12 * scale


def test_stiffness_semidefinite_with_constant_kernel(disk_h02):
    mat = fem.assemble_stiffness(disk_h02, np.ones(disk_h02.n_triangles))
    rng = np.random.default_rng(1)
    for _ in range(100):
        x = rng.standard_normal(disk_h02.n_nodes)
        assert x @ (mat @ x) >= -1e-12 * (x @ x)
    assert np.abs(mat @ np.ones(disk_h02.n_nodes)).max() <= 1e-12


def test_stiffness_symmetry(disk_h02):
    rng = np.random.default_rng(2)
    mat = fem.assemble_stiffness(
        disk_h02, rng.uniform(0.5, 2.0, disk_h02.n_triangles))
    diff = (mat - mat.T).toarray()
    assert np.abs(diff).max() <= 1e-12 * np.abs(mat.toarray()).max()


def test_stiffness_rejects_nonpositive_coefficient(disk_h02):
    coeff = np.ones(disk_h02.n_triangles)
    coeff[17] = 0.0
    with pytest.raises(ValueError, match="triangle 17"):
        fem.assemble_stiffness(disk_h02, coeff)


def test_boundary_mass_square_perimeter(square_mesh):
    m = fem.assemble_lumped_boundary_mass(square_mesh)
    assert m.sum() == pytest.approx(4.0, abs=1e-12)


def test_boundary_mass_disk(disk_h01):
    m = fem.assemble_lumped_boundary_mass(disk_h01)
    # equals the inscribed polygon perimeter, computed directly
    a = disk_h01.nodes[disk_h01.boundary_edges[:, 0]]
    b = disk_h01.nodes[disk_h01.boundary_edges[:, 1]]
    perimeter = np.sqrt(((b - a) ** 2).sum(axis=1)).sum()
    assert m.sum() == pytest.approx(perimeter, rel=1e-12)
    assert 2 * np.pi - 4 * 0.1 <= m.sum() <= 2 * np.pi
    interior = np.setdiff1d(np.arange(disk_h01.n_nodes),
                            np.unique(disk_h01.boundary_edges))
    assert (m[interior] == 0).all()


def test_flux_load_zero_flux(disk_h02):
    load = fem.assemble_flux_load(disk_h02, lambda p: np.zeros(len(p)))
    assert np.abs(load).max() == 0.0


def test_flux_load_compatibility_and_mirror_antisymmetry(disk_h01):
    load = fem.assemble_flux_load(disk_h01, lambda p: p[:, 0])
    assert abs(load.sum()) <= 1e-14 * np.abs(load).sum()
    # pair nodes with their x1-mirror images and compare
    mirrored = disk_h01.nodes.copy()
    mirrored[:, 0] = -mirrored[:, 0]
    order = np.lexsort((disk_h01.nodes[:, 1].round(12),
                        disk_h01.nodes[:, 0].round(12)))
    order_m = np.lexsort((mirrored[:, 1].round(12), mirrored[:, 0].round(12)))
    perm = np.empty(disk_h01.n_nodes, dtype=int)
    perm[order] = order_m
    assert np.abs(disk_h01.nodes[perm] - mirrored).max() <= 1e-9
    assert np.abs(load[perm] + load).max() <= 1e-12


def test_flux_load_pairs_to_boundary_integral(disk_h01):
    # <b, I_h(x1)> equals the polygon line integral of x1^2, evaluated
    # here with the exact segment antiderivative as an independent oracle
    load = fem.assemble_flux_load(disk_h01, lambda p: p[:, 0])
    paired = load @ disk_h01.nodes[:, 0]
    a = disk_h01.nodes[disk_h01.boundary_edges[:, 0]]
    b = disk_h01.nodes[disk_h01.boundary_edges[:, 1]]
    seg_len = np.sqrt(((b - a) ** 2).sum(axis=1))
    xa, xb = a[:, 0], b[:, 0]
    oracle = (seg_len * (xa * xa + xa * xb + xb * xb) / 3.0).sum()
    assert paired == pytest.approx(oracle, abs=1e-12)
    assert abs(paired - np.pi) <= 5 * 0.1 ** 2


# -- conjugate gradients ------------------------------------------------------

def test_cg_identity_converges_in_one_iteration():
    rhs = np.array([1.0, -2.0, 3.0])
    x, rep = fem.cg_solve(lambda v: v, rhs, tol=1e-12)
    assert np.allclose(x, rhs)
    assert rep.iterations == 1
    assert rep.converged


def test_cg_diagonal_two_iterations():
    diag = np.array([1.0, 10.0])
    x, rep = fem.cg_solve(lambda v: diag * v, np.array([1.0, 1.0]), tol=1e-12)
    assert np.allclose(x, [1.0, 0.1], atol=1e-12)
    assert rep.iterations <= 2


def test_cg_energy_decreases_monotonically(disk_h02):
    mat = fem.assemble_stiffness(disk_h02, np.ones(disk_h02.n_triangles))
    rhs = fem.assemble_flux_load(disk_h02, lambda p: p[:, 0])
    energies = []
    fem.cg_solve(lambda v: mat @ v, rhs, tol=1e-12,
                 callback=lambda x: energies.append(0.5 * x @ (mat @ x) - rhs @ x))
    energies = np.array(energies)
    assert (np.diff(energies) <= 1e-12).all()


def test_cg_flags_nonconverged_at_maxit():
    diag = np.linspace(1.0, 100.0, 50)
    _, rep = fem.cg_solve(lambda v: diag * v, np.ones(50), tol=1e-14, maxit=3)
    assert not rep.converged
    assert rep.iterations == 3


def test_cg_divergence_raises():
    with pytest.raises(fem.SolverError):
        fem.cg_solve(lambda v: np.full_like(v, np.nan), np.ones(4))


# -- Neumann solve ------------------------------------------------------------

def make_neumann_system(mesh, flux):
    stiffness = fem.assemble_stiffness(mesh, np.ones(mesh.n_triangles))
    load = fem.assemble_flux_load(mesh, flux)
    mass = fem.assemble_lumped_boundary_mass(mesh)
    return stiffness, load, mass


def test_neumann_zero_load(disk_h02):
    stiffness, _, mass = make_neumann_system(disk_h02, lambda p: p[:, 0])
    u, rep = fem.solve_neumann(stiffness, np.zeros(disk_h02.n_nodes), mass)
    assert np.abs(u).max() == 0.0
    assert rep.converged


def test_neumann_linear_solution_second_order(disk_h01, disk_h005):
    errs = {}
    for mesh in (disk_h01, disk_h005):
        stiffness, load, mass = make_neumann_system(mesh, lambda p: p[:, 0])
        u, rep = fem.solve_neumann(stiffness, load, mass, tol=1e-12)
        assert rep.converged
        errs[mesh.h] = np.abs(u - mesh.nodes[:, 0]).max()
    coarse, fine = sorted(errs)[::-1]
    assert errs[coarse] / errs[fine] == pytest.approx(4.0, rel=0.5)


def test_neumann_gauge_condition(disk_h01):
    stiffness, load, mass = make_neumann_system(disk_h01, lambda p: p[:, 1])
    u, _ = fem.solve_neumann(stiffness, load, mass)
    assert abs(mass @ u) <= 1e-12 * mass.sum() * np.abs(u).max()


def test_neumann_linear_in_load(disk_h02):
    stiffness, load1, mass = make_neumann_system(disk_h02, lambda p: p[:, 0])
    load2 = fem.assemble_flux_load(disk_h02, lambda p: p[:, 1])
    u1, _ = fem.solve_neumann(stiffness, load1, mass, tol=1e-13)
    u2, _ = fem.solve_neumann(stiffness, load2, mass, tol=1e-13)
    u12, _ = fem.solve_neumann(stiffness, 2.0 * load1 - 0.5 * load2, mass,
                               tol=1e-13)
    assert np.abs(u12 - (2.0 * u1 - 0.5 * u2)).max() <= 1e-9 * np.abs(u12).max()


def test_jacobi_preconditioner_reaches_same_solution(disk_h02):
    rng = np.random.default_rng(4)
    coeff = rng.uniform(0.8, 1.25, disk_h02.n_triangles)
    stiffness = fem.assemble_stiffness(disk_h02, coeff)
    load = fem.assemble_flux_load(disk_h02, lambda p: p[:, 0])
    mass = fem.assemble_lumped_boundary_mass(disk_h02)
    u_plain, _ = fem.solve_neumann(stiffness, load, mass, tol=1e-12)
    u_jac, _ = fem.solve_neumann(stiffness, load, mass, tol=1e-12, jacobi=True)
    assert np.abs(u_plain - u_jac).max() <= 1e-8 * np.abs(u_plain).max()


def test_discrete_w14_norm_bounded_under_refinement():
    # smooth conductivity inside [0.8, 1.25], same function on every mesh
    def sigma_fn(p):
        vals = 1.0 + 0.2 * np.sin(2.3 * p[:, 0]) * np.cos(1.7 * p[:, 1])
        return np.clip(vals, 0.8, 1.25)

    norms = []
    for h in (0.2, 0.1, 0.05):
        mesh = generate_disk_mesh(h)
        stiffness = fem.assemble_stiffness(
            mesh, fem.nodal_to_element(mesh, sigma_fn(mesh.nodes)))
        load = fem.assemble_flux_load(mesh, lambda p: p[:, 0])
        mass = fem.assemble_lumped_boundary_mass(mesh)
        u, _ = fem.solve_neumann(stiffness, load, mass, tol=1e-12)
        grad = fem.element_gradients(mesh, u)
        grad4 = mesh.areas @ ((grad ** 2).sum(axis=1) ** 2)
        u4 = mesh.areas @ (fem.nodal_to_element(mesh, u) ** 4)
        norms.append((u4 + grad4) ** 0.25)
    norms = np.array(norms)
    assert norms.max() <= 1.3 * norms.min()
    assert norms[-1] <= 1.1 * norms[-2]


# -- L1 quadrature ------------------------------------------------------------

def test_l1_norm_constant_field(disk_h02):
    vals = np.full(disk_h02.n_nodes, -2.0)
    assert fem.l1_norm(disk_h02, vals) == pytest.approx(
        2.0 * disk_h02.areas.sum(), rel=1e-13)


def test_l1_norm_mask_restricts_area(disk_h02):
    vals = np.ones(disk_h02.n_nodes)
    mask = np.zeros(disk_h02.n_triangles)
    mask[:10] = 1.0
    assert fem.l1_norm(disk_h02, vals, mask=mask) == pytest.approx(
        disk_h02.areas[:10].sum(), rel=1e-13)


def test_l1_smoothed_bounds(disk_h02):
    rng = np.random.default_rng(5)
    vals = rng.standard_normal(disk_h02.n_nodes)
    area = disk_h02.areas.sum()
    for eps in (1e-2, 1e-4):
        plain = fem.l1_norm(disk_h02, vals)
        smooth = fem.l1_norm_smoothed(disk_h02, vals, eps)
        assert 0.0 <= smooth - plain <= area * eps + 1e-15
