"""Phantoms, boundary fluxes, synthetic data and partial-data masks.

Data is simulated on a fine mesh and interpolated to the coarser
reconstruction mesh so that inversion never sees its own discretization.
Phantom geometries are simple analytic regions; only the tissue
conductivity values of the head model are authoritative, its geometry is
an approximation built from nested ellipses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import forward
from .mesh import Mesh, interpolate_p1
from .recon import Dataset
from .rng import PortableRng

_SQRT2 = np.sqrt(2.0)

_FLUXES = {
    1: lambda p: p[:, 0],
    2: lambda p: p[:, 1],
    3: lambda p: (p[:, 0] + p[:, 1]) / _SQRT2,
    4: lambda p: (p[:, 0] - p[:, 1]) / _SQRT2,
}


def boundary_flux(index: int):
    """Boundary current pattern ``index`` in 1..4.

    The four patterns are x1, x2 and the two diagonals ``(x1 +- x2)/sqrt 2``;
    each integrates to zero over the circle by antisymmetry.
    """
    try:
        return _FLUXES[index]
    except KeyError:
        raise ValueError(f"flux index must be 1..4, got {index}") from None


@dataclass
class Phantom:
    name: str
    sigma: np.ndarray
    regions: tuple[str, ...]


# head-model tissue conductivities (geometry approximated, values exact)
HEAD_TISSUES = (
    ("air", 0.4),
    ("scalp", 0.5232),
    ("skull", 0.2983),
    ("spinal fluid", 1.0143),
    ("gray matter", 0.55946),
    ("white matter", 0.32404),
)


def _in_ellipse(p, ax, ay):
    return (p[:, 0] / ax) ** 2 + (p[:, 1] / ay) ** 2 <= 1.0


def _shapes_sigma(p):
    sigma = np.ones(len(p))
    disk = ((p[:, 0] + 0.35) ** 2 + (p[:, 1] - 0.35) ** 2) <= 0.25 ** 2
    sigma[disk] = 1.2
    square = (np.abs(p[:, 0] - 0.4) <= 0.2) & (np.abs(p[:, 1] - 0.3) <= 0.2)
    sigma[square] = 0.6
    # equilateral triangle, circumradius 0.3, apex up, centroid (0, -0.45)
    c = np.array([0.0, -0.45])
    ang = np.deg2rad([90.0, 210.0, 330.0])
    v = c + 0.3 * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    inside = np.ones(len(p), dtype=bool)
    for i in range(3):
        a, b = v[i], v[(i + 1) % 3]
        cross = (b[0] - a[0]) * (p[:, 1] - a[1]) - (b[1] - a[1]) * (p[:, 0] - a[0])
        inside &= cross >= 0.0
    sigma[inside] = 0.8
    return sigma


def _head_sigma(p):
    layers = (  # outermost first: (semi-axis x, semi-axis y, value)
        (0.85, 0.95, 0.5232),    # scalp
        (0.78, 0.88, 0.2983),    # skull
        (0.72, 0.82, 1.0143),    # spinal fluid
        (0.66, 0.76, 0.55946),   # gray matter
        (0.50, 0.60, 0.32404),   # white matter
    )
    sigma = np.full(len(p), 0.4)  # air outside the head
    for ax, ay, value in layers:
        sigma[_in_ellipse(p, ax, ay)] = value
    return sigma


def make_phantom(name: str, mesh: Mesh) -> Phantom:
    """Nodal conductivity phantom: ``constant``, ``shapes`` or ``head``."""
    if name == "constant":
        return Phantom(name, np.ones(mesh.n_nodes), ("background 1.0",))
    if name == "shapes":
        return Phantom(name, _shapes_sigma(mesh.nodes),
                       ("background 1.0", "disk 1.2", "square 0.6",
                        "triangle 0.8"))
    if name == "head":
        return Phantom(name, _head_sigma(mesh.nodes),
                       tuple(f"{t} {v}" for t, v in HEAD_TISSUES))
    raise ValueError(f"unknown phantom {name!r}")


@dataclass
class NoiseSpec:
    delta_e: float
    seed: int = 0

    def validate(self):
        if self.delta_e < 0:
            raise ValueError("noise level delta_e must be nonnegative")


def add_noise(h_data, spec: NoiseSpec) -> np.ndarray:
    """Additive Gaussian noise at an exact relative Euclidean level.

    Draws one standard normal entry per value from the portable stream and
    rescales so the perturbation's 2-norm is exactly ``delta_e`` times the
    data 2-norm.
    """
    spec.validate()
    h_data = np.asarray(h_data, dtype=np.float64)
    if spec.delta_e == 0.0:
        return h_data.copy()
    norm = np.linalg.norm(h_data)
    if norm == 0.0:
        raise ValueError("cannot scale noise relative to all-zero data")
    e = PortableRng(spec.seed).standard_normal(len(h_data))
    return h_data + spec.delta_e * (norm / np.linalg.norm(e)) * e


def make_mask(kind: str, mesh: Mesh, radius: float = 0.6) -> np.ndarray:
    """Element-wise data-availability mask by centroid membership."""
    centroids = mesh.nodes[mesh.triangles].mean(axis=1)
    if kind == "full":
        keep = np.ones(mesh.n_triangles, dtype=bool)
    elif kind == "inner_disk":
        keep = (centroids ** 2).sum(axis=1) <= radius * radius
    elif kind == "half_disk":
        keep = centroids[:, 0] >= 0.0
    else:
        raise ValueError(f"unknown mask kind {kind!r}")
    return keep.astype(np.float64)


def simulate_datasets(phantom_mesh: Mesh, recon_mesh: Mesh, phantom: Phantom,
                      flux_indices, noise: NoiseSpec, mask=None,
                      noise_on_fine: bool = True, pde_tol: float = 1e-10,
                      box=forward.DEFAULT_BOX):
    """Two-mesh data synthesis: solve fine, perturb, interpolate to coarse.

    One independent noise realization per dataset, seeded ``noise.seed``
    plus the flux index.  ``noise_on_fine=False`` swaps the order and adds
    noise after interpolating to the reconstruction mesh.  Returns the
    datasets in the order of ``flux_indices`` plus the fine-mesh fields
    (one per flux) for inspection/export.
    """
    if mask is None:
        mask = make_mask("full", recon_mesh)
    datasets = []
    fine_fields = []
    for j in flux_indices:
        flux = boundary_flux(j)
        fs = forward.solve_forward(phantom_mesh, phantom.sigma, flux,
                                   box=box, tol=pde_tol)
        spec = NoiseSpec(noise.delta_e, noise.seed + j)
        if noise_on_fine:
            h_fine = add_noise(fs.H, spec)
            z = h_fine if recon_mesh is phantom_mesh else \
                interpolate_p1(phantom_mesh, h_fine, recon_mesh)
        else:
            h_fine = fs.H
            z = fs.H if recon_mesh is phantom_mesh else \
                interpolate_p1(phantom_mesh, fs.H, recon_mesh)
            z = add_noise(z, spec)
        fine_fields.append(fs.H)
        datasets.append(Dataset(flux_index=j, flux=flux, z=z, mask=mask))
    return datasets, fine_fields
