"""Conductivity imaging from interior power-density data.

Forward model, exact discrete linearization/adjoint, and a recursive
linearization + smoothing + iterative reweighing solver for the
TV-regularized L1 inversion, plus the two-mesh simulation pipeline.
"""

__version__ = "0.1.0"

from .fem import (assemble_flux_load, assemble_lumped_boundary_mass,
                  assemble_stiffness, cg_solve, l1_norm, solve_neumann)
from .forward import (ForwardSolution, adjoint_applied, linearized_forward,
                      solve_forward)
from .mesh import (Mesh, PointLocation, generate_disk_mesh, interpolate_p1,
                   read_msh, write_msh)
from .metrics import ErrorTriple, error_metrics
from .phantoms import (NoiseSpec, Phantom, add_noise, boundary_flux,
                       make_mask, make_phantom, simulate_datasets)
from .recon import (Dataset, ReconConfig, apply_normal_operator,
                    compute_weights, objective, objective_smoothed,
                    reconstruct, solve_linearized_step, tv_seminorm,
                    tv_smoothed)
from .rng import PortableRng

__all__ = [
    "Mesh", "PointLocation", "generate_disk_mesh", "interpolate_p1",
    "read_msh", "write_msh",
    "assemble_stiffness", "assemble_lumped_boundary_mass",
    "assemble_flux_load", "cg_solve", "solve_neumann", "l1_norm",
    "ForwardSolution", "solve_forward", "linearized_forward",
    "adjoint_applied",
    "ReconConfig", "Dataset", "tv_seminorm", "tv_smoothed", "objective",
    "objective_smoothed", "compute_weights", "apply_normal_operator",
    "solve_linearized_step", "reconstruct",
    "Phantom", "NoiseSpec", "boundary_flux", "make_phantom", "add_noise",
    "make_mask", "simulate_datasets",
    "ErrorTriple", "error_metrics",
    "PortableRng",
]
