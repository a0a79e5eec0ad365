"""Jacobi solvers for the 5-point Laplace stencil: host reference and device kernels."""

from .decompose import IndivisibleDomain, Subdomain, core_grid_shape, decompose
from .gridio import GridFile, GridFormatError, load_grid, save_grid
from .domain import Domain, DomainError, parity_buffers, result_buffer
from .kernels import (JacobiResult, initial_kernel, optimized_kernel, probe_halo, read_data_aligned,
                      true_halo)
from .reference import interior, reference_solve, stencil_step

__all__ = [
    "Domain", "DomainError", "GridFile", "GridFormatError", "IndivisibleDomain", "JacobiResult", "Subdomain", "core_grid_shape",
    "decompose", "initial_kernel", "interior", "load_grid", "optimized_kernel", "parity_buffers", "probe_halo",
    "read_data_aligned", "reference_solve", "result_buffer", "save_grid", "stencil_step", "true_halo",
]
