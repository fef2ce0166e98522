"""Laplace-Beltrami spectra of meshes and voxel grids, and spectral SPC charts."""

from .chart import ChartParams, DFEWMAChart, run_length_simulation
from .eigen import Spectrum, dense_generalized_eig, smallest_eigenpairs
from .fem_surface import assemble_surface
from .fem_voxel import assemble_voxel
from .geometry import TriangleMesh, VoxelGrid, load_triangle_mesh, load_voxel_grid
from .spectra import AnalyticShape, SpectrumConfig, analytic_spectrum, classical_mds, compute_spectrum, voxelize

__version__ = "0.1.0"

__all__ = [
    "AnalyticShape",
    "ChartParams",
    "DFEWMAChart",
    "Spectrum",
    "SpectrumConfig",
    "TriangleMesh",
    "VoxelGrid",
    "analytic_spectrum",
    "assemble_surface",
    "assemble_voxel",
    "classical_mds",
    "compute_spectrum",
    "dense_generalized_eig",
    "load_triangle_mesh",
    "load_voxel_grid",
    "run_length_simulation",
    "smallest_eigenpairs",
    "voxelize",
]
