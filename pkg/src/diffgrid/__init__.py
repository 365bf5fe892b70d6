"""diffgrid: inversion-free differential deformation of grids and meshes.

Vertices are reparameterized as convex combinations of their neighbors
(softplus-normalized weights), optimized one independent color class at a
time with per-color Adam, inversion rollbacks and an IPC-style barrier.
Ships three applications: 2D toy grid deformations, UV parameterization
under five distortion energies, and image compaction.
"""

from .complexes import (BoundaryConstraint, GridTopology, SimplicialComplex,
                        apply_boundary, build_grid, in_kernel, signed_area,
                        signed_volume, subdivide_cell_2d, subdivide_cell_3d)
from .coloring import VertexColoring, greedy_coloring, grid_parity_coloring, verify_independent
from .diffrep import DifferentialWeights, fit_weights_to_positions, forward_positions, normalize
from .energy import (BarrierSpec, EnergySpec, ReferenceGeometry, barrier_energy,
                     energy_gradient, eval_toy, eval_uv_energy, ipc_barrier,
                     jacobian_singular_values, triangle_quantities)
from .optim import (AdamState, OptConfig, OptResult, StepReport,
                    alternating_optimize, detect_inversions,
                    direct_deform_optimize, line_search_optimize, reset_inverted)
from .uv import TriangleMesh3D, boundary_loop, load_obj, optimize_uv, save_obj, tutte_embed
from .imagewarp import (CompactConfig, DeformableImage, RasterImage,
                        bilinear_resize, compact, gaussian_blur, psnr,
                        reconstruct, sample_color)

__version__ = "0.1.0"
