"""Hybridized DG elliptic solver with coastal-slice benchmark drivers."""

from .analytic import (
    ChannelParams,
    ResonanceError,
    SectorParams,
    StandingWaveParams,
    channel_coefficients,
    channel_solution,
    e2_error,
    sector_coefficients,
    sector_solution,
    standing_wave_fields,
)
from .basis import ElementBasis, QuadratureRule, gauss_rule, nodal_basis_1d, nodal_basis_2d
from .fluxops import (
    CoefficientField,
    FaceMatrixSet,
    dirichlet,
    face_matrices,
    neumann,
    system_matrices_1d,
    system_matrices_2d,
)
from .hdg import (
    ElementSolution,
    FactorizedPoisson,
    SingularLocalSystemError,
    SingularTraceError,
    TraceSystem,
    assemble_local,
    assemble_trace_system,
    condense,
    reconstruct,
    solve_elliptic,
    solve_trace,
)
from .mesh import MeshTopology, build_interval_mesh, build_rect_mesh, face_neighbors

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
