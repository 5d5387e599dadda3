"""Asynchronous primal Schur domain-decomposition solver with a simulated
cluster runtime, desk-scale convergence certificates and an experiment CLI."""

from .decomp import (
    Decomposition,
    InterfaceMap,
    LocalSubdomain,
    assemble_schur_explicit,
    build_interface_map,
    extract_local,
    partition,
    prolong,
    restrict,
)
from .linalg import (
    LuFactors,
    SparseMatrix,
    comparison_matrix,
    is_h_matrix,
    is_m_matrix,
    lu_factorize,
    lu_solve,
    spectral_radius_nonneg,
    spmv,
    weighted_max_norm,
    weighted_row_sums,
)
from .poisson import AssembledProblem, GridSpec, assemble, exact_solution
from .runtime import (
    AsyncSimulator,
    DelayModel,
    Envelope,
    FaultEvent,
    FaultPlan,
    RuntimeConfig,
    async_solve,
    cg_with_restart,
    deterministic_replay,
    inject_fault,
)
from .solvers import (
    SchurSystem,
    SolveReport,
    cg_schur,
    compute_d,
    global_residual,
    recover_interior,
    schur_apply,
    sync_relaxation,
)
from .splitting import (
    CertificateSet,
    InterfaceSplitting,
    build_splitting,
    certify,
    certify_async,
    certify_global,
    certify_h_conditions,
    interface_diagonal,
)

__version__ = "0.1.0"
