"""Data-driven stabilization of polynomial systems via SOS programming.

Pipeline: simulate or ingest a finite noisy experiment, pick a monomial
basis, build one of the five synthesis formulations as an SOS program,
compile it to a semidefinite program, solve, extract the controller and
Lyapunov certificate, and verify the closed loop independently.
"""

from .basis import (
    BasisDiagnostics,
    BasisSpec,
    FactorizationError,
    build_power_vector,
    factorize,
    make_basis,
    validate_basis,
)
from .experiment import (
    BUILTIN_SYSTEMS,
    ConfigurationError,
    DataFormatError,
    DataSet,
    DivergenceError,
    GroundTruth,
    NoNoise,
    ProportionalNoise,
    RichnessReport,
    UniformNoise,
    export_dataset,
    ingest,
    linear1d,
    linear_like_matrices,
    make_noise_bound,
    scalar_cubic,
    set_input_bound,
    simulate_experiment,
    validate_richness,
    vanderpol,
)
from .polyalg import (
    MatrixPolynomial,
    Monomial,
    Polynomial,
    ShapeError,
    enumerate_monomials,
)
from .sdpa import read_sdpa, write_sdpa
from .sdpsolve import (
    ResidualReport,
    SolveOptions,
    SolveReport,
    check_solution,
    solve,
)
from .soscompile import (
    AffineMatrix,
    Method,
    PSDBlock,
    SDPInstance,
    SOSProgram,
    StructuralInfeasibilityError,
    SynthesisProblem,
    build,
    build_and_compile,
    build_cor1,
    build_lsq,
    build_remark1,
    build_thm1,
    build_thm2,
    compile,
    compile_sos_matrix,
)
from .verify import (
    AuditReport,
    Certificate,
    ComparisonReport,
    IllConditionedCertificateError,
    Trajectory,
    boundary_ring,
    closed_loop_field,
    extract,
    lyapunov_audit,
    report,
    simulate_closed_loop,
    simulate_ring,
    timing_verdict,
    vdot_polynomial,
)

__version__ = "0.1.0"
