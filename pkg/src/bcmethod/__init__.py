"""Boundary-control toolkit for one-dimensional inverse problems.

Synthesizes inverse data (response kernels) with finite-difference wave
solvers, assembles the connecting operators those data determine, solves
the special boundary-control equation families, and reconstructs
potentials and densities, cross-checking against the classical
Gelfand-Levitan, Krein, Pariiskii, and Marchenko integral equations.
"""

from .numerics import (
    CholeskyOutcome,
    DenseOperator,
    NonInvertibleError,
    SampledFunction,
    SingularEquationError,
    UniformGrid,
    cholesky_posdef,
    cumulative_trapezoid,
    differentiate,
    inner_product,
    solve_fredholm2,
    solve_volterra2,
    time_reverse,
    trapezoid_weights,
)
from .media import (
    Eikonal,
    MediumProfile,
    build_eikonal,
    decaying_sl_solution,
    load_medium_csv,
    make_test_medium,
    save_medium_csv,
    sl_solution,
)
from .forward import (
    CFLViolationError,
    DomainAuditError,
    ResponseKernel,
    WaveField,
    apply_control_operator,
    extract_response_kernel,
    load_kernel_csv,
    save_field_csv,
    save_kernel_csv,
    solve_wave,
)
from .operators import (
    Admissibility,
    ConnectingOperator,
    InadmissibleDataError,
    apply_response,
    assemble_connecting,
    assemble_connecting_factorized,
    check_admissibility,
    integration_matrix,
    response_operator,
    save_matrix_csv,
)
from .bcp import (
    ClassicalKernel,
    ControlFamily,
    DegenerateKernelError,
    SingularControl,
    apply_inverse_control_operator,
    classical_kernel_from_family,
    singular_control,
    solve_classical,
    solve_eigen_target,
    solve_special_family,
    transformation_apply,
    visualize_wave,
)
from .inverse import (
    MaskedFractionError,
    ReconstructionReport,
    reconstruct_gl,
    reconstruct_krein,
    reconstruct_marchenko,
    roundtrip,
)

__version__ = "0.1.0"

__all__ = [
    "Admissibility",
    "CFLViolationError",
    "CholeskyOutcome",
    "ClassicalKernel",
    "ConnectingOperator",
    "ControlFamily",
    "DegenerateKernelError",
    "DenseOperator",
    "DomainAuditError",
    "Eikonal",
    "InadmissibleDataError",
    "MaskedFractionError",
    "MediumProfile",
    "NonInvertibleError",
    "ReconstructionReport",
    "ResponseKernel",
    "SampledFunction",
    "SingularControl",
    "SingularEquationError",
    "UniformGrid",
    "WaveField",
    "apply_control_operator",
    "apply_inverse_control_operator",
    "apply_response",
    "assemble_connecting",
    "assemble_connecting_factorized",
    "build_eikonal",
    "check_admissibility",
    "cholesky_posdef",
    "classical_kernel_from_family",
    "cumulative_trapezoid",
    "decaying_sl_solution",
    "differentiate",
    "extract_response_kernel",
    "inner_product",
    "integration_matrix",
    "load_kernel_csv",
    "load_medium_csv",
    "make_test_medium",
    "reconstruct_gl",
    "reconstruct_krein",
    "reconstruct_marchenko",
    "response_operator",
    "roundtrip",
    "save_field_csv",
    "save_kernel_csv",
    "save_matrix_csv",
    "save_medium_csv",
    "singular_control",
    "sl_solution",
    "solve_classical",
    "solve_eigen_target",
    "solve_fredholm2",
    "solve_special_family",
    "solve_volterra2",
    "solve_wave",
    "time_reverse",
    "transformation_apply",
    "trapezoid_weights",
    "visualize_wave",
]
