"""Anti-windup gain synthesis for control loops with quantized inputs.

Designs a static compensation gain that routes the input quantization
error back into the controller state, certifies a guaranteed region of
attraction to the quantization-induced limit set, and simulates the
resulting loops.  The synthesis is a convex-concave sequence of SDPs;
certificates are re-verified independently of the solver.
"""

__version__ = "0.1.0"

from .certify import (
    Certificate,
    EllipsoidSet,
    UgftaReport,
    VerificationMargins,
    check_conditions,
    empirical_ugfta,
    gamma_bound,
    inclusion_check,
    reduced_main_mi,
    sample_states,
    time_bound,
)
from .errors import (
    AssemblyError,
    CertificateError,
    InvalidMultiplierError,
    InvalidQuantizerError,
    NoFeasibleInitError,
    QuantawError,
    SchemaError,
    SolverFailureError,
    UnstableLoopError,
)
from .lmi import (
    Objective,
    SynthesisIterate,
    UStructure,
    apply_DQ,
    build_Q,
    build_inclusion_residual,
    build_init_problem,
    build_level_residual,
    build_linearized_subproblem,
    build_main_mi,
    build_stacked_mi,
    decompose_bilinear,
)
from .loop import (
    ClosedLoop,
    ControllerModel,
    PlantModel,
    QuantizerSpec,
    Trajectory,
    assemble_closed_loop,
    psi,
    quantize,
    sector_residuals,
    simulate,
    step,
)
from .sdp import (
    LineSearchConfig,
    SdpProblem,
    SdpSolution,
    line_search_init,
    solve,
    spectral_radius,
)
from .synthesis import (
    IterationTrace,
    SynthesisConfig,
    objective_progress,
    synthesize,
)

__all__ = [
    "Certificate",
    "EllipsoidSet",
    "UgftaReport",
    "VerificationMargins",
    "check_conditions",
    "empirical_ugfta",
    "gamma_bound",
    "inclusion_check",
    "reduced_main_mi",
    "sample_states",
    "time_bound",
    "AssemblyError",
    "CertificateError",
    "InvalidMultiplierError",
    "InvalidQuantizerError",
    "NoFeasibleInitError",
    "QuantawError",
    "SchemaError",
    "SolverFailureError",
    "UnstableLoopError",
    "Objective",
    "SynthesisIterate",
    "UStructure",
    "apply_DQ",
    "build_Q",
    "build_inclusion_residual",
    "build_init_problem",
    "build_level_residual",
    "build_linearized_subproblem",
    "build_main_mi",
    "build_stacked_mi",
    "decompose_bilinear",
    "ClosedLoop",
    "ControllerModel",
    "PlantModel",
    "QuantizerSpec",
    "Trajectory",
    "assemble_closed_loop",
    "psi",
    "quantize",
    "sector_residuals",
    "simulate",
    "step",
    "LineSearchConfig",
    "SdpProblem",
    "SdpSolution",
    "line_search_init",
    "solve",
    "spectral_radius",
    "IterationTrace",
    "SynthesisConfig",
    "objective_progress",
    "synthesize",
    "__version__",
]
