"""Exception types shared across the package.

Each maps to one failure class the command-line tool reports: schema
problems in input files, structurally unusable loops, solver breakdowns,
and certificates that do not hold up under re-verification.
"""


class QuantawError(Exception):
    """Base class for all package-specific errors."""


class SchemaError(QuantawError):
    """An input file violates the documented schema.

    Carries the offending field path so the message pinpoints the entry
    (e.g. ``plant.B``) rather than the file as a whole.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class AssemblyError(QuantawError):
    """Plant/controller/quantizer dimensions are mutually inconsistent."""


class InvalidQuantizerError(QuantawError):
    """Quantization levels are not strictly positive finite reals."""


class InvalidMultiplierError(QuantawError):
    """A sector multiplier is not diagonal nonnegative."""


class UnstableLoopError(QuantawError):
    """The nominal closed loop has spectral radius >= 1; synthesis cannot start."""

    def __init__(self, radius):
        self.radius = float(radius)
        super().__init__(
            f"nominal closed loop is not Schur stable (spectral radius {self.radius:.6g} >= 1)"
        )


class NoFeasibleInitError(QuantawError):
    """No grid point produced a feasible initialization.

    Reports the spectral radius and the feasibility window so the caller
    can tell a genuinely hard problem from a badly chosen grid.
    """

    def __init__(self, radius, grid, statuses):
        self.radius = float(radius)
        self.grid = list(grid)
        self.statuses = list(statuses)
        window = 1.0 - self.radius**2
        super().__init__(
            "initialization failed on all %d grid points (spectral radius %.6g, "
            "guaranteed-feasible window is tau < %.6g; grid spans [%.4g, %.4g])"
            % (len(self.grid), self.radius, window, min(self.grid), max(self.grid))
        )


class SolverFailureError(QuantawError):
    """The SDP backend failed in a way that leaves no usable iterate."""


class CertificateError(QuantawError):
    """A certificate failed re-verification; carries the violation report."""

    def __init__(self, report):
        self.report = report
        names = ", ".join(v.condition for v in report.violations) or "unknown"
        super().__init__(f"certificate violates: {names}")
