"""Declarative SDP layer over cvxpy.

Problems are carried as variable descriptors plus constraint builders:
each builder is an affine map from a dict of variable values to a
symmetric matrix (or scalar).  Builders are evaluated twice -- once on
cvxpy variables to pose the problem, once on the numeric solution for an
independent feasibility recheck with numpy eigenvalues.  A solution
whose recheck violation exceeds 10x the solve tolerance is demoted to
solver-error rather than trusted.

Solves are deterministic for a fixed backend: no randomized restarts,
and the default interior-point backend is itself deterministic.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NoFeasibleInitError, UnstableLoopError

DEFAULT_BACKEND = "CLARABEL"
DEFAULT_TOL = 1e-8


@dataclass(frozen=True)
class ScalarVar:
    name: str
    lower: float | None = None
    upper: float | None = None


@dataclass(frozen=True)
class VectorVar:
    """Componentwise-nonnegative vector (sector multiplier diagonals)."""

    name: str
    size: int


@dataclass(frozen=True)
class SymmetricVar:
    """Symmetric matrix variable constrained to X >= bound * I."""

    name: str
    n: int
    bound: float = 0.0


@dataclass(frozen=True)
class FreeMatrixVar:
    name: str
    shape: tuple


@dataclass(frozen=True)
class MatrixIneq:
    """Affine matrix inequality build(values) <= -bound * I.

    ``bound`` is the requirement the recheck verifies.  ``pose_bound``,
    when set, is the (tighter) bound actually handed to the solver so
    its feasibility slop lands inside the requirement instead of past
    it; it never weakens the requirement.
    """

    name: str
    build: object
    bound: float = 0.0
    pose_bound: float | None = None


@dataclass(frozen=True)
class ScalarIneq:
    """Affine scalar inequality build(values) <= 0."""

    name: str
    build: object


@dataclass(frozen=True)
class SdpProblem:
    variables: tuple
    matrix_ineqs: tuple
    scalar_ineqs: tuple = ()
    objective: object = None  # build(values) -> scalar, maximized; None = feasibility
    delta: float = 1e-7


@dataclass(frozen=True)
class SdpSolution:
    """Outcome of one solve.

    status is one of optimal / feasible / infeasible / solver-error;
    ``feasible`` marks an accepted but not-to-tolerance-optimal point.
    max_violation is the signed worst constraint residual from the
    independent recheck (negative = satisfied with margin); objective is
    recomputed from the returned values, never read off the solver.
    """

    status: str
    values: dict
    objective: float | None
    max_violation: float | None
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class LineSearchConfig:
    """Grid specification for the initialization line search."""

    tau_min: float = 0.01
    tau_max: float = 0.99
    count: int = 50

    def __post_init__(self):
        if not (0.0 < self.tau_min <= self.tau_max < 1.0):
            raise ValueError("grid must satisfy 0 < tau_min <= tau_max < 1")
        if self.count < 1:
            raise ValueError("grid needs at least one point")

    @classmethod
    def from_string(cls, text):
        """Parse "a:b:n" (e.g. "0.01:0.99:50")."""
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid spec must look like a:b:n, got {text!r}")
        return cls(tau_min=float(parts[0]), tau_max=float(parts[1]), count=int(parts[2]))

    def points(self):
        return np.linspace(self.tau_min, self.tau_max, self.count)


def spectral_radius(A):
    """Largest eigenvalue magnitude."""
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(A, dtype=float)))))


def _solver_options(backend, tol):
    if backend == "CLARABEL":
        return {"tol_gap_abs": tol, "tol_gap_rel": tol, "tol_feas": tol}
    if backend == "SCS":
        return {"eps": max(tol, 1e-9)}
    return {}


def _make_variables(problem, cp):
    cvx = {}
    side = []
    for var in problem.variables:
        if isinstance(var, ScalarVar):
            v = cp.Variable(name=var.name)
            if var.lower is not None:
                side.append(v >= var.lower)
            if var.upper is not None:
                side.append(v <= var.upper)
        elif isinstance(var, VectorVar):
            v = cp.Variable(var.size, nonneg=True, name=var.name)
        elif isinstance(var, SymmetricVar):
            v = cp.Variable((var.n, var.n), symmetric=True, name=var.name)
            side.append(v >> var.bound * np.eye(var.n))
        elif isinstance(var, FreeMatrixVar):
            v = cp.Variable(var.shape, name=var.name)
        else:
            raise TypeError(f"unknown variable descriptor {type(var).__name__}")
        cvx[var.name] = v
    return cvx, side


def _extract_values(problem, cvx):
    values = {}
    for var in problem.variables:
        raw = cvx[var.name].value
        if raw is None:
            return None
        if isinstance(var, ScalarVar):
            val = float(raw)
            if var.lower is not None:
                val = max(val, var.lower)
            if var.upper is not None:
                val = min(val, var.upper)
            values[var.name] = val
        elif isinstance(var, VectorVar):
            values[var.name] = np.maximum(np.asarray(raw, dtype=float).reshape(-1), 0.0)
        elif isinstance(var, SymmetricVar):
            M = np.asarray(raw, dtype=float)
            values[var.name] = 0.5 * (M + M.T)
        else:
            values[var.name] = np.asarray(raw, dtype=float)
    return values


def recheck(problem, values):
    """Worst signed constraint residual at ``values`` (numpy eigenvalues)."""
    worst = -np.inf
    for con in problem.matrix_ineqs:
        M = np.asarray(con.build(values), dtype=float)
        M = 0.5 * (M + M.T)
        lam = float(np.linalg.eigvalsh(M)[-1])
        worst = max(worst, lam + con.bound)
    for con in problem.scalar_ineqs:
        worst = max(worst, float(con.build(values)))
    for var in problem.variables:
        if isinstance(var, SymmetricVar):
            lam_min = float(np.linalg.eigvalsh(values[var.name])[0])
            worst = max(worst, var.bound - lam_min)
        elif isinstance(var, VectorVar):
            worst = max(worst, float(np.max(-values[var.name])) if var.size else 0.0)
    return worst


_STATUS_MAP = {
    "optimal": "optimal",
    "optimal_inaccurate": "feasible",
    "infeasible": "infeasible",
    "infeasible_inaccurate": "infeasible",
}


def solve(problem, tol=DEFAULT_TOL, backend=DEFAULT_BACKEND, options=None,
          fallback=True, demote_above=None):
    """Solve an SdpProblem; never raises on solver breakdown.

    Tries the requested backend, then (with fallback) one more backend
    whenever a rung comes back unusable -- hard exception, unrecognized
    status, or a point that fails the independent numpy recheck by more
    than the demotion gate (10*tol unless demote_above overrides it; a
    demoted point is returned with its values but not trusted).
    Statuses: optimal / feasible (accepted, not to tolerance) /
    infeasible / solver-error.  Callers with a sharper notion of
    acceptability than constraint residuals -- the linearized synthesis
    step, whose true conditions hold with margin the posed problem
    cannot see -- pass a wide gate and judge the returned point
    themselves.
    """
    import cvxpy as cp

    cvx, side_constraints = _make_variables(problem, cp)
    constraints = list(side_constraints)
    for con in problem.matrix_ineqs:
        expr = con.build(cvx)
        n = expr.shape[0]
        posed = con.bound if con.pose_bound is None else con.pose_bound
        constraints.append(expr << -posed * np.eye(n))
    for con in problem.scalar_ineqs:
        constraints.append(con.build(cvx) <= 0)
    if problem.objective is None:
        objective = cp.Maximize(0)
    else:
        objective = cp.Maximize(problem.objective(cvx))
    prob = cp.Problem(objective, constraints)

    gate = 10.0 * tol if demote_above is None else float(demote_above)
    attempts = []
    ladder = [(backend, _solver_options(backend, tol))]
    if fallback and backend != "SCS":
        ladder.append(("SCS", _solver_options("SCS", tol)))
    if options:
        ladder[0] = (backend, {**ladder[0][1], **options})

    t0 = time.perf_counter()
    best = None  # least-violating demoted point, in case every rung fails
    for name, opts in ladder:
        try:
            prob.solve(solver=name, **opts)
        except (KeyboardInterrupt, SystemExit):
            raise
        except BaseException as exc:
            # hard solver breakdown; try the next rung.  BaseException on
            # purpose: rust-backed solvers surface internal panics as
            # direct BaseException subclasses, and a crashed rung is a
            # failed rung, not our crash
            attempts.append((name, f"exception: {exc}"))
            continue
        raw_status = prob.status
        status = _STATUS_MAP.get(raw_status, "solver-error")
        if status == "infeasible":
            # a definite answer, not a breakdown -- no point shopping
            attempts.append((name, raw_status))
            ms = 1000.0 * (time.perf_counter() - t0)
            return SdpSolution("infeasible", {}, None, None,
                               {"attempts": attempts, "ms": ms, "backend": backend})
        if status == "solver-error":
            attempts.append((name, raw_status))
            continue
        values = _extract_values(problem, cvx)
        if values is None:
            attempts.append((name, f"{raw_status}, no values returned"))
            continue
        violation = recheck(problem, values)
        objective_value = None
        if problem.objective is not None:
            objective_value = float(problem.objective(values))
        if violation > gate:
            attempts.append((name, f"{raw_status}, recheck violation {violation:.3e}"))
            if best is None or violation < best[2]:
                best = (values, objective_value, violation)
            continue
        attempts.append((name, raw_status))
        ms = 1000.0 * (time.perf_counter() - t0)
        return SdpSolution(status, values, objective_value, violation,
                           {"attempts": attempts, "ms": ms, "backend": backend})

    ms = 1000.0 * (time.perf_counter() - t0)
    diagnostics = {"attempts": attempts, "ms": ms, "backend": backend}
    if best is not None:
        diagnostics["recheck"] = f"violation {best[2]:.3e} exceeds the demotion gate"
        return SdpSolution("solver-error", best[0], best[1], best[2], diagnostics)
    return SdpSolution("solver-error", {}, None, None, diagnostics)


def line_search_init(cl, ustruct, omega, config=None, delta=1e-7, tol=DEFAULT_TOL,
                     backend=DEFAULT_BACKEND):
    """Scan a tau grid of fixed-tau initializations; keep the best.

    Solves the E = 0 problem at every grid point and returns the iterate
    with the largest re-verified objective (ties go to the smaller tau).
    Raises UnstableLoopError when the nominal loop is not Schur stable,
    NoFeasibleInitError when no grid point is feasible -- the error
    reports the spectral radius and the guaranteed-feasible window.
    """
    from . import lmi

    if config is None:
        config = LineSearchConfig()
    radius = spectral_radius(cl.A)
    if radius >= 1.0:
        raise UnstableLoopError(radius)

    best = None
    statuses = []
    grid = config.points()
    t0 = time.perf_counter()
    for tau in grid:
        problem = lmi.build_init_problem(cl, tau, ustruct, omega, delta=delta)
        sol = solve(problem, tol=tol, backend=backend)
        statuses.append(sol.status)
        if sol.status in ("optimal", "feasible") and (
            best is None or sol.objective > best[1].objective
        ):
            best = (float(tau), sol)
    ms = 1000.0 * (time.perf_counter() - t0)

    if best is None:
        raise NoFeasibleInitError(radius, grid, statuses)

    tau_star, sol = best
    E0 = np.zeros((cl.n_controller, cl.n_inputs))
    ustruct_values = dict(sol.values)
    U = ustruct.realize(ustruct_values, cl.n, cl.n_plant)
    U = np.asarray(U, dtype=float)
    iterate = lmi.SynthesisIterate(
        tau=tau_star, P=sol.values["P"], E=E0,
        S1=sol.values["S1"], S2=sol.values["S2"], U=U,
    )
    diagnostics = {
        "radius": radius,
        "grid": grid,
        "statuses": statuses,
        "objective": sol.objective,
        "status": sol.status,
        "ms": ms,
        "max_violation": sol.max_violation,
    }
    return iterate, diagnostics
