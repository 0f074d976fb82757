"""Compensator synthesis by convex-concave iteration.

Each step linearizes the concave completion of the bilinear main
inequality around the current iterate and solves the resulting SDP,
maximizing the region objective omega(U).  Concavity makes the true
inequality at least as negative as the linearized surrogate, so every
subproblem solution is feasible for the original conditions and the
objective is monotone nondecreasing along accepted iterates.

Numerical scaffolding, all recorded in the iteration trace:

* levels are normalized to max(theta) = 1 internally (P, S1, S2, U
  rescale by the squared factor afterwards; tau, E and the level
  condition are invariant) -- absolute solver tolerances are meaningless
  when trace(U) sits at 1e5;
* the subproblem strictness adapts to the current slack so the previous
  iterate always stays strictly feasible, and the solver is posed a
  slightly tighter bound than declared so its residual slop lands inside
  the declared one;
* each returned point is accepted or rejected on the true stacked
  inequality, positive definiteness and objective monotonicity -- not on
  solver status, which goes both too easy (inaccurate points) and too
  hard (rejecting slop the concavity margin absorbs) near convergence;
* iterates are capped in scale: an objective with an unbounded feasible
  direction would otherwise climb until conditioning kills the solver,
  so the loop stops on the last verified point once lambda_max(P)
  normalized exceeds scale_cap;
* a final polish re-solves P at fixed (tau, E) for maximum uniform
  negativity margin without shrinking omega, replacing the last iterate
  (never appending a trace row).
"""

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import certify, lmi, sdp
from .loop import ClosedLoop, QuantizerSpec


@dataclass(frozen=True)
class SynthesisConfig:
    epsilon: float = 1e-4
    k_max: int = 2000
    ustruct: lmi.UStructure = field(default_factory=lmi.UStructure)
    omega: lmi.Objective = field(default_factory=lmi.Objective)
    line_search: sdp.LineSearchConfig = field(default_factory=sdp.LineSearchConfig)
    delta: float = 1e-7
    tol: float = sdp.DEFAULT_TOL
    backend: str = sdp.DEFAULT_BACKEND
    normalize_levels: bool = True
    polish: bool = True
    scale_cap: float = 100.0

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must be in (0, 1)")
        if self.scale_cap <= 0.0:
            raise ValueError("scale_cap must be positive")


@dataclass(frozen=True)
class TraceRecord:
    k: int
    tau: float
    omega: float
    lambda_max_main: float
    status: str
    ms: float


@dataclass
class IterationTrace:
    """Per-iteration history: one record for the init, one per step.

    Never longer than k_max + 1.  All omega / lambda values are in the
    caller's original units regardless of internal normalization.
    """

    records: list = field(default_factory=list)
    terminated_by: str = ""
    diagnostics: dict = field(default_factory=dict)

    def omega_values(self):
        return np.array([r.omega for r in self.records], dtype=float)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "tau", "omega", "lambda_max_main", "status", "ms"])
            for r in self.records:
                writer.writerow(
                    [r.k, repr(float(r.tau)), repr(float(r.omega)),
                     repr(float(r.lambda_max_main)), r.status, repr(float(r.ms))]
                )


def objective_progress(trace):
    """|Delta omega| between successive records; empty for a single entry."""
    omegas = trace.omega_values()
    if omegas.size < 2:
        return np.empty(0)
    return np.abs(np.diff(omegas))


def _scaled_loop(cl, s):
    if s == 1.0:
        return cl
    return ClosedLoop(
        A=cl.A, B=cl.B, H=cl.H, R=cl.R,
        quantizer=QuantizerSpec(cl.quantizer.theta / s),
    )


def _unscale(it, s):
    """Map a normalized-level iterate back to original units.

    Levels were divided by s, which multiplies the quadratic data by
    s^2; tau and E are invariant.
    """
    if s == 1.0:
        return it
    f = 1.0 / (s * s)
    return lmi.SynthesisIterate(
        tau=it.tau, P=f * it.P, E=it.E, S1=f * it.S1, S2=f * it.S2, U=f * it.U
    )


def _lambda_max_main(it, cl):
    M = lmi.build_main_mi(it, cl)
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])


def _solver_guard(config):
    """Extra tightening handed to the solver on active matrix bounds.

    Interior-point feasibility slop is O(tol); near convergence the
    strictness bound goes active and raw slop would land just past it,
    failing the independent recheck.  Posing the solver a bound tighter
    by a couple of demotion gates keeps the slop inside the declared
    requirement.
    """
    return 20.0 * config.tol


def _iterate_from_solution(sol, cln, ustruct, tau=None, E=None):
    v = sol.values
    tau = v["tau"] if tau is None else tau
    E = v["E"] if E is None else E
    U = np.asarray(ustruct.realize(v, cln.n, cln.n_plant), dtype=float)
    return lmi.SynthesisIterate(tau=tau, P=v["P"], E=E, S1=v["S1"], S2=v["S2"], U=U)


def _polish(it_n, cln, config, delta_n):
    """Margin polish at fixed (tau, E); returns a replacement iterate or None."""
    omega_n = float(config.omega.evaluate(it_n.U))
    trace_pin = float(np.trace(it_n.P))
    slack = 1e-9 * max(1.0, abs(trace_pin), abs(omega_n))
    problem = lmi.build_polish_problem(
        cln, it_n.tau, it_n.E, config.ustruct, config.omega,
        delta=delta_n, trace_lo=trace_pin - slack, trace_hi=trace_pin + slack,
        omega_floor=omega_n - slack, guard=_solver_guard(config),
    )
    sol = sdp.solve(problem, tol=config.tol, backend=config.backend)
    if sol.status not in ("optimal", "feasible"):
        return None
    return _iterate_from_solution(sol, cln, config.ustruct, tau=it_n.tau, E=it_n.E)


def _is_certifiable(it, cl, strict=1e-8):
    report = certify.check_conditions(it, cl)
    return report.valid and report.residuals["lambda_max_main"] <= -strict


def _blend(it0, it1, alpha):
    f = float(alpha)

    def mix(a, b):
        return (1.0 - f) * a + f * b

    return lmi.SynthesisIterate(
        tau=mix(it0.tau, it1.tau), P=mix(it0.P, it1.P), E=mix(it0.E, it1.E),
        S1=mix(it0.S1, it1.S1), S2=mix(it0.S2, it1.S2), U=mix(it0.U, it1.U),
    )


def _repair_step(it0, sol, cln, config, s, slack, omega_prev):
    """Pull an overshooting solver point back along the step segment.

    The linearized matrix is affine on the segment from the strictly
    feasible base to the candidate and majorizes the true one, so some
    fraction of the step is always truly feasible; the largest
    verifiable fraction keeps most of the objective gain.  Returns
    (iterate, omega, status) like _accept_step.
    """
    if not sol.values:
        return None, None, "nothing to repair"
    it1 = _iterate_from_solution(sol, cln, config.ustruct)
    M1 = lmi.build_stacked_mi(it1, cln)
    v = float(np.linalg.eigvalsh(0.5 * (M1 + M1.T))[-1])
    if slack > 0.0:
        alpha = min(0.9, slack / (slack + max(v, 0.0) + 1e-16))
    else:
        alpha = 0.25
    for _ in range(8):
        cand = _blend(it0, it1, alpha)
        M = lmi.build_stacked_mi(cand, cln)
        lam = float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])
        omega = float(config.omega.evaluate(_unscale(cand, s).U))
        if (lam < 0.0 and float(np.linalg.eigvalsh(cand.P)[0]) > 0.0
                and omega > omega_prev):
            return cand, omega, "blended"
        alpha *= 0.5
    return None, None, f"no feasible fraction (candidate residual {v:.3e})"


def _accept_step(sol, cln, config, s, omega_prev):
    """Judge a subproblem point by the true conditions, not solver status.

    The linearized matrix overestimates the concave completion, so a
    point the solver returned with residual slop can still satisfy the
    actual stacked inequality with real margin; conversely no clean
    status is trusted without this check.  Returns (iterate, omega,
    status) on acceptance, (None, None, reason) otherwise.
    """
    if not sol.values:
        return None, None, sol.status
    it = _iterate_from_solution(sol, cln, config.ustruct)
    M = lmi.build_stacked_mi(it, cln)
    lam = float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])
    if not (lam < 0.0):
        return None, None, f"{sol.status}; stacked residual {lam:.3e} >= 0"
    if float(np.linalg.eigvalsh(it.P)[0]) <= 0.0:
        return None, None, f"{sol.status}; P not positive definite"
    omega = float(config.omega.evaluate(_unscale(it, s).U))
    if omega < omega_prev - 1e-7 * max(1.0, abs(omega_prev)):
        return None, None, f"{sol.status}; objective regressed to {omega:.6e}"
    status = sol.status if sol.status in ("optimal", "feasible") else "recovered"
    return it, omega, status


def synthesize(cl, config=None):
    """Design an anti-windup gain with a verified region certificate.

    Runs the initialization line search, iterates the linearized
    subproblem until |omega_k - omega_{k-1}| <= epsilon or k_max, then
    polishes the margin.  Returns (E, iterate, trace) -- never nothing:
    if the solver stops producing points that clear the true-conditions
    gate, or the iterate outgrows the certifiable scale (objectives with
    an unbounded direction), the loop ends with terminated_by =
    "stalled" standing on the last verified iterate; a solver that
    returns nothing usable at all ends it with "solver-failure".

    Deterministic: same loop and config give the same trace.
    """
    if config is None:
        config = SynthesisConfig()

    s = float(np.max(cl.quantizer.theta)) if config.normalize_levels else 1.0
    cln = _scaled_loop(cl, s)
    delta_n = config.delta * max(1.0, s * s)

    trace = IterationTrace()
    it_n, init_diag = sdp.line_search_init(
        cln, config.ustruct, config.omega, config.line_search,
        delta=delta_n, tol=config.tol, backend=config.backend,
    )
    trace.diagnostics["init"] = {
        "radius": init_diag["radius"],
        "statuses": init_diag["statuses"],
        "tau": it_n.tau,
    }
    trace.diagnostics["level_scale"] = s

    it_o = _unscale(it_n, s)
    omega_prev = float(config.omega.evaluate(it_o.U))
    trace.records.append(
        TraceRecord(0, it_o.tau, omega_prev, _lambda_max_main(it_o, cl),
                    init_diag["status"], init_diag["ms"])
    )

    accepted = [it_n]
    guard = _solver_guard(config)
    trace.terminated_by = "k_max"
    for k in range(1, config.k_max + 1):
        t0 = time.perf_counter()

        # region objectives without a binding set constraint can ride an
        # unbounded direction (P and S2 growing together while S1
        # vanishes); absolute strictness cannot certify steps once the
        # normalized iterate outscales solver accuracy, so stop on the
        # last verified point while it is still comfortably checkable
        p_scale = float(np.linalg.eigvalsh(it_n.P)[-1])
        if p_scale > config.scale_cap:
            trace.terminated_by = "stalled"
            trace.diagnostics["stall"] = {
                "iteration": k,
                "status": "scale-cap",
                "p_scale": p_scale,
                "scale_cap": config.scale_cap,
            }
            break

        M_now = lmi.build_stacked_mi(it_n, cln)
        slack = -float(np.linalg.eigvalsh(0.5 * (M_now + M_now.T))[-1])
        if slack > 0.0:
            strictness = min(delta_n, max(delta_n / 5.0, slack / 2.0))
        else:
            strictness = delta_n / 5.0

        def _attempt(strict_k, guard_k):
            problem = lmi.build_linearized_subproblem(
                it_n, cln, config.ustruct, config.omega,
                delta=delta_n, strictness=strict_k, guard=guard_k,
            )
            return sdp.solve(problem, tol=config.tol, backend=config.backend,
                             fallback=False, demote_above=float("inf"))

        def _overshoot(a_sol):
            bad = _iterate_from_solution(a_sol, cln, config.ustruct)
            M_bad = lmi.build_stacked_mi(bad, cln)
            return float(np.linalg.eigvalsh(0.5 * (M_bad + M_bad.T))[-1])

        sol = _attempt(strictness, guard)
        saw_values = bool(sol.values)
        cand, omega_k, status = _accept_step(sol, cln, config, s, omega_prev)
        best_sol = sol if sol.values else None

        if cand is None and sol.values:
            # point past the true inequality: pose deep enough to absorb
            # the measured slop; keep the depth only if it earns a full
            # accepted step, since too much of it breaks the solver
            overshoot = _overshoot(sol)
            if overshoot > 0.0:
                deep = guard + overshoot + _solver_guard(config)
                sol2 = _attempt(strictness, deep)
                saw_values = saw_values or bool(sol2.values)
                cand, omega_k, status = _accept_step(sol2, cln, config, s, omega_prev)
                if cand is not None:
                    guard = deep
                elif sol2.values and _overshoot(sol2) < overshoot:
                    best_sol = sol2

        if cand is None and best_sol is None:
            # nothing usable yet: posed depth may exceed what the current
            # point affords, so ask once at the floor
            sol = _attempt(delta_n / 5.0, _solver_guard(config))
            saw_values = saw_values or bool(sol.values)
            cand, omega_k, status = _accept_step(sol, cln, config, s, omega_prev)
            best_sol = sol if sol.values else best_sol

        if cand is None and best_sol is not None:
            cand, omega_k, status = _repair_step(
                it_n, best_sol, cln, config, s, slack, omega_prev)
        ms = 1000.0 * (time.perf_counter() - t0)

        if cand is None:
            if saw_values:
                # solutions exist but none clears the true-conditions
                # gate: no certifiable progress at solver precision, so
                # stop here and stand on the last verified iterate
                trace.terminated_by = "stalled"
                trace.diagnostics["stall"] = {
                    "iteration": k,
                    "status": status,
                    "guard": guard,
                }
            else:
                trace.records.append(
                    TraceRecord(k, it_n.tau, float("nan"), float("nan"),
                                status, ms)
                )
                trace.terminated_by = "solver-failure"
                trace.diagnostics["failure"] = {
                    "iteration": k,
                    "status": status,
                    "attempts": sol.diagnostics.get("attempts", []),
                }
            break

        it_n = cand
        it_o = _unscale(it_n, s)
        trace.records.append(
            TraceRecord(k, it_o.tau, omega_k, _lambda_max_main(it_o, cl),
                        status, ms)
        )
        accepted.append(it_n)

        # armed from the second step: the first subproblem mostly
        # reorients E away from the zero-gain init and its objective step
        # is structurally small, then steps grow before the real decay
        if k >= 2 and abs(omega_k - omega_prev) <= config.epsilon:
            trace.terminated_by = "converged"
            omega_prev = omega_k
            break
        omega_prev = omega_k

    final_n = accepted[-1]
    final_row = len(accepted) - 1  # records[k] holds iterate k

    if config.polish:
        polished = _polish(final_n, cln, config, delta_n)
        if polished is not None and _is_certifiable(_unscale(polished, s), cl):
            final_n = polished
            it_o = _unscale(final_n, s)
            old = trace.records[final_row]
            trace.records[final_row] = TraceRecord(
                old.k, it_o.tau, float(config.omega.evaluate(it_o.U)),
                _lambda_max_main(it_o, cl), old.status + "+polish", old.ms,
            )
            trace.diagnostics["polish"] = "accepted"
        else:
            trace.diagnostics["polish"] = "rejected"

    # walk back to the newest iterate that still re-verifies cleanly
    final_o = _unscale(final_n, s)
    if not certify.check_conditions(final_o, cl).valid:
        for candidate in reversed(accepted[:-1]):
            cand_o = _unscale(candidate, s)
            if certify.check_conditions(cand_o, cl).valid:
                final_o = cand_o
                trace.diagnostics["fallback"] = "returned an earlier verified iterate"
                break

    return final_o.E, final_o, trace
