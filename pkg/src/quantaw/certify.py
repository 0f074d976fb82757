"""Certificate verification for synthesized compensators.

A certificate packages an iterate (tau, P, E, S1, S2, U) whose matrix
inequalities have been re-verified numerically, together with the decay
data extracted from them: the largest varrho such that

    M_red + blkdiag(varrho P, 0) <= 0,

where M_red is the Schur-reduced main inequality in the (x, psi) blocks.
Along compensated trajectories the quadratic V(x) = x' P x then obeys

    V+ <= e^mu V   while V >= 1,      mu = ln(1 - varrho) < 0,
    V+ <= 1        once V <= 1,

so the unit sublevel set of V is invariant and uniformly attractive from
the sublevel set of U, with the entry time from x bounded by
ceil(ln V(x) / -mu).  All checks here are independent of the solver: raw
numpy eigenvalues on rebuilt matrices, plus optional empirical replay of
the guarantees along simulated trajectories.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import lmi
from .errors import CertificateError
from .loop import simulate

_VARRHO_FLOOR = 1e-14


@dataclass(frozen=True)
class VerificationMargins:
    """Numerical slack for re-verification.

    eig: absolute slack allowed on the non-strict conditions (level,
    inclusion).  The main inequality must be strictly negative definite
    -- no slack.  sim_rel: relative slack on V in simulation checks.
    """

    eig: float = 1e-6
    sim_rel: float = 1e-9


@dataclass(frozen=True)
class Violation:
    condition: str
    residual: float


@dataclass(frozen=True)
class EllipsoidSet:
    """Sublevel set { x : x' Q x <= level }."""

    Q: np.ndarray
    level: float = 1.0

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return float(x @ self.Q @ x)
        return np.einsum("ij,jk,ik->i", x, self.Q, x)

    def contains(self, x, rel_margin=0.0):
        return self.value(x) <= self.level * (1.0 + rel_margin)


@dataclass(frozen=True)
class Certificate:
    """Re-verified iterate plus decay data.

    ``violations`` is empty exactly when every condition held within the
    margins; a failed check never raises here, it is reported, so a
    Certificate doubles as the violation report.  mu/varrho are None
    when verification failed before the decay extraction.
    """

    tau: float
    P: np.ndarray
    E: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    U: np.ndarray
    mu: float | None
    varrho: float | None
    residuals: dict
    margins: VerificationMargins
    violations: tuple = ()

    @property
    def valid(self):
        return not self.violations

    def attractor(self):
        """Invariant target set { x : x' P x <= 1 }."""
        return EllipsoidSet(self.P, 1.0)

    def region(self):
        """Guaranteed region of attraction measure { x : x' U x <= 1 }."""
        return EllipsoidSet(self.U, 1.0)


def _require_valid(cert):
    if not cert.valid:
        raise CertificateError(cert)


def reduced_main_mi(iterate, cl):
    """Schur reduction of the main inequality onto the (x, psi) blocks.

    base + [A'; B_E'] P [A'; B_E']' with base carrying the (tau-1) P,
    sector, and multiplier blocks.  Negative definite iff the full main
    inequality is (P > 0).
    """
    S1 = np.diag(iterate.S1)
    S2 = np.diag(iterate.S2)
    P = iterate.P
    B_E = cl.input_matrix(iterate.E)
    base = np.block(
        [
            [(iterate.tau - 1.0) * P, -cl.H.T @ S2],
            [-S2 @ cl.H, -S1 - 2.0 * S2],
        ]
    )
    F = np.vstack([cl.A.T, B_E.T])
    return base + F @ P @ F.T


def _extract_decay(iterate, cl):
    """Bisect the largest varrho with M_red + blkdiag(varrho P, 0) <= 0."""
    M_red = reduced_main_mi(iterate, cl)
    n, n_u = cl.n, cl.n_inputs
    bump = np.zeros_like(M_red)

    def feasible(rho):
        bump[:n, :n] = rho * iterate.P
        return float(np.linalg.eigvalsh(M_red + bump)[-1]) <= 0.0

    if not feasible(0.0):
        return None
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


def check_conditions(iterate, cl, margins=None):
    """Re-verify an iterate and extract its decay certificate.

    Matrix inequalities are rebuilt from scratch and tested with numpy
    eigenvalues: the main inequality strictly, the level and inclusion
    conditions within ``margins.eig``.  Returns a Certificate whose
    ``violations`` lists every failed condition (empty = valid).
    """
    if margins is None:
        margins = VerificationMargins()
    P = 0.5 * (iterate.P + iterate.P.T)
    it = lmi.SynthesisIterate(
        tau=iterate.tau, P=P, E=iterate.E, S1=iterate.S1, S2=iterate.S2, U=iterate.U
    )

    lam_min_P = float(np.linalg.eigvalsh(P)[0])
    main = lmi.build_main_mi(it, cl)
    lam_main = float(np.linalg.eigvalsh(0.5 * (main + main.T))[-1])
    level = lmi.build_level_residual(it.S1, it.tau, cl.quantizer)
    incl = lmi.build_inclusion_residual(it.U, it.P)
    lam_incl = float(np.linalg.eigvalsh(0.5 * (incl + incl.T))[-1])

    residuals = {
        "lambda_min_P": lam_min_P,
        "lambda_max_main": lam_main,
        "level": level,
        "lambda_max_inclusion": lam_incl,
    }

    violations = []
    if not (0.0 < it.tau < 1.0):
        violations.append(Violation("tau-range", it.tau))
    if lam_min_P <= 0.0:
        violations.append(Violation("positive-definite-P", lam_min_P))
    if lam_main >= 0.0:
        violations.append(Violation("main-negative-definite", lam_main))
    if level > margins.eig:
        violations.append(Violation("level", level))
    if lam_incl > margins.eig:
        violations.append(Violation("inclusion", lam_incl))

    mu = None
    varrho = None
    if not violations:
        varrho = _extract_decay(it, cl)
        if varrho is None or varrho < _VARRHO_FLOOR:
            violations.append(Violation("decrease-rate", 0.0 if varrho is None else varrho))
            varrho = None
        else:
            mu = math.log1p(-varrho)
            residuals["varrho"] = varrho

    return Certificate(
        tau=it.tau,
        P=it.P,
        E=it.E,
        S1=it.S1,
        S2=it.S2,
        U=it.U,
        mu=mu,
        varrho=varrho,
        residuals=residuals,
        margins=margins,
        violations=tuple(violations),
    )


def inclusion_check(cert, margin=None):
    """True iff the U-ellipsoid contains the P-ellipsoid (U - P <= 0)."""
    if margin is None:
        margin = cert.margins.eig
    incl = lmi.build_inclusion_residual(cert.U, cert.P)
    return float(np.linalg.eigvalsh(0.5 * (incl + incl.T))[-1]) <= margin


def _ceil_guarded(r):
    # guards the ceiling against log/exp round-trip error at integer ties
    return int(math.ceil(r - 1e-12 * max(1.0, abs(r))))


def gamma_bound(cert, x, c=1.0):
    """Certified entry step count into { V <= c } from state ``x``.

    0 when V(x) <= c, else ceil(ln(V/c) / -mu).
    """
    _require_valid(cert)
    x = np.asarray(x, dtype=float)
    V = float(x @ cert.P @ x)
    if V <= c:
        return 0
    return _ceil_guarded(math.log(V / c) / (-cert.mu))


def time_bound(cert, radius, c=1.0):
    """Entry-time bound uniform over the ball of given radius.

    Over-approximates sup V on the ball by lambda_max(P) (lambda_min(P)^-1/2
    + radius)^2 and applies the decay rate.
    """
    _require_valid(cert)
    eigs = np.linalg.eigvalsh(cert.P)
    v_ub = float(eigs[-1]) * (1.0 / math.sqrt(float(eigs[0])) + float(radius)) ** 2
    if v_ub <= c:
        return 0
    return _ceil_guarded(math.log(v_ub / c) / (-cert.mu))


def sample_states(cert, count, v_min=1.0, v_max=1e3, seed=0):
    """Random states with V(x) uniform in (v_min, v_max), directions uniform."""
    _require_valid(cert)
    rng = np.random.default_rng(seed)
    n = cert.P.shape[0]
    L = np.linalg.cholesky(cert.P)
    Y = rng.standard_normal((count, n))
    Y /= np.linalg.norm(Y, axis=1, keepdims=True)
    v = rng.uniform(v_min, v_max, size=count)
    # rows solve L' x = y so that V(x) = ||y||^2 = v
    X = np.linalg.solve(L.T, (Y * np.sqrt(v)[:, None]).T).T
    return X


@dataclass(frozen=True)
class UgftaReport:
    """Empirical replay of the decrease/invariance/entry guarantees."""

    samples: int
    steps_checked: int
    decrease_violations: tuple
    invariance_violations: tuple
    entry_violations: tuple
    worst_decrease_residual: float
    worst_invariance_residual: float

    @property
    def ok(self):
        return not (
            self.decrease_violations
            or self.invariance_violations
            or self.entry_violations
        )


def empirical_ugfta(cert, cl, states, extra_steps=25):
    """Replay the certificate guarantees along simulated trajectories.

    For each initial state: every step taken outside { V <= 1 } must
    contract by e^mu (within the relative margin), every step inside
    must stay inside, and the trajectory must enter { V <= 1 } within
    gamma_bound of its start and never leave afterwards.

    Returns an UgftaReport; empty violation tuples mean every sampled
    guarantee held.
    """
    _require_valid(cert)
    states = np.atleast_2d(np.asarray(states, dtype=float))
    rel = cert.margins.sim_rel
    contraction = math.exp(cert.mu)
    c_eff = 1.0 + rel

    decrease_bad = []
    invariance_bad = []
    entry_bad = []
    worst_dec = -np.inf
    worst_inv = -np.inf
    total_steps = 0

    for idx, x0 in enumerate(states):
        gamma = gamma_bound(cert, x0)
        horizon = gamma + int(extra_steps)
        traj = simulate(cl, cert.E, x0, horizon)
        V = np.einsum("ij,jk,ik->i", traj.states, cert.P, traj.states)
        total_steps += horizon

        outside = V[:-1] > 1.0
        bound = np.where(outside, contraction * V[:-1] + rel * V[:-1], c_eff)
        resid = V[1:] - bound
        dec_resid = resid[outside]
        if dec_resid.size:
            worst_dec = max(worst_dec, float(np.max(dec_resid)))
            if np.any(dec_resid > 0.0):
                decrease_bad.append((idx, int(np.argmax(resid * outside))))
        inv_resid = resid[~outside]
        if inv_resid.size:
            worst_inv = max(worst_inv, float(np.max(inv_resid)))
            if np.any(inv_resid > 0.0):
                invariance_bad.append((idx, int(np.argmax(resid * (~outside)))))

        inside = np.nonzero(V <= c_eff)[0]
        entry = int(inside[0]) if inside.size else horizon + 1
        if entry > gamma or np.any(V[entry:] > c_eff):
            entry_bad.append(idx)

    return UgftaReport(
        samples=states.shape[0],
        steps_checked=total_steps,
        decrease_violations=tuple(decrease_bad),
        invariance_violations=tuple(invariance_bad),
        entry_violations=tuple(entry_bad),
        worst_decrease_residual=float(worst_dec) if np.isfinite(worst_dec) else 0.0,
        worst_invariance_residual=float(worst_inv) if np.isfinite(worst_inv) else 0.0,
    )
