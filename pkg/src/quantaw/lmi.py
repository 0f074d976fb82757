"""Matrix-inequality construction for anti-windup synthesis.

The closed loop x+ = A x + (B + R E) psi(H x) admits a quadratic
certificate V(x) = x' P x whenever, for some tau in (0,1) and diagonal
multipliers S1, S2 >= 0 absorbing the quantizer sector bounds,

    main(tau, P, E, S1, S2) =
        [ (tau-1) P     -H' S2        A' P        ]
        [    *        -S1 - 2 S2   (B + R E)' P   ]  < 0,
        [    *             *           -P         ]

    theta' S1 theta - tau <= 0,       U - P <= 0,

where U fixes how the guaranteed attraction region is measured.  The
(tau, P) and (E, P) products make ``main`` bilinear; it splits as

    main = L + He(X' Y)

with L affine in (P, S1, S2) and X affine in (tau, E), Y affine in P.
Writing Q = -X'X - Y'Y + He(X'Y) = -(X - Y)'(X - Y) <= 0 gives the
concave completion used by the convex-concave iteration: main = L + Q +
(X'X + Y'Y - ... ) is handled by linearizing Q around the current point
and re-convexifying the remainder with a Schur complement.  Every
builder here returns either a numeric matrix (numpy inputs) or an affine
expression (cvxpy inputs) from the same block formulas.
"""

from dataclasses import dataclass

import numpy as np

from .loop import diagonal_entries
from .sdp import (
    FreeMatrixVar,
    MatrixIneq,
    ScalarIneq,
    ScalarVar,
    SdpProblem,
    SymmetricVar,
    VectorVar,
)


def _is_expr(x):
    return "cvxpy" in type(x).__module__


def _any_expr(*items):
    return any(_is_expr(x) for x in items)


def _bmat(rows):
    if _any_expr(*[b for row in rows for b in row]):
        import cvxpy as cp

        return cp.bmat(rows)
    return np.block(rows)


def _diag(v):
    if _is_expr(v):
        import cvxpy as cp

        return cp.diag(v)
    return np.diag(v)


def _trace(M):
    if _is_expr(M):
        import cvxpy as cp

        return cp.trace(M)
    return np.trace(M)


@dataclass(frozen=True)
class SynthesisIterate:
    """One point of the synthesis iteration: (tau, P, E, S1, S2, U).

    S1 and S2 are stored as vectors of diagonal entries.  The container
    performs shape bookkeeping only; whether the point actually
    satisfies the matrix inequalities is the certifier's job.
    """

    tau: float
    P: np.ndarray
    E: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        E = np.asarray(self.E, dtype=float)
        U = np.asarray(self.U, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError(f"P must be square, got shape {P.shape}")
        if U.shape != P.shape:
            raise ValueError(f"U must match P's shape {P.shape}, got {U.shape}")
        if E.ndim != 2:
            raise ValueError(f"E must be a matrix, got ndim {E.ndim}")
        n_u = E.shape[1]
        S1 = diagonal_entries(self.S1, n_u, "S1")
        S2 = diagonal_entries(self.S2, n_u, "S2")
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "S1", S1)
        object.__setattr__(self, "S2", S2)
        object.__setattr__(self, "U", U)

    @property
    def n(self):
        return self.P.shape[0]

    @property
    def n_inputs(self):
        return self.E.shape[1]


# -- U structures ----------------------------------------------------------

_U_KINDS = ("plant-block-scalar", "equal-to-P", "free-psd")


@dataclass(frozen=True)
class UStructure:
    """Shape of the region-measuring matrix U.

    * ``plant-block-scalar``: U = c * blkdiag(I_np, 0), one scalar c >= 0
      weighting only the plant substate.
    * ``equal-to-P``: U is identified with P; the inclusion U <= P is
      trivial and dropped.
    * ``free-psd``: U a free positive-semidefinite matrix.
    """

    kind: str = "free-psd"

    def __post_init__(self):
        if self.kind not in _U_KINDS:
            raise ValueError(f"unknown U structure {self.kind!r}; pick one of {_U_KINDS}")

    @property
    def needs_inclusion(self):
        return self.kind != "equal-to-P"

    def variables(self, n):
        if self.kind == "plant-block-scalar":
            return [ScalarVar("c", lower=0.0)]
        if self.kind == "free-psd":
            return [SymmetricVar("U", n, bound=0.0)]
        return []

    def realize(self, values, n, n_plant):
        """The U matrix (numeric or expression) implied by ``values``."""
        if self.kind == "plant-block-scalar":
            mask = np.diag(np.r_[np.ones(n_plant), np.zeros(n - n_plant)])
            return values["c"] * mask
        if self.kind == "free-psd":
            return values["U"]
        return values["P"]


@dataclass(frozen=True)
class Objective:
    """Region-size objective omega(U), maximized.

    ``trace-of-U`` scores trace(W U) for an optional symmetric weight W
    (identity when omitted).  Linear in U, so new kinds stay compatible
    with the solver layer as long as they remain affine.
    """

    kind: str = "trace-of-U"
    weight: np.ndarray | None = None

    def __post_init__(self):
        if self.kind != "trace-of-U":
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.weight is not None:
            W = np.asarray(self.weight, dtype=float)
            if W.ndim != 2 or W.shape[0] != W.shape[1]:
                raise ValueError("objective weight must be a square matrix")
            object.__setattr__(self, "weight", 0.5 * (W + W.T))

    def evaluate(self, U):
        if self.weight is None:
            return _trace(U)
        return _trace(self.weight @ U)


# -- block assembly --------------------------------------------------------


def _main_blocks(tau, P, E, s1, s2, cl):
    """Full main inequality; bilinear unless tau and E are fixed numbers."""
    S1 = _diag(s1)
    S2 = _diag(s2)
    B_E = cl.B + cl.R @ E
    m11 = (tau - 1.0) * P
    m12 = -cl.H.T @ S2
    m13 = cl.A.T @ P
    m22 = -S1 - 2.0 * S2
    m23 = B_E.T @ P
    return _bmat(
        [
            [m11, m12, m13],
            [m12.T, m22, m23],
            [m13.T, m23.T, -P],
        ]
    )


def build_main_mi(iterate, cl):
    """Evaluate the main matrix inequality at an iterate (numeric)."""
    return _main_blocks(iterate.tau, iterate.P, iterate.E, iterate.S1, iterate.S2, cl)


def build_level_residual(S1, tau, quantizer):
    """theta' S1 theta - tau; nonpositive iff the level condition holds."""
    th = quantizer.theta
    s1 = diagonal_entries(S1, th.shape[0], "S1")
    return float(np.sum(s1 * th * th) - float(tau))


def build_inclusion_residual(U, P):
    """U - P; negative semidefinite iff the P-ellipsoid sits inside U's."""
    U = np.asarray(U, dtype=float)
    P = np.asarray(P, dtype=float)
    if U.shape != P.shape:
        raise ValueError(f"U and P must share a shape, got {U.shape} vs {P.shape}")
    return U - P


def _L_blocks(P, s1, s2, cl):
    """Affine part of the split: main with the bilinear products removed.

    Equals ``main`` with (1,1) frozen to -P and the psi/P coupling using
    the bare B (the tau P and (R E)' P products live in He(X'Y)).
    """
    S1 = _diag(s1)
    S2 = _diag(s2)
    m12 = -cl.H.T @ S2
    m13 = cl.A.T @ P
    m23 = cl.B.T @ P
    return _bmat(
        [
            [-P, m12, m13],
            [m12.T, -S1 - 2.0 * S2, m23],
            [m13.T, m23.T, -P],
        ]
    )


def _X_blocks(tau, E, cl):
    """X(tau, E): left factor of the bilinear part, shape (2n, 2n + n_u)."""
    n, n_u = cl.n, cl.n_inputs
    half_eye = np.eye(n) / 2.0
    zn = np.zeros((n, n))
    znu = np.zeros((n, n_u))
    RE = cl.R @ E
    return _bmat(
        [
            [tau * half_eye, znu, zn],
            [zn, RE, zn],
        ]
    )


def _Y_blocks(P, cl):
    """Y(P): right factor of the bilinear part, shape (2n, 2n + n_u)."""
    n, n_u = cl.n, cl.n_inputs
    zn = np.zeros((n, n))
    znu = np.zeros((n, n_u))
    return _bmat(
        [
            [P, znu, zn],
            [zn, znu, P],
        ]
    )


def decompose_bilinear(iterate, cl):
    """Split the main inequality as main = L + He(X' Y).

    Returns (L, X, Y) as numeric matrices at the iterate.  The identity
    is exact: rebuilding L + X'Y + Y'X reproduces build_main_mi up to
    float roundoff, which the tests pin at 1e-12.
    """
    L = _L_blocks(iterate.P, iterate.S1, iterate.S2, cl)
    X = _X_blocks(iterate.tau, iterate.E, cl)
    Y = _Y_blocks(iterate.P, cl)
    return L, X, Y


def build_Q(tau, P, E, cl):
    """Concave completion Q = -X'X - Y'Y + He(X'Y) = -(X-Y)'(X-Y).

    Numeric, blockwise:
        (1,1) = -(tau^2/4) I - P^2 + tau P
        (2,2) = -E' R' R E
        (2,3) = E' R' P
        (3,3) = -P^2
    Always negative semidefinite.
    """
    n, n_u = cl.n, cl.n_inputs
    P = np.asarray(P, dtype=float)
    E = np.asarray(E, dtype=float)
    RE = cl.R @ E
    q11 = -(tau * tau / 4.0) * np.eye(n) - P @ P + tau * P
    q22 = -RE.T @ RE
    q23 = RE.T @ P
    q33 = -P @ P
    znu = np.zeros((n, n_u))
    return np.block(
        [
            [q11, znu, np.zeros((n, n))],
            [znu.T, q22, q23],
            [np.zeros((n, n)), q23.T, q33],
        ]
    )


def _dq_blocks(at, h, cl):
    """Differential of Q at ``at`` applied to the displacement ``h``.

    Works for numeric or affine displacements; ``at`` is always numeric.
    Blockwise, with at = (tau0, P0, E0) and h = (ht, hP, hE):
        (1,1) = ht (P0 - (tau0/2) I) + tau0 hP - (P0 hP + hP P0)
        (2,2) = -(hE' R'R E0 + E0' R'R hE)
        (2,3) = E0' R' hP + hE' R' P0
        (3,3) = -(P0 hP + hP P0)
    """
    tau0, P0, E0 = at
    ht, hP, hE = h
    n, n_u = cl.n, cl.n_inputs
    RtR = cl.R.T @ cl.R
    RE0 = cl.R @ E0
    d11 = ht * (P0 - (tau0 / 2.0) * np.eye(n)) + tau0 * hP - (P0 @ hP + hP @ P0)
    d22 = -(hE.T @ (RtR @ E0) + (E0.T @ RtR) @ hE)
    d23 = (RE0.T @ hP) + hE.T @ (cl.R.T @ P0)
    d33 = -(P0 @ hP + hP @ P0)
    znu = np.zeros((n, n_u))
    zn = np.zeros((n, n))
    return _bmat(
        [
            [d11, znu, zn],
            [znu.T, d22, d23],
            [zn, d23.T, d33],
        ]
    )


def apply_DQ(at, h, cl):
    """Numeric DQ(at)[h]; see _dq_blocks for the block formulas."""
    tau0, P0, E0 = at
    ht, hP, hE = h
    return _dq_blocks(
        (float(tau0), np.asarray(P0, float), np.asarray(E0, float)),
        (float(ht), np.asarray(hP, float), np.asarray(hE, float)),
        cl,
    )


def build_stacked_mi(iterate, cl):
    """Schur-lifted form of the linearized subproblem matrix at a point.

    M = [[L + Q, X', Y'], [X, -I, 0], [Y, 0, -I]] evaluated numerically
    at the iterate (the linearization term vanishes there).  M < 0
    implies main < 0, and the slack -lambda_max(M) is what the adaptive
    subproblem strictness feeds on.
    """
    L, X, Y = decompose_bilinear(iterate, cl)
    Q0 = build_Q(iterate.tau, iterate.P, iterate.E, cl)
    n = cl.n
    eye2n = np.eye(2 * n)
    z = np.zeros((2 * n, 2 * n))
    return np.block(
        [
            [L + Q0, X.T, Y.T],
            [X, -eye2n, z],
            [Y, z, -eye2n],
        ]
    )


# -- problem builders ------------------------------------------------------


def _level_ineq(quantizer, tau_or_const):
    thsq = quantizer.theta**2

    def build(values):
        tau = values["tau"] if "tau" in values else tau_or_const
        return thsq @ values["S1"] - tau

    return ScalarIneq("level", build)


def build_init_problem(cl, tau, ustruct, omega, delta=1e-7):
    """Fixed-tau initialization: maximize omega(U) with E = 0.

    Feasible for any Schur-stable loop once tau is below the stability
    gap 1 - rho(A)^2; used by the line search to seed the iteration.
    """
    n, n_p, n_u = cl.n, cl.n_plant, cl.n_inputs
    tau = float(tau)
    E0 = np.zeros((cl.n_controller, n_u))
    variables = [
        SymmetricVar("P", n, bound=delta),
        VectorVar("S1", n_u),
        VectorVar("S2", n_u),
    ]
    variables += ustruct.variables(n)

    def build_main(values):
        return _main_blocks(tau, values["P"], E0, values["S1"], values["S2"], cl)

    matrix_ineqs = [MatrixIneq("main", build_main, bound=delta)]
    if ustruct.needs_inclusion:
        matrix_ineqs.append(
            MatrixIneq(
                "inclusion",
                lambda v: ustruct.realize(v, n, n_p) - v["P"],
                bound=0.0,
            )
        )

    return SdpProblem(
        variables=tuple(variables),
        matrix_ineqs=tuple(matrix_ineqs),
        scalar_ineqs=(_level_ineq(cl.quantizer, tau),),
        objective=lambda v: omega.evaluate(ustruct.realize(v, n, n_p)),
        delta=delta,
    )


def build_linearized_subproblem(q0, cl, ustruct, omega, delta=1e-7, strictness=None,
                                guard=0.0):
    """One convex-concave step around the iterate ``q0``.

    Decision variables (tau, P, E, S1, S2, U).  The bilinear main
    inequality is replaced by the Schur-lifted matrix

        M = [[L + Q(q0) + DQ(q0)[q - q0], X(tau,E)', Y(P)'],
             [X(tau,E), -I, 0],
             [Y(P), 0, -I]]  <=  -strictness * I,

    which is affine in the decisions.  M < 0 implies main < 0 because Q
    is concave with exactly quadratic remainder, so every feasible point
    of the subproblem is feasible for the original inequality; q0 itself
    stays feasible whenever strictness is below its current slack.

    ``guard`` tightens only the bound handed to the solver (the active
    constraint at the optimum, where solver slop concentrates); the
    verified requirement stays at ``strictness``.
    """
    n, n_p, n_u = cl.n, cl.n_plant, cl.n_inputs
    if strictness is None:
        strictness = delta
    at = (q0.tau, q0.P, q0.E)
    Q0 = build_Q(q0.tau, q0.P, q0.E, cl)
    eye2n = np.eye(2 * n)
    z2n = np.zeros((2 * n, 2 * n))

    variables = [
        ScalarVar("tau", lower=delta, upper=1.0 - delta),
        SymmetricVar("P", n, bound=delta),
        FreeMatrixVar("E", (cl.n_controller, n_u)),
        VectorVar("S1", n_u),
        VectorVar("S2", n_u),
    ]
    variables += ustruct.variables(n)

    def build_M(values):
        P, E, tau = values["P"], values["E"], values["tau"]
        L = _L_blocks(P, values["S1"], values["S2"], cl)
        D = _dq_blocks(at, (tau - q0.tau, P - q0.P, E - q0.E), cl)
        R_hat = L + Q0 + D
        X = _X_blocks(tau, E, cl)
        Y = _Y_blocks(P, cl)
        return _bmat(
            [
                [R_hat, X.T, Y.T],
                [X, -eye2n, z2n],
                [Y, z2n, -eye2n],
            ]
        )

    matrix_ineqs = [
        MatrixIneq(
            "linearized-main", build_M,
            bound=float(strictness),
            pose_bound=float(strictness) + float(guard),
        )
    ]
    if ustruct.needs_inclusion:
        matrix_ineqs.append(
            MatrixIneq(
                "inclusion",
                lambda v: ustruct.realize(v, n, n_p) - v["P"],
                bound=0.0,
            )
        )

    return SdpProblem(
        variables=tuple(variables),
        matrix_ineqs=tuple(matrix_ineqs),
        scalar_ineqs=(_level_ineq(cl.quantizer, None),),
        objective=lambda v: omega.evaluate(ustruct.realize(v, n, n_p)),
        delta=delta,
    )


def build_polish_problem(cl, tau, E, ustruct, omega, delta, trace_lo, trace_hi,
                         omega_floor, guard=0.0):
    """Margin maximization at fixed (tau, E).

    Re-solves (P, S1, S2, U) to maximize the uniform negativity margin
    sigma of the main inequality, pinning trace(P) into the narrow
    window [trace_lo, trace_hi] around the accepted iterate's value and
    flooring omega(U) so the reported objective never regresses.  The
    pin keeps the problem bounded: without it the deadzone direction
    lets P grow almost freely for some U structures.
    """
    n, n_p, n_u = cl.n, cl.n_plant, cl.n_inputs
    tau = float(tau)
    E = np.asarray(E, dtype=float)
    eyeN = np.eye(2 * n + n_u)
    variables = [
        SymmetricVar("P", n, bound=delta),
        VectorVar("S1", n_u),
        VectorVar("S2", n_u),
        ScalarVar("sigma", lower=float(delta)),
    ]
    variables += ustruct.variables(n)

    def build_main(values):
        M = _main_blocks(tau, values["P"], E, values["S1"], values["S2"], cl)
        return M + values["sigma"] * eyeN

    matrix_ineqs = [
        MatrixIneq("main-margin", build_main, bound=0.0, pose_bound=float(guard))
    ]
    if ustruct.needs_inclusion:
        matrix_ineqs.append(
            MatrixIneq(
                "inclusion",
                lambda v: ustruct.realize(v, n, n_p) - v["P"],
                bound=0.0,
            )
        )

    scalar_ineqs = (
        _level_ineq(cl.quantizer, tau),
        ScalarIneq("omega-floor", lambda v: omega_floor - omega.evaluate(ustruct.realize(v, n, n_p))),
        ScalarIneq("trace-pin-upper", lambda v: _trace(v["P"]) - trace_hi),
        ScalarIneq("trace-pin-lower", lambda v: trace_lo - _trace(v["P"])),
    )

    return SdpProblem(
        variables=tuple(variables),
        matrix_ineqs=tuple(matrix_ineqs),
        scalar_ineqs=scalar_ineqs,
        objective=lambda v: v["sigma"],
        delta=delta,
    )
