"""Quantized output-feedback loops.

A linear plant in feedback with a linear dynamic controller whose output
passes through a uniform quantizer before reaching the plant.  The loop
is rewritten in error coordinates: the state update is driven by the
quantization error psi(u) = q(u) - u, which obeys elementwise sector
bounds.  An anti-windup gain E injects the same error into the
controller state, giving the compensated update

    x+ = A x + (B + R E) psi(H x).

This module owns the model containers, the quantizer and its sector
residuals, closed-loop assembly, and simulation.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels_py, kernels
from .errors import AssemblyError, InvalidMultiplierError, InvalidQuantizerError


def _matrix(value, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 2:
        raise AssemblyError(f"{name} must be a 2-d matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise AssemblyError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class PlantModel:
    """Discrete-time linear plant x+ = A x + B u, y = C x."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = _matrix(self.A, "plant.A")
        B = _matrix(self.B, "plant.B")
        C = _matrix(self.C, "plant.C")
        if A.shape[0] != A.shape[1]:
            raise AssemblyError(f"plant.A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise AssemblyError(
                f"plant.B must have {A.shape[0]} rows to match plant.A, got {B.shape[0]}"
            )
        if C.shape[1] != A.shape[0]:
            raise AssemblyError(
                f"plant.C must have {A.shape[0]} columns to match plant.A, got {C.shape[1]}"
            )
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.B.shape[1]

    @property
    def n_outputs(self):
        return self.C.shape[0]


@dataclass(frozen=True)
class ControllerModel:
    """Dynamic output-feedback controller xc+ = A xc + B y, u = C xc + D y."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = _matrix(self.A, "controller.A")
        B = _matrix(self.B, "controller.B")
        C = _matrix(self.C, "controller.C")
        D = _matrix(self.D, "controller.D")
        if A.shape[0] != A.shape[1]:
            raise AssemblyError(f"controller.A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise AssemblyError(
                f"controller.B must have {A.shape[0]} rows to match controller.A, got {B.shape[0]}"
            )
        if C.shape[1] != A.shape[0]:
            raise AssemblyError(
                f"controller.C must have {A.shape[0]} columns to match controller.A, "
                f"got {C.shape[1]}"
            )
        if D.shape != (C.shape[0], B.shape[1]):
            raise AssemblyError(
                f"controller.D must have shape {(C.shape[0], B.shape[1])}, got {D.shape}"
            )
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @property
    def n_states(self):
        return self.A.shape[0]


@dataclass(frozen=True)
class QuantizerSpec:
    """Per-channel uniform quantization levels theta (strictly positive)."""

    theta: np.ndarray

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if th.ndim != 1:
            raise InvalidQuantizerError("theta must be a vector of levels")
        if th.size == 0:
            raise InvalidQuantizerError("theta must have at least one channel")
        if not np.all(np.isfinite(th)) or np.any(th <= 0.0):
            raise InvalidQuantizerError("levels must be strictly positive finite reals")
        object.__setattr__(self, "theta", th)

    @property
    def n_channels(self):
        return self.theta.shape[0]


@dataclass(frozen=True)
class ClosedLoop:
    """Assembled loop matrices in error coordinates.

    x+ = A x + B psi(H x) without compensation; the anti-windup gain
    enters through R, replacing B by B + R E.  R selects the controller
    substate, so E only reshapes how quantization error hits the
    controller.
    """

    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    R: np.ndarray
    quantizer: QuantizerSpec

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def n_plant(self):
        return self.n - self.n_controller

    @property
    def n_controller(self):
        return self.R.shape[1]

    @property
    def n_inputs(self):
        return self.H.shape[0]

    def input_matrix(self, E=None):
        """B + R E (or plain B when E is None): gain applied to psi."""
        if E is None:
            return self.B
        E = np.asarray(E, dtype=float)
        if E.shape != (self.n_controller, self.n_inputs):
            raise AssemblyError(
                f"E must have shape {(self.n_controller, self.n_inputs)}, got {E.shape}"
            )
        return self.B + self.R @ E


def assemble_closed_loop(plant, controller, quantizer):
    """Build the error-coordinate loop from plant, controller, quantizer.

    Parameters
    ----------
    plant : PlantModel
    controller : ControllerModel
    quantizer : QuantizerSpec
        Must have one level per controller output channel.

    Returns
    -------
    ClosedLoop

    Raises
    ------
    AssemblyError
        If any interconnection dimension disagrees, naming the pair.
    """
    if controller.B.shape[1] != plant.n_outputs:
        raise AssemblyError(
            f"controller.B has {controller.B.shape[1]} input columns but plant.C "
            f"produces {plant.n_outputs} outputs"
        )
    if controller.C.shape[0] != plant.n_inputs:
        raise AssemblyError(
            f"controller.C produces {controller.C.shape[0]} outputs but plant.B "
            f"accepts {plant.n_inputs} inputs"
        )
    if quantizer.n_channels != plant.n_inputs:
        raise AssemblyError(
            f"quantizer has {quantizer.n_channels} channels but plant.B accepts "
            f"{plant.n_inputs} inputs"
        )
    n_p, n_c = plant.n_states, controller.n_states
    A = np.block(
        [
            [plant.A + plant.B @ controller.D @ plant.C, plant.B @ controller.C],
            [controller.B @ plant.C, controller.A],
        ]
    )
    B = np.vstack([plant.B, np.zeros((n_c, plant.n_inputs))])
    H = np.hstack([controller.D @ plant.C, controller.C])
    R = np.vstack([np.zeros((n_p, n_c)), np.eye(n_c)])
    return ClosedLoop(A=A, B=B, H=H, R=R, quantizer=quantizer)


def quantize(u, quantizer):
    """Uniform quantization of ``u`` onto the per-channel grids.

    Rounds each component toward zero to an integer multiple of its
    level; zero maps to zero (the sign convention puts 0 on the grid).
    Broadcasts over leading axes, with channels on the last axis.
    """
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("quantize requires finite inputs")
    return _kernels_py.quantize_batch(u, quantizer.theta)


def psi(u, quantizer):
    """Quantization error psi(u) = quantize(u) - u; satisfies |psi_i| <= theta_i."""
    u = np.asarray(u, dtype=float)
    return quantize(u, quantizer) - u


def diagonal_entries(S, n, name):
    """Validate a diagonal nonnegative multiplier; return its diagonal.

    Accepts a length-n vector of entries or an n-by-n matrix whose
    off-diagonal part is exactly zero.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim == 1:
        d = S
    elif S.ndim == 2:
        if S.shape != (n, n):
            raise InvalidMultiplierError(f"{name} must be {n}x{n}, got {S.shape}")
        if np.count_nonzero(S - np.diag(np.diag(S))):
            raise InvalidMultiplierError(f"{name} must be diagonal")
        d = np.diag(S).copy()
    else:
        raise InvalidMultiplierError(f"{name} must be a vector or square matrix")
    if d.shape[0] != n:
        raise InvalidMultiplierError(f"{name} must have {n} diagonal entries, got {d.shape[0]}")
    if not np.all(np.isfinite(d)) or np.any(d < 0.0):
        raise InvalidMultiplierError(f"{name} entries must be finite and nonnegative")
    return d


def sector_residuals(u, S1, S2, quantizer):
    """Evaluate the two quantizer sector forms at ``u``.

    For diagonal S1, S2 >= 0 and e = psi(u):

    * ``e' S1 e - theta' S1 theta``  (error magnitude bound)
    * ``e' S2 (e + u)``              (error against the quantized value)

    Both are nonpositive for every real u; these residuals are the
    algebraic backbone of the stability conditions.

    Returns
    -------
    (float, float)
    """
    n_u = quantizer.n_channels
    s1 = diagonal_entries(S1, n_u, "S1")
    s2 = diagonal_entries(S2, n_u, "S2")
    u = np.broadcast_to(np.asarray(u, dtype=float), (n_u,))
    e = psi(u, quantizer)
    th = quantizer.theta
    r1 = float(np.sum(s1 * e * e) - np.sum(s1 * th * th))
    r2 = float(np.sum(s2 * e * (e + u)))
    return r1, r2


@dataclass(frozen=True)
class Trajectory:
    """Closed-loop rollout: one row per step index, inputs included.

    All arrays share the same leading length horizon+1.  The input rows
    hold the controller output evaluated at each visited state (the last
    row is the input the loop *would* apply at the terminal state);
    ``compensation_active`` is False at the terminal index since no step
    is taken from it.
    """

    states: np.ndarray
    inputs_raw: np.ndarray
    inputs_quantized: np.ndarray
    compensation_active: np.ndarray

    @property
    def horizon(self):
        return self.states.shape[0] - 1

    def to_csv(self, path):
        """Write one row per step: index, state, raw input, quantized input, flag."""
        n = self.states.shape[1]
        n_u = self.inputs_raw.shape[1]
        header = (
            ["j"]
            + [f"x_{i + 1}" for i in range(n)]
            + [f"u_raw_{i + 1}" for i in range(n_u)]
            + [f"u_q_{i + 1}" for i in range(n_u)]
            + ["comp_active"]
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for j in range(self.states.shape[0]):
                row = (
                    [j]
                    + [repr(float(v)) for v in self.states[j]]
                    + [repr(float(v)) for v in self.inputs_raw[j]]
                    + [repr(float(v)) for v in self.inputs_quantized[j]]
                    + [int(self.compensation_active[j])]
                )
                writer.writerow(row)


def _schedule_array(schedule, horizon):
    if schedule is None:
        return np.ones(horizon, dtype=np.uint8)
    sched = np.asarray(schedule)
    if sched.shape != (horizon,):
        raise AssemblyError(
            f"schedule must have one flag per step ({horizon}), got shape {sched.shape}"
        )
    return sched.astype(bool).astype(np.uint8)


def step(cl, E, x, compensation_on=True):
    """One closed-loop update x+ = A x + (B + R E) psi(H x).

    With ``compensation_on`` False the plain B is used.  Routed through
    the simulation kernel so single steps match rollouts bit for bit.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (cl.n,):
        raise AssemblyError(f"state must have shape {(cl.n,)}, got {x.shape}")
    B_comp = cl.input_matrix(E)
    active = np.array([1 if compensation_on else 0], dtype=np.uint8)
    states, _, _ = kernels.simulate_path(
        cl.A, B_comp, cl.B, cl.H, cl.quantizer.theta, x, active
    )
    return states[1]


def simulate(cl, E, x0, horizon, schedule=None):
    """Roll the loop forward ``horizon`` steps from ``x0``.

    Parameters
    ----------
    cl : ClosedLoop
    E : array or None
        Anti-windup gain; None simulates the uncompensated loop.
    horizon : int
        Number of steps (>= 0).
    schedule : array-like of bool, optional
        Per-step compensation flags; default all on.

    Returns
    -------
    Trajectory
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (cl.n,):
        raise AssemblyError(f"x0 must have shape {(cl.n,)}, got {x0.shape}")
    horizon = int(horizon)
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    active = _schedule_array(schedule, horizon)
    B_comp = cl.input_matrix(E)
    states, u_raw, u_q = kernels.simulate_path(
        cl.A, B_comp, cl.B, cl.H, cl.quantizer.theta, x0, active
    )
    flags = np.concatenate([active.astype(bool), [False]])
    return Trajectory(
        states=states,
        inputs_raw=u_raw,
        inputs_quantized=u_q,
        compensation_active=flags,
    )
