"""Pure-numpy simulation kernels.

Import-time fallback for the compiled extension.  Arithmetic is kept
operation-for-operation identical to the compiled version so a given
trajectory does not depend on which backend happened to load: the
quantizer uses the same boundary-corrected floor, and matrix products
accumulate column by column in a fixed order (BLAS matvecs are avoided
on purpose -- their summation order is platform-dependent, which would
break bit-for-bit agreement with the compiled loops).
"""

import numpy as np

BACKEND = "python"


def _matvec(M, v):
    # fixed column-order accumulation, one rounding per multiply and add,
    # mirroring the compiled kernel's inner loops exactly
    acc = np.zeros(M.shape[0])
    for k in range(v.shape[0]):
        acc += M[:, k] * v[k]
    return acc


def quantize_batch(u, theta):
    """Quantize rows of ``u`` (shape (..., n_u)) onto the grids ``theta``.

    Boundary-corrected floor: the integer level is floor(|u|/theta)
    computed in floats, then nudged by at most one step so that the exact
    inequalities m*theta <= |u| < (m+1)*theta hold.  This keeps the map
    idempotent in float arithmetic even when |u|/theta rounds across an
    integer.
    """
    u = np.asarray(u, dtype=float)
    a = np.abs(u)
    m = np.floor(a / theta)
    m = np.where((m + 1.0) * theta <= a, m + 1.0, m)
    m = np.where(m * theta > a, m - 1.0, m)
    return np.where(u >= 0.0, 1.0, -1.0) * (m * theta)


def simulate_path(A, B_comp, B_nom, H, theta, x0, active):
    """Roll the quantized loop forward one step per entry of ``active``.

    active[j] selects the input matrix applied to the quantization error
    at step j: B_comp when nonzero, B_nom otherwise.  Returns the state
    sequence (h+1 rows) plus raw and quantized input sequences, each with
    one row per visited state (the final row is the input the loop would
    apply at the terminal state).
    """
    A = np.asarray(A, dtype=float)
    B_comp = np.asarray(B_comp, dtype=float)
    B_nom = np.asarray(B_nom, dtype=float)
    H = np.asarray(H, dtype=float)
    h = active.shape[0]
    n = A.shape[0]
    nu = H.shape[0]
    states = np.empty((h + 1, n))
    u_raw = np.empty((h + 1, nu))
    u_q = np.empty((h + 1, nu))
    x = np.array(x0, dtype=float)
    for j in range(h):
        states[j] = x
        u = _matvec(H, x)
        q = quantize_batch(u, theta)
        u_raw[j] = u
        u_q[j] = q
        B = B_comp if active[j] else B_nom
        x = _matvec(A, x) + _matvec(B, q - u)
    states[h] = x
    u = _matvec(H, x)
    u_raw[h] = u
    u_q[h] = quantize_batch(u, theta)
    return states, u_raw, u_q
