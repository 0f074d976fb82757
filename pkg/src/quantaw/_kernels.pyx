# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled simulation kernels: quantized closed-loop rollout.

Arithmetic mirrors _kernels_py operation for operation: the same floor
correction and the same column-order accumulation with one rounding per
multiply and add (the build disables floating-point contraction so no
multiply-add gets fused), so both backends produce bit-identical
trajectories.
"""

from libc.math cimport fabs, floor

import numpy as np

BACKEND = "compiled"


cdef inline double _q1(double u, double th) nogil:
    cdef double a = fabs(u)
    cdef double m = floor(a / th)
    if (m + 1.0) * th <= a:
        m += 1.0
    if m * th > a:
        m -= 1.0
    if u >= 0.0:
        return m * th
    return -(m * th)


def quantize_batch(u, theta):
    """Quantize rows of ``u`` (shape (..., n_u)) onto the grids ``theta``."""
    u_arr = np.ascontiguousarray(u, dtype=np.float64)
    shape = u_arr.shape
    # no negative indices here: wraparound is compiled out module-wide
    cdef Py_ssize_t nu = u_arr.shape[u_arr.ndim - 1]
    cdef const double[:, ::1] uv = u_arr.reshape(-1, nu)
    cdef const double[::1] th = np.ascontiguousarray(
        np.broadcast_to(np.asarray(theta, dtype=np.float64), (nu,))
    )
    out = np.empty_like(u_arr).reshape(-1, nu)
    cdef double[:, ::1] qv = out
    cdef Py_ssize_t i, k
    with nogil:
        for i in range(uv.shape[0]):
            for k in range(uv.shape[1]):
                qv[i, k] = _q1(uv[i, k], th[k])
    return out.reshape(shape)


def simulate_path(A, B_comp, B_nom, H, theta, x0, active):
    """Roll the quantized loop forward one step per entry of ``active``.

    Same contract as the pure-python fallback: returns (states, u_raw,
    u_q) with h+1 rows each, the last input row evaluated at the terminal
    state.
    """
    cdef const double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, ::1] Bc = np.ascontiguousarray(B_comp, dtype=np.float64)
    cdef const double[:, ::1] Bn = np.ascontiguousarray(B_nom, dtype=np.float64)
    cdef const double[:, ::1] Hv = np.ascontiguousarray(H, dtype=np.float64)
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const unsigned char[::1] act = np.ascontiguousarray(active, dtype=np.uint8)

    cdef Py_ssize_t h = act.shape[0]
    cdef Py_ssize_t n = Av.shape[0]
    cdef Py_ssize_t nu = Hv.shape[0]

    states = np.empty((h + 1, n))
    u_raw = np.empty((h + 1, nu))
    u_q = np.empty((h + 1, nu))
    cdef double[:, ::1] sv = states
    cdef double[:, ::1] rv = u_raw
    cdef double[:, ::1] qv = u_q

    x_buf = np.array(x0, dtype=np.float64)
    xn_buf = np.empty(n)
    cdef double[::1] x = x_buf
    cdef double[::1] xn = xn_buf
    cdef const double[:, ::1] B
    cdef Py_ssize_t j, i, k
    cdef double acc, err, u, q

    with nogil:
        for j in range(h):
            for i in range(n):
                sv[j, i] = x[i]
            for k in range(nu):
                acc = 0.0
                for i in range(n):
                    acc += Hv[k, i] * x[i]
                u = acc
                q = _q1(u, th[k])
                rv[j, k] = u
                qv[j, k] = q
            if act[j]:
                B = Bc
            else:
                B = Bn
            for i in range(n):
                acc = 0.0
                for k in range(n):
                    acc += Av[i, k] * x[k]
                err = 0.0
                for k in range(nu):
                    err += B[i, k] * (qv[j, k] - rv[j, k])
                xn[i] = acc + err
            for i in range(n):
                x[i] = xn[i]
        for i in range(n):
            sv[h, i] = x[i]
        for k in range(nu):
            acc = 0.0
            for i in range(n):
                acc += Hv[k, i] * x[i]
            rv[h, k] = acc
            qv[h, k] = _q1(acc, th[k])
    return states, u_raw, u_q
