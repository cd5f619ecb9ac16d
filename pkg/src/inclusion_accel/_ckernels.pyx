# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled trace kernels; call-compatible with ``_pykernels``."""
import numpy as np

from libc.math cimport sqrt, fabs, isfinite


cdef inline void matvec(const double[:, ::1] M, const double[::1] x, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, n = M.shape[0]
    cdef double acc
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += M[i, j] * x[j]
        out[i] = acc


cdef inline void prox(int kind, const double[::1] w, double eta, const double[::1] a,
                      const double[::1] b, double s, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, n = w.shape[0]
    cdef double norm, d, mag
    if kind == 1:
        for i in range(n):
            d = w[i]
            if d < a[i]:
                d = a[i]
            if d > b[i]:
                d = b[i]
            out[i] = d
    elif kind == 2:
        norm = 0.0
        for i in range(n):
            d = w[i] - a[i]
            norm += d * d
        norm = sqrt(norm)
        if norm > s:
            for i in range(n):
                out[i] = a[i] + (w[i] - a[i]) * (s / norm)
        else:
            for i in range(n):
                out[i] = w[i]
    elif kind == 3:
        for i in range(n):
            mag = fabs(w[i]) - eta * a[i]
            if mag <= 0.0:
                out[i] = 0.0
            elif w[i] > 0.0:
                out[i] = mag
            else:
                out[i] = -mag
    else:
        for i in range(n):
            out[i] = w[i]


cdef inline bint all_finite(const double[::1] x) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        if not isfinite(x[i]):
            return False
    return True


cdef inline double cert_norm(const double[::1] fz, const double[::1] c) noexcept nogil:
    cdef Py_ssize_t i
    cdef double acc = 0.0, d
    for i in range(fz.shape[0]):
        d = fz[i] + c[i]
        acc += d * d
    return sqrt(acc)


def _check_kind(int kind):
    if kind < 0 or kind > 3:
        raise ValueError(f"unknown resolvent code {kind}")


# mode 0: EAG, 1: AS, 2: EG
cdef tuple _run(int mode, M_in, z0_in, double eta, double delta, double rho, long T,
                double target, int kind, a_in, b_in, double s):
    _check_kind(kind)
    cdef const double[:, ::1] M = np.ascontiguousarray(M_in, dtype=np.float64)
    cdef const double[::1] z0 = np.ascontiguousarray(z0_in, dtype=np.float64)
    cdef Py_ssize_t n = z0.shape[0]
    cdef const double[::1] a = np.ascontiguousarray(a_in, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(b_in, dtype=np.float64)
    Z_arr = np.zeros((T + 1, n))
    FZ_arr = np.zeros((T + 1, n))
    C_arr = np.zeros((T + 1, n))
    H_arr = np.zeros((T, n))
    FH_arr = np.zeros((T, n))
    cdef double[:, ::1] Z = Z_arr, FZ = FZ_arr, C = C_arr, H = H_arr, FH = FH_arr
    cdef double[::1] z = np.array(z0, dtype=np.float64)
    cdef double[::1] fz = np.zeros(n), c = np.zeros(n), g = np.zeros(n)
    cdef double[::1] base = np.zeros(n), tmp = np.zeros(n), h = np.zeros(n)
    cdef double[::1] fh = np.zeros(n), w = np.zeros(n)
    cdef long k, done = T
    cdef Py_ssize_t i
    cdef int status = 0
    cdef double anchor, hc, gc

    with nogil:
        matvec(M, z, fz)
        for i in range(n):
            Z[0, i] = z[i]
            FZ[0, i] = fz[i]
        for k in range(T):
            if mode == 0:
                anchor = 1.0 / (k + delta + 1.0)
            else:
                anchor = 1.0 / (k + 1.0)
            for i in range(n):
                if mode == 2:
                    base[i] = z[i]
                else:
                    base[i] = z[i] + anchor * (z0[i] - z[i])
            if mode == 1:
                hc = k * (eta + 2.0 * rho) / (k + 1.0)
                gc = 2.0 * k * rho / (k + 1.0)
                for i in range(n):
                    g[i] = fz[i] + c[i]
                    h[i] = base[i] - hc * g[i]
            else:
                for i in range(n):
                    tmp[i] = base[i] - eta * fz[i]
                prox(kind, tmp, eta, a, b, s, h)
            matvec(M, h, fh)
            for i in range(n):
                w[i] = base[i] - eta * fh[i]
                if mode == 1:
                    w[i] = w[i] - gc * g[i]
            prox(kind, w, eta, a, b, s, z)
            matvec(M, z, fz)
            if not (all_finite(z) and all_finite(fz) and all_finite(fh)):
                done = k
                status = 1
                break
            for i in range(n):
                c[i] = (w[i] - z[i]) / eta
                Z[k + 1, i] = z[i]
                FZ[k + 1, i] = fz[i]
                C[k + 1, i] = c[i]
                H[k, i] = h[i]
                FH[k, i] = fh[i]
            if target > 0.0 and cert_norm(fz, c) <= target:
                done = k + 1
                break

    return (Z_arr[:done + 1], FZ_arr[:done + 1], C_arr[:done + 1],
            H_arr[:done], FH_arr[:done], int(done), status)


def eag_trace(M, z0, double eta, double delta, max_iters, double target, int kind, a, b, double s):
    return _run(0, M, z0, eta, delta, 0.0, int(max_iters), target, kind, a, b, s)


def as_trace(M, z0, double eta, double rho, max_iters, double target, int kind, a, b, s):
    return _run(1, M, z0, eta, 0.0, rho, int(max_iters), target, kind, a, b, float(s))


def eg_trace(M, z0, double eta, max_iters, double target, int kind, a, b, double s):
    return _run(2, M, z0, eta, 0.0, 0.0, int(max_iters), target, kind, a, b, s)
