"""Pure-Python (numpy) trace kernels for linear operators ``F(z) = M z``.

Must stay call-compatible with ``_ckernels.pyx``.  Resolvent codes:
0 identity, 1 box clamp (a=lo, b=hi), 2 ball projection (a=center, s=radius),
3 soft threshold with per-coordinate weights ``a`` (scaled by eta).
"""
import numpy as np

RES_IDENTITY = 0
RES_BOX = 1
RES_BALL = 2
RES_SOFT = 3


def _prox(kind, w, eta, a, b, s):
    if kind == RES_IDENTITY:
        return w.copy()
    if kind == RES_BOX:
        return np.minimum(np.maximum(w, a), b)
    if kind == RES_BALL:
        d = w - a
        norm = np.sqrt(d @ d)
        if norm > s:
            return a + d * (s / norm)
        return w.copy()
    if kind == RES_SOFT:
        return np.sign(w) * np.maximum(np.abs(w) - eta * a, 0.0)
    raise ValueError(f"unknown resolvent code {kind}")


def _alloc(T, n):
    return (np.zeros((T + 1, n)), np.zeros((T + 1, n)), np.zeros((T + 1, n)),
            np.zeros((T, n)), np.zeros((T, n)))


def _finish(Z, FZ, C, H, FH, done, status):
    return Z[:done + 1], FZ[:done + 1], C[:done + 1], H[:done], FH[:done], done, status


def eag_trace(M, z0, eta, delta, max_iters, target, kind, a, b, s):
    T = int(max_iters)
    Z, FZ, C, H, FH = _alloc(T, z0.shape[0])
    z = z0.copy()
    fz = M @ z
    Z[0], FZ[0] = z, fz
    for k in range(T):
        anchor = 1.0 / (k + delta + 1.0)
        base = z + anchor * (z0 - z)
        h = _prox(kind, base - eta * fz, eta, a, b, s)
        fh = M @ h
        w = base - eta * fh
        z = _prox(kind, w, eta, a, b, s)
        fz = M @ z
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(fz)) and np.all(np.isfinite(fh))):
            return _finish(Z, FZ, C, H, FH, k, 1)
        Z[k + 1], FZ[k + 1], C[k + 1] = z, fz, (w - z) / eta
        H[k], FH[k] = h, fh
        if target > 0.0 and np.linalg.norm(fz + C[k + 1]) <= target:
            return _finish(Z, FZ, C, H, FH, k + 1, 0)
    return _finish(Z, FZ, C, H, FH, T, 0)


def as_trace(M, z0, eta, rho, max_iters, target, kind, a, b, s):
    T = int(max_iters)
    Z, FZ, C, H, FH = _alloc(T, z0.shape[0])
    z = z0.copy()
    fz = M @ z
    c = np.zeros_like(z)
    Z[0], FZ[0] = z, fz
    for k in range(T):
        anchor = 1.0 / (k + 1.0)
        g = fz + c
        base = z + anchor * (z0 - z)
        h = base - (k * (eta + 2.0 * rho) / (k + 1.0)) * g
        fh = M @ h
        w = base - eta * fh - (2.0 * k * rho / (k + 1.0)) * g
        z = _prox(kind, w, eta, a, b, s)
        fz = M @ z
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(fz)) and np.all(np.isfinite(fh))):
            return _finish(Z, FZ, C, H, FH, k, 1)
        c = (w - z) / eta
        Z[k + 1], FZ[k + 1], C[k + 1] = z, fz, c
        H[k], FH[k] = h, fh
        if target > 0.0 and np.linalg.norm(fz + c) <= target:
            return _finish(Z, FZ, C, H, FH, k + 1, 0)
    return _finish(Z, FZ, C, H, FH, T, 0)


def eg_trace(M, z0, eta, max_iters, target, kind, a, b, s):
    T = int(max_iters)
    Z, FZ, C, H, FH = _alloc(T, z0.shape[0])
    z = z0.copy()
    fz = M @ z
    Z[0], FZ[0] = z, fz
    for k in range(T):
        h = _prox(kind, z - eta * fz, eta, a, b, s)
        fh = M @ h
        w = z - eta * fh
        z = _prox(kind, w, eta, a, b, s)
        fz = M @ z
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(fz)) and np.all(np.isfinite(fh))):
            return _finish(Z, FZ, C, H, FH, k, 1)
        Z[k + 1], FZ[k + 1], C[k + 1] = z, fz, (w - z) / eta
        H[k], FH[k] = h, fh
        if target > 0.0 and np.linalg.norm(fz + C[k + 1]) <= target:
            return _finish(Z, FZ, C, H, FH, k + 1, 0)
    return _finish(Z, FZ, C, H, FH, T, 0)
