"""Low-level Kalman recursion kernel, jitted when numba is available."""
from __future__ import annotations

import numpy as np

try:  # pragma: no cover - exercised implicitly
    from numba import njit

    _HAVE_NUMBA = True
except Exception:  # pragma: no cover
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def kf_core(T, RQR, Z, y, x_idx, c_idx):
    """Standard Gaussian prediction-error recursion, zero initial state.

    Returns (v, F, x_filtered, c_filtered, fail_t); fail_t >= 0 flags a
    non-positive prediction-error variance at that index.
    """
    n = y.shape[0]
    dim = T.shape[0]
    a = np.zeros(dim)
    P = RQR.copy()
    v = np.zeros(n)
    F = np.zeros(n)
    xf = np.zeros(n)
    cf = np.zeros(n)
    for t in range(n):
        Ft = 0.0
        for i in range(dim):
            zi = Z[i]
            if zi != 0.0:
                for j in range(dim):
                    if Z[j] != 0.0:
                        Ft += zi * P[i, j] * Z[j]
        if Ft <= 0.0 or not np.isfinite(Ft):
            return v, F, xf, cf, t
        F[t] = Ft
        za = 0.0
        for i in range(dim):
            if Z[i] != 0.0:
                za += Z[i] * a[i]
        vt = y[t] - za
        v[t] = vt
        PZ = np.zeros(dim)
        for i in range(dim):
            acc = 0.0
            for j in range(dim):
                if Z[j] != 0.0:
                    acc += P[i, j] * Z[j]
            PZ[i] = acc
        # filtered state and covariance
        af = a + PZ * (vt / Ft)
        Pf = P - np.outer(PZ, PZ) / Ft
        xf[t] = af[x_idx]
        cf[t] = af[c_idx]
        # predict
        a = T @ af
        P = T @ Pf @ T.T + RQR
        P = 0.5 * (P + P.T)
    return v, F, xf, cf, -1
