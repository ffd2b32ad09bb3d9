# cython: boundscheck=False, wraparound=False, cdivision=True
"""Local-level Kalman filter, compiled backend.

Same contract as `_statespace_py.local_level_filter`; the grid of variance
pairs runs as tight scalar recursions. This is the pipeline's hot loop: the
counterfactual fitter filters the pre-period once per grid cell, and the
Monte-Carlo calibration repeats that hundreds of times.
"""

from libc.math cimport log

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef double LOG_2PI = 1.8378770664093453

BACKEND = "cython"


def local_level_filter(y, obs_var, state_var):
    """Filter y under y_t = mu_t + eps, mu_{t+1} = mu_t + eta for a grid of
    (observation, state) variance pairs.

    Uses exact initialization on the first observation (level := y[0],
    variance := obs_var), so the likelihood sums the remaining n-1
    prediction errors. Returns (loglik, level, level_var) per grid cell,
    the latter two filtered at the final observation.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y_arr = np.ascontiguousarray(y, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ov = np.ascontiguousarray(obs_var, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sv = np.ascontiguousarray(state_var, dtype=np.float64)

    cdef Py_ssize_t n = y_arr.shape[0]
    cdef Py_ssize_t g_count = ov.shape[0]
    if n < 2:
        raise ValueError("need at least 2 observations")
    if sv.shape[0] != g_count:
        raise ValueError("variance grids must have equal length")

    cdef cnp.ndarray[cnp.float64_t, ndim=1] loglik = np.zeros(g_count, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] m_out = np.empty(g_count, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p_out = np.empty(g_count, dtype=np.float64)

    cdef double[::1] yv = y_arr
    cdef double[::1] ovv = ov
    cdef double[::1] svv = sv
    cdef double[::1] llv = loglik
    cdef double[::1] mv = m_out
    cdef double[::1] pv = p_out

    cdef Py_ssize_t g, t
    cdef double m, p, q, r, p_pred, f, v, k, ll

    for g in range(g_count):
        r = ovv[g]
        q = svv[g]
        if r <= 0 or q < 0:
            raise ValueError("observation variance must be positive, state variance nonnegative")
        m = yv[0]
        p = r
        ll = 0.0
        for t in range(1, n):
            p_pred = p + q
            f = p_pred + r
            v = yv[t] - m
            ll += -0.5 * (LOG_2PI + log(f) + (v * v) / f)
            k = p_pred / f
            m = m + k * v
            p = p_pred - k * p_pred
        llv[g] = ll
        mv[g] = m
        pv[g] = p

    return loglik, m_out, p_out
