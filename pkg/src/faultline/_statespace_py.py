"""Local-level Kalman filter, pure-numpy backend.

Reference implementation of the compiled kernel in `_statespace.pyx`; the
recursion runs once per time step with all variance-grid cells updated in
lockstep. Semantics and operation order match the compiled version so the
two backends agree to floating-point noise.
"""

from __future__ import annotations

import numpy as np

LOG_2PI = 1.8378770664093453

BACKEND = "python"


def local_level_filter(y: np.ndarray, obs_var: np.ndarray,
                       state_var: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Filter y under y_t = mu_t + eps, mu_{t+1} = mu_t + eta for a grid of
    (observation, state) variance pairs.

    Uses exact initialization on the first observation (level := y[0],
    variance := obs_var), so the likelihood sums the remaining n-1
    prediction errors. Returns (loglik, level, level_var) per grid cell,
    the latter two filtered at the final observation.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    obs_var = np.ascontiguousarray(obs_var, dtype=np.float64)
    state_var = np.ascontiguousarray(state_var, dtype=np.float64)
    n = y.shape[0]
    if n < 2:
        raise ValueError("need at least 2 observations")
    if obs_var.shape != state_var.shape:
        raise ValueError("variance grids must have equal length")
    if np.any(obs_var <= 0) or np.any(state_var < 0):
        raise ValueError("observation variance must be positive, state variance nonnegative")

    m = np.full_like(obs_var, y[0])
    p = obs_var.copy()
    loglik = np.zeros_like(obs_var)
    for t in range(1, n):
        p_pred = p + state_var
        f = p_pred + obs_var
        v = y[t] - m
        loglik += -0.5 * (LOG_2PI + np.log(f) + (v * v) / f)
        k = p_pred / f
        m = m + k * v
        p = p_pred - k * p_pred
    return loglik, m, p
