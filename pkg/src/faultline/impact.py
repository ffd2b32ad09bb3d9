"""Counterfactual effect estimation for candidate installation timestamps.

For each candidate timestamp the target metric is modelled over the
pre-period as a local level plus a static regression on control series
(pods presumed unaffected):

    y_t = mu_t + beta' x_t + eps_t,   mu_{t+1} = mu_t + eta_t

The target and controls are standardized by their pre-period moments, beta
comes from the pre-period normal equations, and the level is filtered with a
Kalman recursion whose observation/state variances are scored over a small
grid by pre-period likelihood. Posterior-predictive draws simulate the level
forward from the filtered terminal state, resampling variance pairs from
the likelihood-weighted grid, which yields a counterfactual trajectory for
the post-period had the installation changed nothing. The candidate whose
observed telemetry departs from its counterfactual with a sub-alpha
tail-area p-value and the largest standardized average effect is reported
as the root cause.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .errors import DataError
from .kernels import local_level_filter
from .telemetry import MetricSeries

if TYPE_CHECKING:
    from .detector import AnomalyAlert
    from .installog import InstallEvent

logger = logging.getLogger(__name__)

MIN_PERIOD_SAMPLES = 10

# Observation/state standard deviations tried per fit, in pre-period-std
# units; the cross product forms the likelihood-weighted grid.
SIGMA_GRID = (0.01, 0.03, 0.1, 0.3, 1.0, 3.0)

RIDGE = 1e-6


@dataclass
class ImpactQuery:
    """One candidate evaluation: target series, controls, and the periods.

    pre_len_s bounds the fit window, which may be truncated so it never
    reaches into another candidate's post-period. scale_len_s, when set,
    fixes the window used only for the standardization scale of avg_effect;
    a scale estimated from a handful of samples is noisy enough to reorder
    otherwise well-separated candidates, so the scale window stays at the
    full default length even when the fit window is truncated.
    """

    target: MetricSeries
    controls: list[MetricSeries]
    intervention_ts: int
    pre_len_s: int
    post_end_ts: int
    scale_len_s: int | None = None

    def periods(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(pre values, post values, pre control matrix, post control matrix).

        Pre-period is [intervention - pre_len, intervention), post-period is
        [intervention, post_end] inclusive; controls must be time-aligned
        with the target over both.
        """
        pre_ts, pre_y = self.target.slice(self.intervention_ts - self.pre_len_s,
                                          self.intervention_ts)
        post_ts, post_y = self.target.slice(self.intervention_ts,
                                            self.post_end_ts + 1)
        if len(pre_y) < MIN_PERIOD_SAMPLES:
            raise DataError(f"pre-period has {len(pre_y)} samples, "
                            f"need >= {MIN_PERIOD_SAMPLES}")
        if len(post_y) < MIN_PERIOD_SAMPLES:
            raise DataError(f"post-period has {len(post_y)} samples, "
                            f"need >= {MIN_PERIOD_SAMPLES}")
        pre_x = np.empty((len(pre_y), len(self.controls)))
        post_x = np.empty((len(post_y), len(self.controls)))
        for j, ctrl in enumerate(self.controls):
            c_pre_ts, c_pre = ctrl.slice(self.intervention_ts - self.pre_len_s,
                                         self.intervention_ts)
            c_post_ts, c_post = ctrl.slice(self.intervention_ts,
                                           self.post_end_ts + 1)
            if not (np.array_equal(c_pre_ts, pre_ts)
                    and np.array_equal(c_post_ts, post_ts)):
                raise DataError(f"control ({ctrl.pod}, {ctrl.metric}) is not "
                                "time-aligned with the target")
            pre_x[:, j] = c_pre
            post_x[:, j] = c_post
        return pre_y, post_y, pre_x, post_x

    def scale_std(self, fit_pre_std: float) -> float:
        """Standard deviation used to standardize avg_effect.

        Taken over [intervention - scale_len_s, intervention); falls back to
        the fit pre-period std when no scale window is set or the scale
        window is degenerate.
        """
        if self.scale_len_s is None:
            return fit_pre_std
        _, vals = self.target.slice(self.intervention_ts - self.scale_len_s,
                                    self.intervention_ts)
        if len(vals) < MIN_PERIOD_SAMPLES:
            return fit_pre_std
        std = float(vals.std())
        return std if std > 0 else fit_pre_std


@dataclass
class ImpactResult:
    avg_effect: float
    p_value: float
    posterior_mean_counterfactual: np.ndarray
    credible_interval: np.ndarray  # (post_len, 2) columns lower/upper at 95%


@dataclass
class Diagnosis:
    """Outcome of one alert: every candidate scored, at most one chosen."""

    pod: str
    alert: "AnomalyAlert"
    chosen: "tuple[int, InstallEvent] | None"
    candidates: list[tuple[int, ImpactResult]] = field(default_factory=list)


def _standardize_controls(pre_x: np.ndarray, post_x: np.ndarray
                          ) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Z-score controls by pre-period moments, dropping degenerate columns."""
    kept = []
    for j in range(pre_x.shape[1]):
        if pre_x[:, j].std() > 0:
            kept.append(j)
        else:
            logger.warning("dropping constant control column %d", j)
    pre_s = np.empty((pre_x.shape[0], len(kept)))
    post_s = np.empty((post_x.shape[0], len(kept)))
    for out_j, j in enumerate(kept):
        mean, std = pre_x[:, j].mean(), pre_x[:, j].std()
        pre_s[:, out_j] = (pre_x[:, j] - mean) / std
        post_s[:, out_j] = (post_x[:, j] - mean) / std
    return pre_s, post_s, kept


def _regression_coeffs(pre_x: np.ndarray, pre_y: np.ndarray) -> np.ndarray:
    """Static regression weights from the pre-period normal equations.

    Near-duplicate columns are dropped with a warning; if the system is
    still ill-conditioned a small ridge term keeps it solvable.
    """
    k = pre_x.shape[1]
    if k == 0:
        return np.empty(0)
    keep = []
    for j in range(k):
        duplicate = False
        for j0 in keep:
            r = float(np.corrcoef(pre_x[:, j0], pre_x[:, j])[0, 1])
            if abs(r) > 1.0 - 1e-10:
                duplicate = True
                break
        if duplicate:
            logger.warning("dropping collinear control column %d", j)
        else:
            keep.append(j)
    x = pre_x[:, keep]
    a = x.T @ x
    b = x.T @ pre_y
    if np.linalg.cond(a) > 1e12:
        a = a + RIDGE * np.eye(a.shape[0])
    beta_kept = np.linalg.solve(a, b)
    beta = np.zeros(k)
    beta[keep] = beta_kept
    return beta


def fit_counterfactual(query: ImpactQuery, n_draws: int = 1000,
                       seed: int = 0) -> np.ndarray:
    """Posterior-predictive counterfactual draws over the post-period.

    Returns an (n_draws, post_len) matrix in the target's native units.
    Deterministic for fixed (query, n_draws, seed).
    """
    if n_draws < 1:
        raise DataError("n_draws must be >= 1")
    pre_y, post_y, pre_x, post_x = query.periods()

    y_mean = float(pre_y.mean())
    y_std = float(pre_y.std())
    if y_std == 0:
        raise DataError("degenerate pre-period: target variance is zero")
    ys = (pre_y - y_mean) / y_std

    pre_xs, post_xs, _ = _standardize_controls(pre_x, post_x)
    beta = _regression_coeffs(pre_xs, ys)
    resid = ys - (pre_xs @ beta if beta.size else 0.0)

    sigmas = np.asarray(SIGMA_GRID)
    obs_var, state_var = [g.ravel() for g in np.meshgrid(sigmas ** 2, sigmas ** 2,
                                                         indexing="ij")]
    loglik, level, level_var = local_level_filter(resid, obs_var, state_var)

    weights = np.exp(loglik - loglik.max())
    weights /= weights.sum()

    n_post = len(post_y)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed,))))
    cells = rng.choice(len(weights), size=n_draws, p=weights)
    z_init = rng.standard_normal(n_draws)
    z_state = rng.standard_normal((n_draws, n_post))
    z_obs = rng.standard_normal((n_draws, n_post))

    sd_state = np.sqrt(state_var[cells])
    sd_obs = np.sqrt(obs_var[cells])
    mu0 = level[cells] + np.sqrt(level_var[cells]) * z_init
    levels = mu0[:, None] + np.cumsum(z_state * sd_state[:, None], axis=1)
    draws_std = levels + z_obs * sd_obs[:, None]
    if beta.size:
        draws_std = draws_std + (post_xs @ beta)[None, :]
    return y_mean + y_std * draws_std


def impact_summary(draws: np.ndarray, observed_post: np.ndarray,
                   pre_std: float = 1.0) -> ImpactResult:
    """Summarise draws against the observed post-period.

    avg_effect is the time-mean of (observed - posterior-mean counterfactual)
    divided by the pre-period std of the target, so candidates with different
    pre-periods stay comparable. The p-value is the one-sided tail fraction
    of draws whose post-period mean is at least as extreme as the observed
    one, in the observed effect's direction, with the +1 correction keeping
    it in (0, 1].
    """
    draws = np.asarray(draws, dtype=np.float64)
    observed_post = np.asarray(observed_post, dtype=np.float64)
    if draws.ndim != 2 or draws.shape[0] == 0:
        raise DataError("draws must be a nonempty (n_draws, post_len) matrix")
    if draws.shape[1] != observed_post.shape[0]:
        raise DataError(f"draws have {draws.shape[1]} columns but the observed "
                        f"post-period has {observed_post.shape[0]} samples")
    if pre_std <= 0:
        raise DataError("pre_std must be positive")

    cf_mean = draws.mean(axis=0)
    avg_effect = float((observed_post - cf_mean).mean() / pre_std)

    draw_means = draws.mean(axis=1)
    obs_mean = observed_post.mean()
    n = draws.shape[0]
    if avg_effect >= 0:
        extreme = int(np.count_nonzero(draw_means >= obs_mean))
    else:
        extreme = int(np.count_nonzero(draw_means <= obs_mean))
    p_value = (1 + extreme) / (1 + n)

    lower = np.percentile(draws, 2.5, axis=0)
    upper = np.percentile(draws, 97.5, axis=0)
    return ImpactResult(avg_effect=avg_effect, p_value=float(p_value),
                        posterior_mean_counterfactual=cf_mean,
                        credible_interval=np.column_stack([lower, upper]))


def analyze(query: ImpactQuery, n_draws: int = 1000, seed: int = 0) -> ImpactResult:
    """fit_counterfactual + impact_summary with the query's pre-period scale."""
    draws = fit_counterfactual(query, n_draws=n_draws, seed=seed)
    pre_y, post_y, _, _ = query.periods()
    return impact_summary(draws, post_y,
                          pre_std=query.scale_std(float(pre_y.std())))


def select_root_cause(candidates: list[tuple[int, ImpactResult]],
                      alpha: float = 0.01) -> int | None:
    """Among sub-alpha candidates, the timestamp with the largest
    |avg_effect|; ties go to the latest timestamp; none qualify -> None."""
    qualified = [(ts, res) for ts, res in candidates if res.p_value < alpha]
    if not qualified:
        return None
    best_ts, _ = max(qualified, key=lambda pair: (abs(pair[1].avg_effect), pair[0]))
    return best_ts
