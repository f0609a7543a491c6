"""Uncertainty, significance and accuracy metrics.

* ``d_optimality``: ``det(S)**(1/l)`` through a Cholesky log-determinant.
* ``one_way_anova``: classic F test with the F survival function evaluated
  through the regularized incomplete beta function (Lentz continued fraction).
* ``trajectory_error``: final and RMS position error after aligning the first
  pose (yaw + translation, the gauge freedoms of visual-inertial odometry).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from dvevio.errors import DegenerateCovarianceError, InvalidInputError
from dvevio.geometry import euler_zyx_to_rot, quat_to_rot, yaw_of

log = logging.getLogger(__name__)


def d_optimality(cov) -> float:
    """``det(cov)**(1/l)`` for a symmetric positive definite ``l x l`` matrix.

    Raises
    ------
    DegenerateCovarianceError
        If the matrix is not (numerically) positive definite.
    """
    S = np.asarray(cov, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] == 0:
        raise InvalidInputError(f"expected a square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise DegenerateCovarianceError("covariance has non-finite entries")
    scale = max(np.abs(S).max(), np.finfo(float).tiny)
    if np.abs(S - S.T).max() > 1e-9 * scale:
        raise InvalidInputError("covariance is not symmetric")
    try:
        L = np.linalg.cholesky(0.5 * (S + S.T))
    except np.linalg.LinAlgError:
        raise DegenerateCovarianceError("covariance is not positive definite") from None
    diag = np.diag(L)
    if np.any(diag <= 0.0):
        raise DegenerateCovarianceError("covariance has zero determinant")
    logdet = 2.0 * np.sum(np.log(diag))
    return float(np.exp(logdet / S.shape[0]))


@dataclass
class DOptSeries:
    samples: list = field(default_factory=list)

    def append(self, timestamp, value):
        self.samples.append((float(timestamp), float(value)))

    @property
    def terminal(self):
        if not self.samples:
            raise InvalidInputError("empty D-optimality series")
        return self.samples[-1][1]

    def as_array(self):
        return np.array(self.samples, dtype=float).reshape(-1, 2)


# --- F distribution -------------------------------------------------------


def _betacf(a, b, x, max_iter=500, eps=1e-16):
    """Continued fraction of the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    log.warning("incomplete beta continued fraction did not converge (a=%g b=%g x=%g)", a, b, x)
    return h


def betainc_regularized(a, b, x) -> float:
    """Regularized incomplete beta ``I_x(a, b)`` for ``a, b > 0`` and ``0 <= x <= 1``."""
    if a <= 0 or b <= 0:
        raise InvalidInputError("shape parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise InvalidInputError(f"x={x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return float(x)
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    # the fraction converges fast only on one side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_sf(f, d1, d2) -> float:
    """Survival function ``P(F(d1, d2) >= f)``."""
    if f <= 0.0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return betainc_regularized(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * f))


def f_cdf(f, d1, d2) -> float:
    if f <= 0.0:
        return 0.0
    return betainc_regularized(0.5 * d1, 0.5 * d2, d1 * f / (d1 * f + d2))


# --- ANOVA ----------------------------------------------------------------


@dataclass(frozen=True)
class AnovaResult:
    f_statistic: float
    df_between: int
    df_within: int
    p_value: float
    degenerate: bool = False


def one_way_anova(groups) -> AnovaResult:
    """One-way analysis of variance across two or more groups of samples.

    Parameters
    ----------
    groups : sequence of array_like
        Each group needs at least two samples.

    Returns
    -------
    AnovaResult
        ``degenerate`` is set when the within-group variance is zero; the
        F statistic is then 0 (all means equal, p = 1) or infinite (p = 0).
    """
    arrays = [np.asarray(g, dtype=float).ravel() for g in groups]
    if len(arrays) < 2:
        raise InvalidInputError("ANOVA needs at least two groups")
    for i, g in enumerate(arrays):
        if len(g) < 2:
            raise InvalidInputError(f"group {i} has {len(g)} samples; need >= 2")
        if not np.all(np.isfinite(g)):
            raise InvalidInputError(f"group {i} has non-finite samples")
    k = len(arrays)
    n = sum(len(g) for g in arrays)
    df_b, df_w = k - 1, n - k
    grand = np.concatenate(arrays).mean()
    means = [g.mean() for g in arrays]
    ssb = float(sum(len(g) * (m - grand) ** 2 for g, m in zip(arrays, means)))
    ssw = float(sum(np.sum((g - m) ** 2) for g, m in zip(arrays, means)))
    spread = max(float(np.abs(np.concatenate(arrays)).max()), 1.0)
    eps = 1e-24 * spread**2 * n
    if ssw <= eps:
        if ssb <= eps:
            return AnovaResult(0.0, df_b, df_w, 1.0, degenerate=True)
        return AnovaResult(math.inf, df_b, df_w, 0.0, degenerate=True)
    if ssb <= eps:
        ssb = 0.0
    F = (ssb / df_b) / (ssw / df_w)
    p = min(max(f_sf(F, df_b, df_w), 0.0), 1.0)
    return AnovaResult(F, df_b, df_w, p)


# --- boxplots -------------------------------------------------------------


@dataclass(frozen=True)
class BoxStats:
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: tuple


def box_stats(samples, whis=1.5) -> BoxStats:
    """Quartiles, whiskers and outliers by the ``whis * IQR`` rule."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if len(x) == 0:
        raise InvalidInputError("no samples")
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    lo, hi = q1 - whis * iqr, q3 + whis * iqr
    inside = x[(x >= lo) & (x <= hi)]
    outliers = tuple(float(v) for v in x[(x < lo) | (x > hi)])
    return BoxStats(float(med), float(q1), float(q3), float(inside.min()), float(inside.max()), outliers)


# --- trajectory error -----------------------------------------------------


@dataclass(frozen=True)
class TrajectoryError:
    final_position_error: float
    rmse: float
    matched: int


def associate(t_est, t_true, max_dt=0.005):
    """Index pairs ``(i_est, i_true)`` of nearest timestamps within ``max_dt``."""
    t_est = np.asarray(t_est, dtype=float)
    t_true = np.asarray(t_true, dtype=float)
    if len(t_est) == 0 or len(t_true) == 0:
        return np.zeros(0, int), np.zeros(0, int)
    order = np.argsort(t_true)
    ts = t_true[order]
    pos = np.clip(np.searchsorted(ts, t_est), 1, len(ts) - 1) if len(ts) > 1 else np.zeros(len(t_est), int)
    left = np.maximum(pos - 1, 0)
    pick = np.where(np.abs(ts[left] - t_est) <= np.abs(ts[pos] - t_est), left, pos)
    ok = np.abs(ts[pick] - t_est) <= max_dt
    return np.nonzero(ok)[0], order[pick[ok]]


def trajectory_error(estimate, truth, max_dt=0.005, align_yaw=True) -> TrajectoryError:
    """Position errors of ``estimate`` against ``truth``.

    Both arguments are arrays whose rows start ``timestamp, rx, ry, rz`` and
    optionally continue ``qw, qx, qy, qz``. The estimate is moved so its first
    matched pose coincides with the truth in position and (when quaternions are
    present and ``align_yaw``) heading.
    """
    est = np.atleast_2d(np.asarray(estimate, dtype=float))
    tru = np.atleast_2d(np.asarray(truth, dtype=float))
    if est.shape[1] < 4 or tru.shape[1] < 4:
        raise InvalidInputError("pose series need timestamp + 3 position columns")
    ie, it = associate(est[:, 0], tru[:, 0], max_dt)
    if len(ie) == 0:
        raise InvalidInputError("estimate and truth have no overlapping timestamps")
    order = np.argsort(est[ie, 0])
    ie, it = ie[order], it[order]
    pe = est[ie, 1:4]
    pt = tru[it, 1:4]
    R = np.eye(3)
    if align_yaw and est.shape[1] >= 8 and tru.shape[1] >= 8:
        dyaw = yaw_of(quat_to_rot(tru[it[0], 4:8])) - yaw_of(quat_to_rot(est[ie[0], 4:8]))
        R = euler_zyx_to_rot(0.0, 0.0, dyaw)
    aligned = (pe - pe[0]) @ R.T + pt[0]
    err = np.linalg.norm(aligned - pt, axis=1)
    return TrajectoryError(float(err[-1]), float(np.sqrt(np.mean(err**2))), len(ie))


def path_length(positions) -> float:
    p = np.asarray(positions, dtype=float)
    return float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1)))
