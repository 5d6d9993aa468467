"""Tests and confidence intervals built on bootstrap output.

Four procedures: plug-in Gaussian (gau), percentile bootstrap of the raw mean
(bs), percentile-t on the studentized mean (piv), and symmetric percentile-t
on its absolute value (sym).

Bootstrap p-values use the (1 + #exceeding) / (B + 1) convention, rejection
is defined as p < alpha, and confidence intervals invert exactly that rule,
so test/interval duality is exact. The critical values reported alongside are
type-7 (linear interpolation) empirical quantiles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .core import BootstrapResult
from .errors import InvalidConfig, TooFewReplicates

METHODS = ("gau", "bs", "piv", "sym")
SIDES = ("two", "left", "right")

MIN_REPLICATES = 39


@dataclass(frozen=True)
class TestSpec:
    """What to test: H0 mu = mu0 with one of the four procedures."""

    mu0: float
    method: str
    sided: str = "two"
    alpha: float = 0.05

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidConfig(f"method must be one of {METHODS}")
        if self.sided not in SIDES:
            raise InvalidConfig(f"sided must be one of {SIDES}")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidConfig("alpha must lie in (0, 1)")
        if self.method == "sym" and self.sided != "two":
            raise InvalidConfig("the symmetric procedure is two-sided only")


@dataclass(frozen=True)
class TestResult:
    statistic: float
    critical_values: tuple[float, ...]
    p_value: float
    reject: bool


def _require_scalar(result: BootstrapResult) -> None:
    if result.n_vars != 1:
        raise InvalidConfig("run tests component by component on vector results")


def _require_replicates(result: BootstrapResult) -> None:
    if result.n_replicates < MIN_REPLICATES:
        raise TooFewReplicates(
            f"quantile methods need at least {MIN_REPLICATES} replicates, got {result.n_replicates}"
        )


def _safe_ratio(num: float, den: float) -> float:
    if den > 0:
        return num / den
    return 0.0 if num == 0 else math.copysign(math.inf, num)


def _tail_p(draws: np.ndarray, value: float, side: str) -> float:
    b = draws.size
    if side == "left":
        exceed = int(np.count_nonzero(draws <= value))
    else:
        exceed = int(np.count_nonzero(draws >= value))
    return (1.0 + exceed) / (b + 1.0)


def _p_value(draws: np.ndarray, value: float, sided: str) -> float:
    if sided == "left":
        return _tail_p(draws, value, "left")
    if sided == "right":
        return _tail_p(draws, value, "right")
    return min(1.0, 2.0 * min(_tail_p(draws, value, "left"), _tail_p(draws, value, "right")))


def _statistic_and_draws(result: BootstrapResult, spec: TestSpec):
    """The observed statistic and the bootstrap draws it is compared against."""
    if spec.method == "gau":
        z = _safe_ratio(math.sqrt(result.n_scale) * (result.y_bar - spec.mu0), result.s_hat)
        return z, None
    if spec.method == "bs":
        return result.y_bar - spec.mu0, np.asarray(result.y_star) - result.y_bar
    t = _safe_ratio(result.y_bar - spec.mu0, result.s_hat)
    if spec.method == "piv":
        return t, np.asarray(result.t_star)
    return abs(t), np.abs(np.asarray(result.t_star))


def _critical_values(draws: np.ndarray, spec: TestSpec) -> tuple[float, ...]:
    a = spec.alpha
    if spec.method == "gau":
        if spec.sided == "two":
            z = norm.ppf(1.0 - a / 2.0)
            return (-z, z)
        z = norm.ppf(1.0 - a)
        return (-z,) if spec.sided == "left" else (z,)
    if spec.method == "sym":
        return (float(np.quantile(draws, 1.0 - a)),)
    if spec.sided == "two":
        return (float(np.quantile(draws, a / 2.0)), float(np.quantile(draws, 1.0 - a / 2.0)))
    if spec.sided == "left":
        return (float(np.quantile(draws, a)),)
    return (float(np.quantile(draws, 1.0 - a)),)


def run_test(result: BootstrapResult, spec: TestSpec) -> TestResult:
    """Test H0: mu = mu0. Rejection is p_value < alpha by construction."""
    _require_scalar(result)
    stat, draws = _statistic_and_draws(result, spec)
    if spec.method == "gau":
        if spec.sided == "two":
            p = 2.0 * norm.sf(abs(stat))
        elif spec.sided == "left":
            p = norm.cdf(stat)
        else:
            p = norm.sf(stat)
        return TestResult(float(stat), _critical_values(None, spec), float(p), bool(p < spec.alpha))
    _require_replicates(result)
    if spec.method == "sym":
        p = _tail_p(draws, stat, "right")
    else:
        p = _p_value(draws, stat, spec.sided)
    return TestResult(float(stat), _critical_values(draws, spec), float(p), bool(p < spec.alpha))


def _order_stat(sorted_draws: np.ndarray, rank: int) -> float:
    """1-indexed order statistic with +-inf beyond the sample."""
    b = sorted_draws.size
    if rank < 1:
        return -math.inf
    if rank > b:
        return math.inf
    return float(sorted_draws[rank - 1])


def _accept_rank(h: float) -> int:
    """Smallest integer count q with (1 + q) / (B + 1) >= alpha-share h/(B+1).

    Fail-to-reject in one tail requires the exceedance count to be at least
    ceil(h - 1); returns that rank (possibly <= 0, meaning no constraint).
    """
    return math.ceil(h - 1.0 - 1e-12)


def confidence_interval(result: BootstrapResult, method: str, alpha: float = 0.05,
                        sided: str = "two") -> tuple[float, float]:
    """Invert run_test: mu0 lies inside iff the test fails to reject.

    bs inverts the raw-mean percentile test; piv and sym rescale the
    studentized order statistics by the observed scale; gau is the normal
    interval. One-sided tests give half-lines.
    """
    spec = TestSpec(mu0=0.0, method=method, sided=sided, alpha=alpha)
    _require_scalar(result)
    y = float(result.y_bar)
    if method == "gau":
        se = _safe_ratio(float(result.s_hat), math.sqrt(result.n_scale))
        if sided == "two":
            z = float(norm.ppf(1.0 - alpha / 2.0))
            return (y - z * se, y + z * se)
        z = float(norm.ppf(1.0 - alpha))
        # a left-sided test rejects for small statistics, bounding mu0 above
        return (-math.inf, y + z * se) if sided == "left" else (y - z * se, math.inf)
    _require_replicates(result)
    b = result.n_replicates

    if method == "sym":
        draws = np.sort(np.abs(np.asarray(result.t_star)))
        q = _accept_rank(alpha * (b + 1))
        half = _order_stat(draws, b - q + 1) if q >= 1 else math.inf
        # |t(mu0)| <= (q-th largest) keeps mu0; scale back by the observed s_hat
        width = half * float(result.s_hat)
        return (y - width, y + width)

    if method == "bs":
        draws = np.sort(np.asarray(result.y_star) - y)
        scale = 1.0
    else:
        draws = np.sort(np.asarray(result.t_star))
        scale = float(result.s_hat)

    if sided == "two":
        q = _accept_rank((alpha / 2.0) * (b + 1))
        lo_stat = _order_stat(draws, q)
        hi_stat = _order_stat(draws, b + 1 - q) if q >= 1 else math.inf
        if q < 1:
            lo_stat = -math.inf
        return (y - scale * hi_stat, y - scale * lo_stat)
    q = _accept_rank(alpha * (b + 1))
    if sided == "left":
        # rejects when the statistic falls below the q-th smallest draw
        bound = _order_stat(draws, q) if q >= 1 else -math.inf
        return (-math.inf, y - scale * bound)
    bound = _order_stat(draws, b + 1 - q) if q >= 1 else math.inf
    return (y - scale * bound, math.inf)
