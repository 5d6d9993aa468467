import math

import numpy as np
import pytest
from scipy.stats import norm

import clusterboot as cb
from clusterboot.errors import InvalidConfig, TooFewReplicates


def result_with(y_star, t_star=None, y_bar=0.0, s_hat=1.0, n_scale=100.0, seed=0):
    y_star = np.asarray(y_star, dtype=float)
    if t_star is None:
        num = y_star - y_bar
        t_star = np.divide(num, s_hat, out=np.zeros_like(num), where=s_hat > 0)
    s_star = np.full(y_star.shape, s_hat)
    return cb.BootstrapResult(
        y_bar=y_bar, s_hat=s_hat, y_star=y_star, t_star=np.asarray(t_star, dtype=float),
        s_star=s_star, lam=0.5, n_scale=n_scale, n_replicates=y_star.shape[0],
        seed=seed, weight_scheme="mammen", lambda_mode="hat",
    )


def bootstrap_result(seed=3, n=14, t=11, B=999):
    rng = np.random.default_rng(seed)
    y = (rng.standard_normal((n, 1)) + rng.standard_normal((1, t))
         + rng.standard_normal((n, t)))
    return cb.bootstrap_two_way(cb.PanelArray(y), cb.BootstrapConfig(n_replicates=B, seed=seed))


def test_spec_validation():
    with pytest.raises(InvalidConfig):
        cb.TestSpec(0.0, "wald")
    with pytest.raises(InvalidConfig):
        cb.TestSpec(0.0, "gau", alpha=1.5)
    with pytest.raises(InvalidConfig):
        cb.TestSpec(0.0, "sym", sided="left")


def test_gau_two_sided_threshold_exact():
    # reject iff |z| > 1.95996... at alpha = 0.05
    res = result_with(np.zeros(99), y_bar=0.196, s_hat=1.0, n_scale=100.0)
    z = math.sqrt(100.0) * 0.196  # 1.96 > threshold
    tr = cb.run_test(res, cb.TestSpec(0.0, "gau", "two", 0.05))
    assert tr.statistic == pytest.approx(z)
    assert tr.reject == (abs(z) > norm.ppf(0.975))
    borderline = result_with(np.zeros(99), y_bar=norm.ppf(0.975) / 10 - 1e-12, s_hat=1.0)
    assert not cb.run_test(borderline, cb.TestSpec(0.0, "gau", "two", 0.05)).reject


def test_degenerate_replicates_fail_to_reject():
    res = result_with(np.zeros(999), y_bar=0.0, s_hat=0.0)
    for method in ("bs", "piv", "sym"):
        tr = cb.run_test(res, cb.TestSpec(0.0, method, "two", 0.05))
        assert not tr.reject
        assert tr.p_value > 0.9


def test_too_few_replicates():
    res = result_with(np.zeros(19))
    with pytest.raises(TooFewReplicates):
        cb.run_test(res, cb.TestSpec(0.0, "piv", "two", 0.05))
    cb.run_test(res, cb.TestSpec(0.0, "gau", "two", 0.05))  # gau has no replicate floor
    with pytest.raises(TooFewReplicates):
        cb.confidence_interval(res, "bs", 0.05)


def test_reject_iff_p_below_alpha():
    res = bootstrap_result()
    for method in ("gau", "bs", "piv", "sym"):
        for mu0 in np.linspace(-1.0, 1.0, 21):
            sides = ("two",) if method == "sym" else ("two", "left", "right")
            for sided in sides:
                tr = cb.run_test(res, cb.TestSpec(mu0, method, sided, 0.07))
                assert tr.reject == (tr.p_value < 0.07)


def test_interval_test_duality_on_grid():
    res = bootstrap_result(seed=5)
    for method in ("gau", "bs", "piv", "sym"):
        for alpha in (0.05, 0.1):
            lo, hi = cb.confidence_interval(res, method, alpha)
            assert lo <= hi
            for mu0 in np.linspace(lo - 0.5, hi + 0.5, 60):
                inside = lo <= mu0 <= hi
                reject = cb.run_test(res, cb.TestSpec(mu0, method, "two", alpha)).reject
                if abs(mu0 - lo) > 1e-9 and abs(mu0 - hi) > 1e-9:
                    assert inside == (not reject), (method, alpha, mu0, lo, hi)


def test_one_sided_duality():
    res = bootstrap_result(seed=7)
    for method in ("gau", "bs", "piv"):
        lo, hi = cb.confidence_interval(res, method, 0.05, sided="left")
        assert lo == -math.inf
        for mu0 in np.linspace(hi - 0.4, hi + 0.4, 41):
            reject = cb.run_test(res, cb.TestSpec(mu0, method, "left", 0.05)).reject
            if abs(mu0 - hi) > 1e-9:
                assert (mu0 <= hi) == (not reject)
        lo, hi = cb.confidence_interval(res, method, 0.05, sided="right")
        assert hi == math.inf
        for mu0 in np.linspace(lo - 0.4, lo + 0.4, 41):
            reject = cb.run_test(res, cb.TestSpec(mu0, method, "right", 0.05)).reject
            if abs(mu0 - lo) > 1e-9:
                assert (mu0 >= lo) == (not reject)


def test_degenerate_interval_is_zero_width_at_mean():
    res = result_with(np.full(999, 1.25), y_bar=1.25, s_hat=0.0)
    for method in ("bs", "piv", "sym"):
        lo, hi = cb.confidence_interval(res, method, 0.05)
        assert lo == pytest.approx(1.25) and hi == pytest.approx(1.25)


def test_piv_interval_contains_mean_when_t_quantiles_straddle_zero():
    res = bootstrap_result(seed=9)
    t = np.asarray(res.t_star)
    if np.quantile(t, 0.025) < 0 < np.quantile(t, 0.975):
        lo, hi = cb.confidence_interval(res, "piv", 0.05)
        assert lo <= res.y_bar <= hi


def test_p_value_monotone_in_distance_for_symmetric_methods():
    res = bootstrap_result(seed=11)
    for method in ("gau", "sym"):
        ps = [cb.run_test(res, cb.TestSpec(res.y_bar + d, method, "two", 0.05)).p_value
              for d in np.linspace(0.0, 2.0, 25)]
        assert all(a >= b - 1e-12 for a, b in zip(ps, ps[1:]))


def test_critical_values_move_as_root_b():
    rng = np.random.default_rng(13)
    y = rng.standard_normal((30, 30))
    cv = {}
    for B in (999, 1999):
        res = cb.bootstrap_two_way(cb.PanelArray(y), cb.BootstrapConfig(n_replicates=B, seed=21))
        tr = cb.run_test(res, cb.TestSpec(0.0, "piv", "two", 0.05))
        cv[B] = tr.critical_values
    for lo_hi in (0, 1):
        assert abs(cv[999][lo_hi] - cv[1999][lo_hi]) < 8.0 / math.sqrt(999)


def test_sym_uses_absolute_draws():
    t_star = np.concatenate([np.full(500, -2.0), np.full(499, 0.5)])
    res = result_with(np.zeros(999), t_star=t_star, y_bar=0.3, s_hat=1.0)
    tr = cb.run_test(res, cb.TestSpec(0.0, "sym", "two", 0.05))
    # |t| = 0.3 is below more than half the |t*| draws
    assert not tr.reject
    assert tr.statistic == pytest.approx(0.3)
