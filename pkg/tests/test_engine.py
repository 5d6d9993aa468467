import numpy as np
import pytest

import clusterboot as cb
from clusterboot.engine import two_way_replicate_plan
from clusterboot.errors import DegenerateDesign
from clusterboot.projections import decompose_two_way
from clusterboot.variance import thresholds_for, variance_components
from clusterboot.wild import weights_for_dimension


def small_cfg(**kw):
    base = dict(n_replicates=99, seed=11)
    base.update(kw)
    return cb.BootstrapConfig(**base)


def additive_panel(seed, n=12, t=10, sa=1.0, sg=1.0, se=1.0):
    rng = np.random.default_rng(seed)
    y = (sa * rng.standard_normal((n, 1)) + sg * rng.standard_normal((1, t))
         + se * rng.standard_normal((n, t)))
    return cb.PanelArray(y)


def test_constant_data_gives_constant_replicates():
    res = cb.bootstrap_two_way(cb.PanelArray(np.full((6, 7), 4.5)), small_cfg())
    np.testing.assert_array_equal(res.y_star, np.full(99, 4.5))
    np.testing.assert_array_equal(res.t_star, np.zeros(99))


def test_zero_lambda_and_zero_residual_pin_replicates():
    u = np.arange(5.0) - 2.0
    v = np.array([1.0, -1.0, 3.0, -3.0])
    y = u[:, None] + v[None, :]  # exactly additive: residuals vanish
    res = cb.bootstrap_two_way(cb.PanelArray(y), small_cfg(lambda_override=0.0))
    np.testing.assert_allclose(res.y_star, y.mean(), atol=1e-13)


def test_degenerate_design_propagates():
    with pytest.raises(DegenerateDesign):
        cb.bootstrap_two_way(cb.PanelArray(np.arange(4.0).reshape(2, 2)), small_cfg())


def test_determinism_bit_identical():
    panel = additive_panel(1)
    a = cb.bootstrap_two_way(panel, small_cfg())
    b = cb.bootstrap_two_way(panel, small_cfg())
    np.testing.assert_array_equal(a.y_star, b.y_star)
    np.testing.assert_array_equal(a.t_star, b.t_star)
    np.testing.assert_array_equal(a.s_star, b.s_star)
    c = cb.bootstrap_two_way(panel, small_cfg(seed=12))
    assert not np.array_equal(a.y_star, c.y_star)


def test_location_and_scale_equivariance():
    panel = additive_panel(2)
    base = cb.bootstrap_two_way(panel, small_cfg())
    shifted = cb.bootstrap_two_way(cb.PanelArray(panel.component(0) + 7.0), small_cfg())
    np.testing.assert_allclose(shifted.y_star, base.y_star + 7.0, atol=1e-12)
    np.testing.assert_allclose(shifted.t_star, base.t_star, atol=1e-12)

    scaled = cb.bootstrap_two_way(cb.PanelArray(panel.component(0) * -3.0), small_cfg())
    np.testing.assert_allclose(scaled.y_star - scaled.y_bar,
                               -3.0 * (base.y_star - base.y_bar), atol=1e-12)
    np.testing.assert_allclose(scaled.t_star, -base.t_star, atol=1e-12)
    assert scaled.lam == pytest.approx(base.lam, rel=1e-12)


def test_replicate_plan_coupling():
    """Replicate residual draws reuse the effect-draw index maps: rebuilding a
    replicate by hand from its plan reproduces the engine output."""
    panel = additive_panel(3, n=8, t=6)
    cfg = small_cfg(n_replicates=5, seed=99)
    res = cb.bootstrap_two_way(panel, cfg)
    n, t = panel.n_rows, panel.n_cols
    dec = decompose_two_way(panel)
    vc = variance_components(dec, n, t)
    thr = thresholds_for(cfg.kappa_rule, n, t)

    for b in range(cfg.n_replicates):
        plan = two_way_replicate_plan(cfg, b, n, t)
        k, s = plan.maps
        w1, w2 = plan.weights
        assert k.shape == (n,) and s.shape == (t,)
        assert set(np.unique(w1)) <= {weights_for_dimension(cfg.weight_scheme, n).w1,
                                      weights_for_dimension(cfg.weight_scheme, n).w2}
        manual = np.empty((n, t))
        for i in range(n):
            for j in range(t):
                manual[i, j] = (np.sqrt(res.lam) * (dec.row_effects[k[i]] + dec.col_effects[s[j]])
                                + w1[i] * w2[j] * dec.residuals[k[i], s[j]])
        assert res.y_star[b] == pytest.approx(dec.grand_mean + manual.mean(), rel=1e-12)


def test_conditional_centering():
    panel = additive_panel(4, n=12, t=10)
    res = cb.bootstrap_two_way(panel, small_cfg(n_replicates=100_000))
    se = res.y_star.std(ddof=1) / np.sqrt(res.n_replicates)
    assert abs(res.y_star.mean() - res.y_bar) < 4 * se


def analytic_two_way_bootstrap_variance(panel, res, scheme="moment_corrected"):
    dec = decompose_two_way(panel)
    n, t = panel.n_rows, panel.n_cols
    c2n = weights_for_dimension(scheme, n).c2
    c2t = weights_for_dimension(scheme, t).c2
    return (res.lam * ((dec.row_effects**2).mean() / n + (dec.col_effects**2).mean() / t)
            + c2n * c2t * (dec.residuals**2).mean() / (n * t))


def test_bootstrap_variance_matches_analytic_form():
    panel = additive_panel(5, n=15, t=12)
    res = cb.bootstrap_two_way(panel, small_cfg(n_replicates=40_000))
    want = analytic_two_way_bootstrap_variance(panel, res)
    got = res.y_star.var(ddof=1)
    assert got == pytest.approx(want, rel=0.05)


def test_design1_bootstrap_variance_ratio():
    # mean ratio of bootstrap variance to true sampling variance; the printed
    # reference value at this size is 1.052
    rng = np.random.default_rng(71)
    n = t = 50
    var_true = 1.0 / n + 1.0 / t + 1.0 / (n * t)
    ratios = []
    lognormal_mean = np.exp(0.5)
    lognormal_sd = np.sqrt((np.e - 1) * np.e)
    for sim in range(300):
        alpha = (np.exp(rng.standard_normal(n)) - lognormal_mean) / lognormal_sd
        y = alpha[:, None] + rng.standard_normal((1, t)) + rng.standard_normal((n, t))
        res = cb.bootstrap_two_way(cb.PanelArray(y), small_cfg(n_replicates=199, seed=sim))
        ratios.append(res.y_star.var(ddof=1) / var_true)
    assert np.mean(ratios) == pytest.approx(1.052, abs=0.15)


# ---------------------------------------------------------------------
# D-way and dyadic
# ---------------------------------------------------------------------


def test_multiway_d2_bit_identical_to_two_way():
    panel = additive_panel(6)
    cfg = small_cfg()
    two = cb.bootstrap_two_way(panel, cfg)
    multi = cb.bootstrap_multiway(cb.MultiwayArray(panel.component(0)), cfg)
    np.testing.assert_array_equal(two.y_star, multi.y_star)
    np.testing.assert_array_equal(two.t_star, multi.t_star)
    assert two.lam == multi.lam


def test_multiway_constant_cube():
    res = cb.bootstrap_multiway(cb.MultiwayArray(np.full((3, 3, 3), 2.0)), small_cfg())
    np.testing.assert_array_equal(res.y_star, np.full(99, 2.0))


def analytic_multiway_bootstrap_variance(values, lam, scheme="moment_corrected"):
    from clusterboot.projections import decompose_multiway

    dec = decompose_multiway(values)
    sizes = values.shape
    total = values.size
    var = 0.0
    c2_prod = 1.0
    for d, n_d in enumerate(sizes):
        var += lam * (dec.effects[d] ** 2).mean() / n_d
        c2_prod *= weights_for_dimension(scheme, n_d).c2
    return var + c2_prod * (dec.residuals**2).mean() / total


def test_multiway_three_way_variance_oracle():
    # one-sample check that the replicate variance matches its closed form,
    # then a simulation check against the true sampling variance of the mean
    rng = np.random.default_rng(73)
    sizes = (20, 20, 20)
    y = (rng.standard_normal((sizes[0], 1, 1)) + rng.standard_normal((1, sizes[1], 1))
         + rng.standard_normal((1, 1, sizes[2])) + rng.standard_normal(sizes))
    res = cb.bootstrap_multiway(cb.MultiwayArray(y), small_cfg(n_replicates=4000))
    want = analytic_multiway_bootstrap_variance(y, res.lam)
    assert res.y_star.var(ddof=1) == pytest.approx(want, rel=0.08)

    n_d = 30
    var_true = 3.0 / n_d + 1.0 / n_d**3
    ratios = []
    for sim in range(2000):
        y = (rng.standard_normal((n_d, 1, 1)) + rng.standard_normal((1, n_d, 1))
             + rng.standard_normal((1, 1, n_d)) + rng.standard_normal((n_d,) * 3))
        from clusterboot.projections import decompose_multiway
        from clusterboot.variance import multiway_lambda_hat, multiway_variance_components

        dec = decompose_multiway(y)
        mvc = multiway_variance_components(dec, (n_d,) * 3)
        lam = multiway_lambda_hat(mvc)
        ratios.append(analytic_multiway_bootstrap_variance(y, lam) / var_true)
    assert abs(np.mean(ratios) - 1.0) < 0.15


def test_dyadic_constant_array():
    res = cb.bootstrap_dyadic(cb.DyadicArray(np.full((5, 5), -1.0)), small_cfg())
    np.testing.assert_array_equal(res.y_star, np.full(99, -1.0))


def test_dyadic_shared_map_correlates_dimensions():
    # row and column effects of one node travel together under the shared map;
    # a strongly node-driven array must show more replicate spread than under
    # independent maps of the same marginals
    rng = np.random.default_rng(79)
    node = rng.standard_normal(20)
    y = node[:, None] + node[None, :] + 0.1 * rng.standard_normal((20, 20))
    cfg = small_cfg(n_replicates=2000)
    dy = cb.bootstrap_dyadic(cb.DyadicArray(y), cfg)
    mw = cb.bootstrap_multiway(cb.MultiwayArray(y), cfg)
    # same node drawn in both dimensions doubles the effect: variance ratio -> 2
    assert dy.y_star.var(ddof=1) > 1.5 * mw.y_star.var(ddof=1)


def test_dyadic_order_one_is_nonparametric_resampling():
    rng = np.random.default_rng(83)
    y = rng.standard_normal(25)
    cfg = small_cfg(n_replicates=50)
    res = cb.bootstrap_dyadic(cb.DyadicArray(y), cfg)
    assert res.lam == pytest.approx(1.0)
    from clusterboot.rng import CounterStreams, NS_REPLICATE, tag_map

    streams = CounterStreams(cfg.seed, NS_REPLICATE)
    for b in range(50):
        k = streams.stream(b, tag_map(0)).integers(0, 25, size=25)
        assert res.y_star[b] == pytest.approx(y.mean() + (y[k] - y.mean()).mean(), rel=1e-12)


def test_dyadic_triad_density_coverage():
    # known-truth run: percentile intervals for the mean of the triangle
    # indicator array over random graphs with heterogeneous degrees
    rng = np.random.default_rng(89)
    n = 40
    cfg = cb.BootstrapConfig(n_replicates=99, seed=17)
    covered = 0
    sims = 300
    for sim in range(sims):
        u = rng.uniform(0.15, 0.55, size=n)
        p_edge = np.minimum(0.95, np.sqrt(u[:, None] * u[None, :]))
        g = (rng.random((n, n)) < p_edge).astype(float)
        g = np.triu(g, 1)
        g = g + g.T
        y = g[:, :, None] * g[:, None, :] * g[None, :, :]
        idx = np.arange(n)
        y[idx, idx, :] = 0.0
        y[idx, :, idx] = 0.0
        y[:, idx, idx] = 0.0
        truth = _expected_triad_mean(n)
        res = cb.bootstrap_dyadic(cb.DyadicArray(y), cb.BootstrapConfig(n_replicates=99, seed=sim))
        lo, hi = cb.confidence_interval(res, "bs", alpha=0.05)
        covered += lo <= truth <= hi
    assert covered / sims >= 0.90


def _expected_triad_mean(n):
    # E G_ij = E sqrt(u_i u_j) = (E sqrt(u))^2 for i != j; triangle needs three
    # distinct nodes, and E[G_ij G_ik G_jk] = E[u] (E sqrt(u))^2 ... with
    # u ~ U(0.15, 0.55): E sqrt(u) and E u analytic
    lo, hi = 0.15, 0.55
    e_sqrt = (hi**1.5 - lo**1.5) / (1.5 * (hi - lo))
    e_u = (lo + hi) / 2
    p3 = e_u * e_sqrt * e_sqrt  # E[sqrt(ui uj) sqrt(ui uk) sqrt(uj uk)] = (E u)^... not exact
    # exact: E prod = E[u_i u_j u_k] over pair roots: sqrt(ui uj)sqrt(ui uk)sqrt(uj uk)
    #       = u_i u_j u_k, so E = (E u)^3
    p3 = e_u**3
    return p3 * (n - 1) * (n - 2) / n**2


# ---------------------------------------------------------------------
# Multivariate and Z-estimators
# ---------------------------------------------------------------------


def test_multivariate_m1_identical_to_scalar():
    panel = additive_panel(7)
    cfg = small_cfg()
    scalar = cb.bootstrap_two_way(panel, cfg)
    vector = cb.bootstrap_multivariate(panel, cfg)
    np.testing.assert_array_equal(scalar.y_star, vector.y_star)
    np.testing.assert_array_equal(scalar.t_star, vector.t_star)


def test_multivariate_duplicated_component():
    y = additive_panel(8).component(0)
    stacked = cb.PanelArray(np.stack([y, y], axis=2))
    res = cb.bootstrap_multivariate(stacked, small_cfg())
    np.testing.assert_array_equal(res.y_star[:, 0], res.y_star[:, 1])


def test_multivariate_negated_component():
    y = additive_panel(9).component(0)
    stacked = cb.PanelArray(np.stack([y, -y], axis=2))
    res = cb.bootstrap_multivariate(stacked, small_cfg())
    np.testing.assert_allclose(res.y_star[:, 0] - res.y_bar[0],
                               -(res.y_star[:, 1] - res.y_bar[1]), atol=1e-12)


def test_zestimator_linear_reduction():
    panel = additive_panel(10)
    cfg = small_cfg()
    res = cb.bootstrap_two_way(panel, cfg)
    theta = np.array([panel.component(0).mean()])
    z = cb.bootstrap_zestimator(lambda v, th: v[:, :, None] - th[0], panel, theta, cfg,
                                jacobian=lambda th: np.array([[-1.0]]))
    np.testing.assert_allclose(z.theta_star[:, 0], res.y_star, rtol=1e-12)
    # finite differences land within the step-size noise of the same draws
    z_fd = cb.bootstrap_zestimator(lambda v, th: v[:, :, None] - th[0], panel, theta, cfg)
    np.testing.assert_allclose(z_fd.theta_star[:, 0], res.y_star, rtol=1e-9, atol=1e-9)


def test_zestimator_two_linear_moments():
    # g(y, theta) = (y - th1, y^2 - th2): draws are the linear map of the
    # bivariate bootstrap means
    panel = additive_panel(11)
    y = panel.component(0)
    theta = np.array([y.mean(), (y**2).mean()])
    cfg = small_cfg()

    def moments(v, th):
        return np.stack([v - th[0], v**2 - th[1]], axis=2)

    z = cb.bootstrap_zestimator(moments, panel, theta, cfg)
    boot = cb.bootstrap_multivariate(cb.PanelArray(moments(y, theta)), cfg)
    np.testing.assert_allclose(z.theta_star - theta[None, :], boot.y_star, rtol=1e-10, atol=1e-14)


def test_zestimator_nonlinear_delta_method_oracle():
    # g(y, theta) = exp(theta) - y: bootstrap sd of theta* tracks the delta sd
    rng = np.random.default_rng(97)
    n = t = 40
    boot_sd, delta_sd = [], []
    for sim in range(200):
        y = np.exp(0.5 + 0.4 * rng.standard_normal((n, 1)) + 0.4 * rng.standard_normal((1, t))
                   + 0.3 * rng.standard_normal((n, t)))
        panel = cb.PanelArray(y)
        theta = np.array([np.log(y.mean())])
        z = cb.bootstrap_zestimator(
            lambda v, th: np.exp(th[0]) - v[:, :, None], panel, theta,
            small_cfg(seed=sim),
        )
        boot_sd.append(z.theta_star[:, 0].std(ddof=1))
        res = cb.bootstrap_two_way(panel, small_cfg(seed=sim))
        delta_sd.append(res.y_star.std(ddof=1) / y.mean())
    assert np.mean(boot_sd) == pytest.approx(np.mean(delta_sd), rel=0.20)


def test_zestimator_singular_jacobian():
    panel = additive_panel(12)
    with pytest.raises(cb.errors.SingularJacobian):
        cb.bootstrap_zestimator(
            lambda v, th: np.zeros_like(v)[:, :, None], panel, np.array([0.0]), small_cfg(),
        )


# ---------------------------------------------------------------------
# Masked and unbalanced
# ---------------------------------------------------------------------


def test_masked_full_mask_matches_two_way_with_specialized_lambda():
    panel = additive_panel(13, n=9, t=8)
    obs = np.array([(i, j) for i in range(9) for j in range(8)])
    sample = cb.MaskedPanel(panel, obs)
    cfg = small_cfg()
    masked = cb.bootstrap_masked(sample, cfg)
    pinned = cb.bootstrap_two_way(panel, small_cfg(lambda_override=masked.lam))
    np.testing.assert_allclose(masked.y_star, pinned.y_star, rtol=1e-12, atol=1e-14)
    assert masked.n_scale == 9 * 8


def test_masked_constant_data_degenerate():
    panel = cb.PanelArray(np.full((6, 6), 3.0))
    obs = np.argwhere(np.random.default_rng(0).random((6, 6)) < 0.7)
    sample = cb.MaskedPanel(panel, obs)
    res = cb.bootstrap_masked(sample, small_cfg())
    np.testing.assert_allclose(res.y_star, 3.0, atol=1e-13)


def test_unbalanced_unit_cells_collapse_to_two_way():
    panel = additive_panel(14, n=7, t=6)
    sample = cb.UnbalancedPanel(np.ones((7, 6), dtype=int), panel.component(0).ravel())
    cfg = small_cfg()
    collapsed = cb.bootstrap_unbalanced(sample, cfg)
    direct = cb.bootstrap_two_way(panel, cfg)
    np.testing.assert_array_equal(collapsed.y_star, direct.y_star)
    np.testing.assert_array_equal(collapsed.t_star, direct.t_star)


def test_unbalanced_constant_data():
    counts = np.random.default_rng(1).integers(1, 4, size=(5, 5))
    sample = cb.UnbalancedPanel(counts, np.full(int(counts.sum()), 2.5))
    res = cb.bootstrap_unbalanced(sample, small_cfg())
    np.testing.assert_allclose(res.y_star, 2.5, atol=1e-13)


def test_unbalanced_bootstrap_variance_tracks_sampling_variance():
    rng = np.random.default_rng(101)
    n = t = 40
    ratios = []
    for sim in range(150):
        counts = rng.integers(1, 5, size=(n, t))
        total = int(counts.sum())
        a = rng.standard_normal(n)
        g = rng.standard_normal(t)
        cell_ids = np.repeat(np.arange(n * t), counts.ravel())
        base = (a[:, None] + g[None, :]).ravel()[cell_ids]
        values = base + rng.standard_normal(total)
        sample = cb.UnbalancedPanel(counts, values)
        res = cb.bootstrap_unbalanced(sample, small_cfg(n_replicates=199, seed=sim))
        # exact sampling variance of the pooled mean for this count pattern
        w_rows = counts.sum(axis=1) / total
        w_cols = counts.sum(axis=0) / total
        var_true = (w_rows**2).sum() + (w_cols**2).sum() + total / total**2
        ratios.append(res.y_star.var(ddof=1) / var_true)
    assert np.mean(ratios) == pytest.approx(1.0, abs=0.20)
