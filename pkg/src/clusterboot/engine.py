"""The resampling core.

Every variant follows the same skeleton: decompose the sample, estimate the
shrinkage ratio, then per replicate draw index maps and wild weights from
counter-based streams, assemble the bootstrap sample, and recompute the full
variance pipeline on it for the studentized draw. Replicates are mutually
independent and keyed by (seed, replicate, component tag), so results are
bit-identical for any execution order or worker count.

Draw order within a replicate is pinned: dimension maps in dimension order,
then weight vectors in dimension order, then per-cell extras.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import rng as _rng
from .core import (
    BootstrapConfig,
    BootstrapResult,
    DyadicArray,
    MaskedPanel,
    MultiwayArray,
    PanelArray,
    UnbalancedPanel,
)
from .errors import (
    ConfigError,
    InvalidConfig,
    MomentEvaluationFailure,
    SingularJacobian,
)
from .projections import (
    MaskedDecomposition,
    UnbalancedDecomposition,
    decompose_masked,
    decompose_multiway,
    decompose_two_way,
    decompose_unbalanced,
)
from .variance import (
    Thresholds,
    branch_s2,
    lambda_bar,
    lambda_hat,
    lambda_nonexhaustive,
    lambda_tilde,
    lambda_unbalanced,
    masked_branch_s2,
    masked_variance_components,
    multiway_branch_s2,
    multiway_lambda_bar,
    multiway_lambda_hat,
    multiway_lambda_tilde,
    multiway_selection_fired,
    multiway_thresholds,
    multiway_variance_components,
    selection_fired,
    tau_hat,
    thresholds_for,
    unbalanced_branch_s2,
    unbalanced_selection_fired,
    unbalanced_variance_components,
    variance_components,
)
from .wild import TwoPointWeights, sample_weights, weights_for_dimension


@dataclass(frozen=True)
class ReplicatePlan:
    """All randomness consumed by one replicate.

    ``maps`` holds one index map per independently resampled dimension (a
    single shared map for node-set samples); ``weights`` one wild-weight
    vector per dimension. Unbalanced samples add a per-unit source pick and
    a per-unit weight.
    """

    index: int
    maps: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]
    cell_picks: Optional[np.ndarray] = None
    obs_weights: Optional[np.ndarray] = None


def _studentize(y_star: np.ndarray, y_bar, s_star: np.ndarray) -> np.ndarray:
    """(y* - y_bar) / s*, with 0/0 resolving to 0 (degenerate replicates)."""
    num = y_star - y_bar
    out = np.zeros_like(num)
    np.divide(num, s_star, out=out, where=s_star > 0)
    zero_scale = (s_star <= 0) & (num != 0)
    if np.any(zero_scale):
        out[zero_scale] = np.sign(num[zero_scale]) * np.inf
    return out


def _select_lambda(vc, thr: Thresholds, cfg: BootstrapConfig) -> float:
    if cfg.lambda_override is not None:
        return float(cfg.lambda_override)
    if cfg.lambda_mode == "hat":
        return lambda_hat(vc, cfg.denominator_factor)
    if cfg.lambda_mode == "tilde":
        return lambda_tilde(vc, thr, cfg.denominator_factor)
    return lambda_bar(vc, thr, cfg.denominator_factor)


def _gate_formula_lambda(value: float, fired: bool, thr: Thresholds, sigma_w2: float,
                         cfg: BootstrapConfig) -> float:
    """Apply the lambda mode to a variant-specific formula value."""
    if cfg.lambda_override is not None:
        return float(cfg.lambda_override)
    if cfg.lambda_mode == "hat" or fired:
        return value
    if cfg.lambda_mode == "tilde":
        return 0.0
    ks = thr.kappa_row + thr.kappa_col
    denom = ks + sigma_w2
    return min(1.0, max(0.0, ks) / denom) if denom > 0 else 0.0


# ---------------------------------------------------------------------
# Two-way (and multivariate) bootstrap
# ---------------------------------------------------------------------


def _two_way_plan(streams: _rng.CounterStreams, b: int, n: int, t: int,
                  row_dist: TwoPointWeights, col_dist: TwoPointWeights) -> ReplicatePlan:
    k = streams.stream(b, _rng.tag_map(0)).integers(0, n, size=n)
    s = streams.stream(b, _rng.tag_map(1)).integers(0, t, size=t)
    w1 = sample_weights(row_dist, n, streams.stream(b, _rng.tag_weights(0)))
    w2 = sample_weights(col_dist, t, streams.stream(b, _rng.tag_weights(1)))
    return ReplicatePlan(index=b, maps=(k, s), weights=(w1, w2))


def two_way_replicate_plan(cfg: BootstrapConfig, b: int, n_rows: int, n_cols: int) -> ReplicatePlan:
    """Expose the draws of replicate b (instrumentation and tests)."""
    streams = _rng.CounterStreams(cfg.seed, _rng.NS_REPLICATE)
    row_dist = weights_for_dimension(cfg.weight_scheme, n_rows)
    col_dist = weights_for_dimension(cfg.weight_scheme, n_cols)
    return _two_way_plan(streams, b, n_rows, n_cols, row_dist, col_dist)


def _run_two_way(values: np.ndarray, cfg: BootstrapConfig) -> BootstrapResult:
    """Shared core for scalar and vector panels; values has shape (N, T, M)."""
    n, t, m = values.shape
    thr = thresholds_for(cfg.kappa_rule, n, t)

    decs, vcs, lams, s_hats, fired = [], [], [], [], []
    for j in range(m):
        dec = decompose_two_way(values[:, :, j])
        vc = variance_components(dec, n, t)
        decs.append(dec)
        vcs.append(vc)
        lams.append(_select_lambda(vc, thr, cfg))
        fired.append(selection_fired(vc, thr))
        s_hats.append(np.sqrt(branch_s2(vc, fired[j])))
    sqrt_lam = [np.sqrt(l) for l in lams]

    row_dist = weights_for_dimension(cfg.weight_scheme, n)
    col_dist = weights_for_dimension(cfg.weight_scheme, t)
    streams = _rng.CounterStreams(cfg.seed, _rng.NS_REPLICATE)

    B = cfg.n_replicates
    y_star = np.empty((B, m))
    s_star = np.empty((B, m))
    for b in range(B):
        plan = _two_way_plan(streams, b, n, t, row_dist, col_dist)
        k, s = plan.maps
        outer = plan.weights[0][:, None] * plan.weights[1][None, :]
        for j in range(m):
            dec = decs[j]
            delta = (sqrt_lam[j] * (dec.row_effects[k][:, None] + dec.col_effects[s][None, :])
                     + outer * dec.residuals[np.ix_(k, s)])
            y_star[b, j] = dec.grand_mean + delta.mean()
            panel = dec.grand_mean + delta
            vc_b = variance_components(decompose_two_way(panel), n, t)
            # the branch chosen on the sample applies to its bootstrap analog
            s_star[b, j] = np.sqrt(branch_s2(vc_b, fired[j]))

    y_bar = np.array([d.grand_mean for d in decs])
    t_star = _studentize(y_star, y_bar[None, :], s_star)
    if m == 1:
        return BootstrapResult(
            y_bar=float(y_bar[0]), s_hat=float(s_hats[0]),
            y_star=y_star[:, 0], t_star=t_star[:, 0], s_star=s_star[:, 0],
            lam=float(lams[0]), n_scale=float(n * t),
            n_replicates=B, seed=cfg.seed,
            weight_scheme=cfg.weight_scheme, lambda_mode=cfg.lambda_mode,
        )
    return BootstrapResult(
        y_bar=y_bar, s_hat=np.array(s_hats),
        y_star=y_star, t_star=t_star, s_star=s_star,
        lam=np.array(lams), n_scale=float(n * t),
        n_replicates=B, seed=cfg.seed,
        weight_scheme=cfg.weight_scheme, lambda_mode=cfg.lambda_mode,
    )


def bootstrap_two_way(sample: PanelArray, cfg: BootstrapConfig) -> BootstrapResult:
    """Resample a scalar two-way panel."""
    if sample.n_vars != 1:
        raise InvalidConfig("vector panels go through bootstrap_multivariate")
    return _run_two_way(sample.values, cfg)


def bootstrap_multivariate(sample: PanelArray, cfg: BootstrapConfig) -> BootstrapResult:
    """Resample all components jointly: index maps and weights are shared, so
    cross-component dependence of the draws is preserved."""
    return _run_two_way(sample.values, cfg)


# ---------------------------------------------------------------------
# D-way and node-set samples
# ---------------------------------------------------------------------


def _multiway_lambda(mvc, thr, cfg: BootstrapConfig) -> float:
    if cfg.lambda_override is not None:
        return float(cfg.lambda_override)
    if cfg.lambda_mode == "hat":
        return multiway_lambda_hat(mvc, cfg.denominator_factor)
    if cfg.lambda_mode == "tilde":
        return multiway_lambda_tilde(mvc, thr, cfg.denominator_factor)
    return multiway_lambda_bar(mvc, thr, cfg.denominator_factor)


def _multiway_result(values: np.ndarray, cfg: BootstrapConfig, shared_map: bool) -> BootstrapResult:
    sizes = values.shape
    ndim = values.ndim
    dec = decompose_multiway(values)
    mvc = multiway_variance_components(dec, sizes)
    thr = multiway_thresholds(cfg.kappa_rule, sizes)
    lam = _multiway_lambda(mvc, thr, cfg)
    sqrt_lam = np.sqrt(lam)
    fired = multiway_selection_fired(mvc, thr)
    s_hat = float(np.sqrt(multiway_branch_s2(mvc, fired)))
    dists = [weights_for_dimension(cfg.weight_scheme, n_d) for n_d in sizes]

    streams = _rng.CounterStreams(cfg.seed, _rng.NS_REPLICATE)
    B = cfg.n_replicates
    y_star = np.empty(B)
    s_star = np.empty(B)
    total = values.size
    for b in range(B):
        if shared_map:
            shared = streams.stream(b, _rng.tag_map(0)).integers(0, sizes[0], size=sizes[0])
            maps = (shared,) * ndim
            plan_maps = (shared,)
        else:
            maps = tuple(
                streams.stream(b, _rng.tag_map(d)).integers(0, sizes[d], size=sizes[d])
                for d in range(ndim)
            )
            plan_maps = maps
        weights = tuple(
            sample_weights(dists[d], sizes[d], streams.stream(b, _rng.tag_weights(d)))
            for d in range(ndim)
        )
        delta = np.zeros(sizes)
        omega = np.ones(())
        for d in range(ndim):
            shape = [1] * ndim
            shape[d] = sizes[d]
            delta = delta + sqrt_lam * dec.effects[d][maps[d]].reshape(shape)
            omega = omega * weights[d].reshape(shape)
        delta = delta + omega * dec.residuals[np.ix_(*maps)]
        y_star[b] = dec.grand_mean + delta.mean()
        panel = dec.grand_mean + delta
        mvc_b = multiway_variance_components(decompose_multiway(panel), sizes)
        s_star[b] = np.sqrt(multiway_branch_s2(mvc_b, fired))

    t_star = _studentize(y_star, dec.grand_mean, s_star)
    return BootstrapResult(
        y_bar=dec.grand_mean, s_hat=s_hat,
        y_star=y_star, t_star=t_star, s_star=s_star,
        lam=lam, n_scale=float(total),
        n_replicates=B, seed=cfg.seed,
        weight_scheme=cfg.weight_scheme, lambda_mode=cfg.lambda_mode,
    )


def bootstrap_multiway(sample: MultiwayArray, cfg: BootstrapConfig) -> BootstrapResult:
    """Resample a D-way clustered array; one independent map per dimension.

    The two-dimensional case runs through the exact two-way code path, so it
    is bit-identical to bootstrap_two_way.
    """
    if sample.n_dims == 2:
        return _run_two_way(sample.values[:, :, None], cfg)
    return _multiway_result(sample.values, cfg, shared_map=False)


def bootstrap_dyadic(sample: DyadicArray, cfg: BootstrapConfig) -> BootstrapResult:
    """Resample a node-set array: one node map shared by all dimensions, one
    independent weight vector per dimension."""
    return _multiway_result(sample.values, cfg, shared_map=True)


# ---------------------------------------------------------------------
# Masked (non-exhaustive) samples
# ---------------------------------------------------------------------


def bootstrap_masked(sample: MaskedPanel, cfg: BootstrapConfig) -> BootstrapResult:
    """Generate full exhaustive bootstrap panels, then average over the mask.

    Residuals exist only on observed cells; the resampling matrix holds zeros
    elsewhere and the residual term is rescaled by 1/sqrt(p_bar) so its
    resampled second moment matches the observed one. Effect pools are
    recentered before resampling (their observed-cell means need not vanish).
    """
    n, t = sample.n_rows, sample.n_cols
    dec = decompose_masked(sample)
    vc = masked_variance_components(sample, dec)
    thr = thresholds_for(cfg.kappa_rule, n, t)
    lam_fired = vc.sigma_a2 >= thr.row or vc.sigma_g2 >= thr.col
    lam = _gate_formula_lambda(
        lambda_nonexhaustive(vc, sample.p_rows, sample.p_cols, sample.p_bar),
        lam_fired, thr, vc.sigma_w2, cfg,
    )
    sqrt_lam = np.sqrt(lam)
    fired = selection_fired(vc, thr)
    s_hat = float(np.sqrt(masked_branch_s2(sample, vc, fired)))

    rows_idx = sample.observed[:, 0]
    cols_idx = sample.observed[:, 1]
    row_counts = sample.row_counts
    col_counts = sample.col_counts
    a_pool = dec.row_effects - dec.row_effects.mean()
    g_pool = dec.col_effects - dec.col_effects.mean()
    resid_matrix = np.zeros((n, t))
    resid_matrix[rows_idx, cols_idx] = dec.residuals
    resid_scale = 1.0 / np.sqrt(sample.p_bar)

    row_dist = weights_for_dimension(cfg.weight_scheme, n)
    col_dist = weights_for_dimension(cfg.weight_scheme, t)
    streams = _rng.CounterStreams(cfg.seed, _rng.NS_REPLICATE)

    B = cfg.n_replicates
    y_star = np.empty(B)
    s_star = np.empty(B)
    for b in range(B):
        plan = _two_way_plan(streams, b, n, t, row_dist, col_dist)
        k, s = plan.maps
        outer = plan.weights[0][:, None] * plan.weights[1][None, :]
        panel = (dec.grand_mean
                 + sqrt_lam * (a_pool[k][:, None] + g_pool[s][None, :])
                 + resid_scale * outer * resid_matrix[np.ix_(k, s)])
        y_obs = panel[rows_idx, cols_idx]
        grand_b = y_obs.mean()
        row_eff_b = np.bincount(rows_idx, weights=y_obs, minlength=n) / row_counts - grand_b
        col_eff_b = np.bincount(cols_idx, weights=y_obs, minlength=t) / col_counts - grand_b
        resid_b = y_obs - row_eff_b[rows_idx] - col_eff_b[cols_idx] - grand_b
        vc_b = masked_variance_components(
            sample, MaskedDecomposition(float(grand_b), row_eff_b, col_eff_b, resid_b)
        )
        y_star[b] = grand_b
        s_star[b] = np.sqrt(masked_branch_s2(sample, vc_b, fired))

    t_star = _studentize(y_star, dec.grand_mean, s_star)
    return BootstrapResult(
        y_bar=dec.grand_mean, s_hat=s_hat,
        y_star=y_star, t_star=t_star, s_star=s_star,
        lam=lam, n_scale=float(sample.n_observed),
        n_replicates=B, seed=cfg.seed,
        weight_scheme=cfg.weight_scheme, lambda_mode=cfg.lambda_mode,
    )


# ---------------------------------------------------------------------
# Unbalanced cluster sizes
# ---------------------------------------------------------------------


def bootstrap_unbalanced(sample: UnbalancedPanel, cfg: BootstrapConfig) -> BootstrapResult:
    """Resample pooled cells of unequal size.

    Equal cell sizes reduce the problem to the two-way case on cell means and
    are dispatched there directly. The general path resamples cell effects
    with the shared row/column maps and within-cell units uniformly from the
    source cell, with the cell-level component shrunk by tau.
    """
    counts = sample.counts
    n, t = counts.shape
    if counts.min() == counts.max():
        r = int(counts[0, 0])
        cell_means = sample.values.reshape(n * t, r).mean(axis=1).reshape(n, t)
        return _run_two_way(cell_means[:, :, None], cfg)

    dec = decompose_unbalanced(sample)
    uvc = unbalanced_variance_components(sample, dec)
    thr = thresholds_for(cfg.kappa_rule, n, t)
    lam_fired = uvc.sigma_a2 >= thr.row or uvc.sigma_g2 >= thr.col
    lam = _gate_formula_lambda(lambda_unbalanced(uvc), lam_fired, thr, uvc.sigma_w2, cfg)
    tau = tau_hat(uvc.sigma_v2, uvc.sigma_e2, uvc.r_bar)
    sqrt_lam, sqrt_tau = np.sqrt(lam), np.sqrt(tau)
    fired = unbalanced_selection_fired(uvc, thr)
    s_hat = float(np.sqrt(unbalanced_branch_s2(sample, uvc, fired)))

    a_pool = dec.row_effects - dec.row_effects.mean()
    g_pool = dec.col_effects - dec.col_effects.mean()
    flat_counts = counts.ravel()
    offsets = sample.cell_offsets()
    cell_ids = np.repeat(np.arange(n * t), flat_counts)
    total = sample.n_units

    row_dist = weights_for_dimension(cfg.weight_scheme, n)
    col_dist = weights_for_dimension(cfg.weight_scheme, t)
    obs_dist = weights_for_dimension(cfg.weight_scheme, total)
    streams = _rng.CounterStreams(cfg.seed, _rng.NS_REPLICATE)

    B = cfg.n_replicates
    y_star = np.empty(B)
    s_star = np.empty(B)
    inv_counts = 1.0 / flat_counts
    for b in range(B):
        plan = _two_way_plan(streams, b, n, t, row_dist, col_dist)
        k, s = plan.maps
        outer = plan.weights[0][:, None] * plan.weights[1][None, :]
        src = (k[:, None] * t + s[None, :]).ravel()
        src_per_unit = src[cell_ids]
        u = streams.stream(b, _rng.TAG_CELL_PICKS).random(total)
        picks = offsets[src_per_unit] + (u * flat_counts[src_per_unit]).astype(np.int64)
        omega_r = sample_weights(obs_dist, total, streams.stream(b, _rng.TAG_OBS_WEIGHTS))

        cell_base = (dec.grand_mean
                     + sqrt_lam * (a_pool[k][:, None] + g_pool[s][None, :])
                     + sqrt_tau * outer * dec.cell_effects.ravel()[src].reshape(n, t))
        values_b = (cell_base.ravel()[cell_ids]
                    + outer.ravel()[cell_ids] * omega_r * dec.obs_residuals[picks])
        y_star[b] = values_b.mean()

        # unbalanced variance pipeline on the replicate
        cell_sums = np.bincount(cell_ids, weights=values_b, minlength=n * t)
        grand_b = values_b.mean()
        row_eff_b = cell_sums.reshape(n, t).sum(axis=1) / counts.sum(axis=1) - grand_b
        col_eff_b = cell_sums.reshape(n, t).sum(axis=0) / counts.sum(axis=0) - grand_b
        cell_means_b = cell_sums * inv_counts
        cell_eff_b = (cell_means_b.reshape(n, t) - row_eff_b[:, None] - col_eff_b[None, :] - grand_b)
        obs_resid_b = values_b - cell_means_b[cell_ids]
        uvc_b = unbalanced_variance_components(
            sample,
            UnbalancedDecomposition(float(grand_b), row_eff_b, col_eff_b, cell_eff_b, obs_resid_b),
        )
        s_star[b] = np.sqrt(unbalanced_branch_s2(sample, uvc_b, fired))

    t_star = _studentize(y_star, dec.grand_mean, s_star)
    return BootstrapResult(
        y_bar=dec.grand_mean, s_hat=s_hat,
        y_star=y_star, t_star=t_star, s_star=s_star,
        lam=lam, n_scale=float(total),
        n_replicates=B, seed=cfg.seed,
        weight_scheme=cfg.weight_scheme, lambda_mode=cfg.lambda_mode,
        tau=tau,
    )


# ---------------------------------------------------------------------
# Z-estimators
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class ZBootstrapResult:
    """Draws of a Z-estimator around its point estimate."""

    theta_hat: np.ndarray
    theta_star: np.ndarray
    moments: BootstrapResult

    def __post_init__(self):
        for name in ("theta_hat", "theta_star"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def _finite_difference_jacobian(moment_fn, values, theta_hat) -> np.ndarray:
    k = theta_hat.size
    base = np.asarray(moment_fn(values, theta_hat), dtype=float)
    m = base.shape[-1]
    jac = np.empty((m, k))
    for j in range(k):
        h = 1e-6 * (1.0 + abs(theta_hat[j]))
        up = theta_hat.copy()
        dn = theta_hat.copy()
        up[j] += h
        dn[j] -= h
        g_up = np.asarray(moment_fn(values, up), dtype=float).reshape(-1, m).mean(axis=0)
        g_dn = np.asarray(moment_fn(values, dn), dtype=float).reshape(-1, m).mean(axis=0)
        jac[:, j] = (g_up - g_dn) / (2.0 * h)
    return jac


def bootstrap_zestimator(
    moment_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    sample: PanelArray,
    theta_hat,
    cfg: BootstrapConfig,
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    weight_matrix: Optional[np.ndarray] = None,
    max_condition: float = 1e12,
) -> ZBootstrapResult:
    """Bootstrap an estimator defined by moment conditions E[g(Y; theta)] = 0.

    ``moment_fn(values, theta)`` maps the (N, T) outcome array to an
    (N, T, m) moment array. The moment array evaluated at theta_hat is
    resampled jointly (shared maps and weights across components) and each
    replicate mean is pushed through the estimator's linearization.
    """
    if sample.n_vars != 1:
        raise InvalidConfig("z-estimator resampling expects a scalar outcome panel")
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    values = sample.component(0)

    g_arr = np.asarray(moment_fn(values, theta_hat), dtype=float)
    if g_arr.ndim == 2:
        g_arr = g_arr[:, :, None]
    if g_arr.shape[:2] != values.shape:
        raise MomentEvaluationFailure("moment array must be indexed like the sample")
    if not np.isfinite(g_arr).all():
        raise MomentEvaluationFailure("moment function returned non-finite values")
    m = g_arr.shape[2]
    k = theta_hat.size

    if jacobian is not None:
        g_jac = np.asarray(jacobian(theta_hat), dtype=float).reshape(m, k)
    else:
        g_jac = _finite_difference_jacobian(moment_fn, values, theta_hat)
    if weight_matrix is None:
        if m != k:
            raise ConfigError("overidentified moments need an explicit weight matrix")
        a_mat = np.eye(k)
    else:
        a_mat = np.asarray(weight_matrix, dtype=float).reshape(k, m)

    ag = a_mat @ g_jac
    cond = np.linalg.cond(ag)
    if not np.isfinite(cond) or cond > max_condition:
        raise SingularJacobian(f"condition number {cond:.3e} exceeds {max_condition:.3e}")

    boot = bootstrap_multivariate(PanelArray(g_arr), cfg)
    score_draws = boot.y_star.reshape(cfg.n_replicates, m)
    theta_star = theta_hat[None, :] - np.linalg.solve(ag, (a_mat @ score_draws.T)).T
    return ZBootstrapResult(theta_hat=theta_hat, theta_star=theta_star, moments=boot)
