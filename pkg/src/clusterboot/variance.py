"""Scale estimation: component variances, shrinkage ratios, and test scales.

The raw row/column effect variances are inflated by residual noise; the
bias-corrected versions subtract that contribution and may legitimately be
negative, so every ratio or scale derived from them floors its aggregate at
zero. Denominator-zero cases resolve to zero so constant data flows through
the whole pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import MaskedPanel, UnbalancedPanel
from .errors import DegenerateDesign, InvalidConfig
from .projections import (
    MaskedDecomposition,
    MultiwayDecomposition,
    TwoWayDecomposition,
    UnbalancedDecomposition,
)


@dataclass(frozen=True)
class VarianceComponents:
    """Two-way scales. ``sigma_a2``/``sigma_g2`` are bias-corrected and may be
    negative; ``s_a2_raw``/``s_g2_raw`` and ``sigma_w2`` are nonnegative."""

    s_a2_raw: float
    s_g2_raw: float
    sigma_w2: float
    sigma_a2: float
    sigma_g2: float
    n_rows: int
    n_cols: int


@dataclass(frozen=True)
class MultiwayVarianceComponents:
    """Per-dimension scales for a D-way sample."""

    s_raw: tuple[float, ...]
    sigma_a2: tuple[float, ...]
    sigma_w2: float
    sizes: tuple[int, ...]


@dataclass(frozen=True)
class UnbalancedVarianceComponents:
    """Scales for pooled cells, including the cell/within-cell split."""

    sigma_a2: float
    sigma_g2: float
    sigma_v2: float
    sigma_e2: float
    n_rows: int
    n_cols: int
    r_bar: float
    kappa_row: float
    kappa_col: float

    @property
    def sigma_w2(self) -> float:
        return self.sigma_v2 + self.sigma_e2


@dataclass(frozen=True)
class Thresholds:
    """Relevance thresholds for the corrected effect variances.

    ``row`` applies to sigma_a2 and ``col`` to sigma_g2; ``kappa_row``/
    ``kappa_col`` are the matching unscaled sequences used by the
    conservative fallback ratio.
    """

    row: float
    col: float
    kappa_row: float
    kappa_col: float


def thresholds_for(rule: str, n_rows: int, n_cols: int) -> Thresholds:
    """Build the relevance thresholds for a named rule.

    ``log``: sigma_a2 is compared against log(T)/T and sigma_g2 against
    log(N)/N (the estimation-error rate of each component). ``sqrt_half_log``:
    each component is compared against 0.5*log(n)/sqrt(n) of its own dimension
    size, the harder shrinkage used for non-separable designs.
    """
    n, t = n_rows, n_cols
    if rule == "log":
        return Thresholds(row=math.log(t) / t, col=math.log(n) / n,
                          kappa_row=math.log(t), kappa_col=math.log(n))
    if rule == "sqrt_half_log":
        row = 0.5 * math.log(n) / math.sqrt(n)
        col = 0.5 * math.log(t) / math.sqrt(t)
        return Thresholds(row=row, col=col, kappa_row=row * t, kappa_col=col * n)
    raise InvalidConfig(f"unknown kappa rule {rule!r}")


def _two_way_raw(n_rows: int, n_cols: int, row_effects, col_effects, residuals):
    n, t = n_rows, n_cols
    if (n - 1) * (t - 1) <= 1:
        raise DegenerateDesign(f"{n}x{t} design leaves no residual degrees of freedom")
    sigma_w2 = float((residuals * residuals).sum() / ((n - 1) * (t - 1)))
    s_a2 = float((row_effects * row_effects).sum() / (n - 1))
    s_g2 = float((col_effects * col_effects).sum() / (t - 1))
    return s_a2, s_g2, sigma_w2


def variance_components(dec: TwoWayDecomposition, n_rows: int, n_cols: int) -> VarianceComponents:
    """Component variances of a two-way decomposition.

    The residual variance uses the (N-1)(T-1) residual degrees of freedom,
    which makes all three estimators exactly unbiased under the additive
    model; requires (N-1)(T-1) > 1.
    """
    s_a2, s_g2, sigma_w2 = _two_way_raw(n_rows, n_cols, dec.row_effects, dec.col_effects, dec.residuals)
    return VarianceComponents(
        s_a2_raw=s_a2,
        s_g2_raw=s_g2,
        sigma_w2=sigma_w2,
        sigma_a2=s_a2 - sigma_w2 / n_cols,
        sigma_g2=s_g2 - sigma_w2 / n_rows,
        n_rows=n_rows,
        n_cols=n_cols,
    )


def lambda_hat(vc: VarianceComponents, denominator_factor: int = 1) -> float:
    """Plug-in shrinkage ratio, nonnegative by construction.

    ``denominator_factor`` selects between the plug-in form (one residual
    variance) and the population-ratio form (two); both are exposed because
    they only agree asymptotically.
    """
    signal = vc.n_cols * vc.sigma_a2 + vc.n_rows * vc.sigma_g2
    denom = signal + denominator_factor * vc.sigma_w2
    if denom <= 0.0:
        return 0.0
    return min(1.0, max(0.0, signal) / denom)


def lambda_tilde(vc: VarianceComponents, thr: Thresholds, denominator_factor: int = 1) -> float:
    """Shrinkage ratio zeroed out unless some effect variance is relevant."""
    if vc.sigma_a2 >= thr.row or vc.sigma_g2 >= thr.col:
        return lambda_hat(vc, denominator_factor)
    return 0.0


def lambda_bar(vc: VarianceComponents, thr: Thresholds, denominator_factor: int = 1) -> float:
    """Conservative ratio: the plug-in value when a threshold fires, else an
    upper-bound fallback driven by the threshold sequences themselves."""
    if vc.sigma_a2 >= thr.row or vc.sigma_g2 >= thr.col:
        return lambda_hat(vc, denominator_factor)
    ks = thr.kappa_row + thr.kappa_col
    denom = ks + vc.sigma_w2
    if denom <= 0.0:
        return 0.0
    return min(1.0, max(0.0, ks) / denom)


def selection_fired(vc: VarianceComponents, thr: Thresholds) -> bool:
    """Whether some effect variance clears its relevance threshold."""
    return vc.sigma_a2 > thr.row or vc.sigma_g2 > thr.col


def branch_s2(vc: VarianceComponents, fired: bool) -> float:
    """The selected variance formula: full aggregate or residual only.

    The branch is passed in so bootstrap replicates can reuse the branch
    selected on the sample (the replicate scale then transforms equivariantly
    under shifts and rescalings of the data).
    """
    if fired:
        value = vc.n_cols * vc.sigma_a2 + vc.n_rows * vc.sigma_g2 + vc.sigma_w2
    else:
        value = vc.sigma_w2
    return max(0.0, value)


def s_hat_selection(vc: VarianceComponents, thr: Thresholds) -> float:
    """Pointwise-consistent variance of sqrt(NT) times the sample mean.

    Keeps the cluster terms only when some effect variance clears its
    threshold; floored at zero.
    """
    return branch_s2(vc, selection_fired(vc, thr))


def studentization_scale(vc: VarianceComponents) -> float:
    """Plain studentization scale: sqrt of the full variance aggregate."""
    value = vc.n_cols * vc.sigma_a2 + vc.n_rows * vc.sigma_g2 + vc.sigma_w2
    return math.sqrt(max(0.0, value))


def selection_scale(vc: VarianceComponents, thr: Thresholds) -> float:
    """sqrt of s_hat_selection; the scale used for studentized inference."""
    return math.sqrt(s_hat_selection(vc, thr))


def lambda_nonexhaustive(vc: VarianceComponents, p_rows: np.ndarray, p_cols: np.ndarray,
                         p_bar: float) -> float:
    """Shrinkage ratio for a panel observed on a sparse mask.

    Reduces to the two-residual two-way form under a full mask. Numerator is
    floored at zero; a nonpositive denominator resolves to zero.
    """
    if p_bar <= 0.0:
        return 0.0
    n, t = vc.n_rows, vc.n_cols
    kappa_a = float(np.mean((p_rows / p_bar) ** 2))
    kappa_g = float(np.mean((p_cols / p_bar) ** 2))
    signal = (t * p_bar - 1.0) * vc.sigma_a2 * kappa_a + (n * p_bar - 1.0) * vc.sigma_g2 * kappa_g
    denom = signal + 2.0 * p_bar * vc.sigma_w2
    if denom <= 0.0:
        return 0.0
    return min(1.0, max(0.0, signal) / denom)


def tau_hat(sigma_v2: float, sigma_e2: float, r_bar: float) -> float:
    """Share of the within-cell scale attributed to the cell-level component."""
    signal = (r_bar - 1.0) * sigma_v2
    denom = signal + sigma_e2
    if denom <= 0.0 or r_bar <= 1.0:
        return 0.0
    return min(1.0, max(0.0, signal) / denom)


def lambda_unbalanced(uvc: UnbalancedVarianceComponents) -> float:
    """Shrinkage ratio for pooled cells of unequal size."""
    n, t, r = uvc.n_rows, uvc.n_cols, uvc.r_bar
    signal = (t * r - 1.0) * uvc.sigma_a2 * uvc.kappa_row + (n * r - 1.0) * uvc.sigma_g2 * uvc.kappa_col
    denom = signal + 2.0 * r * uvc.sigma_w2
    if denom <= 0.0:
        return 0.0
    return min(1.0, max(0.0, signal) / denom)


# ---------------------------------------------------------------------
# D-way samples
# ---------------------------------------------------------------------


def multiway_variance_components(dec: MultiwayDecomposition, sizes: tuple[int, ...]) -> MultiwayVarianceComponents:
    """Per-dimension effect variances and the residual scale for D-way data.

    Residual degrees of freedom are prod(sizes) - 1 - sum(size_d - 1). An
    order-1 sample has an identically-zero residual, which is allowed; any
    other exhausted design raises.
    """
    total = int(np.prod(sizes))
    df = total - 1 - sum(s - 1 for s in sizes)
    ssq = float((dec.residuals * dec.residuals).sum())
    if df <= 0:
        if ssq <= 1e-12 * max(1.0, abs(dec.grand_mean)) ** 2 * total:
            sigma_w2 = 0.0
        else:
            raise DegenerateDesign("no residual degrees of freedom")
    else:
        sigma_w2 = ssq / df
    s_raw = tuple(float((e * e).sum() / (len(e) - 1)) for e in dec.effects)
    corrected = tuple(s - sigma_w2 * sizes[d] / total for d, s in enumerate(s_raw))
    return MultiwayVarianceComponents(s_raw=s_raw, sigma_a2=corrected, sigma_w2=sigma_w2, sizes=tuple(sizes))


def multiway_thresholds(rule: str, sizes: tuple[int, ...]) -> tuple[float, ...]:
    """One relevance threshold per dimension, mirroring the two-way rules."""
    total = int(np.prod(sizes))
    out = []
    for n_d in sizes:
        other = total // n_d
        if rule == "log":
            out.append(math.log(other) / other if other > 1 else 0.0)
        elif rule == "sqrt_half_log":
            out.append(0.5 * math.log(n_d) / math.sqrt(n_d))
        else:
            raise InvalidConfig(f"unknown kappa rule {rule!r}")
    return tuple(out)


def multiway_lambda_hat(mvc: MultiwayVarianceComponents, denominator_factor: int = 1) -> float:
    """D-way shrinkage ratio.

    The residual term in the denominator carries D residual variances in the
    population-ratio form (factor 2) and D/2 in the plug-in form (factor 1),
    so the D = 2 case agrees exactly with the two-way formulas.
    """
    total = int(np.prod(mvc.sizes))
    signal = sum(s / n_d for s, n_d in zip(mvc.sigma_a2, mvc.sizes))
    resid = (denominator_factor * len(mvc.sizes) / 2.0) * mvc.sigma_w2 / total
    denom = signal + resid
    if denom <= 0.0:
        return 0.0
    return min(1.0, max(0.0, signal) / denom)


def multiway_lambda_tilde(mvc: MultiwayVarianceComponents, thr: tuple[float, ...],
                          denominator_factor: int = 1) -> float:
    if any(s >= t for s, t in zip(mvc.sigma_a2, thr)):
        return multiway_lambda_hat(mvc, denominator_factor)
    return 0.0


def multiway_lambda_bar(mvc: MultiwayVarianceComponents, thr: tuple[float, ...],
                        denominator_factor: int = 1) -> float:
    if any(s >= t for s, t in zip(mvc.sigma_a2, thr)):
        return multiway_lambda_hat(mvc, denominator_factor)
    total = int(np.prod(mvc.sizes))
    ks = sum(t * (total // n_d) for t, n_d in zip(thr, mvc.sizes))
    denom = ks + mvc.sigma_w2
    if denom <= 0.0:
        return 0.0
    return min(1.0, max(0.0, ks) / denom)


def multiway_selection_fired(mvc: MultiwayVarianceComponents, thr: tuple[float, ...]) -> bool:
    return any(s > t for s, t in zip(mvc.sigma_a2, thr))


def multiway_branch_s2(mvc: MultiwayVarianceComponents, fired: bool) -> float:
    total = int(np.prod(mvc.sizes))
    if fired:
        value = sum((total // n_d) * s for s, n_d in zip(mvc.sigma_a2, mvc.sizes)) + mvc.sigma_w2
    else:
        value = mvc.sigma_w2
    return max(0.0, value)


def multiway_selection_s2(mvc: MultiwayVarianceComponents, thr: tuple[float, ...]) -> float:
    """Selection variance of sqrt(prod sizes) times the D-adic mean."""
    return multiway_branch_s2(mvc, multiway_selection_fired(mvc, thr))


# ---------------------------------------------------------------------
# Masked and unbalanced samples
# ---------------------------------------------------------------------


def masked_variance_components(sample: MaskedPanel, dec: MaskedDecomposition) -> VarianceComponents:
    """Two-way scales estimated from observed cells only.

    The residual degrees of freedom are n_obs - N - T + 1, and the effect
    corrections use the average reciprocal per-row/column cell counts, so a
    full mask reproduces the balanced estimators exactly.
    """
    n, t = sample.n_rows, sample.n_cols
    df = sample.n_observed - n - t + 1
    if df <= 0:
        raise DegenerateDesign("mask leaves no residual degrees of freedom")
    sigma_w2 = float((dec.residuals * dec.residuals).sum() / df)
    a = dec.row_effects - dec.row_effects.mean()
    g = dec.col_effects - dec.col_effects.mean()
    s_a2 = float((a * a).sum() / (n - 1))
    s_g2 = float((g * g).sum() / (t - 1))
    return VarianceComponents(
        s_a2_raw=s_a2,
        s_g2_raw=s_g2,
        sigma_w2=sigma_w2,
        sigma_a2=s_a2 - sigma_w2 * float(np.mean(1.0 / sample.row_counts)),
        sigma_g2=s_g2 - sigma_w2 * float(np.mean(1.0 / sample.col_counts)),
        n_rows=n,
        n_cols=t,
    )


def masked_branch_s2(sample: MaskedPanel, vc: VarianceComponents, fired: bool) -> float:
    n, t, p = vc.n_rows, vc.n_cols, sample.p_bar
    if fired:
        kappa_a = float(np.mean((sample.p_rows / p) ** 2))
        kappa_g = float(np.mean((sample.p_cols / p) ** 2))
        value = t * p * vc.sigma_a2 * kappa_a + n * p * vc.sigma_g2 * kappa_g + vc.sigma_w2
    else:
        value = vc.sigma_w2
    return max(0.0, value)


def masked_selection_s2(sample: MaskedPanel, vc: VarianceComponents, thr: Thresholds) -> float:
    """Selection variance of sqrt(n_obs) times the masked mean."""
    return masked_branch_s2(sample, vc, selection_fired(vc, thr))


def unbalanced_variance_components(sample: UnbalancedPanel,
                                   dec: UnbalancedDecomposition) -> UnbalancedVarianceComponents:
    """Scales for pooled cells.

    The within-cell variance pools squared deviations from cell means over
    cells with at least two units; the cell-level variance subtracts the
    within-cell noise carried by each cell mean. Row/column corrections use
    the exact per-row and per-column noise of the weighted means.
    """
    counts = sample.counts
    n, t = counts.shape
    if (n - 1) * (t - 1) <= 1:
        raise DegenerateDesign(f"{n}x{t} design leaves no residual degrees of freedom")
    within_df = int((counts - 1).sum())
    ssq_e = float((dec.obs_residuals * dec.obs_residuals).sum())
    sigma_e2 = ssq_e / within_df if within_df > 0 else 0.0

    s_v2 = float((dec.cell_effects * dec.cell_effects).sum() / ((n - 1) * (t - 1)))
    sigma_v2 = s_v2 - sigma_e2 * float(np.mean(1.0 / counts))
    sigma_w2 = sigma_v2 + sigma_e2

    row_units = counts.sum(axis=1)
    col_units = counts.sum(axis=0)
    # noise of the weighted row mean: (sum_t R_it^2 sigma_v2 + sum_t R_it sigma_e2) / (T r_i)^2
    row_noise = ((counts ** 2).sum(axis=1) * sigma_v2 + row_units * sigma_e2) / row_units ** 2
    col_noise = ((counts ** 2).sum(axis=0) * sigma_v2 + col_units * sigma_e2) / col_units ** 2

    a = dec.row_effects - dec.row_effects.mean()
    g = dec.col_effects - dec.col_effects.mean()
    sigma_a2 = float((a * a).sum() / (n - 1)) - float(row_noise.mean())
    sigma_g2 = float((g * g).sum() / (t - 1)) - float(col_noise.mean())

    r_bar = sample.r_bar
    kappa_row = float(np.mean((sample.r_rows / r_bar) ** 2))
    kappa_col = float(np.mean((sample.r_cols / r_bar) ** 2))
    return UnbalancedVarianceComponents(
        sigma_a2=sigma_a2,
        sigma_g2=sigma_g2,
        sigma_v2=sigma_v2,
        sigma_e2=sigma_e2,
        n_rows=n,
        n_cols=t,
        r_bar=r_bar,
        kappa_row=kappa_row,
        kappa_col=kappa_col,
    )


def unbalanced_branch_s2(sample: UnbalancedPanel, uvc: UnbalancedVarianceComponents,
                         fired: bool) -> float:
    n, t, r = uvc.n_rows, uvc.n_cols, uvc.r_bar
    m_r2 = float((sample.counts.astype(float) ** 2).mean())
    value = m_r2 / r * uvc.sigma_v2 + uvc.sigma_e2
    if fired:
        value += t * r * uvc.sigma_a2 * uvc.kappa_row + n * r * uvc.sigma_g2 * uvc.kappa_col
    return max(0.0, value)


def unbalanced_selection_fired(uvc: UnbalancedVarianceComponents, thr: Thresholds) -> bool:
    return uvc.sigma_a2 > thr.row or uvc.sigma_g2 > thr.col


def unbalanced_selection_s2(sample: UnbalancedPanel, uvc: UnbalancedVarianceComponents,
                            thr: Thresholds) -> float:
    """Selection variance of sqrt(total units) times the pooled mean."""
    return unbalanced_branch_s2(sample, uvc, unbalanced_selection_fired(uvc, thr))
