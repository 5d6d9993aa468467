"""Empirical projection decompositions.

Splits a sample into grand mean, per-dimension cluster effects, and a
double-centered residual; the unbalanced variant further splits the residual
into a cell-level component and a within-cell remainder. Reconstruction is
exact by construction: summing the pieces returns the data to rounding error.

All operations are pure; summation relies on numpy's pairwise reduction so
the 1e-12 reconstruction tolerance holds into the 1e4 x 1e4 range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DyadicArray, MaskedPanel, MultiwayArray, PanelArray, UnbalancedPanel


@dataclass(frozen=True)
class TwoWayDecomposition:
    """grand_mean + row_effects[i] + col_effects[t] + residuals[i, t] == Y[i, t]."""

    grand_mean: float
    row_effects: np.ndarray
    col_effects: np.ndarray
    residuals: np.ndarray


@dataclass(frozen=True)
class MultiwayDecomposition:
    """grand_mean + sum_d effects[d][i_d] + residuals == Y, for D dimensions."""

    grand_mean: float
    effects: tuple[np.ndarray, ...]
    residuals: np.ndarray


@dataclass(frozen=True)
class MaskedDecomposition:
    """Two-way decomposition restricted to the observed cells of a mask.

    ``residuals`` aligns with the sample's observed pair list.
    """

    grand_mean: float
    row_effects: np.ndarray
    col_effects: np.ndarray
    residuals: np.ndarray


@dataclass(frozen=True)
class UnbalancedDecomposition:
    """Five-part split for pooled cells.

    grand_mean + row_effects[i] + col_effects[t] + cell_effects[i, t]
    + obs_residuals[i, t, r] == Y[i, t, r]; obs_residuals is flat in the
    sample's cell order and averages to zero within every cell.
    """

    grand_mean: float
    row_effects: np.ndarray
    col_effects: np.ndarray
    cell_effects: np.ndarray
    obs_residuals: np.ndarray


def decompose_two_way(sample: PanelArray | np.ndarray) -> TwoWayDecomposition:
    """Project a dense (N, T) array onto grand mean, row and column effects."""
    values = sample.component(0) if isinstance(sample, PanelArray) else np.asarray(sample, dtype=float)
    grand = values.mean()
    rows = values.mean(axis=1) - grand
    cols = values.mean(axis=0) - grand
    resid = values - rows[:, None] - cols[None, :] - grand
    return TwoWayDecomposition(float(grand), rows, cols, resid)


def decompose_multiway(sample: MultiwayArray | DyadicArray | np.ndarray) -> MultiwayDecomposition:
    """Per-dimension projections of a D-dimensional array."""
    values = sample.values if isinstance(sample, (MultiwayArray, DyadicArray)) else np.asarray(sample, dtype=float)
    grand = values.mean()
    ndim = values.ndim
    effects = []
    resid = values
    for d in range(ndim):
        other = tuple(k for k in range(ndim) if k != d)
        eff = values.mean(axis=other) - grand
        effects.append(eff)
        shape = [1] * ndim
        shape[d] = values.shape[d]
        resid = resid - eff.reshape(shape)
    resid = resid - grand  # same op order as the two-way path: bit-identical at D = 2
    return MultiwayDecomposition(float(grand), tuple(effects), resid)


def decompose_masked(sample: MaskedPanel) -> MaskedDecomposition:
    """Two-way projections from observed cells only.

    Row and column effects are deviations of the observed row/column means
    from the pooled observed mean; with a full mask this coincides exactly
    with decompose_two_way.
    """
    rows_idx = sample.observed[:, 0]
    cols_idx = sample.observed[:, 1]
    y = sample.observed_values
    grand = y.mean()
    row_sums = np.bincount(rows_idx, weights=y, minlength=sample.n_rows)
    col_sums = np.bincount(cols_idx, weights=y, minlength=sample.n_cols)
    row_eff = row_sums / sample.row_counts - grand
    col_eff = col_sums / sample.col_counts - grand
    resid = y - row_eff[rows_idx] - col_eff[cols_idx] - grand
    return MaskedDecomposition(float(grand), row_eff, col_eff, resid)


def decompose_unbalanced(sample: UnbalancedPanel) -> UnbalancedDecomposition:
    """Five-part projection of pooled cells.

    Row effects are cell-size-weighted row means minus the pooled mean (the
    only reading under which every piece is well defined); cell effects
    double-center the cell means, and the within-cell residual is the
    deviation from the own cell mean.
    """
    counts = sample.counts
    values = sample.values
    n, t = counts.shape
    grand = values.mean()

    cell_ids = np.repeat(np.arange(n * t), counts.ravel())
    cell_sums = np.bincount(cell_ids, weights=values, minlength=n * t)
    cell_means = (cell_sums / counts.ravel()).reshape(n, t)

    row_eff = cell_sums.reshape(n, t).sum(axis=1) / counts.sum(axis=1) - grand
    col_eff = cell_sums.reshape(n, t).sum(axis=0) / counts.sum(axis=0) - grand
    cell_eff = cell_means - row_eff[:, None] - col_eff[None, :] - grand
    obs_resid = values - cell_means.ravel()[cell_ids]
    return UnbalancedDecomposition(float(grand), row_eff, col_eff, cell_eff, obs_resid)
