"""Sample containers, run configuration, and result records.

Every container is immutable after construction (arrays are copied in and
marked read-only) and is validated eagerly; ``validate`` re-runs the checks
and returns the object unchanged, so it is idempotent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import (
    DimensionTooSmall,
    DuplicateMaskEntry,
    EmptyMask,
    InvalidConfig,
    NonFinite,
    ValidationError,
)

WEIGHT_SCHEMES = ("mammen", "moment_corrected")
LAMBDA_MODES = ("hat", "tilde", "conservative")
KAPPA_RULES = ("log", "sqrt_half_log")


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_finite(values: np.ndarray) -> None:
    finite = np.isfinite(values)
    if not finite.all():
        index = np.argwhere(~finite)[0]
        raise NonFinite(index)


@dataclass(frozen=True)
class PanelArray:
    """Dense two-way sample, optionally vector-valued.

    ``values`` has shape (N, T) or (N, T, M); index (i, t, m).
    """

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values)
        if arr.ndim == 2:
            arr = arr[:, :, None]
            arr.setflags(write=False)
        if arr.ndim != 3:
            raise DimensionTooSmall("ndim", arr.ndim, 2)
        object.__setattr__(self, "values", arr)
        self._check()

    def _check(self) -> None:
        n, t, m = self.values.shape
        if n < 2:
            raise DimensionTooSmall("rows", n, 2)
        if t < 2:
            raise DimensionTooSmall("cols", t, 2)
        if m < 1:
            raise DimensionTooSmall("vars", m, 1)
        _check_finite(self.values)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def n_vars(self) -> int:
        return self.values.shape[2]

    def component(self, m: int) -> np.ndarray:
        """Read-only (N, T) view of component m."""
        return self.values[:, :, m]


@dataclass(frozen=True)
class MultiwayArray:
    """Sample clustered in D >= 2 dimensions; one index set per dimension."""

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values)
        object.__setattr__(self, "values", arr)
        self._check()

    def _check(self) -> None:
        if self.values.ndim < 2:
            raise DimensionTooSmall("ndim", self.values.ndim, 2)
        for d, size in enumerate(self.values.shape):
            if size < 2:
                raise DimensionTooSmall(f"dim{d}", size, 2)
        _check_finite(self.values)

    @property
    def n_dims(self) -> int:
        return self.values.ndim

    @property
    def sizes(self) -> tuple[int, ...]:
        return self.values.shape


@dataclass(frozen=True)
class DyadicArray:
    """Order-D array over one shared node set {1..N} (dyads, triads, ...)."""

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values)
        object.__setattr__(self, "values", arr)
        self._check()

    def _check(self) -> None:
        if self.values.ndim < 1:
            raise DimensionTooSmall("ndim", self.values.ndim, 1)
        sizes = set(self.values.shape)
        if len(sizes) != 1:
            raise DimensionTooSmall("shared node set", min(self.values.shape), max(self.values.shape))
        n = self.values.shape[0]
        if n < self.values.ndim:
            raise DimensionTooSmall("nodes", n, self.values.ndim)
        _check_finite(self.values)

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def order(self) -> int:
        return self.values.ndim


@dataclass(frozen=True)
class MaskedPanel:
    """Non-exhaustively matched sample: a panel observed on a sparse mask.

    ``base.values`` must be finite on the observed cells; unobserved cells are
    never read. ``observed`` is the list of (i, t) pairs with data.
    """

    base: PanelArray
    observed: np.ndarray

    def __post_init__(self):
        pairs = np.array(self.observed, dtype=np.int64, copy=True)
        if pairs.ndim != 2 or pairs.shape[1] != 2:
            raise ValidationError("observed must be a list of (row, col) pairs")
        pairs.setflags(write=False)
        object.__setattr__(self, "observed", pairs)
        self._check()

    def _check(self) -> None:
        if self.base.n_vars != 1:
            raise DimensionTooSmall("vars (masked panels are scalar)", self.base.n_vars, 1)
        n, t = self.base.n_rows, self.base.n_cols
        pairs = self.observed
        if pairs.shape[0] == 0:
            raise EmptyMask("mask covers no cells")
        if pairs.min() < 0 or pairs[:, 0].max() >= n or pairs[:, 1].max() >= t:
            raise ValidationError("mask pair out of range")
        flat = pairs[:, 0] * t + pairs[:, 1]
        uniq, counts = np.unique(flat, return_counts=True)
        if (counts > 1).any():
            dup = uniq[counts > 1][0]
            raise DuplicateMaskEntry((dup // t, dup % t))
        row_counts = np.bincount(pairs[:, 0], minlength=n)
        col_counts = np.bincount(pairs[:, 1], minlength=t)
        if (row_counts == 0).any():
            raise EmptyMask(f"row {int(np.argmin(row_counts > 0))} has no observed cells")
        if (col_counts == 0).any():
            raise EmptyMask(f"col {int(np.argmin(col_counts > 0))} has no observed cells")
        _check_finite(self.observed_values)

    @property
    def n_rows(self) -> int:
        return self.base.n_rows

    @property
    def n_cols(self) -> int:
        return self.base.n_cols

    @property
    def n_observed(self) -> int:
        return self.observed.shape[0]

    @property
    def observed_values(self) -> np.ndarray:
        return self.base.values[self.observed[:, 0], self.observed[:, 1], 0]

    @property
    def row_counts(self) -> np.ndarray:
        return np.bincount(self.observed[:, 0], minlength=self.n_rows)

    @property
    def col_counts(self) -> np.ndarray:
        return np.bincount(self.observed[:, 1], minlength=self.n_cols)

    @property
    def p_rows(self) -> np.ndarray:
        """Observed share of each row: T_i / T."""
        return self.row_counts / self.n_cols

    @property
    def p_cols(self) -> np.ndarray:
        """Observed share of each column: N_t / N."""
        return self.col_counts / self.n_rows

    @property
    def p_bar(self) -> float:
        return self.n_observed / (self.n_rows * self.n_cols)

    def mask_matrix(self) -> np.ndarray:
        w = np.zeros((self.n_rows, self.n_cols))
        w[self.observed[:, 0], self.observed[:, 1]] = 1.0
        return w


@dataclass(frozen=True)
class UnbalancedPanel:
    """Panel with R_it >= 1 pooled units per (i, t) cell.

    ``values`` is the flat pooled vector in row-major cell order: all units of
    cell (0, 0), then (0, 1), and so on. ``counts`` holds the R_it.
    """

    counts: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64, copy=True)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "values", _frozen_array(self.values).ravel())
        self._check()

    def _check(self) -> None:
        if self.counts.ndim != 2:
            raise DimensionTooSmall("counts ndim", self.counts.ndim, 2)
        n, t = self.counts.shape
        if n < 2:
            raise DimensionTooSmall("rows", n, 2)
        if t < 2:
            raise DimensionTooSmall("cols", t, 2)
        if (self.counts < 1).any():
            i, j = np.argwhere(self.counts < 1)[0]
            raise DimensionTooSmall(f"cell ({i},{j}) count", int(self.counts[i, j]), 1)
        if self.values.size != int(self.counts.sum()):
            raise DimensionTooSmall("values length", self.values.size, int(self.counts.sum()))
        _check_finite(self.values)

    @property
    def n_rows(self) -> int:
        return self.counts.shape[0]

    @property
    def n_cols(self) -> int:
        return self.counts.shape[1]

    @property
    def n_units(self) -> int:
        return int(self.counts.sum())

    @property
    def r_rows(self) -> np.ndarray:
        """Average cell size by row: r_i."""
        return self.counts.sum(axis=1) / self.n_cols

    @property
    def r_cols(self) -> np.ndarray:
        """Average cell size by column: r_t."""
        return self.counts.sum(axis=0) / self.n_rows

    @property
    def r_bar(self) -> float:
        return self.n_units / (self.n_rows * self.n_cols)

    def cell_offsets(self) -> np.ndarray:
        """Start offset of each cell in ``values`` (row-major, length N*T)."""
        flat = self.counts.ravel()
        offsets = np.zeros(flat.size, dtype=np.int64)
        np.cumsum(flat[:-1], out=offsets[1:])
        return offsets


Sample = Union[PanelArray, MultiwayArray, DyadicArray, MaskedPanel, UnbalancedPanel]


def validate(sample: Sample) -> Sample:
    """Re-check a container's invariants and return it unchanged."""
    sample._check()
    return sample


@dataclass(frozen=True)
class BootstrapConfig:
    """Run configuration for the resampling engine.

    ``seed`` fully determines all randomness; ``threads`` is a parallelism
    hint that never changes results. ``lambda_override`` pins the shrinkage
    ratio to a fixed value (diagnostics only).
    """

    n_replicates: int = 999
    weight_scheme: str = "moment_corrected"
    lambda_mode: str = "hat"
    kappa_rule: str = "log"
    denominator_factor: int = 1
    seed: int = 0
    threads: int = 1
    lambda_override: Optional[float] = None

    def __post_init__(self):
        if self.n_replicates < 1:
            raise InvalidConfig(f"n_replicates must be >= 1, got {self.n_replicates}")
        if self.weight_scheme not in WEIGHT_SCHEMES:
            raise InvalidConfig(f"weight_scheme must be one of {WEIGHT_SCHEMES}")
        if self.lambda_mode not in LAMBDA_MODES:
            raise InvalidConfig(f"lambda_mode must be one of {LAMBDA_MODES}")
        if self.kappa_rule not in KAPPA_RULES:
            raise InvalidConfig(f"kappa_rule must be one of {KAPPA_RULES}")
        if self.denominator_factor not in (1, 2):
            raise InvalidConfig("denominator_factor must be 1 or 2")
        if not (0 <= self.seed < 2**64):
            raise InvalidConfig("seed must fit in 64 bits")
        if self.threads < 1:
            raise InvalidConfig("threads must be >= 1")
        if self.lambda_override is not None and not (0.0 <= self.lambda_override <= 1.0):
            raise InvalidConfig("lambda_override must lie in [0, 1]")


@dataclass(frozen=True)
class BootstrapResult:
    """Observed statistics plus replicate draws.

    ``y_star`` holds the replicate means, ``t_star`` the studentized draws
    (y_star - y_bar) / s_star, and ``s_star`` the per-replicate scale
    recomputed by the full variance pipeline. For vector-valued samples the
    replicate arrays gain a trailing component axis, and ``y_bar``/``s_hat``/
    ``lam`` become vectors. ``n_scale`` is the cell count that converts the
    scale to a standard error: se = s_hat / sqrt(n_scale).
    """

    y_bar: float | np.ndarray
    s_hat: float | np.ndarray
    y_star: np.ndarray
    t_star: np.ndarray
    s_star: np.ndarray
    lam: float | np.ndarray
    n_scale: float
    n_replicates: int
    seed: int
    weight_scheme: str
    lambda_mode: str
    tau: Optional[float] = None

    def __post_init__(self):
        for name in ("y_star", "t_star", "s_star"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        if self.y_star.shape[0] != self.n_replicates:
            raise InvalidConfig("replicate vectors must have length n_replicates")
        if (np.asarray(self.s_star) < 0).any():
            raise InvalidConfig("bootstrap scales must be nonnegative")

    @property
    def n_vars(self) -> int:
        return 1 if self.y_star.ndim == 1 else self.y_star.shape[1]
