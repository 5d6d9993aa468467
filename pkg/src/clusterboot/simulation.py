"""Data-generating processes and the Monte Carlo harness.

Two DGP families: additive cluster effects (optionally with a standardized
lognormal row factor, skewed to the right) and non-separable interacted
effects whose degenerate version has dependence without correlation. The
harness reports false rejection rates per inference procedure plus the mean
ratios of the analytic (an) and bootstrap (bs) variance estimators over the
exact sampling variance of the mean, which is available in closed form for
both families.

Simulations are embarrassingly parallel over the simulation index; every
simulation derives its data stream and engine seed from (seed, sim), so the
report is byte-identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.stats import norm

from . import rng as _rng
from .core import BootstrapConfig, PanelArray
from .engine import bootstrap_two_way
from .errors import InvalidConfig, UnknownDesign
from .inference import TestSpec, run_test
from .projections import decompose_two_way
from .variance import s_hat_selection, thresholds_for, variance_components

# standardized lognormal: alpha = (zeta - E zeta) / sd(zeta), log zeta ~ N(0, 1)
_LOGNORMAL_MEAN = math.exp(0.5)
_LOGNORMAL_SD = math.sqrt((math.e - 1.0) * math.e)

FAMILIES = ("additive", "nonseparable")
ALPHA_DISTS = ("lognormal", "normal")


@dataclass(frozen=True)
class VarianceRule:
    """Size-dependent variance such as 5/T: numerator over one dimension."""

    numerator: float
    per: str  # "rows" or "cols"

    def value(self, n_rows: int, n_cols: int) -> float:
        return self.numerator / (n_rows if self.per == "rows" else n_cols)


def _resolve(v, n_rows: int, n_cols: int) -> float:
    return v.value(n_rows, n_cols) if isinstance(v, VarianceRule) else float(v)


@dataclass(frozen=True)
class DgpSpec:
    """One simulated design at a fixed size."""

    family: str
    n_rows: int
    n_cols: int
    sigma_alpha2: float | VarianceRule = 1.0
    sigma_gamma2: float | VarianceRule = 1.0
    sigma_eps2: float | VarianceRule = 1.0
    mu_alpha: float = 0.0
    mu_gamma: float = 0.0
    alpha_dist: str = "lognormal"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidConfig(f"family must be one of {FAMILIES}")
        if self.alpha_dist not in ALPHA_DISTS:
            raise InvalidConfig(f"alpha_dist must be one of {ALPHA_DISTS}")
        for name in ("sigma_alpha2", "sigma_gamma2", "sigma_eps2"):
            v = _resolve(getattr(self, name), self.n_rows, self.n_cols)
            if not (math.isfinite(v) and v >= 0.0):
                raise InvalidConfig(f"{name} must resolve to a finite nonnegative value")

    def variances(self) -> tuple[float, float, float]:
        return (
            _resolve(self.sigma_alpha2, self.n_rows, self.n_cols),
            _resolve(self.sigma_gamma2, self.n_rows, self.n_cols),
            _resolve(self.sigma_eps2, self.n_rows, self.n_cols),
        )


def standardized_lognormal(count: int, stream: np.random.Generator) -> np.ndarray:
    """Zero-mean, unit-variance lognormal draws (right-skewed)."""
    zeta = np.exp(stream.standard_normal(count))
    return (zeta - _LOGNORMAL_MEAN) / _LOGNORMAL_SD


def generate(spec: DgpSpec, stream: np.random.Generator) -> np.ndarray:
    """Draw one (N, T) outcome array with population mean zero."""
    n, t = spec.n_rows, spec.n_cols
    sa2, sg2, se2 = spec.variances()
    if spec.family == "additive":
        if spec.alpha_dist == "lognormal":
            alpha = standardized_lognormal(n, stream)
        else:
            alpha = stream.standard_normal(n)
        gamma = stream.standard_normal(t)
        eps = stream.standard_normal((n, t))
        return (math.sqrt(sa2) * alpha[:, None] + math.sqrt(sg2) * gamma[None, :]
                + math.sqrt(se2) * eps)
    alpha = math.sqrt(sa2) * stream.standard_normal(n)
    gamma = math.sqrt(sg2) * stream.standard_normal(t)
    eps = math.sqrt(se2) * stream.standard_normal((n, t))
    return ((alpha + spec.mu_alpha)[:, None] * (gamma + spec.mu_gamma)[None, :]
            - spec.mu_alpha * spec.mu_gamma + eps)


def analytic_mean_variance(spec: DgpSpec) -> float:
    """Exact Var of the sample mean under the given design."""
    n, t = spec.n_rows, spec.n_cols
    sa2, sg2, se2 = spec.variances()
    if spec.family == "additive":
        return sa2 / n + sg2 / t + se2 / (n * t)
    return (spec.mu_gamma**2 * sa2 / n + spec.mu_alpha**2 * sg2 / t
            + (sa2 * sg2 + se2) / (n * t))


# ---------------------------------------------------------------------
# Named designs
# ---------------------------------------------------------------------


def design_spec(name: str, n_rows: int, n_cols: int) -> DgpSpec:
    """Instantiate a named simulation design at a given size."""
    try:
        factory = _DESIGNS[name]
    except KeyError:
        raise UnknownDesign(f"unknown design {name!r}; known: {sorted(_DESIGNS)}") from None
    return factory(n_rows, n_cols)


_DESIGNS = {
    "table1-design1": lambda n, t: DgpSpec("additive", n, t, 1.0, 1.0, 1.0),
    "table1-design2": lambda n, t: DgpSpec("additive", n, t, 0.0, 0.0, 1.0),
    "table1-design3": lambda n, t: DgpSpec(
        "additive", n, t, VarianceRule(5.0, "cols"), VarianceRule(5.0, "rows"), 1.0
    ),
    # the caption and body of the unbalanced-size table disagree; both kept
    "table2-design1": lambda n, t: DgpSpec("additive", n, t, 0.5, 0.1, 0.5),
    "table2-design1-body": lambda n, t: DgpSpec("additive", n, t, 1.0, 0.25, 1.0),
    "table2-design2": lambda n, t: DgpSpec("additive", n, t, 0.5, 0.5, 1.0),
    "table3-design1": lambda n, t: DgpSpec(
        "nonseparable", n, t, 0.5, 0.5, 0.5, mu_alpha=1.0, mu_gamma=1.0, alpha_dist="normal"
    ),
    "table3-design2": lambda n, t: DgpSpec(
        "nonseparable", n, t, 0.5, 0.5, 0.1, mu_alpha=0.0, mu_gamma=0.0, alpha_dist="normal"
    ),
}

DESIGN_NAMES = tuple(sorted(_DESIGNS))


# ---------------------------------------------------------------------
# Monte Carlo harness
# ---------------------------------------------------------------------

_TWO_SIDED_METHODS = ("gau", "bs", "piv", "sym")
_ONE_SIDED_METHODS = ("gau", "bs", "piv")


@dataclass(frozen=True)
class McReport:
    """Rejection rates and variance-ratio columns for one design x size."""

    design: Optional[str]
    n_rows: int
    n_cols: int
    n_sims: int
    n_replicates: int
    seed: int
    alpha: float
    frr: dict
    mc_se: dict
    an_ratio: float
    bs_ratio: float

    def to_json_dict(self) -> dict:
        return {
            "design": self.design,
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "n_sims": self.n_sims,
            "n_replicates": self.n_replicates,
            "seed": self.seed,
            "alpha": self.alpha,
            "frr": self.frr,
            "mc_se": self.mc_se,
            "an_ratio": self.an_ratio,
            "bs_ratio": self.bs_ratio,
        }


def _sim_indicators(spec: DgpSpec, cfg: BootstrapConfig, sim: int, alpha: float,
                    mu0: float, var_true: float):
    """One simulation: rejection indicators plus the two variance ratios."""
    data_stream = _rng.substream(cfg.seed, _rng.NS_SIMULATION, sim)
    values = generate(spec, data_stream)
    sim_cfg = replace(cfg, seed=_rng.derived_seed(cfg.seed, sim), threads=1)
    result = bootstrap_two_way(PanelArray(values), sim_cfg)

    rejections = {}
    for method in _TWO_SIDED_METHODS:
        rejections[("two", method)] = run_test(result, TestSpec(mu0, method, "two", alpha)).reject
    for method in _ONE_SIDED_METHODS:
        rejections[("left", method)] = run_test(result, TestSpec(mu0, method, "left", alpha)).reject
        rejections[("right", method)] = run_test(result, TestSpec(mu0, method, "right", alpha)).reject

    n, t = spec.n_rows, spec.n_cols
    vc = variance_components(decompose_two_way(values), n, t)
    thr = thresholds_for(cfg.kappa_rule, n, t)
    an = s_hat_selection(vc, thr) / (n * t * var_true)
    bs = float(np.var(result.y_star, ddof=1)) / var_true
    return rejections, an, bs


def _mc_chunk(args):
    spec, cfg, sims, alpha, mu0, var_true = args
    out = []
    for sim in sims:
        out.append(_sim_indicators(spec, cfg, sim, alpha, mu0, var_true))
    return out


def run_monte_carlo(spec: DgpSpec, cfg: BootstrapConfig, n_sims: int,
                    alpha: float = 0.05, mu0: float = 0.0,
                    design: Optional[str] = None) -> McReport:
    """Estimate false rejection rates of the true null E[y] = mu0.

    Deterministic given cfg.seed; cfg.threads only controls the process pool.
    """
    if n_sims < 1:
        raise InvalidConfig("n_sims must be >= 1")
    var_true = analytic_mean_variance(spec)

    sims = list(range(n_sims))
    if cfg.threads > 1 and n_sims > 1:
        workers = min(cfg.threads, n_sims)
        chunks = [sims[w::workers] for w in range(workers)]
        ordered: list = [None] * n_sims
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk, records in zip(
                chunks,
                pool.map(_mc_chunk, [(spec, cfg, c, alpha, mu0, var_true) for c in chunks]),
            ):
                for sim, record in zip(chunk, records):
                    ordered[sim] = record
        records = ordered
    else:
        records = _mc_chunk((spec, cfg, sims, alpha, mu0, var_true))

    keys = [("two", m) for m in _TWO_SIDED_METHODS]
    keys += [(side, m) for side in ("left", "right") for m in _ONE_SIDED_METHODS]
    frr: dict = {"two": {}, "left": {}, "right": {}}
    mc_se: dict = {"two": {}, "left": {}, "right": {}}
    for side, method in keys:
        rate = float(np.mean([rec[0][(side, method)] for rec in records]))
        frr[side][method] = rate
        mc_se[side][method] = math.sqrt(rate * (1.0 - rate) / n_sims)
    an_ratio = float(np.mean([rec[1] for rec in records]))
    bs_ratio = float(np.mean([rec[2] for rec in records]))
    return McReport(
        design=design, n_rows=spec.n_rows, n_cols=spec.n_cols,
        n_sims=n_sims, n_replicates=cfg.n_replicates, seed=cfg.seed, alpha=alpha,
        frr=frr, mc_se=mc_se, an_ratio=an_ratio, bs_ratio=bs_ratio,
    )


def cdf_error_curve(spec: DgpSpec, method: str, grid, n_sims: int,
                    cfg: BootstrapConfig, mu0: float = 0.0) -> np.ndarray:
    """|simulated exceedance frequency - nominal| per percentile.

    For each simulation the chosen method estimates the percentile of the
    statistic's sampling distribution; the curve measures how far the
    frequency of exceeding it sits from the nominal tail mass.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or (grid <= 0).any() or (grid >= 1).any():
        raise InvalidConfig("percentile grid must lie strictly inside (0, 1)")
    if method not in ("gau", "bs", "piv"):
        raise InvalidConfig("curves are defined for gau, bs, and piv")
    exceed = np.zeros(grid.size)
    for sim in range(n_sims):
        data_stream = _rng.substream(cfg.seed, _rng.NS_SIMULATION, sim)
        values = generate(spec, data_stream)
        sim_cfg = replace(cfg, seed=_rng.derived_seed(cfg.seed, sim), threads=1)
        result = bootstrap_two_way(PanelArray(values), sim_cfg)
        if method == "gau":
            stat = math.sqrt(result.n_scale) * (result.y_bar - mu0)
            stat = stat / result.s_hat if result.s_hat > 0 else math.inf
            quantiles = norm.ppf(grid)
        elif method == "bs":
            stat = result.y_bar - mu0
            quantiles = np.quantile(result.y_star - result.y_bar, grid)
        else:
            stat = (result.y_bar - mu0) / result.s_hat if result.s_hat > 0 else math.inf
            quantiles = np.quantile(result.t_star, grid)
        exceed += stat > quantiles
    return np.abs(exceed / n_sims - (1.0 - grid))


def degeneracy_diagnostic(spec: DgpSpec, n_sims: int, seed: int = 0) -> float:
    """Excess kurtosis of sqrt(NT) times the sample mean across simulations.

    Gaussian-dominated designs give roughly zero; the pure interacted design
    approaches the two-normal product value of 6.
    """
    n, t = spec.n_rows, spec.n_cols
    stats = np.empty(n_sims)
    for sim in range(n_sims):
        stream = _rng.substream(seed, _rng.NS_SIMULATION, sim)
        stats[sim] = math.sqrt(n * t) * generate(spec, stream).mean()
    centered = stats - stats.mean()
    m2 = float(np.mean(centered**2))
    m4 = float(np.mean(centered**4))
    return m4 / (m2 * m2) - 3.0
