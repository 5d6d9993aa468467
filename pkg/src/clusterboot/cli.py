"""Command-line surface: analyze, simulate, weights.

Input is long-format CSV (comma separator, "." decimals, UTF-8, LF) with a
header. Index labels are arbitrary strings mapped to dense indices in first
appearance order; the mapping is echoed in the summary for auditability.
Every run writes a manifest; outputs other than the manifest contain no
timestamps, so identical runs are byte-identical.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric
degeneracy.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    BootstrapConfig,
    DyadicArray,
    MaskedPanel,
    MultiwayArray,
    PanelArray,
    UnbalancedPanel,
)
from .engine import (
    bootstrap_dyadic,
    bootstrap_masked,
    bootstrap_multiway,
    bootstrap_multivariate,
    bootstrap_two_way,
    bootstrap_unbalanced,
)
from .errors import (
    ConfigError,
    IoError,
    NumericError,
    SchemaError,
    ValidationError,
)
from .inference import TestSpec, confidence_interval, run_test
from .simulation import (
    DESIGN_NAMES,
    DgpSpec,
    VarianceRule,
    cdf_error_curve,
    design_spec,
    run_monte_carlo,
)
from .wild import corrected_moments, solve_two_point

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_KAPPA_FLAG = {"log": "log", "sqrt-half-log": "sqrt_half_log"}
_WEIGHT_FLAG = {"mammen": "mammen", "corrected": "moment_corrected"}

# flag defaults, applied after any config-file values
_ENGINE_DEFAULTS = {
    "seed": 0,
    "reps": 999,
    "lam": "hat",
    "weights": "corrected",
    "kappa": "log",
    "denominator_factor": 1,
    "level": 0.05,
    "threads": 1,
}


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_manifest(out_dir: Path, command: str, settings: dict, seed: int,
                    input_digest: str | None, started: str) -> None:
    manifest = {
        "command": command,
        "settings": settings,
        "config_hash": _sha256_bytes(_canonical_json(settings).encode()),
        "seed": seed,
        "version": __version__,
        "input_digest": input_digest,
        "started_at": started,
        "finished_at": _utc_now(),
    }
    _write_json(out_dir / "manifest.json", manifest)


def _load_config_file(path_str: str | None) -> dict:
    """Parse the declarative run-settings file (JSON mirroring the config
    record field names, with optional "dgp" and "sims"/"alpha" sections)."""
    if path_str is None:
        return {}
    path = Path(path_str)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    known = {"dgp", "bootstrap", "sims", "alpha"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return raw


_BOOT_FILE_KEYS = {
    "n_replicates": "reps",
    "seed": "seed",
    "lambda_mode": "lam",
    "weight_scheme": "weights",
    "kappa_rule": "kappa",
    "denominator_factor": "denominator_factor",
    "threads": "threads",
}
_FILE_VALUE_MAPS = {
    "weights": {"mammen": "mammen", "moment_corrected": "corrected", "corrected": "corrected"},
    "kappa": {"log": "log", "sqrt_half_log": "sqrt-half-log", "sqrt-half-log": "sqrt-half-log"},
}


def _resolve_settings(args, file_cfg: dict) -> dict:
    """Flag value if given, else config-file value, else the default."""
    boot = file_cfg.get("bootstrap", {})
    unknown = set(boot) - set(_BOOT_FILE_KEYS)
    if unknown:
        raise ConfigError(f"unknown bootstrap config fields: {sorted(unknown)}")
    resolved = {}
    for field, flag in _BOOT_FILE_KEYS.items():
        value = getattr(args, flag, None)
        if value is None and field in boot:
            value = boot[field]
            value_map = _FILE_VALUE_MAPS.get(flag)
            if value_map is not None:
                if value not in value_map:
                    raise ConfigError(f"bad value {value!r} for {field}")
                value = value_map[value]
        if value is None:
            value = _ENGINE_DEFAULTS[flag]
        resolved[flag] = value
    resolved["level"] = args.level if args.level is not None else file_cfg.get(
        "alpha", _ENGINE_DEFAULTS["level"])
    return resolved


def _config_from_settings(s: dict) -> BootstrapConfig:
    return BootstrapConfig(
        n_replicates=int(s["reps"]),
        weight_scheme=_WEIGHT_FLAG[s["weights"]],
        lambda_mode=s["lam"],
        kappa_rule=_KAPPA_FLAG[s["kappa"]],
        denominator_factor=int(s["denominator_factor"]),
        seed=int(s["seed"]),
        threads=int(s["threads"]),
    )


# ---------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------


class _LabelMap:
    """Arbitrary labels -> dense indices in first-appearance order."""

    def __init__(self):
        self.indices: dict[str, int] = {}
        self.labels: list[str] = []

    def index(self, label: str) -> int:
        if label not in self.indices:
            self.indices[label] = len(self.labels)
            self.labels.append(label)
        return self.indices[label]


def _read_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(text.splitlines())
    rows = [row for row in reader]
    if not rows:
        raise SchemaError("empty input", line=1)
    header = [h.strip() for h in rows[0]]
    return header, rows[1:]


def _parse_value(raw: str, line: int) -> float:
    try:
        return float(raw)
    except ValueError:
        raise SchemaError(f"non-numeric value {raw!r}", line=line) from None


def load_sample(path: Path, mode: str = "auto", value_cols: list[str] | None = None):
    """Parse a long CSV into a sample container.

    Returns (sample, info) where info records the selected pipeline and the
    label-to-index maps.
    """
    header, rows = _read_rows(path)
    cols = {name: j for j, name in enumerate(header)}
    dims = sorted((name for name in cols if name.startswith("i") and name[1:].isdigit()),
                  key=lambda s: int(s[1:]))

    if dims and len(dims) >= 2 and mode in ("auto", "dway", "dyadic"):
        return _load_multiway(rows, cols, dims, mode)
    if "i" not in cols or "t" not in cols:
        raise SchemaError("need columns 'i' and 't' (or 'i1'..'iD')", line=1)
    values = value_cols or ["y"]
    for v in values:
        if v not in cols:
            raise SchemaError(f"missing value column {v!r}", line=1)
    return _load_two_way_family(rows, cols, values, mode)


def _load_multiway(rows, cols, dims, mode):
    if "y" not in cols:
        raise SchemaError("missing value column 'y'", line=1)
    shared = _LabelMap()
    maps = [shared] * len(dims) if mode == "dyadic" else [_LabelMap() for _ in dims]
    entries = []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        try:
            idx = tuple(maps[d].index(row[cols[name]].strip()) for d, name in enumerate(dims))
            y = _parse_value(row[cols["y"]], lineno)
        except IndexError:
            raise SchemaError("short row", line=lineno) from None
        entries.append((idx, y))
    if mode == "dyadic":
        n = len(shared.labels)
        shape = (n,) * len(dims)
    else:
        shape = tuple(len(m.labels) for m in maps)
    values = np.full(shape, np.nan)
    for idx, y in entries:
        values[idx] = y
    if np.isnan(values).any():
        raise SchemaError("array has unfilled cells; multiway input must be exhaustive")
    info = {
        "mode": "dyadic" if mode == "dyadic" else "dway",
        "label_maps": {name: (shared.labels if mode == "dyadic" else maps[d].labels)
                       for d, name in enumerate(dims)},
    }
    sample = DyadicArray(values) if mode == "dyadic" else MultiwayArray(values)
    return sample, info


def _load_two_way_family(rows, cols, value_cols, mode):
    rmap, cmap = _LabelMap(), _LabelMap()
    entries = []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        try:
            i = rmap.index(row[cols["i"]].strip())
            t = cmap.index(row[cols["t"]].strip())
            ys = [_parse_value(row[cols[v]], lineno) for v in value_cols]
        except IndexError:
            raise SchemaError("short row", line=lineno) from None
        entries.append((i, t, ys))
    n, t_size, m = len(rmap.labels), len(cmap.labels), len(value_cols)
    info = {"label_maps": {"i": rmap.labels, "t": cmap.labels}}

    seen: dict[tuple[int, int], int] = {}
    for i, t, _ in entries:
        seen[(i, t)] = seen.get((i, t), 0) + 1
    has_repeats = any(c > 1 for c in seen.values())
    exhaustive = len(seen) == n * t_size

    if mode == "auto":
        mode = "unbalanced" if has_repeats else ("two-way" if exhaustive else "masked")
    if mode == "two-way" and has_repeats:
        raise SchemaError("repeated (i, t) pairs; use --mode unbalanced")
    if mode == "two-way" and not exhaustive:
        raise SchemaError("missing (i, t) pairs; use --mode masked")
    if mode == "masked" and m > 1:
        raise SchemaError("multivariate masked input is not supported")

    if mode == "unbalanced":
        if m > 1:
            raise SchemaError("multivariate unbalanced input is not supported")
        counts = np.zeros((n, t_size), dtype=np.int64)
        for i, t, _ in entries:
            counts[i, t] += 1
        if (counts == 0).any():
            raise SchemaError("unbalanced input must cover every (i, t) cell")
        buckets: dict[tuple[int, int], list[float]] = {}
        for i, t, ys in entries:
            buckets.setdefault((i, t), []).append(ys[0])
        flat = []
        for i in range(n):
            for t in range(t_size):
                flat.extend(buckets[(i, t)])
        info["mode"] = "unbalanced"
        return UnbalancedPanel(counts, np.array(flat)), info

    values = np.full((n, t_size, m), np.nan)
    for i, t, ys in entries:
        values[i, t, :] = ys
    if mode == "masked":
        observed = np.array(sorted(seen), dtype=np.int64)
        filled = np.where(np.isnan(values), 0.0, values)
        info["mode"] = "masked"
        return MaskedPanel(PanelArray(filled[:, :, 0]), observed), info
    info["mode"] = "two-way" if m == 1 else "multivariate"
    return PanelArray(values if m > 1 else values[:, :, 0]), info


# ---------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------


def _dispatch(sample, cfg):
    if isinstance(sample, MaskedPanel):
        return bootstrap_masked(sample, cfg)
    if isinstance(sample, UnbalancedPanel):
        return bootstrap_unbalanced(sample, cfg)
    if isinstance(sample, DyadicArray):
        return bootstrap_dyadic(sample, cfg)
    if isinstance(sample, MultiwayArray):
        return bootstrap_multiway(sample, cfg)
    if sample.n_vars > 1:
        return bootstrap_multivariate(sample, cfg)
    return bootstrap_two_way(sample, cfg)


def _scalar_summary(result, alpha: float) -> dict:
    tests = {}
    intervals = {}
    for method in ("gau", "bs", "piv", "sym"):
        tr = run_test(result, TestSpec(0.0, method, "two", alpha))
        tests[method] = {
            "statistic": tr.statistic,
            "critical_values": list(tr.critical_values),
            "p_value": tr.p_value,
            "reject_zero_mean": tr.reject,
        }
        lo, hi = confidence_interval(result, method, alpha)
        intervals[method] = [lo, hi]
    return {"tests": tests, "confidence_intervals": intervals}


def cmd_analyze(args) -> int:
    started = _utc_now()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = Path(args.input)
    value_cols = args.vars.split(",") if args.vars else None
    sample, info = load_sample(path, mode=args.mode, value_cols=value_cols)
    settings = _resolve_settings(args, _load_config_file(args.config))
    cfg = _config_from_settings(settings)
    result = _dispatch(sample, cfg)

    summary = {
        "input": str(path),
        "mode": info["mode"],
        "label_maps": info["label_maps"],
        "mean": np.asarray(result.y_bar).tolist(),
        "scale": np.asarray(result.s_hat).tolist(),
        "n_scale": result.n_scale,
        "lambda": np.asarray(result.lam).tolist(),
        "tau": result.tau,
        "level": 1.0 - settings["level"],
        # threads is a parallelism hint with no effect on results; keeping it
        # out preserves byte-identity of reports across --threads values
        "config": {k: v for k, v in settings.items() if k != "threads"},
    }
    if result.n_vars == 1:
        summary.update(_scalar_summary(result, settings["level"]))
    _write_json(out_dir / "summary.json", summary)

    if args.replicates:
        with (out_dir / "replicates.csv").open("w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if result.n_vars == 1:
                writer.writerow(["replicate", "y_star", "t_star", "s_star"])
                for b in range(result.n_replicates):
                    writer.writerow([b, repr(result.y_star[b]), repr(result.t_star[b]),
                                     repr(result.s_star[b])])
            else:
                writer.writerow(["replicate", "component", "y_star", "t_star", "s_star"])
                for b in range(result.n_replicates):
                    for j in range(result.n_vars):
                        writer.writerow([b, j, repr(result.y_star[b, j]),
                                         repr(result.t_star[b, j]), repr(result.s_star[b, j])])

    digest = _sha256_bytes(path.read_bytes())
    _write_manifest(out_dir, "analyze", {**_settings_dict(args), **settings},
                    settings["seed"], digest, started)
    return EXIT_OK


_REPORT_COLUMNS = [
    "design", "n_rows", "n_cols", "sims", "replicates", "seed", "alpha",
    "an_ratio", "bs_ratio",
    "frr_two_gau", "frr_two_bs", "frr_two_piv", "frr_two_sym",
    "frr_left_gau", "frr_left_bs", "frr_left_piv",
    "frr_right_gau", "frr_right_bs", "frr_right_piv",
    "mc_se_nominal",
]


def _dgp_from_dict(raw: dict, n_rows, n_cols) -> DgpSpec:
    fields = dict(raw)
    unknown = set(fields) - {"family", "n_rows", "n_cols", "sigma_alpha2", "sigma_gamma2",
                             "sigma_eps2", "mu_alpha", "mu_gamma", "alpha_dist"}
    if unknown:
        raise ConfigError(f"unknown dgp config fields: {sorted(unknown)}")
    for key in ("sigma_alpha2", "sigma_gamma2", "sigma_eps2"):
        value = fields.get(key)
        if isinstance(value, dict):
            fields[key] = VarianceRule(float(value["numerator"]), value["per"])
    if n_rows is not None:
        fields["n_rows"] = n_rows
    if n_cols is not None:
        fields["n_cols"] = n_cols
    if "family" not in fields or "n_rows" not in fields or "n_cols" not in fields:
        raise ConfigError("dgp config needs family, n_rows, and n_cols")
    try:
        return DgpSpec(**fields)
    except TypeError as exc:
        raise ConfigError(f"bad dgp config: {exc}") from exc


def cmd_simulate(args) -> int:
    started = _utc_now()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    file_cfg = _load_config_file(args.config)
    if Path(args.design).is_file():
        # the positional argument may itself be a declarative config file
        file_cfg = _load_config_file(args.design)
        design_name = "custom"
    else:
        design_name = args.design
    settings = _resolve_settings(args, file_cfg)
    sims = args.sims if args.sims is not None else int(file_cfg.get("sims", 2000))
    if design_name == "custom":
        spec = _dgp_from_dict(file_cfg.get("dgp", {}), args.n, args.t)
    else:
        if args.n is None or args.t is None:
            raise ConfigError("named designs need --n and --t")
        spec = design_spec(design_name, args.n, args.t)
    cfg = _config_from_settings(settings)
    report = run_monte_carlo(spec, cfg, sims, alpha=settings["level"], design=design_name)
    payload = report.to_json_dict()
    if args.curve_grid:
        try:
            grid = [float(x) for x in args.curve_grid.split(",")]
        except ValueError:
            raise ConfigError(f"bad --curve-grid {args.curve_grid!r}") from None
        payload["curves"] = {"grid": grid}
        for method in ("gau", "bs", "piv"):
            curve = cdf_error_curve(spec, method, grid, sims, cfg)
            payload["curves"][method] = [float(v) for v in curve]

    row = {
        "design": design_name, "n_rows": spec.n_rows, "n_cols": spec.n_cols,
        "sims": sims, "replicates": settings["reps"], "seed": settings["seed"],
        "alpha": settings["level"],
        "an_ratio": repr(report.an_ratio), "bs_ratio": repr(report.bs_ratio),
        "mc_se_nominal": repr((settings["level"] * (1 - settings["level"]) / sims) ** 0.5),
    }
    for side in ("two", "left", "right"):
        for method, rate in report.frr[side].items():
            row[f"frr_{side}_{method}"] = repr(rate)
    with (out_dir / "report.csv").open("w", encoding="utf-8", newline="\n") as fh:
        writer = csv.DictWriter(fh, fieldnames=_REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerow(row)
    _write_json(out_dir / "report.json", payload)
    _write_manifest(out_dir, "simulate", {**_settings_dict(args), **settings},
                    settings["seed"], None, started)
    return EXIT_OK


def cmd_weights(args) -> int:
    if args.corrected is not None:
        c2, c3 = corrected_moments(args.corrected)
    else:
        if args.c2 is None or args.c3 is None:
            raise ConfigError("give c2 and c3, or --corrected N")
        c2, c3 = args.c2, args.c3
    dist = solve_two_point(c2, c3)
    m1 = dist.p_star * dist.w1 + (1 - dist.p_star) * dist.w2
    m2 = dist.p_star * dist.w1**2 + (1 - dist.p_star) * dist.w2**2
    m3 = dist.p_star * dist.w1**3 + (1 - dist.p_star) * dist.w2**3
    print(f"p_star = {dist.p_star:.12f}")
    print(f"w1     = {dist.w1:.12f}")
    print(f"w2     = {dist.w2:.12f}")
    print(f"moments: mean = {m1:.3e}, second = {m2:.12f} (target {c2:.12f}), "
          f"third = {m3:.12f} (target {c3:.12f})")
    return EXIT_OK


# ---------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------


def _settings_dict(args, exclude: tuple[str, ...] = ("func",)) -> dict:
    keep = {k: v for k, v in vars(args).items() if k not in exclude}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in keep.items()}


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    # defaults stay None so values from --config files are distinguishable
    p.add_argument("--config", default=None, help="declarative settings file (JSON)")
    p.add_argument("--seed", type=int, default=None, help="64-bit seed; drives all randomness")
    p.add_argument("--reps", type=int, default=None, help="bootstrap replicates (default 999)")
    p.add_argument("--lambda", dest="lam", choices=("hat", "tilde", "conservative"),
                   default=None, help="shrinkage-ratio estimator (default hat)")
    p.add_argument("--weights", choices=("mammen", "corrected"), default=None,
                   help="wild-weight scheme (default corrected)")
    p.add_argument("--kappa", choices=("log", "sqrt-half-log"), default=None,
                   help="relevance-threshold rule (default log)")
    p.add_argument("--denominator-factor", type=int, choices=(1, 2), default=None,
                   help="residual variances in the shrinkage denominator (default 1)")
    p.add_argument("--level", type=float, default=None, help="test level alpha (default 0.05)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes; never changes results")
    p.add_argument("--out", default=".", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clusterboot",
        description="Bootstrap inference for samples clustered in two or more dimensions.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_an = sub.add_parser("analyze", help="bootstrap a long-format CSV sample")
    p_an.add_argument("input", help="CSV with header: i,t,y / i,t,r,y / i1..iD,y")
    p_an.add_argument("--mode", choices=("auto", "two-way", "masked", "unbalanced", "dway", "dyadic"),
                      default="auto", help="pipeline override (default: infer from shape)")
    p_an.add_argument("--vars", default=None, help="comma-separated value columns")
    p_an.add_argument("--replicates", action="store_true", help="also write replicates.csv")
    _add_engine_flags(p_an)
    p_an.set_defaults(func=cmd_analyze)

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo design")
    p_sim.add_argument("design",
                       help=f"design name ({', '.join(DESIGN_NAMES)}) or a config file")
    p_sim.add_argument("--n", type=int, default=None, help="rows")
    p_sim.add_argument("--t", type=int, default=None, help="columns")
    p_sim.add_argument("--sims", type=int, default=None, help="simulated samples (default 2000)")
    p_sim.add_argument("--curve-grid", default=None,
                       help="comma-separated percentiles; adds absolute c.d.f. error curves "
                            "per method to report.json")
    _add_engine_flags(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_w = sub.add_parser("weights", help="solve a two-point wild-weight distribution")
    p_w.add_argument("c2", type=float, nargs="?", default=None)
    p_w.add_argument("c3", type=float, nargs="?", default=None)
    p_w.add_argument("--corrected", type=int, default=None,
                     help="use the finite-sample corrected moments for n points")
    p_w.set_defaults(func=cmd_weights)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, IoError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc} (the design is numerically degenerate)", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
