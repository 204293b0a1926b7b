"""
Command-line entry point.

Every subcommand resolves a :class:`RunConfig` (flags > config file >
defaults), writes plain CSV/JSON tables into the output directory and
finishes with ``manifest.json`` echoing the resolved configuration.

Exit status: 0 success, 2 invalid configuration, 3 data error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.integrate import trapezoid

from . import io
from .analytics import (
    FACTOR_ALIGNMENT,
    RISK_MODE_OVERLAP,
    average_curves,
    conditional_average,
    momentum_factor,
    phi_curve,
    psi_curve,
    psi_null_curve,
    scramble_signs,
    scrambled_factor_null,
)
from .config import ConfigError, RunConfig, load_config_file, resolve_config
from .engine import calibrate_edge, exceedance_rate, flag_exceedances, rolling_analysis
from .errors import (
    DataError,
    DegenerateFactorError,
    EmptyPartitionError,
    FleetingError,
    InsufficientHistoryError,
    InvalidParamsError,
    NotPositiveDefiniteError,
    NumericalFailureError,
    ParamsMismatchError,
    UniverseMismatchError,
)
from .null_model import NullParams, continuous_cdf, moments, spectral_density, support_edges
from .panel import (
    OhlcPanel,
    RegimeShift,
    ReturnPanel,
    correlation_scenario,
    normalize_returns,
    synth_market,
    synth_ohlc,
)

log = logging.getLogger("fleeting")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

# Distinct sub-streams per command so that seeds never collide across commands.
_STREAM = {"overlaps": 1, "factor-align": 2, "calibrate-edge": 3, "simulate-ohlc": 4, "simulate-scenario": 5}


def _seed(cfg: RunConfig, command: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, _STREAM[command]])


def _date(d) -> str:
    return "" if d is None else str(d)


def _write_manifest(out: Path, command: str, cfg: RunConfig, outputs: list, summary: dict) -> None:
    manifest = {
        "command": command,
        "config": cfg.as_dict(),
        "outputs": sorted(outputs),
        "summary": summary,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _outdir(cfg: RunConfig) -> Path:
    out = cfg.resolved_output_dir()
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    return out


def load_returns(cfg: RunConfig) -> ReturnPanel:
    if not cfg.data:
        raise ConfigError("this command needs --data")
    obj = io.read_panel(cfg.data)
    panel = normalize_returns(obj, cfg.vol_floor, cfg.return_kind) if isinstance(obj, OhlcPanel) else obj
    if cfg.universe:
        wanted = [str(a) for a in cfg.universe]
        missing = sorted(set(wanted) - set(panel.assets))
        if missing:
            raise DataError(f"universe assets not in data: {missing}")
        idx = [panel.assets.index(a) for a in wanted]
        panel = ReturnPanel(
            wanted, panel.dates, panel.returns[idx],
            prices=None if panel.prices is None else panel.prices[idx], meta=panel.meta,
        )
    return panel


def _analysis(cfg: RunConfig, panel: ReturnPanel):
    t_in, t_out = cfg.windows(panel.n_assets)
    analysis = rolling_analysis(panel, t_in, t_out, cfg.eig_floor, workers=cfg.workers)
    for f in analysis.failures:
        log.warning("date %s (anchor %d) skipped: %s", f.date, f.anchor, f.error)
    if not analysis.sets:
        raise NumericalFailureError("every window failed; see failures.csv")
    return analysis


def _write_failures(out: Path, analysis) -> str:
    io.write_table(out / "failures.csv", ["anchor", "date", "error"],
                   ([f.anchor, _date(f.date), f.error] for f in analysis.failures))
    return "failures.csv"


def _curve_rows(curves):
    for c in curves:
        se = c.stderr if c.stderr is not None else np.zeros(len(c))
        for n, v, s in zip(c.n, c.values, se):
            yield [int(n), v, s, c.kind, c.condition, c.n_samples]


CURVE_HEADER = ["n", "value", "stderr", "kind", "condition", "n_samples"]


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_null_spectrum(cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    params = NullParams(cfg.n_assets, cfg.q_in, cfg.q_out)
    sup = support_edges(params)
    mean, var = moments(params)
    grid = np.linspace(sup.lambda_min, sup.lambda_max, cfg.grid_size)
    dens = spectral_density(grid, params)
    summary = {
        "q_in": cfg.q_in,
        "q_out": cfg.q_out,
        "lambda_min": sup.lambda_min,
        "lambda_max": sup.lambda_max,
        "zero_mass": sup.zero_mass,
        "mean": mean,
        "variance": var,
        "bulk_mass_trapezoid": float(trapezoid(dens, grid)),
    }
    comments = [f"{k}={io.fmt(v)}" for k, v in summary.items()]
    io.write_table(out / "null_spectrum.csv", ["lambda", "density"], zip(grid, dens), comments)
    _write_manifest(out, "null-spectrum", cfg, ["null_spectrum.csv"], summary)
    return summary


def cmd_simulate(cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    n = cfg.n_assets
    c = correlation_scenario(cfg.scenario, n, np.random.default_rng(_seed(cfg, "simulate-scenario")), cfg.condition)
    shift = None
    if cfg.shift_start is not None:
        t_out = cfg.windows(n)[1]
        stop = cfg.shift_stop if cfg.shift_stop is not None else cfg.shift_start + t_out
        shift = RegimeShift(cfg.shift_start, stop, None, cfg.shift_boost)
    panel = synth_market(n, cfg.t_total, c, shift, rng=cfg.seed)
    panel.meta["scenario"] = cfg.scenario
    io.write_wide(panel, out / "panel.csv")
    truth = dict(panel.meta, seed=cfg.seed, n_assets=n, t_total=cfg.t_total, condition=cfg.condition)
    (out / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    outputs = ["panel.csv", "truth.json"]
    if cfg.ohlc:
        # Independent GBM bars with the same true covariance, for exercising OHLC ingestion.
        gen = np.random.default_rng(_seed(cfg, "simulate-ohlc"))
        io.write_long(synth_ohlc(n, cfg.t_total, gen, c=c), out / "ohlc.csv")
        outputs.append("ohlc.csv")
    summary = {"n_assets": n, "t_total": cfg.t_total, "shifts": len(panel.meta["shifts"])}
    _write_manifest(out, "simulate", cfg, outputs, summary)
    return summary


def _pooled_histogram(analysis, params: NullParams, bins: int):
    lam = analysis.lambda_matrix().ravel()
    nonzero = lam[lam > 0]
    sup = support_edges(params)
    hi = max(sup.lambda_max, float(nonzero.max()) if nonzero.size else 0.0) * 1.02
    edges = np.linspace(0.0, hi, bins + 1)
    counts, _ = np.histogram(nonzero, bins=edges)
    width = np.diff(edges)
    empirical = counts / (lam.size * width)
    cdf = continuous_cdf(edges, params)
    theory = np.diff(cdf) / width
    zero_fraction = 1.0 - nonzero.size / lam.size if lam.size else float("nan")
    return edges, empirical, theory, zero_fraction


def cmd_analyze(cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    panel = load_returns(cfg)
    analysis = _analysis(cfg, panel)
    params = analysis.params
    reports = flag_exceedances(analysis, params, cfg.edge_c, cfg.threshold)
    n = panel.n_assets

    io.write_table(
        out / "lambdas.csv",
        ["anchor", "date", *[f"lambda_{a + 1}" for a in range(n)]],
        ([s.anchor, _date(s.date), *s.lambdas] for s in analysis.sets),
    )
    io.write_table(
        out / "exceedances.csv",
        ["anchor", "date", "lambda_1", "lambda_2", "threshold", "exceeds", "margin"],
        (
            [r.anchor, _date(r.date), r.lambda_1, s.lambdas[1] if n > 1 else float("nan"), r.threshold, r.exceeds, r.margin]
            for r, s in zip(reports, analysis.sets)
        ),
    )
    k = min(cfg.top_k_modes, n)
    io.write_jsonl(
        out / "modes.jsonl",
        (
            {
                "anchor": s.anchor,
                "date": _date(s.date),
                "lambdas": s.lambdas.tolist(),
                "assets": list(s.assets),
                "modes_asset_basis": s.modes_asset_basis[:, :k].T.tolist(),
                "modes_risk_basis": s.modes_risk_basis[:, :k].T.tolist(),
            }
            for s in analysis.sets
        ),
    )
    edges, emp, theo, zero_frac = _pooled_histogram(analysis, params, cfg.hist_bins)
    sup = support_edges(params)
    io.write_table(
        out / "pooled_spectrum.csv",
        ["bin_lo", "bin_hi", "empirical_density", "null_density"],
        zip(edges[:-1], edges[1:], emp, theo),
        comments=[
            f"zero_fraction={io.fmt(zero_frac)}",
            f"null_zero_mass={io.fmt(sup.zero_mass)}",
            f"lambda_min={io.fmt(sup.lambda_min)}",
            f"lambda_max={io.fmt(sup.lambda_max)}",
        ],
    )
    outputs = ["lambdas.csv", "exceedances.csv", "modes.jsonl", "pooled_spectrum.csv", _write_failures(out, analysis)]
    summary = {
        "n_assets": n,
        "t_in": analysis.t_in,
        "t_out": analysis.t_out,
        "q_in": params.q_in,
        "q_out": params.q_out,
        "dates": len(analysis.sets),
        "failures": len(analysis.failures),
        "threshold": reports[0].threshold,
        "exceedance_rate": exceedance_rate(reports),
        "lambda_max": sup.lambda_max,
    }
    _write_manifest(out, "analyze", cfg, outputs, summary)
    return summary


def cmd_overlaps(cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    panel = load_returns(cfg)
    analysis = _analysis(cfg, panel)
    sets = analysis.sets
    psis = [psi_curve(s) for s in sets]
    scores = [s.lambdas[0] for s in sets]
    top, bottom = conditional_average(psis, scores, cfg.top_fraction, cfg.bottom_fraction)
    allc = average_curves(psis, RISK_MODE_OVERLAP, "unconditional")

    picks = np.unique(np.linspace(0, len(sets) - 1, min(cfg.null_dates, len(sets))).round().astype(int))
    seeds = _seed(cfg, "overlaps").spawn(len(picks))
    n = panel.n_assets
    nulls = [
        psi_null_curve(sets[i].risk_modes.reconstruct(), n / analysis.t_in, n / analysis.t_out, cfg.n_rep, seed, cfg.eig_floor)
        for i, seed in zip(picks, seeds)
    ]
    null = average_curves(nulls, RISK_MODE_OVERLAP, "null")
    curves = [top, bottom, allc, null]
    io.write_table(out / "overlaps.csv", CURVE_HEADER, _curve_rows(curves))
    outputs = ["overlaps.csv", _write_failures(out, analysis)]
    summary = {
        "dates": len(sets),
        "top_dates": top.n_samples,
        "bottom_dates": bottom.n_samples,
        "null_dates": len(picks),
        "null_reps_per_date": cfg.n_rep,
    }
    _write_manifest(out, "overlaps", cfg, outputs, summary)
    return summary


def cmd_factor_align(cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    panel = load_returns(cfg)
    if panel.prices is None:
        raise DataError("factor-align needs close prices (OHLC input or a wide file with 'close' rows)")
    analysis = _analysis(cfg, panel)
    n_max = min(cfg.n_max, panel.n_assets)
    seeds = _seed(cfg, "factor-align").spawn(len(analysis.sets))
    phis, nulls, scores, rows, skipped = [], [], [], [], []
    for s, seed in zip(analysis.sets, seeds):
        try:
            f = momentum_factor(panel.prices, s.anchor, cfg.halflife, cfg.lag, cfg.burn_in, panel.assets, s.date)
        except (InsufficientHistoryError, DegenerateFactorError) as exc:
            skipped.append([s.anchor, _date(s.date), f"{type(exc).__name__}: {exc}"])
            continue
        check_seed, null_seed = seed.spawn(2)
        v = s.risk_modes.vectors
        scrambled = scramble_signs(f, s.risk_modes, np.random.default_rng(check_seed))
        amp_dev = float(np.max(np.abs(np.abs(v.T @ scrambled.loadings) - np.abs(v.T @ f.loadings))))
        phi = phi_curve(f, s, n_max)
        null = scrambled_factor_null(f, s, cfg.n_rep, null_seed, n_max)
        phis.append(phi)
        nulls.append(null)
        scores.append(s.lambdas[0])
        rows.append([s.anchor, _date(s.date), s.lambdas[0], phi.values[0], phi.values[-1], null.values[-1], amp_dev])
    if not phis:
        raise InsufficientHistoryError("no date has enough price history for the momentum burn-in")
    top, bottom = conditional_average(phis, scores, cfg.top_fraction, cfg.bottom_fraction)
    allc = average_curves(phis, FACTOR_ALIGNMENT, "unconditional")
    null = average_curves(nulls, FACTOR_ALIGNMENT, "null")
    io.write_table(out / "factor_align.csv", CURVE_HEADER, _curve_rows([top, bottom, allc, null]))
    io.write_table(
        out / "factor_dates.csv",
        ["anchor", "date", "lambda_1", "phi_1", f"phi_{n_max}", f"null_phi_{n_max}", "amplitude_max_dev"],
        rows,
    )
    io.write_table(out / "factor_skipped.csv", ["anchor", "date", "error"], skipped)
    outputs = ["factor_align.csv", "factor_dates.csv", "factor_skipped.csv", _write_failures(out, analysis)]
    summary = {
        "dates": len(phis),
        "skipped": len(skipped),
        "n_max": n_max,
        "max_amplitude_deviation": max(r[-1] for r in rows),
    }
    _write_manifest(out, "factor-align", cfg, outputs, summary)
    return summary


def cmd_calibrate_edge(cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    n = cfg.n_assets
    t_in, t_out = cfg.windows(n)
    params = NullParams.from_lengths(n, t_in, t_out)
    cal = calibrate_edge(params, cfg.calib_rep, cfg.calib_quantile, _seed(cfg, "calibrate-edge"), cfg.workers)
    summary = {
        "n_assets": n,
        "t_in": t_in,
        "t_out": t_out,
        "n_rep": cal.n_rep,
        "lambda_max": cal.lambda_max,
        "lambda1_mean": cal.lambda1_mean,
        "lambda1_std": cal.lambda1_std,
        "quantile": cal.quantile,
        "quantile_threshold": cal.quantile_threshold,
        "c_mean_shift": cal.c_mean_shift,
    }
    (out / "calibration.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    io.write_table(out / "lambda1_samples.csv", ["rep", "lambda_1"], enumerate(cal.lambda1_samples))
    _write_manifest(out, "calibrate-edge", cfg, ["calibration.json", "lambda1_samples.csv"], summary)
    return summary


COMMANDS: dict[str, Callable[[RunConfig], dict]] = {
    "null-spectrum": cmd_null_spectrum,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "overlaps": cmd_overlaps,
    "factor-align": cmd_factor_align,
    "calibrate-edge": cmd_calibrate_edge,
}

HELP = {
    "null-spectrum": "tabulate the null eigenvalue density, edges and moments",
    "simulate": "generate a synthetic return panel with optional regime shift",
    "analyze": "rolling eigenvalue series, exceedance flags and pooled spectrum",
    "overlaps": "psi_n curves for top/bottom over-realization dates and the stationary null",
    "factor-align": "phi_n alignment of the momentum factor against its sign-scrambled null",
    "calibrate-edge": "Monte Carlo calibration of the finite-N edge",
}


FLAG_HELP = {
    "data": "input CSV (long or wide OHLC bars, or a wide return cache)",
    "output_dir": "where outputs go; default $FLEETING_OUTPUT_DIR, else ./fleeting-out",
    "t_in": "in-sample window length; overrides --q-in",
    "t_out": "out-of-sample window length; overrides --q-out",
    "q_in": "N / T_in when --t-in is not given",
    "q_out": "N / T_out when --t-out is not given",
    "vol_floor": "floor on Garman-Klass daily variance",
    "return_kind": "simple or log",
    "eig_floor": "smallest eigenvalue accepted when inverting E_in",
    "edge_c": "constant c of the finite-N edge shift (cN)^(-2/3)",
    "threshold": "explicit exceedance threshold, replacing lambda_max - shift",
    "top_fraction": "fraction of highest-lambda_1 dates in the top group",
    "bottom_fraction": "fraction of lowest-lambda_1 dates in the bottom group",
    "top_k_modes": "leading fleeting modes written per date",
    "hist_bins": "bins of the pooled eigenvalue histogram",
    "grid_size": "points of the tabulated null density",
    "halflife": "EWMA half-life of the momentum signal, in days",
    "lag": "days between the momentum date and the out-window",
    "burn_in": "half-lives of history required before the momentum date",
    "n_max": "largest n reported for phi_n",
    "seed": "root seed; every random stream is derived from it",
    "n_rep": "Monte Carlo repeats per null curve",
    "null_dates": "dates used for the stationary psi_n null",
    "calib_rep": "Monte Carlo repeats for the edge calibration",
    "calib_quantile": "quantile of lambda_1 used as calibrated threshold",
    "workers": "worker threads for the rolling analysis",
    "n_assets": "assets in a simulated panel",
    "t_total": "dates in a simulated panel",
    "scenario": "identity, one-factor or random",
    "condition": "condition number of the random scenario",
    "shift_start": "first date of the injected regime shift",
    "shift_stop": "end (exclusive) of the regime shift; default shift start + T_out",
    "shift_boost": "variance multiplier along the shift direction",
    "ohlc": "also write a synthetic OHLC bar file",
}


def _flag_parser() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="YAML or JSON config file")
    parent.add_argument("-v", "--verbose", action="store_true")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        text = FLAG_HELP.get(f.name, "")
        if f.default is not None and not isinstance(f.default, bool):
            text += f" (default {f.default:g})" if isinstance(f.default, float) else f" (default {f.default})"
        if f.name == "universe":
            parent.add_argument(flag, type=lambda s: [a.strip() for a in s.split(",") if a.strip()],
                                help="comma-separated asset labels")
        elif isinstance(f.default, bool):
            parent.add_argument(flag, action=argparse.BooleanOptionalAction, default=None, help=text)
        elif isinstance(f.default, (int, float)) and not isinstance(f.default, bool):
            parent.add_argument(flag, type=type(f.default), default=None, help=text)
        elif f.name in ("t_in", "t_out", "shift_start", "shift_stop"):
            parent.add_argument(flag, type=int, default=None, help=text)
        elif f.name == "threshold":
            parent.add_argument(flag, type=float, default=None, help=text)
        else:
            parent.add_argument(flag, default=None, help=text)
    return parent


def build_parser() -> argparse.ArgumentParser:
    parent = _flag_parser()
    parser = argparse.ArgumentParser(prog="fleeting", description="Fleeting-mode detection with a random-matrix null.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[parent], help=HELP[name])
    return parser


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, InvalidParamsError, ParamsMismatchError)):
        return EXIT_CONFIG
    if isinstance(exc, (NotPositiveDefiniteError, NumericalFailureError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (DataError, InsufficientHistoryError, DegenerateFactorError, UniverseMismatchError,
                        EmptyPartitionError, OSError)):
        return EXIT_DATA
    return EXIT_DATA if isinstance(exc, FleetingError) else 1


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(RunConfig)}
    try:
        file_values = load_config_file(args.config) if args.config else {}
        cfg = resolve_config(file_values, overrides)
        summary = COMMANDS[args.command](cfg)
    except (FleetingError, OSError) as exc:
        print(f"fleeting {args.command}: error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
