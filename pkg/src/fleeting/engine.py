"""
Per-date fleeting modes and the rolling scan over a return panel.

The synthetic-asset panel ``O E_in^{-1/2} X_in`` is never built: everything
follows from the two covariance matrices of a window pair.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from ._rng import SeedLike, spawn
from .errors import FleetingError, InsufficientHistoryError, ParamsMismatchError
from .linalg import DEFAULT_FLOOR, EigenSystem, build_d, eigendecompose
from .null_model import (
    DEFAULT_EDGE_C,
    NullParams,
    finite_n_shift,
    sample_d_benchmark,
    support_edges,
    zero_small,
)
from .panel import ReturnPanel, WindowPair, rolling_windows, sample_covariance


@dataclass(frozen=True)
class FleetingModeSet:
    """Spectrum and eigenvectors of D for one analysis date.

    ``modes_risk_basis[:, a]`` is the fleeting mode ``z_a`` expressed over the
    in-sample risk modes (ordered by decreasing in-sample variance);
    ``modes_asset_basis`` is the same set rotated back onto the assets.
    """

    lambdas: np.ndarray
    modes_risk_basis: np.ndarray
    modes_asset_basis: np.ndarray
    risk_modes: EigenSystem
    date: Optional[np.datetime64] = None
    anchor: Optional[int] = None
    t_in: Optional[int] = None
    t_out: Optional[int] = None
    assets: Optional[tuple] = None

    @property
    def n_assets(self) -> int:
        return self.lambdas.shape[0]


def fleeting_modes(e_in, e_out, floor: float = DEFAULT_FLOOR, **labels) -> FleetingModeSet:
    """Eigen-analysis of ``D = E_in^{-1/2} E_out E_in^{-1/2}`` in the risk-mode basis.

    Extra keyword arguments (``date``, ``anchor``, ``t_in``, ``t_out``,
    ``assets``) are attached to the result as labels.
    """
    dm = build_d(e_in, e_out, floor)
    es = eigendecompose(dm.d_rotated)
    z = es.vectors
    return FleetingModeSet(
        lambdas=zero_small(es.values),
        modes_risk_basis=z,
        modes_asset_basis=dm.risk_modes.vectors @ z,
        risk_modes=dm.risk_modes,
        **labels,
    )


@dataclass(frozen=True)
class DateFailure:
    anchor: int
    date: np.datetime64
    error: str


@dataclass
class RollingAnalysis:
    sets: list
    failures: list
    n_assets: int
    t_in: int
    t_out: int
    assets: tuple = ()

    @property
    def params(self) -> NullParams:
        return NullParams.from_lengths(self.n_assets, self.t_in, self.t_out)

    def lambda_matrix(self) -> np.ndarray:
        """``(dates, N)`` array of eigenvalues, descending within each row."""
        if not self.sets:
            return np.empty((0, self.n_assets))
        return np.vstack([s.lambdas for s in self.sets])

    def __len__(self):
        return len(self.sets)

    def __iter__(self):
        return iter(self.sets)


def _analyze_window(panel: ReturnPanel, wp: WindowPair, floor: float, assets: tuple):
    date = panel.dates[wp.t_anchor - 1]
    try:
        e_in = sample_covariance(panel, wp.in_range)
        e_out = sample_covariance(panel, wp.out_range)
        return fleeting_modes(
            e_in, e_out, floor,
            date=date, anchor=wp.t_anchor, t_in=wp.t_in, t_out=wp.t_out, assets=assets,
        )
    except FleetingError as exc:
        return DateFailure(wp.t_anchor, date, f"{type(exc).__name__}: {exc}")


def rolling_analysis(
    panel: ReturnPanel,
    t_in: int,
    t_out: int,
    floor: float = DEFAULT_FLOOR,
    workers: int = 1,
    anchors: Optional[Sequence[int]] = None,
) -> RollingAnalysis:
    """Fleeting modes for every causal window pair of ``panel``.

    Each set is labelled with the last date of its out-window. Windows whose
    in-sample matrix cannot be inverted are reported in ``failures`` and the
    scan continues. ``anchors`` restricts the scan to a subset of anchor indices.
    """
    if panel.n_dates < t_in + t_out:
        raise InsufficientHistoryError(f"panel has {panel.n_dates} dates, need at least {t_in + t_out}")
    pairs = rolling_windows(panel.n_dates, t_in, t_out)
    if anchors is not None:
        wanted = set(anchors)
        pairs = [p for p in pairs if p.t_anchor in wanted]
    assets = tuple(panel.assets)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda wp: _analyze_window(panel, wp, floor, assets), pairs))
    else:
        results = [_analyze_window(panel, wp, floor, assets) for wp in pairs]
    sets = [r for r in results if isinstance(r, FleetingModeSet)]
    failures = [r for r in results if isinstance(r, DateFailure)]
    return RollingAnalysis(sets, failures, panel.n_assets, t_in, t_out, assets)


@dataclass(frozen=True)
class ExceedanceReport:
    date: Optional[np.datetime64]
    lambda_1: float
    threshold: float
    exceeds: bool
    margin: float
    anchor: Optional[int] = None


def exceedance_threshold(params: NullParams, c: float = DEFAULT_EDGE_C) -> float:
    """``lambda_max - (c N)^{-2/3}``."""
    return support_edges(params).lambda_max - finite_n_shift(params.n_assets, c)


def flag_exceedances(
    series: Union[RollingAnalysis, Sequence[FleetingModeSet]],
    params: NullParams,
    c: float = DEFAULT_EDGE_C,
    threshold: Optional[float] = None,
) -> list[ExceedanceReport]:
    """Compare each date's top eigenvalue with the finite-N corrected null edge.

    An explicit ``threshold`` (e.g. from :func:`calibrate_edge`) overrides the
    edge formula. ``exceeds`` uses a strict inequality.
    """
    thr = exceedance_threshold(params, c) if threshold is None else float(threshold)
    reports = []
    for s in series:
        if s.n_assets != params.n_assets:
            raise ParamsMismatchError(f"mode set has N = {s.n_assets}, params have N = {params.n_assets}")
        if (s.t_in is not None and s.t_in != params.t_in) or (s.t_out is not None and s.t_out != params.t_out):
            raise ParamsMismatchError(
                f"windows ({s.t_in}, {s.t_out}) do not match params ({params.t_in}, {params.t_out})"
            )
        lam1 = float(s.lambdas[0])
        margin = lam1 - thr
        reports.append(ExceedanceReport(s.date, lam1, thr, margin > 0, margin, s.anchor))
    return reports


@dataclass(frozen=True)
class EdgeCalibration:
    """Monte Carlo summary of the null top eigenvalue at finite N.

    ``c_mean_shift`` solves ``(c N)^{-2/3} = lambda_max - mean(lambda_1)``; it is
    ``None`` when the simulated mean does not fall below ``lambda_max``.
    ``quantile_threshold`` is the empirical ``quantile`` of ``lambda_1`` and can
    be passed to :func:`flag_exceedances` to fix the false-positive rate.
    """

    params: NullParams
    n_rep: int
    lambda_max: float
    lambda1_mean: float
    lambda1_std: float
    quantile: float
    quantile_threshold: float
    c_mean_shift: Optional[float]
    lambda1_samples: np.ndarray = field(repr=False)


def calibrate_edge(
    params: NullParams,
    n_rep: int = 200,
    quantile: float = 0.95,
    rng: SeedLike = None,
    workers: int = 1,
) -> EdgeCalibration:
    if n_rep < 2:
        raise ValueError("n_rep must be at least 2")
    seeds = spawn(rng, n_rep)

    def top(seed):
        return sample_d_benchmark(params, np.random.default_rng(seed)).eigenvalues[0]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            l1 = np.array(list(pool.map(top, seeds)))
    else:
        l1 = np.array([top(s) for s in seeds])
    lmax = support_edges(params).lambda_max
    shift = lmax - float(l1.mean())
    c = shift ** -1.5 / params.n_assets if shift > 0 else None
    return EdgeCalibration(
        params=params,
        n_rep=n_rep,
        lambda_max=lmax,
        lambda1_mean=float(l1.mean()),
        lambda1_std=float(l1.std(ddof=1)),
        quantile=quantile,
        quantile_threshold=float(np.quantile(l1, quantile)),
        c_mean_shift=c,
        lambda1_samples=l1,
    )


def exceedance_rate(reports: Sequence[ExceedanceReport]) -> float:
    if not reports:
        return math.nan
    return sum(r.exceeds for r in reports) / len(reports)
