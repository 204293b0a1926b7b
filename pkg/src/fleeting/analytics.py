"""
Overlap diagnostics for fleeting modes.

* ``psi_n``: cumulative squared overlap of a fleeting mode with the ``n``
  in-sample risk modes of largest variance.
* ``phi_n``: cumulative squared overlap of a factor's loading vector with the
  ``n`` fleeting modes of largest eigenvalue.

Both are partial sums of squared coordinates of a unit vector in an
orthonormal basis, hence non-decreasing in ``n`` and equal to one at ``n = N``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from ._rng import SeedLike, make_rng, spawn
from .engine import FleetingModeSet, fleeting_modes
from .errors import (
    DegenerateFactorError,
    EmptyPartitionError,
    InsufficientHistoryError,
    InvalidParamsError,
    UniverseMismatchError,
)
from .linalg import DEFAULT_FLOOR, EigenSystem, sqrt_psd, symmetrize
from .null_model import window_length

RISK_MODE_OVERLAP = "risk-mode-overlap"
FACTOR_ALIGNMENT = "factor-alignment"


@dataclass(frozen=True)
class OverlapCurve:
    """A cumulative overlap sequence indexed by ``n = 1..len(values)``.

    ``stderr`` is set for Monte Carlo or group averages (standard error of the
    mean across the averaged curves).
    """

    values: np.ndarray
    kind: str
    condition: str = "unconditional"
    stderr: Optional[np.ndarray] = None
    n_samples: int = 1
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.clip(np.asarray(self.values, dtype=float), 0.0, 1.0)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("overlap curve must be a non-empty 1-d sequence")
        if np.any(np.diff(v) < 0):
            raise ValueError("overlap curve must be non-decreasing")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    @property
    def n(self) -> np.ndarray:
        return np.arange(1, self.values.size + 1)


def _cumulative_overlap(coords: np.ndarray) -> np.ndarray:
    return np.cumsum(np.asarray(coords, dtype=float) ** 2)


def average_curves(curves: Sequence[OverlapCurve], kind: str, condition: str, meta=None) -> OverlapCurve:
    """Pointwise mean of curves; ``stderr`` is the standard error across them."""
    stack = np.vstack([c.values for c in curves])
    k = stack.shape[0]
    stderr = stack.std(axis=0, ddof=1) / math.sqrt(k) if k > 1 else np.zeros(stack.shape[1])
    return OverlapCurve(stack.mean(axis=0), kind, condition, stderr=stderr, n_samples=k, meta=meta or {})


def psi_curve(mode_set: FleetingModeSet, mode_index: int = 0) -> OverlapCurve:
    """Cumulative squared overlap of fleeting mode ``mode_index`` with the risk modes.

    Risk modes are ordered by decreasing in-sample variance, so small ``n``
    probes the high-risk directions.
    """
    z = mode_set.modes_risk_basis[:, mode_index]
    return OverlapCurve(_cumulative_overlap(z), RISK_MODE_OVERLAP, meta={"mode_index": mode_index})


def psi_null_curve(
    e_in,
    q_in: float,
    q_out: float,
    n_rep: int,
    rng: SeedLike = None,
    floor: float = DEFAULT_FLOOR,
    mode_index: int = 0,
) -> OverlapCurve:
    """Average psi_n under the stationary null whose true covariance is ``e_in``.

    Each repeat draws fresh Gaussian in- and out-of-sample panels from
    ``N(0, e_in)`` with ``T = round(N / q)`` and recomputes the fleeting modes.
    """
    if n_rep < 1:
        raise InvalidParamsError("n_rep must be >= 1")
    c = symmetrize(e_in)
    n = c.shape[0]
    t_in, t_out = window_length(n, q_in), window_length(n, q_out)
    root = sqrt_psd(c)
    curves = []
    for seed in spawn(rng, n_rep):
        gen = np.random.default_rng(seed)
        x_in = root @ gen.standard_normal((n, t_in))
        x_out = root @ gen.standard_normal((n, t_out))
        ms = fleeting_modes(x_in @ x_in.T / t_in, x_out @ x_out.T / t_out, floor)
        curves.append(psi_curve(ms, mode_index))
    return average_curves(curves, RISK_MODE_OVERLAP, "null", meta={"t_in": t_in, "t_out": t_out})


@dataclass(frozen=True)
class FactorLoadings:
    loadings: np.ndarray
    date: Optional[np.datetime64] = None
    assets: Optional[tuple] = None

    def __post_init__(self):
        z = np.asarray(self.loadings, dtype=float)
        if z.ndim != 1:
            raise ValueError("loadings must be a vector")
        if abs(np.linalg.norm(z) - 1.0) > 1e-12:
            raise ValueError("factor loadings must have unit norm")
        object.__setattr__(self, "loadings", z)


def ewma(prices: np.ndarray, halflife: float) -> np.ndarray:
    """Exponentially weighted mean of each row at its last column.

    Weights are ``2^{-age/halflife}``, normalized over the available history.
    """
    p = np.asarray(prices, dtype=float)
    age = np.arange(p.shape[-1] - 1, -1, -1, dtype=float)
    w = np.exp2(-age / halflife)
    return p @ w / w.sum()


def momentum_factor(
    prices,
    date: int,
    halflife: float = 100.0,
    lag: int = 1,
    burn_in: float = 5.0,
    assets: Optional[Sequence[str]] = None,
    date_label=None,
) -> FactorLoadings:
    """Market-neutral, rank-transformed, lagged trend loadings.

    Using the close at index ``s = date - lag``, the trend of asset ``i`` is
    ``p_s / ewma(p_{<=s}, halflife)``. Trends are mapped to the grid
    ``(rank - (N + 1) / 2) / N`` (average ranks for ties), de-meaned across
    assets and scaled to unit norm.

    Raises
    ------
    InsufficientHistoryError
        If fewer than ``burn_in * halflife`` days precede ``s``.
    DegenerateFactorError
        If all trends tie, leaving a zero vector.
    """
    p = np.asarray(prices, dtype=float)
    if p.ndim != 2:
        raise ValueError("prices must be an N x T array")
    if lag < 0:
        raise InvalidParamsError("lag must be non-negative")
    s = int(date) - int(lag)
    if s >= p.shape[1]:
        raise InvalidParamsError(f"date {date} minus lag {lag} lies beyond the price history")
    if s < burn_in * halflife:
        raise InsufficientHistoryError(
            f"momentum at index {s} needs {burn_in:g} halflives ({burn_in * halflife:g} days) of burn-in"
        )
    history = p[:, : s + 1]
    trend = history[:, -1] / ewma(history, halflife)
    n = trend.size
    grid = (rankdata(trend, method="average") - 0.5 * (n + 1)) / n
    grid -= grid.mean()
    norm = np.linalg.norm(grid)
    if norm < 1e-12:
        raise DegenerateFactorError("all trends tie; momentum factor vanishes")
    return FactorLoadings(grid / norm, date_label, None if assets is None else tuple(assets))


def _check_universe(factor: FactorLoadings, mode_set: FleetingModeSet) -> None:
    if factor.loadings.size != mode_set.n_assets:
        raise UniverseMismatchError(f"factor has {factor.loadings.size} assets, modes have {mode_set.n_assets}")
    if factor.assets is not None and mode_set.assets is not None and tuple(factor.assets) != tuple(mode_set.assets):
        raise UniverseMismatchError("factor and fleeting modes are labelled with different assets")


def phi_curve(factor: FactorLoadings, mode_set: FleetingModeSet, n_max: Optional[int] = None) -> OverlapCurve:
    """Cumulative squared overlap of the factor with the top ``n_max`` fleeting modes."""
    _check_universe(factor, mode_set)
    n_max = mode_set.n_assets if n_max is None else int(n_max)
    if not (1 <= n_max <= mode_set.n_assets):
        raise InvalidParamsError(f"n_max must lie in [1, {mode_set.n_assets}]")
    coords = mode_set.modes_asset_basis[:, :n_max].T @ factor.loadings
    return OverlapCurve(_cumulative_overlap(coords), FACTOR_ALIGNMENT)


def scramble_signs(factor: FactorLoadings, risk_modes: EigenSystem, rng: SeedLike = None) -> FactorLoadings:
    """Flip the sign of each risk-mode coefficient of the factor independently.

    Per-mode amplitudes ``|v_mu . z_f|`` and the norm are preserved.
    """
    v = risk_modes.vectors
    coeffs = v.T @ factor.loadings
    signs = make_rng(rng).choice(np.array([-1.0, 1.0]), size=coeffs.size)
    z = v @ (signs * coeffs)
    return FactorLoadings(z / np.linalg.norm(z), factor.date, factor.assets)


def scrambled_factor_null(
    factor: FactorLoadings,
    mode_set: FleetingModeSet,
    n_rep: int,
    rng: SeedLike = None,
    n_max: Optional[int] = None,
) -> OverlapCurve:
    """Average phi_n of sign-scrambled copies of ``factor`` against ``mode_set``."""
    _check_universe(factor, mode_set)
    if n_rep < 1:
        raise InvalidParamsError("n_rep must be >= 1")
    curves = [
        phi_curve(scramble_signs(factor, mode_set.risk_modes, np.random.default_rng(seed)), mode_set, n_max)
        for seed in spawn(rng, n_rep)
    ]
    return average_curves(curves, FACTOR_ALIGNMENT, "null")


def conditional_average(
    curves: Sequence[OverlapCurve],
    scores: Sequence[float],
    top_fraction: float = 0.10,
    bottom_fraction: float = 0.90,
) -> tuple[OverlapCurve, OverlapCurve]:
    """Average curves over the dates with the highest and the lowest scores.

    Dates are ranked by decreasing score with ties kept in input order. The
    top group holds the first ``ceil(top_fraction * n)`` dates; the bottom
    group holds the last ``ceil(bottom_fraction * n)`` dates, truncated so the
    groups never overlap.
    """
    if len(curves) != len(scores):
        raise InvalidParamsError("curves and scores must have equal length")
    if not (0 < top_fraction < 1 and 0 < bottom_fraction < 1):
        raise InvalidParamsError("fractions must lie in (0, 1)")
    lengths = {len(c) for c in curves}
    if len(lengths) > 1:
        raise InvalidParamsError("all curves must have the same length")
    n = len(curves)
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    n_top = math.ceil(top_fraction * n - 1e-12)
    n_bottom = min(math.ceil(bottom_fraction * n - 1e-12), n - n_top)
    if n_top == 0 or n_bottom <= 0:
        raise EmptyPartitionError(f"cannot split {n} dates into non-empty top/bottom groups")
    kind = next(iter(curves)).kind
    top = average_curves([curves[i] for i in order[:n_top]], kind, "top-decile", {"fraction": top_fraction})
    bottom = average_curves([curves[i] for i in order[n - n_bottom:]], kind, "bottom", {"fraction": bottom_fraction})
    return top, bottom
