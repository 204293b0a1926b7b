"""
Return panels, volatility normalization, covariance estimation and the
rolling in/out windowing protocol.

Conventions
-----------
Panels are stored asset-major: arrays are ``N x T`` with one row per asset.
Returns are *not* mean-detrended and covariances are raw second moments
``X X^T / T``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ._rng import SeedLike, make_rng, spawn
from .errors import DataError, InsufficientHistoryError, InvalidParamsError, NotPositiveDefiniteError
from .linalg import eigendecompose, sqrt_psd, symmetrize

DEFAULT_VOL_FLOOR = 1e-4
GK_CROSS = 2.0 * math.log(2.0) - 1.0
DEFAULT_Q_IN = 0.25
DEFAULT_Q_OUT = 4.0


def _as_dates(dates) -> np.ndarray:
    return np.asarray(pd.to_datetime(pd.Index(dates)).values.astype("datetime64[D]"))


@dataclass
class OhlcPanel:
    assets: list
    dates: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray

    def __post_init__(self):
        self.assets = [str(a) for a in self.assets]
        self.dates = _as_dates(self.dates)
        shape = (len(self.assets), len(self.dates))
        for name in ("open", "high", "low", "close"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise DataError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} has missing or non-finite cells")
            if np.any(arr <= 0):
                raise DataError(f"non-positive price in {name}")
            setattr(self, name, arr)
        if len(self.dates) > 1 and np.any(np.diff(self.dates) <= np.timedelta64(0, "D")):
            raise DataError("dates must be strictly increasing")
        bad = (self.low > np.minimum(self.open, self.close)) | (self.high < np.maximum(self.open, self.close))
        if np.any(bad):
            i, t = np.argwhere(bad)[0]
            raise DataError(f"bar violates low <= open, close <= high: asset {self.assets[i]} on {self.dates[t]}")

    @property
    def n_assets(self) -> int:
        return len(self.assets)


@dataclass
class ReturnPanel:
    """Volatility-normalized daily returns.

    ``prices`` optionally holds close prices aligned with ``dates`` (needed
    for trend-based factors). ``meta`` carries provenance such as injected
    regime shifts for synthetic panels.
    """

    assets: list
    dates: np.ndarray
    returns: np.ndarray
    prices: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.assets = [str(a) for a in self.assets]
        self.dates = _as_dates(self.dates)
        self.returns = np.asarray(self.returns, dtype=float)
        if self.returns.shape != (len(self.assets), len(self.dates)):
            raise DataError(f"returns shape {self.returns.shape} does not match {len(self.assets)} assets x {len(self.dates)} dates")
        if not np.all(np.isfinite(self.returns)):
            raise DataError("returns must be finite")
        if self.prices is not None:
            self.prices = np.asarray(self.prices, dtype=float)
            if self.prices.shape != self.returns.shape:
                raise DataError("prices must be aligned with returns")

    @property
    def n_assets(self) -> int:
        return self.returns.shape[0]

    @property
    def n_dates(self) -> int:
        return self.returns.shape[1]


@dataclass(frozen=True)
class VolEstimate:
    vol: float
    floored: bool


def garman_klass_variance(high, low, close, prev_close):
    """Close-high-low-close Garman-Klass daily variance (may be negative)."""
    hl = np.log(np.asarray(high) / np.asarray(low))
    cc = np.log(np.asarray(close) / np.asarray(prev_close))
    return 0.5 * hl**2 - GK_CROSS * cc**2


def garman_klass_vol(ohlc: OhlcPanel, asset: int, t: int, vol_floor: float = DEFAULT_VOL_FLOOR) -> VolEstimate:
    """Garman-Klass volatility of one bar, using the previous close in place of the open.

    The variance is floored at ``vol_floor**2``; hitting the floor is reported
    through ``VolEstimate.floored`` rather than raised.
    """
    if t < 1 or t >= len(ohlc.dates):
        raise InvalidParamsError("t must index a bar that has a previous close")
    var = float(garman_klass_variance(ohlc.high[asset, t], ohlc.low[asset, t], ohlc.close[asset, t], ohlc.close[asset, t - 1]))
    floor_var = vol_floor**2
    if not var > floor_var:
        return VolEstimate(vol=vol_floor, floored=True)
    return VolEstimate(vol=math.sqrt(var), floored=False)


def normalize_returns(ohlc: OhlcPanel, vol_floor: float = DEFAULT_VOL_FLOOR, kind: str = "simple") -> ReturnPanel:
    """Divide each daily return by that day's own Garman-Klass volatility.

    ``kind`` selects ``simple`` (``C_t / C_{t-1} - 1``) or ``log`` returns.
    The first date is consumed by the lag.
    """
    if vol_floor <= 0:
        raise InvalidParamsError("vol_floor must be positive")
    if len(ohlc.dates) < 2:
        raise InsufficientHistoryError("need at least two dates to form a return")
    c, c_prev = ohlc.close[:, 1:], ohlc.close[:, :-1]
    var = garman_klass_variance(ohlc.high[:, 1:], ohlc.low[:, 1:], c, c_prev)
    floored = ~(var > vol_floor**2)
    vol = np.sqrt(np.where(floored, vol_floor**2, var))
    if kind == "simple":
        raw = c / c_prev - 1.0
    elif kind == "log":
        raw = np.log(c / c_prev)
    else:
        raise InvalidParamsError(f"unknown return kind {kind!r}")
    meta = {
        "return_kind": kind,
        "vol_floor": vol_floor,
        "floored_cells": int(floored.sum()),
        "floored_per_asset": {a: int(n) for a, n in zip(ohlc.assets, floored.sum(axis=1)) if n},
    }
    return ReturnPanel(ohlc.assets, ohlc.dates[1:], raw / vol, prices=c.copy(), meta=meta)


def _bounds(window) -> tuple[int, int]:
    if isinstance(window, slice):
        return window.start or 0, window.stop
    start, stop = window
    return int(start), int(stop)


def sample_covariance(panel: Union[ReturnPanel, np.ndarray], window=None) -> np.ndarray:
    """Second-moment matrix ``(1/T) sum_t X_t X_t^T`` over a half-open index range.

    ``window`` is ``(start, stop)`` or a slice; ``None`` means the whole panel.
    """
    x = panel.returns if isinstance(panel, ReturnPanel) else np.asarray(panel, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if window is None:
        start, stop = 0, x.shape[1]
    else:
        start, stop = _bounds(window)
    if stop is None:
        stop = x.shape[1]
    if not (0 <= start < stop <= x.shape[1]):
        raise InvalidParamsError(f"empty or out-of-bounds range [{start}, {stop}) for {x.shape[1]} dates")
    block = x[:, start:stop]
    return symmetrize(block @ block.T / (stop - start))


@dataclass(frozen=True)
class WindowPair:
    """In/out windows anchored at ``t``: in = [t-T_out-T_in, t-T_out), out = [t-T_out, t)."""

    t_anchor: int
    in_range: tuple
    out_range: tuple

    @property
    def t_in(self) -> int:
        return self.in_range[1] - self.in_range[0]

    @property
    def t_out(self) -> int:
        return self.out_range[1] - self.out_range[0]


def rolling_windows(t_total: int, t_in: int, t_out: int) -> list[WindowPair]:
    """One window pair per anchor ``t`` in ``[t_in + t_out, t_total]``."""
    if t_in < 1 or t_out < 1:
        raise InvalidParamsError("window lengths must be positive")
    if t_total < t_in + t_out:
        raise InsufficientHistoryError(f"{t_total} dates cannot hold T_in + T_out = {t_in + t_out}")
    pairs = []
    for t in range(t_in + t_out, t_total + 1):
        wp = WindowPair(t, (t - t_out - t_in, t - t_out), (t - t_out, t))
        assert wp.in_range[1] == wp.out_range[0] and wp.out_range[1] <= wp.t_anchor
        pairs.append(wp)
    return pairs


# --------------------------------------------------------------------------
# Synthetic markets
# --------------------------------------------------------------------------


def random_spd(n: int, condition: float = 100.0, rng: SeedLike = None) -> np.ndarray:
    """Random SPD matrix with Haar eigenvectors and log-uniform eigenvalues on ``[1, condition]``."""
    gen = make_rng(rng)
    q, r = np.linalg.qr(gen.standard_normal((n, n)))
    q = q * np.sign(np.diag(r))
    vals = np.exp(gen.uniform(0.0, math.log(condition), size=n))
    vals[0], vals[-1] = 1.0, condition
    return symmetrize((q * vals) @ q.T)


def one_factor_correlation(n: int, rho: float = 0.3) -> np.ndarray:
    c = np.full((n, n), rho)
    np.fill_diagonal(c, 1.0)
    return c


SCENARIOS = ("identity", "one-factor", "random")


def correlation_scenario(name: str, n: int, rng: SeedLike = None, condition: float = 100.0) -> np.ndarray:
    """Named true-covariance scenarios: ``identity``, ``one-factor`` (rho = 0.3) or ``random``."""
    if name == "identity":
        return np.eye(n)
    if name == "one-factor":
        return one_factor_correlation(n)
    if name == "random":
        return random_spd(n, condition, rng)
    raise InvalidParamsError(f"unknown correlation scenario {name!r}")


def _scenario(c_builder, n: int, rng) -> np.ndarray:
    if c_builder is None:
        return np.eye(n)
    if isinstance(c_builder, str):
        return correlation_scenario(c_builder, n, rng)
    if callable(c_builder):
        return np.asarray(c_builder(n, rng), dtype=float)
    return np.asarray(c_builder, dtype=float)


@dataclass(frozen=True)
class RegimeShift:
    """Multiply the variance along unit direction ``u`` by ``boost`` on dates [start, stop).

    ``direction=None`` draws ``u`` uniformly on the sphere.
    """

    start: int
    stop: Optional[int] = None
    direction: Optional[np.ndarray] = None
    boost: float = 25.0

    def affected_anchors(self, t_in: int, t_out: int, t_total: int) -> list[int]:
        """Anchors whose out-window lies inside the shift and whose in-window is untouched by it."""
        stop = t_total if self.stop is None else min(self.stop, t_total)
        return [t for t in range(t_in + t_out, t_total + 1) if t - t_out == self.start and t <= stop]


def prices_from_returns(returns: np.ndarray, daily_vol: float = 0.01, start_price: float = 100.0) -> np.ndarray:
    """Close prices ``p_t = p_0 prod_{s<=t} (1 + daily_vol X_s)``."""
    return start_price * np.cumprod(1.0 + daily_vol * np.asarray(returns), axis=1)


def synth_market(
    n_assets: int,
    t_total: int,
    c_builder: Union[None, str, np.ndarray, Callable] = None,
    shift: Union[None, RegimeShift, Sequence[RegimeShift]] = None,
    rng: SeedLike = None,
    start_date: str = "2000-01-03",
) -> ReturnPanel:
    """Gaussian returns ``X_t = C(t)^{1/2} xi_t``.

    The noise ``xi`` is drawn from the first child of ``rng``, so two calls
    with the same seed share ``xi`` regardless of scenario or shifts. A shift
    turns ``C`` into ``C + (boost - 1) (u^T C u) u u^T`` while active.
    """
    if n_assets < 1 or t_total < 1:
        raise InvalidParamsError("n_assets and t_total must be positive")
    noise_seed, scenario_seed, direction_seed = spawn(rng, 3)
    xi = np.random.default_rng(noise_seed).standard_normal((n_assets, t_total))
    c = symmetrize(_scenario(c_builder, n_assets, np.random.default_rng(scenario_seed)))
    if c.shape != (n_assets, n_assets):
        raise InvalidParamsError(f"scenario produced shape {c.shape}")
    vals = eigendecompose(c).values
    if vals[-1] <= 0:
        raise NotPositiveDefiniteError("correlation scenario is not SPD")

    shifts = [] if shift is None else ([shift] if isinstance(shift, RegimeShift) else list(shift))
    dgen = np.random.default_rng(direction_seed)
    resolved = []
    for s in shifts:
        u = dgen.standard_normal(n_assets) if s.direction is None else np.asarray(s.direction, dtype=float)
        u = u / np.linalg.norm(u)
        stop = t_total if s.stop is None else min(s.stop, t_total)
        if not (0 <= s.start < stop):
            raise InvalidParamsError(f"shift window [{s.start}, {stop}) is empty")
        resolved.append(RegimeShift(s.start, stop, u, float(s.boost)))

    active = np.zeros((len(resolved), t_total), dtype=bool)
    for k, s in enumerate(resolved):
        active[k, s.start:s.stop] = True
    x = np.empty_like(xi)
    if resolved:
        patterns, inverse = np.unique(active.T, axis=0, return_inverse=True)
        inverse = inverse.ravel()
    else:
        patterns, inverse = np.zeros((1, 0), dtype=bool), np.zeros(t_total, dtype=int)
    for j, pattern in enumerate(patterns):
        ct = c.copy()
        for k in np.flatnonzero(pattern):
            u = resolved[k].direction
            ct += (resolved[k].boost - 1.0) * float(u @ c @ u) * np.outer(u, u)
        mask = inverse == j
        x[:, mask] = sqrt_psd(ct) @ xi[:, mask]

    assets = [f"A{i:03d}" for i in range(n_assets)]
    dates = pd.bdate_range(start_date, periods=t_total)
    meta = {
        "synthetic": True,
        "scenario": c_builder if isinstance(c_builder, str) or c_builder is None else "custom",
        "shifts": [
            {"start": s.start, "stop": s.stop, "boost": s.boost, "direction": s.direction.tolist()}
            for s in resolved
        ],
    }
    return ReturnPanel(assets, dates, x, prices=prices_from_returns(x), meta=meta)


def synth_ohlc(
    n_assets: int,
    t_total: int,
    rng: SeedLike = None,
    daily_vol: float = 0.01,
    steps: int = 16,
    c: Optional[np.ndarray] = None,
    start_date: str = "2000-01-03",
) -> OhlcPanel:
    """Geometric Brownian bars built from a discretized intraday log-price path.

    Each day opens at the previous close. High and low are the extremes of
    the continuous path: between grid points they are drawn from the exact
    Brownian-bridge maximum (minimum) law, so the range is not biased by
    the discretization.
    """
    gen = make_rng(rng)
    root = np.eye(n_assets) if c is None else sqrt_psd(c)
    h = (np.sum(root**2, axis=1) if c is not None else np.ones(n_assets)) * daily_vol**2 / steps
    inc = gen.standard_normal((t_total, steps, n_assets)) @ root.T * (daily_vol / math.sqrt(steps))
    # log-price drift making E[C_t / C_{t-1}] = 1
    inc -= 0.5 * h
    path = np.cumsum(inc, axis=1)
    day_ret = path[:, -1, :]
    left = np.concatenate([np.zeros((t_total, 1, n_assets)), path[:, :-1, :]], axis=1)
    # exact extremes of the Brownian bridge between grid points
    spread_hi = np.sqrt(inc**2 - 2.0 * h * np.log(gen.uniform(size=inc.shape)))
    spread_lo = np.sqrt(inc**2 - 2.0 * h * np.log(gen.uniform(size=inc.shape)))
    hi = np.max(0.5 * (left + path + spread_hi), axis=1)
    lo = np.min(0.5 * (left + path - spread_lo), axis=1)
    log_open = np.concatenate([np.zeros((1, n_assets)), np.cumsum(day_ret, axis=0)[:-1]], axis=0)
    p0 = math.log(100.0)
    op = np.exp(p0 + log_open)
    cl = np.exp(p0 + log_open + day_ret)
    high = np.maximum(np.exp(p0 + log_open + hi), np.maximum(op, cl))
    low = np.minimum(np.exp(p0 + log_open + lo), np.minimum(op, cl))
    assets = [f"A{i:03d}" for i in range(n_assets)]
    dates = pd.bdate_range(start_date, periods=t_total)
    return OhlcPanel(assets, dates, op.T, high.T, low.T, cl.T)
