"""
Stationary null model for the spectrum of D.

Under a time-independent true covariance C, the eigenvalues of
``D = E_in^{-1/2} E_out E_in^{-1/2}`` do not depend on C and are distributed
like those of ``W_in^{-1/2} W_out W_in^{-1/2}`` with two independent white
Wishart matrices of aspect ratios ``q_in = N/T_in`` and ``q_out = N/T_out``.
The large-N density has a square-root bulk on ``[lambda_min, lambda_max]``
plus a point mass ``[1 - 1/q_out]^+`` at zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from ._rng import SeedLike, make_rng
from .errors import InvalidParamsError, NotPositiveDefiniteError, SingularMatrixError
from .linalg import DEFAULT_FLOOR, inverse_sqrt

DEFAULT_EDGE_C = 2.7e-3
# Eigenvalues below this fraction of the largest one are counted as exact zeros.
ZERO_REL_THRESHOLD = 1e-8
QUAD_EPSREL = 1e-9


@dataclass(frozen=True)
class NullParams:
    n_assets: int
    q_in: float
    q_out: float

    def __post_init__(self):
        if int(self.n_assets) != self.n_assets or self.n_assets < 1:
            raise InvalidParamsError(f"n_assets must be a positive integer, got {self.n_assets}")
        if not (0.0 < self.q_in < 1.0):
            raise InvalidParamsError(f"q_in must lie in (0, 1) so that W_in is invertible, got {self.q_in}")
        if not self.q_out > 0.0:
            raise InvalidParamsError(f"q_out must be positive, got {self.q_out}")

    @classmethod
    def from_lengths(cls, n_assets: int, t_in: int, t_out: int) -> "NullParams":
        if t_in < 1 or t_out < 1:
            raise InvalidParamsError("window lengths must be positive")
        return cls(n_assets, n_assets / t_in, n_assets / t_out)

    @property
    def t_in(self) -> int:
        return window_length(self.n_assets, self.q_in)

    @property
    def t_out(self) -> int:
        return window_length(self.n_assets, self.q_out)


def window_length(n_assets: int, q: float) -> int:
    """``T = round(N / q)``, at least 1."""
    return max(1, int(round(n_assets / q)))


@dataclass(frozen=True)
class SpectralSupport:
    lambda_min: float
    lambda_max: float
    zero_mass: float


def support_edges(params: NullParams) -> SpectralSupport:
    q_in, q_out = params.q_in, params.q_out
    s = q_in + q_out * (1.0 - q_in)
    denom = (1.0 - q_in) ** 2
    hi = (1.0 + s + 2.0 * math.sqrt(s)) / denom
    # (1 - sqrt(s))^2 == 1 + s - 2 sqrt(s), written to avoid cancellation.
    lo = (1.0 - math.sqrt(s)) ** 2 / denom
    return SpectralSupport(lambda_min=lo, lambda_max=hi, zero_mass=max(0.0, 1.0 - 1.0 / q_out))


def spectral_density(lam, params: NullParams):
    """Continuous part of the null density, per unit lambda.

    Zero outside ``[lambda_min, lambda_max]``. The point mass at zero is
    ``support_edges(params).zero_mass``.
    """
    sup = support_edges(params)
    lam = np.asarray(lam, dtype=float)
    q_in, q_out = params.q_in, params.q_out
    inside = (lam > sup.lambda_min) & (lam < sup.lambda_max)
    out = np.zeros_like(lam)
    x = lam[inside]
    out[inside] = (
        (1.0 - q_in)
        / (2.0 * math.pi)
        * np.sqrt((sup.lambda_max - x) * (x - sup.lambda_min))
        / (x * (q_in * x + q_out))
    )
    return out if out.ndim else float(out)


def _rational_part(x, params: NullParams):
    return (1.0 - params.q_in) / (2.0 * math.pi) / (x * (params.q_in * x + params.q_out))


def _lower_smooth(x, params: NullParams, a: float):
    """``rho_c(x) / ((x - a)^{-1/2} (b - x)^{1/2})``.

    Equal to ``(1 - q_in) / (2 pi) * (1 - a / x) / (q_in x + q_out)``, which stays
    bounded even when the lower edge ``a`` is zero (``q_out = 1``).
    """
    pref = (1.0 - params.q_in) / (2.0 * math.pi)
    ratio = 1.0 - a / x if x > 0 else (1.0 if a == 0 else 0.0)
    return pref * ratio / (params.q_in * x + params.q_out)


def bulk_mass(params: NullParams) -> float:
    """Integral of the continuous density over its support.

    The edge factors are handled by QUADPACK's algebraic weight
    ``(x - a)^{-1/2} (b - x)^{1/2}``, leaving a bounded integrand even when
    the lower edge is zero.
    """
    sup = support_edges(params)
    a, b = sup.lambda_min, sup.lambda_max
    val, _ = integrate.quad(
        _lower_smooth, a, b, args=(params, a),
        weight="alg", wvar=(-0.5, 0.5), epsrel=QUAD_EPSREL, epsabs=0.0, limit=200,
    )
    return val


def continuous_cdf(x, params: NullParams):
    """``integral_{-inf}^{x} rho_c``, i.e. the CDF of the bulk (not including the zero mass)."""
    sup = support_edges(params)
    a, b = sup.lambda_min, sup.lambda_max
    total = bulk_mass(params)
    mid = 0.5 * (a + b)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(xs)
    for i, xi in enumerate(xs):
        if xi <= a:
            out[i] = 0.0
        elif xi >= b:
            out[i] = total
        elif xi <= mid:
            val, _ = integrate.quad(
                lambda t: _lower_smooth(t, params, a) * math.sqrt(b - t), a, xi,
                weight="alg", wvar=(-0.5, 0.0), epsrel=QUAD_EPSREL, epsabs=0.0, limit=200,
            )
            out[i] = val
        else:
            val, _ = integrate.quad(
                lambda t: _rational_part(t, params) * math.sqrt(t - a), xi, b,
                weight="alg", wvar=(0.0, 0.5), epsrel=QUAD_EPSREL, epsabs=0.0, limit=200,
            )
            out[i] = total - val
    return out if np.ndim(x) else float(out[0])


def nonzero_cdf(x, params: NullParams):
    """CDF of the eigenvalues conditional on being non-zero."""
    return continuous_cdf(x, params) / bulk_mass(params)


def moments(params: NullParams) -> tuple[float, float]:
    """Mean and variance of the full null distribution, zero mass included."""
    q_in, q_out = params.q_in, params.q_out
    mean = 1.0 / (1.0 - q_in)
    var = (q_in + q_out * (1.0 - q_in)) / (1.0 - q_in) ** 3
    return mean, var


def equal_q_edges(q: float) -> tuple[float, float]:
    """Support edges when the in- and out-of-sample windows have equal length."""
    if not (0.0 <= q < 1.0):
        raise InvalidParamsError(f"q must lie in [0, 1), got {q}")
    root = 2.0 * math.sqrt(q * (2.0 - q))
    base = 1.0 + 2.0 * q - q * q
    denom = (1.0 - q) ** 2
    return (base - root) / denom, (base + root) / denom


def finite_n_shift(n_assets: int, c: float = DEFAULT_EDGE_C) -> float:
    """Finite-size scale ``(c N)^{-2/3}`` of the right-edge shift."""
    if n_assets < 1:
        raise InvalidParamsError("n_assets must be >= 1")
    if not c > 0:
        raise InvalidParamsError("c must be positive")
    return (c * n_assets) ** (-2.0 / 3.0)


def sample_white_wishart(n_assets: int, t_samples: int, rng: SeedLike = None) -> np.ndarray:
    """``G G^T / T`` with ``G`` an ``N x T`` matrix of standard normals."""
    if n_assets < 1 or t_samples < 1:
        raise InvalidParamsError("n_assets and t_samples must be >= 1")
    g = make_rng(rng).standard_normal((n_assets, t_samples))
    w = g @ g.T / t_samples
    return 0.5 * (w + w.T)


@dataclass(frozen=True)
class BenchmarkSpectrum:
    """Eigenvalues of one draw of the benchmark matrix, descending.

    ``realized`` carries the aspect ratios actually simulated after rounding
    the window lengths to integers.
    """

    eigenvalues: np.ndarray
    t_in: int
    t_out: int
    realized: NullParams

    @property
    def zero_count(self) -> int:
        return int(np.sum(self.eigenvalues == 0.0))

    @property
    def nonzero(self) -> np.ndarray:
        return self.eigenvalues[self.eigenvalues > 0.0]


def zero_small(values: np.ndarray) -> np.ndarray:
    """Set eigenvalues below ``ZERO_REL_THRESHOLD * max`` to exactly zero."""
    values = np.array(values, dtype=float)
    top = values.max() if values.size else 0.0
    values[values < ZERO_REL_THRESHOLD * top] = 0.0
    return values


def sample_d_benchmark(params: NullParams, rng: SeedLike = None, floor: float = DEFAULT_FLOOR) -> BenchmarkSpectrum:
    """Draw ``W_in^{-1/2} W_out W_in^{-1/2}`` and return its spectrum."""
    n = params.n_assets
    t_in, t_out = params.t_in, params.t_out
    if t_in <= n:
        raise SingularMatrixError(f"T_in = {t_in} must exceed N = {n}")
    gen = make_rng(rng)
    w_in = sample_white_wishart(n, t_in, gen)
    w_out = sample_white_wishart(n, t_out, gen)
    try:
        s = inverse_sqrt(w_in, floor)
    except NotPositiveDefiniteError as exc:
        raise SingularMatrixError(str(exc)) from exc
    d = s @ w_out @ s
    vals = np.linalg.eigvalsh(0.5 * (d + d.T))[::-1]
    return BenchmarkSpectrum(
        eigenvalues=zero_small(vals),
        t_in=t_in,
        t_out=t_out,
        realized=NullParams.from_lengths(n, t_in, t_out),
    )
