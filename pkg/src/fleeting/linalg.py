"""
Symmetric-matrix kernels.

Dense eigendecomposition with a deterministic ordering and sign convention,
symmetric (not Cholesky) square roots, and the construction of the
risk over-realization matrix

    D = E_in^{-1/2} E_out E_in^{-1/2}

together with its rotation into the basis of in-sample principal components.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, NotPositiveDefiniteError, NumericalFailureError

DEFAULT_FLOOR = 1e-12


def symmetrize(a) -> np.ndarray:
    """Return ``(A + A^T) / 2`` as a float array after validating shape and finiteness."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class EigenSystem:
    """Eigenvalues in descending order, with orthonormal eigenvectors as columns.

    Each column is signed so that its largest-magnitude entry is positive.
    """

    values: np.ndarray
    vectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def eigendecompose(s) -> EigenSystem:
    """Full eigendecomposition of a symmetric matrix.

    Ties in the eigenvalues keep LAPACK's (ascending) order reversed, so within
    an exactly degenerate eigenspace the basis is whatever the solver returns.
    """
    s = symmetrize(s)
    try:
        w, v = np.linalg.eigh(s)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"eigendecomposition did not converge: {exc}") from exc
    w = w[::-1].copy()
    v = _fix_signs(v[:, ::-1])
    return EigenSystem(values=w, vectors=np.ascontiguousarray(v))


def _check_floor(values: np.ndarray, floor: float) -> None:
    if floor < 0:
        raise ValueError("floor must be non-negative")
    top = values[0]
    if top <= 0 or values[-1] <= floor * top:
        raise NotPositiveDefiniteError(
            f"smallest eigenvalue {values[-1]:.3e} is not above floor*lambda_1 = {floor * top:.3e}; "
            "this usually means T_in <= N or degenerate assets"
        )


def inverse_sqrt(s, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """Symmetric inverse square root ``V diag(lambda^{-1/2}) V^T``.

    Raises
    ------
    NotPositiveDefiniteError
        If any eigenvalue is at or below ``floor * lambda_1``. Nothing is
        silently regularized.
    """
    es = eigendecompose(s)
    _check_floor(es.values, floor)
    return symmetrize((es.vectors / np.sqrt(es.values)) @ es.vectors.T)


def sqrt_psd(s) -> np.ndarray:
    """Symmetric square root of a positive semi-definite matrix.

    Negative eigenvalues from roundoff are clipped to zero.
    """
    es = eigendecompose(s)
    return symmetrize((es.vectors * np.sqrt(np.clip(es.values, 0.0, None))) @ es.vectors.T)


@dataclass(frozen=True)
class DMatrices:
    d: np.ndarray
    d_rotated: np.ndarray
    risk_modes: EigenSystem


def build_d(e_in, e_out, floor: float = DEFAULT_FLOOR) -> DMatrices:
    """Build D in the asset basis and in the statistical-risk-mode basis.

    With ``E_in = V diag(l) V^T`` the rotated matrix is
    ``V^T D V = diag(l^{-1/2}) V^T E_out V diag(l^{-1/2})``, and ``D`` itself is
    rotated back from it, so the two share a spectrum by construction.
    """
    e_in = symmetrize(e_in)
    e_out = symmetrize(e_out)
    if e_in.shape != e_out.shape:
        raise DimensionMismatchError(f"E_in is {e_in.shape} but E_out is {e_out.shape}")
    risk_modes = eigendecompose(e_in)
    _check_floor(risk_modes.values, floor)
    v = risk_modes.vectors
    scale = 1.0 / np.sqrt(risk_modes.values)
    d_rot = symmetrize(scale[:, None] * (v.T @ e_out @ v) * scale[None, :])
    d = symmetrize(v @ d_rot @ v.T)
    return DMatrices(d=d, d_rotated=d_rot, risk_modes=risk_modes)
