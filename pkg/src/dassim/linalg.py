"""Dense SPD linear algebra: covariance validation, factorization, solves, sampling.

All arithmetic is 64-bit floating point. Factorizations are delegated to
LAPACK through scipy behind the contracts below; the error surface
(``NotSymmetric`` / ``NotPositiveDefinite``) is owned here.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky

from .errors import DimensionMismatch, NotPositiveDefinite, NotSymmetric
from .rng import RngHandle

SYMMETRY_RTOL = 1e-12


class CovarianceMatrix:
    """Symmetric positive-definite error covariance (the B, R, P matrices).

    The input must be square and symmetric within a relative max-norm
    tolerance of 1e-12; it is symmetrized as ``(A + A.T) / 2`` before
    factorization to absorb round-off. Positive definiteness is checked
    eagerly by attempting a Cholesky factorization.

    An exactly-zero matrix is accepted as a degenerate covariance: it is
    valid for Gaussian sampling (all draws collapse onto the mean) but any
    solve or factorization against it raises ``NotPositiveDefinite``.
    """

    __slots__ = ("base", "dim", "_chol", "is_zero")

    def __init__(self, base):
        a = np.asarray(base, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch(f"covariance must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NotPositiveDefinite("covariance contains non-finite entries")
        scale = np.max(np.abs(a))
        if scale > 0 and np.max(np.abs(a - a.T)) > SYMMETRY_RTOL * scale:
            raise NotSymmetric(
                "covariance asymmetric beyond relative tolerance "
                f"{SYMMETRY_RTOL:g} (max|A - A.T| = {np.max(np.abs(a - a.T)):g})"
            )
        self.base = 0.5 * (a + a.T)
        self.dim = a.shape[0]
        self.is_zero = bool(scale == 0.0)
        self._chol = None
        if not self.is_zero:
            self._chol = self.cholesky()

    def cholesky(self) -> np.ndarray:
        """Lower-triangular L with L @ L.T == base."""
        if self.is_zero:
            raise NotPositiveDefinite("covariance is the zero matrix")
        if self._chol is None:
            try:
                self._chol = cholesky(self.base, lower=True)
            except LinAlgError as exc:
                raise NotPositiveDefinite(f"covariance is not positive definite: {exc}") from exc
        return self._chol

    def solve(self, rhs) -> np.ndarray:
        """Solve ``base @ x = rhs`` through the cached Cholesky factor."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.dim:
            raise DimensionMismatch(
                f"rhs has leading dimension {rhs.shape[0]}, covariance dim is {self.dim}"
            )
        return cho_solve((self.cholesky(), True), rhs)

    def __repr__(self):
        return f"CovarianceMatrix(dim={self.dim}{', zero' if self.is_zero else ''})"


def as_covariance(c) -> CovarianceMatrix:
    """Coerce an array-like to CovarianceMatrix; pass instances through."""
    if isinstance(c, CovarianceMatrix):
        return c
    return CovarianceMatrix(c)


def cholesky_factor(c) -> np.ndarray:
    """Lower-triangular Cholesky factor of an SPD covariance.

    Parameters
    ----------
    c : CovarianceMatrix or array_like
        Symmetric positive-definite matrix.

    Returns
    -------
    ndarray
        Lower-triangular L with ``L @ L.T`` reconstructing ``c`` within
        1e-10 relative max-norm.

    Raises
    ------
    NotPositiveDefinite
        If any pivot is non-positive, signalling an invalid covariance.
    """
    return as_covariance(c).cholesky()


def spd_solve(c, rhs) -> np.ndarray:
    """Solve ``c @ x = rhs`` for SPD ``c`` without forming an inverse.

    This realizes every ``(H P H^T + R)^{-1}`` application in the
    assimilation updates. ``rhs`` may be a vector or a matrix of
    right-hand-side columns.
    """
    return as_covariance(c).solve(rhs)


def sample_gaussian(mean, cov, n: int, rng: RngHandle) -> np.ndarray:
    """Draw ``n`` rows from N(mean, cov) as ``mean + L @ z``.

    A zero covariance is degenerate rather than an error: every row equals
    the mean and the stream is not advanced. Draws are deterministic under
    a fixed seed.
    """
    mean = np.asarray(mean, dtype=float)
    if mean.ndim != 1:
        raise DimensionMismatch(f"mean must be 1-D, got shape {mean.shape}")
    if n < 1:
        raise DimensionMismatch(f"sample count must be >= 1, got {n}")
    c = as_covariance(cov)
    if c.dim != mean.shape[0]:
        raise DimensionMismatch(f"mean length {mean.shape[0]} != covariance dim {c.dim}")
    if c.is_zero:
        return np.tile(mean, (n, 1))
    z = rng.standard_normal((n, c.dim))
    return mean + z @ c.cholesky().T
