"""Linear-algebra, distribution and random-number primitives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import (
    InvalidMatrix,
    InvalidProbability,
    InvalidThreshold,
    SingularWeightMatrix,
)

_SYM_RTOL = 1e-12
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class SpectralDecomp:
    """Eigenvalues in descending order with matching orthonormal eigenvectors."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        R = self.eigenvectors
        return (R * self.eigenvalues) @ R.T


def as_sym(M, name: str = "matrix") -> np.ndarray:
    """Validate a square, finite, symmetric matrix and return it symmetrized."""
    A = np.atleast_2d(np.asarray(M, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise InvalidMatrix(f"{name} must be a non-empty square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidMatrix(f"{name} has non-finite entries")
    scale = max(np.max(np.abs(A)), 1e-300)
    if np.max(np.abs(A - A.T)) > 1e3 * _SYM_RTOL * scale:
        raise InvalidMatrix(f"{name} is not symmetric")
    return 0.5 * (A + A.T)


def sym_eig(M) -> SpectralDecomp:
    A = as_sym(M)
    w, R = np.linalg.eigh(A)
    order = np.argsort(w)[::-1]
    return SpectralDecomp(w[order], R[:, order])


def _inv_sqrt_from(decomp: SpectralDecomp) -> np.ndarray:
    w, R = decomp.eigenvalues, decomp.eigenvectors
    dim = w.size
    if not (w[-1] > dim * 1e-12 * w[0]) or w[0] <= 0:
        raise SingularWeightMatrix(
            f"matrix is numerically singular (eigenvalues {w[0]:.3g} .. {w[-1]:.3g})"
        )
    return (R / np.sqrt(w)) @ R.T


def inv_sqrt(M) -> np.ndarray:
    """Symmetric inverse square root M^{-1/2} from the spectral decomposition."""
    return _inv_sqrt_from(sym_eig(M))


def tsvd_pinv(M, eps: float) -> np.ndarray:
    """Pseudo-inverse after zeroing eigenvalues not exceeding ``eps``.

    The operator norm of the result is at most ``1/eps``.
    """
    if not eps > 0:
        raise InvalidThreshold(f"truncation threshold must be positive, got {eps}")
    decomp = sym_eig(M)
    w, R = decomp.eigenvalues, decomp.eigenvectors
    if w.size and w[-1] < -1e-10 * max(1.0, abs(w[0])):
        raise InvalidMatrix("tsvd_pinv expects a positive semi-definite matrix")
    keep = w > eps
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / w[keep]
    return (R * inv) @ R.T


def chi2_cdf(x, df):
    x = np.asarray(x, dtype=float)
    return special.gammainc(df / 2.0, np.maximum(x, 0.0) / 2.0)


def chi2_sf(x, df):
    x = np.asarray(x, dtype=float)
    return special.gammaincc(df / 2.0, np.maximum(x, 0.0) / 2.0)


def chi2_quantile(df: int, p: float) -> float:
    if not (isinstance(df, (int, np.integer)) and 1 <= df <= 1000):
        raise ValueError(f"df must be an integer in [1, 1000], got {df!r}")
    if not 0.0 < p < 1.0:
        raise InvalidProbability(f"probability must lie in (0, 1), got {p}")
    return float(2.0 * special.gammaincinv(df / 2.0, p))


@dataclass(frozen=True)
class RngStream:
    """Addressable random stream: replication ``stream_id`` under ``seed``.

    Backed by the counter-based Philox generator keyed on (seed, stream_id),
    so any replication can be regenerated without drawing the others.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & _MASK64, self.stream_id & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def uniforms(self, count: int) -> np.ndarray:
        return self.generator().random(count)


def box_muller(u: np.ndarray) -> np.ndarray:
    """Map uniform pairs (rows of a (m, 2) array in [0,1)) to 2m normals."""
    r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    theta = 2.0 * np.pi * u[:, 1]
    return np.column_stack((r * np.cos(theta), r * np.sin(theta))).ravel()


def normal_draw(stream: RngStream, count: int) -> np.ndarray:
    """First ``count`` standard normals of ``stream`` (prefix-consistent)."""
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return np.empty(0)
    pairs = (count + 1) // 2
    u = stream.uniforms(2 * pairs).reshape(pairs, 2)
    return box_muller(u)[:count]
