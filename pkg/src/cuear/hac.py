"""Kernel (HAC) long-run covariance of the moments and its parameter derivatives."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import SingularWeightMatrix, UsageError
from .moments import MomentModel, ParamPoint
from .numerics import SpectralDecomp

MAX_CONDITION = 1e12


class KernelKind(str, enum.Enum):
    BARTLETT = "bartlett"
    PARZEN = "parzen"
    QS = "qs"
    TRUNC0 = "trunc0"


def default_bandwidth(n: int) -> float:
    return float(max(1, math.floor(4.0 * (n / 100.0) ** (2.0 / 9.0))))


@dataclass(frozen=True)
class KernelSpec:
    """Kernel with k(0) = 1, k(x) = k(-x), |k| <= 1 and non-negative spectral density.

    ``bandwidth=None`` selects ``default_bandwidth(n)``; it is ignored for
    ``trunc0``, which keeps only the contemporaneous term.
    """

    kind: KernelKind = KernelKind.TRUNC0
    bandwidth: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise UsageError(f"bandwidth must be positive, got {self.bandwidth}")

    def __call__(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        kind = self.kind
        if kind is KernelKind.TRUNC0:
            return (x == 0).astype(float)
        if kind is KernelKind.BARTLETT:
            return np.clip(1.0 - x, 0.0, None)
        if kind is KernelKind.PARZEN:
            return np.where(x <= 0.5, 1.0 - 6 * x**2 + 6 * x**3,
                            np.where(x <= 1.0, 2.0 * (1.0 - x) ** 3, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            u = 6.0 * np.pi * x / 5.0
            k = 25.0 / (12.0 * np.pi**2 * x**2) * (np.sin(u) / u - np.cos(u))
        return np.where(x == 0, 1.0, k)

    def resolved_bandwidth(self, n: int) -> float:
        return self.bandwidth if self.bandwidth is not None else default_bandwidth(n)

    def lag_weights(self, n: int) -> np.ndarray:
        """k(j / a_n) for j = 0..L-1, with L the last lag carrying nonzero weight."""
        if self.kind is KernelKind.TRUNC0 or n <= 1:
            return np.ones(1)
        a = self.resolved_bandwidth(n)
        if self.kind is KernelKind.QS:
            L = n
        else:
            L = min(n, int(math.ceil(a)) + 1)
        w = self(np.arange(L) / a)
        nz = np.nonzero(w)[0]
        return w[: nz[-1] + 1]


def kernel_cross_moment(U: np.ndarray, V: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """n^{-1} sum_t sum_s k((t-s)/a_n) U_t V_s' via the lag-sum form."""
    n = U.shape[0]
    w = kernel.lag_weights(n)
    S = w[0] * (U.T @ V)
    for j in range(1, w.size):
        if w[j] != 0.0:
            S += w[j] * (U[j:].T @ V[:-j] + U[:-j].T @ V[j:])
    return S / n


def kernel_cross_moment_literal(U: np.ndarray, V: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """Reference double sum; O(n^2), for testing only."""
    n = U.shape[0]
    idx = np.arange(n)
    if kernel.kind is KernelKind.TRUNC0:
        K = np.eye(n)
    else:
        K = kernel((idx[:, None] - idx[None, :]) / kernel.resolved_bandwidth(n))
    return U.T @ K @ V / n


def hac_matrix(g: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    S = kernel_cross_moment(g, g, kernel)
    return 0.5 * (S + S.T)


def hac_derivative(g: np.ndarray, J: np.ndarray, kernel: KernelSpec,
                   one_sided: bool = False) -> np.ndarray:
    """Derivative of vec(Omega) with respect to the parameters behind ``J``.

    ``g`` is (n, d), ``J`` is (n, d, k) with J[t] = dg_t/dtheta'. Returns a
    (d*d, k) matrix using column-major vec. With ``one_sided=True`` only the
    term in which the *second* factor is differentiated is kept, i.e. the
    columns are vec(n^{-1} sum k g_t (dg_s/dtheta_j)'); the full derivative is
    that term plus its commutation.
    """
    n, d = g.shape
    k = J.shape[2]
    A = kernel_cross_moment(g, J.reshape(n, d * k), kernel).reshape(d, d, k)
    half = A.transpose(1, 0, 2).reshape(d * d, k)
    if one_sided:
        return half
    return half + A.reshape(d * d, k)


@dataclass(frozen=True)
class HacEstimate:
    omega: np.ndarray

    @cached_property
    def spectral(self) -> SpectralDecomp:
        w, R = np.linalg.eigh(self.omega)
        order = np.argsort(w)[::-1]
        w, R = w[order], R[:, order]
        if w[-1] < 0:
            if w[-1] < -1e-10 * max(abs(w[0]), 1e-300):
                warnings.warn(f"HAC matrix has negative eigenvalue {w[-1]:.3g}; clipped at 0",
                              RuntimeWarning, stacklevel=2)
            w = np.clip(w, 0.0, None)
        return SpectralDecomp(w, R)

    @property
    def min_eigenvalue(self) -> float:
        return float(self.spectral.eigenvalues[-1])

    @property
    def condition_estimate(self) -> float:
        w = self.spectral.eigenvalues
        return float(w[0] / w[-1]) if w[-1] > 0 else math.inf

    def check(self) -> "HacEstimate":
        if not self.condition_estimate <= MAX_CONDITION:
            raise SingularWeightMatrix(
                f"HAC weight matrix is numerically singular (condition {self.condition_estimate:.3g})"
            )
        return self

    @cached_property
    def factor_inv_sqrt(self) -> np.ndarray:
        self.check()
        w, R = self.spectral.eigenvalues, self.spectral.eigenvectors
        return (R / np.sqrt(w)) @ R.T

    @cached_property
    def inverse(self) -> np.ndarray:
        self.check()
        w, R = self.spectral.eigenvalues, self.spectral.eigenvectors
        return (R / w) @ R.T


def hac_covariance(model: MomentModel, point: ParamPoint, kernel: KernelSpec) -> HacEstimate:
    """Omega_hat_n(beta, gamma). Singularity is reported when a factor is requested."""
    return HacEstimate(hac_matrix(model.moments(point.beta, point.gamma), kernel))


def hac_jacobian_gamma(model: MomentModel, point: ParamPoint, kernel: KernelSpec) -> np.ndarray:
    """d vec(Omega_hat) / d gamma', shape (d^2, d_gamma)."""
    g = model.moments(point.beta, point.gamma)
    return hac_derivative(g, model.jac_gamma(point.beta, point.gamma), kernel)


def hac_jacobian_beta(model: MomentModel, point: ParamPoint, kernel: KernelSpec) -> np.ndarray:
    """d vec(Omega_hat) / d beta', shape (d^2, d_beta)."""
    g = model.moments(point.beta, point.gamma)
    return hac_derivative(g, model.jac_beta(point.beta, point.gamma), kernel)
