"""Numerical diagnostics for the proof-side objects of the subset AR bound.

All functions take the DGP truth ``point0`` and are meant for simulation
studies, where the truth is known.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .cue import OptimOptions, minimize_over_gamma
from .errors import InvalidThreshold
from .hac import HacEstimate, KernelSpec, hac_matrix
from .inference import orthogonalized_jacobian, projection_matrix
from .moments import MomentModel, ParamPoint
from .numerics import chi2_cdf, tsvd_pinv

EPS_SCALE = 1e-3


@dataclass
class DiagReport:
    gamma_true: np.ndarray
    gamma_tilde: np.ndarray
    eps_used: float
    ar_stat: float = np.nan
    q_at_tilde: float = np.nan
    m_term: float = np.nan
    varpi: float = np.nan
    foc_residual_norm: float = np.nan
    proj_residual_norm: float = np.nan
    proj_rank: int = 0
    proj_gap: float = np.nan
    meta: dict = field(default_factory=dict)


@dataclass
class _Truth:
    g: np.ndarray
    hac: HacEstimate
    A: np.ndarray
    Gg: np.ndarray


def _at_truth(model: MomentModel, point0: ParamPoint, kernel: KernelSpec) -> _Truth:
    g = model.moments(point0.beta, point0.gamma)
    hac = HacEstimate(hac_matrix(g, kernel))
    J = model.jac_gamma(point0.beta, point0.gamma)
    A = orthogonalized_jacobian(g, J, kernel, hac.inverse, hac.factor_inv_sqrt)
    return _Truth(g, hac, A, J.mean(axis=0))


def build_A(model: MomentModel, point0: ParamPoint, kernel: KernelSpec) -> np.ndarray:
    """A_hat = Omega^{-1/2} (G_gamma - (I kron g' Omega^{-1}) Lambda) at point0, shape (d, d_gamma).

    It is the bracket of the profile gradient: dQ/dgamma' = 2n g' Omega^{-1/2} A_hat.
    """
    return _at_truth(model, point0, kernel).A


def default_eps(gamma_hat_matrix: np.ndarray) -> float:
    top = float(np.max(np.linalg.eigvalsh(gamma_hat_matrix))) if gamma_hat_matrix.size else 0.0
    return EPS_SCALE * max(top, 1.0)


def _tilde(model, point0, kernel, eps, tr: _Truth):
    Oi = tr.hac.inverse
    Gam = tr.Gg.T @ Oi @ tr.Gg
    eps = default_eps(Gam) if eps is None else float(eps)
    if not eps > 0:
        raise InvalidThreshold(f"eps must be positive, got {eps}")
    Gam_plus = tsvd_pinv(Gam, eps)
    score = tr.A.T @ tr.hac.factor_inv_sqrt @ tr.g.mean(axis=0)
    gamma_tilde = np.asarray(point0.gamma, dtype=float) - Gam_plus @ score
    return gamma_tilde, eps, Gam_plus


def perturbed_gamma(model: MomentModel, point0: ParamPoint, kernel: KernelSpec,
                    eps: float | None = None) -> tuple[np.ndarray, DiagReport]:
    """gamma_tilde = gamma0 - Gamma_ring^+ A_hat' Omega^{-1/2} g0 with a truncated inverse of
    Gamma_hat = G_gamma' Omega^{-1} G_gamma (eigenvalues <= eps dropped).

    ``eps=None`` uses 1e-3 * max(largest eigenvalue of Gamma_hat, 1).
    """
    tr = _at_truth(model, point0, kernel)
    gamma_tilde, eps, _ = _tilde(model, point0, kernel, eps, tr)
    report = DiagReport(np.asarray(point0.gamma, dtype=float), gamma_tilde, eps)
    return gamma_tilde, report


def bound_decomposition(model: MomentModel, point0: ParamPoint, kernel: KernelSpec,
                        eps: float | None = None, opts: OptimOptions | None = None,
                        ar_stat: float | None = None) -> DiagReport:
    """AR_C(beta0) <= m_term + varpi, both evaluated at gamma_tilde.

    m_term and varpi split n g~' Omega~^{-1} g~ with the projection on A_hat
    (built at the truth) sandwiched between symmetric Omega~^{-1/2} factors.
    """
    tr = _at_truth(model, point0, kernel)
    gamma_tilde, eps, Gam_plus = _tilde(model, point0, kernel, eps, tr)
    n = tr.g.shape[0]
    gt = model.moments(point0.beta, gamma_tilde)
    hac_t = HacEstimate(hac_matrix(gt, kernel))
    P, rank = projection_matrix(tr.A)
    v = hac_t.factor_inv_sqrt @ gt.mean(axis=0)
    pv = P @ v
    varpi = float(n * v @ pv)
    m_term = float(n * v @ v) - varpi
    q_tilde = float(n * gt.mean(axis=0) @ hac_t.inverse @ gt.mean(axis=0))
    if ar_stat is None:
        ar_stat = minimize_over_gamma(model, point0.beta, kernel, opts).ar_stat
    u = tr.hac.factor_inv_sqrt @ gt.mean(axis=0)
    return DiagReport(
        gamma_true=np.asarray(point0.gamma, dtype=float),
        gamma_tilde=gamma_tilde,
        eps_used=eps,
        ar_stat=float(ar_stat),
        q_at_tilde=q_tilde,
        m_term=m_term,
        varpi=varpi,
        foc_residual_norm=float(np.linalg.norm(tr.A.T @ u)),
        proj_residual_norm=float(np.linalg.norm(P @ u)),
        proj_rank=rank,
        proj_gap=float(np.linalg.norm(P - tr.A @ Gam_plus @ tr.A.T, 2)),
    )


def m_projected_statistic(model: MomentModel, point0: ParamPoint, kernel: KernelSpec) -> float:
    """n g0' Omega^{-1/2} M_A Omega^{-1/2} g0 at the truth."""
    tr = _at_truth(model, point0, kernel)
    P, _ = projection_matrix(tr.A)
    v = tr.hac.factor_inv_sqrt @ tr.g.mean(axis=0)
    return float(tr.g.shape[0] * (v @ v - v @ P @ v))


@dataclass
class NullCheck:
    reps: int
    df: int
    statistics: np.ndarray
    ks_distance: float = np.nan
    ks_critical: float = np.nan
    ks_pvalue: float = np.nan
    quantile_95: float = np.nan

    @property
    def passes(self) -> bool:
        return self.reps == 0 or self.ks_distance < self.ks_critical


def ks_to_chi2(draws, df: int, level: float = 0.95) -> tuple[float, float, float]:
    """(KS distance to chi2(df), level critical value, p-value)."""
    draws = np.asarray(draws, dtype=float)
    res = stats.kstest(draws, lambda x: chi2_cdf(x, df))
    crit = float(stats.kstwo.ppf(level, draws.size))
    return float(res.statistic), crit, float(res.pvalue)


def null_distribution_check(design: Callable[[int, int], tuple[MomentModel, ParamPoint]], n: int,
                            reps: int, kernel: KernelSpec | None = None) -> NullCheck:
    """KS comparison of the M-projected statistic at the truth with chi2(d - d_gamma).

    ``design(n, rep)`` returns the model for replication ``rep`` at sample size
    ``n`` together with its true point. The statistic does not involve the
    truncation threshold, so none is taken.
    """
    kernel = kernel or KernelSpec()
    if reps <= 0:
        return NullCheck(0, 0, np.empty(0))
    draws, df = [], 0
    for rep in range(reps):
        model, point0 = design(n, rep)
        df = model.d - model.d_gamma
        draws.append(m_projected_statistic(model, point0, kernel))
    draws = np.asarray(draws)
    dist, crit, pval = ks_to_chi2(draws, df)
    return NullCheck(reps, df, draws, dist, crit, pval, float(np.quantile(draws, 0.95)))
