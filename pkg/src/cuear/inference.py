"""Subset AR, subset KLM and two-step GMM t tests; confidence sets by inversion."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .cue import ArResult, OptimOptions, bfgs_box, minimize_over_gamma, plugin_start
from .errors import OptimizationFailed, SingularDesign, UsageError
from .hac import HacEstimate, KernelSpec, hac_derivative, hac_matrix
from .moments import AffineMomentModel, MomentModel, reparametrize
from .numerics import chi2_quantile, chi2_sf, tsvd_pinv

RANK_RTOL = 1e-10


@dataclass
class TestResult:
    name: str
    stat: float
    df: int
    crit: float
    pvalue: float
    reject: bool
    nuisance_at_null: np.ndarray
    converged: bool = True
    meta: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise UsageError(f"alpha must lie in (0, 1), got {alpha}")


def _chi2_result(name, stat, df, alpha, gamma_hat, converged, meta=None) -> TestResult:
    crit = chi2_quantile(int(df), 1.0 - alpha)
    stat = max(float(stat), 0.0)
    return TestResult(name, stat, int(df), crit, float(chi2_sf(stat, df)), bool(stat > crit),
                      np.asarray(gamma_hat, dtype=float), converged, meta or {})


def ar_test(model: MomentModel, beta0, kernel: KernelSpec, alpha: float = 0.05,
            opts: OptimOptions | None = None, ar: ArResult | None = None) -> TestResult:
    """Reject H0: beta = beta0 when AR_C(beta0) exceeds the chi2(d - d_gamma) quantile."""
    _check_alpha(alpha)
    ar = ar or minimize_over_gamma(model, beta0, kernel, opts)
    return _chi2_result("AR_C", ar.ar_stat, ar.df, alpha, ar.gamma_hat, ar.converged,
                        {"at_boundary": ar.at_boundary, "n_starts": ar.n_starts_used})


def projection_matrix(A: np.ndarray, rtol: float = RANK_RTOL,
                      scale: float = 0.0) -> tuple[np.ndarray, int]:
    """Orthogonal projection onto col(A) using a truncated pseudo-inverse of A'A.

    Directions with squared singular value below rtol * max(top, scale) are
    dropped; ``scale`` lets the caller measure rank against a reference size.
    """
    if A.shape[1] == 0:
        return np.zeros((A.shape[0], A.shape[0])), 0
    AtA = A.T @ A
    top = max(float(np.max(np.linalg.eigvalsh(AtA))), 0.0, scale)
    if top == 0.0:
        return np.zeros((A.shape[0], A.shape[0])), 0
    eps = rtol * top
    inv = tsvd_pinv(AtA, eps)
    rank = int(np.sum(np.linalg.eigvalsh(AtA) > eps))
    P = A @ inv @ A.T
    return 0.5 * (P + P.T), rank


def orthogonalized_jacobian(g, J, kernel, omega_inv, omega_inv_sqrt):
    """Omega^{-1/2} (Jbar - (I_d kron gbar' Omega^{-1}) Lambda) for Jacobian blocks J (n, d, k)."""
    d = g.shape[1]
    gbar = g.mean(axis=0)
    lam = hac_derivative(g, J, kernel, one_sided=True)
    corr = np.kron(np.eye(d), (omega_inv @ gbar)[None, :]) @ lam
    return omega_inv_sqrt @ (J.mean(axis=0) - corr)


def klm_statistic(model: MomentModel, beta0, gamma, kernel: KernelSpec) -> tuple[float, dict]:
    """Subset K statistic at (beta0, gamma): n v' P_{M_A D} v with v = Omega^{-1/2} gbar."""
    beta0 = np.atleast_1d(np.asarray(beta0, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    g = model.moments(beta0, gamma)
    hac = HacEstimate(hac_matrix(g, kernel))
    Oi, Ois = hac.inverse, hac.factor_inv_sqrt
    A = orthogonalized_jacobian(g, model.jac_gamma(beta0, gamma), kernel, Oi, Ois)
    D = orthogonalized_jacobian(g, model.jac_beta(beta0, gamma), kernel, Oi, Ois)
    PA, rank_a = projection_matrix(A)
    Dt = D - PA @ D
    # rank of M_A D is judged against the size of D itself
    PD, rank_d = projection_matrix(Dt, scale=float(np.max(np.linalg.eigvalsh(D.T @ D))))
    v = Ois @ g.mean(axis=0)
    stat = float(g.shape[0] * v @ PD @ v)
    info = {"rank_A": rank_a, "rank_D": rank_d,
            "rank_deficient": rank_a < A.shape[1] or rank_d < D.shape[1]}
    return stat, info


def klm_test(model: MomentModel, beta0, kernel: KernelSpec, alpha: float = 0.05,
             opts: OptimOptions | None = None, ar: ArResult | None = None) -> TestResult:
    """Subset KLM evaluated at the CUE nuisance estimate under the null; chi2(d_beta)."""
    _check_alpha(alpha)
    ar = ar or minimize_over_gamma(model, beta0, kernel, opts)
    stat, info = klm_statistic(model, beta0, ar.gamma_hat, kernel)
    return _chi2_result("KLM", stat, model.d_beta, alpha, ar.gamma_hat, ar.converged, info)


def _gmm_fixed_weight(model: MomentModel, W: np.ndarray, theta0: np.ndarray) -> np.ndarray:
    db = model.d_beta
    if isinstance(model, AffineMomentModel):
        J = np.concatenate([model.jb, model.jg], axis=2).mean(axis=0)
        JWJ = J.T @ W @ J
        if np.linalg.cond(JWJ) > 1e12:
            raise SingularDesign("GMM Jacobian is rank deficient")
        return -np.linalg.solve(JWJ, J.T @ W @ model.a.mean(axis=0))

    def fun(theta):
        b, c = theta[:db], theta[db:]
        gbar = model.moments(b, c).mean(axis=0)
        J = np.concatenate([model.jac_beta(b, c), model.jac_gamma(b, c)], axis=2).mean(axis=0)
        return float(gbar @ W @ gbar), 2.0 * J.T @ W @ gbar

    res = bfgs_box(fun, theta0, *model.box, tol_grad=1e-10, max_iters=500)
    return res.x


def two_step_gmm(model: MomentModel, kernel: KernelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Two-step efficient GMM estimate of theta = (beta', gamma')' and its sandwich covariance."""
    db = model.d_beta
    W1 = model.first_step_weight if model.first_step_weight is not None else np.eye(model.d)
    theta0 = np.zeros(db + model.d_gamma)
    if not isinstance(model, AffineMomentModel):
        theta0[db:] = plugin_start(model, np.zeros(db))
    theta1 = _gmm_fixed_weight(model, W1, theta0)
    S1 = HacEstimate(hac_matrix(model.moments(theta1[:db], theta1[db:]), kernel))
    W2 = S1.inverse
    theta2 = _gmm_fixed_weight(model, W2, theta1)
    b, c = theta2[:db], theta2[db:]
    J = np.concatenate([model.jac_beta(b, c), model.jac_gamma(b, c)], axis=2).mean(axis=0)
    S2 = hac_matrix(model.moments(b, c), kernel)
    bread = J.T @ W2 @ J
    if np.linalg.cond(bread) > 1e12:
        raise SingularDesign("GMM Jacobian is rank deficient")
    bread_inv = np.linalg.inv(bread)
    meat = J.T @ W2 @ S2 @ W2 @ J
    V = bread_inv @ meat @ bread_inv / model.n
    return theta2, 0.5 * (V + V.T)


def wald_t_test(model: MomentModel, component: int, value: float, kernel: KernelSpec,
                alpha: float = 0.05) -> TestResult:
    """Conventional t test of theta[component] = value from two-step GMM; |t| vs N(0,1)."""
    _check_alpha(alpha)
    theta, V = two_step_gmm(model, kernel)
    se = math.sqrt(V[component, component])
    if not se > 0:
        raise SingularDesign("non-positive standard error")
    t = (theta[component] - value) / se
    crit = float(special.ndtri(1.0 - alpha / 2.0))
    pvalue = float(2.0 * special.ndtr(-abs(t)))
    return TestResult("T", float(t), 0, crit, pvalue, bool(abs(t) > crit),
                      theta[model.d_beta:], True,
                      {"estimate": theta.tolist(), "se": se,
                       "construction": "two-step efficient GMM, sandwich variance"})


# --- confidence sets -------------------------------------------------------------------


@dataclass
class ConfidenceSet:
    alpha: float
    grid: np.ndarray
    accepted: np.ndarray
    stats: np.ndarray
    converged: np.ndarray
    failed: np.ndarray
    df: int
    crit: float
    interval: tuple[float, float] | None
    convex: bool
    open_lower: bool = False
    open_upper: bool = False

    @property
    def empty(self) -> bool:
        return self.interval is None


def _refine_edge(accept, outside, inside, tol):
    """Bisect between a rejected and an accepted value until closer than tol."""
    while abs(inside - outside) > tol:
        mid = 0.5 * (inside + outside)
        if accept(mid):
            inside = mid
        else:
            outside = mid
    return inside


def invert_ar_ci(model: MomentModel, kernel: KernelSpec, alpha: float, beta_grid,
                 opts: OptimOptions | None = None, refine_tol: float | None = 1e-4) -> ConfidenceSet:
    """{beta : AR_C(beta) <= c_{1-alpha, chi2(d - d_gamma)}} scanned over a grid (d_beta = 1)."""
    _check_alpha(alpha)
    if model.d_beta != 1:
        raise UsageError("grid inversion needs a scalar beta; use project_ci")
    grid = np.asarray(beta_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise UsageError("beta grid must be strictly increasing with at least 2 points")
    df = model.d - model.d_gamma
    crit = chi2_quantile(df, 1.0 - alpha)
    m = grid.size
    stats = np.full(m, np.nan)
    conv = np.zeros(m, bool)
    failed = np.zeros(m, bool)
    for i, b in enumerate(grid):
        try:
            res = minimize_over_gamma(model, [b], kernel, opts)
        except OptimizationFailed as exc:
            warnings.warn(f"optimizer failed at beta={b}: {exc}; point treated as rejected",
                          RuntimeWarning, stacklevel=2)
            failed[i] = True
            continue
        stats[i], conv[i] = res.ar_stat, res.converged
    accepted = ~failed & (stats <= crit)

    def accept(b):
        try:
            return minimize_over_gamma(model, [b], kernel, opts).ar_stat <= crit
        except OptimizationFailed:
            return False

    idx = np.nonzero(accepted)[0]
    if idx.size == 0:
        return ConfidenceSet(alpha, grid, accepted, stats, conv, failed, df, crit, None, True)
    i0, i1 = idx[0], idx[-1]
    convex = bool(np.all(accepted[i0:i1 + 1]))
    lower, upper = grid[i0], grid[i1]
    if refine_tol:
        if i0 > 0 and not failed[i0 - 1]:
            lower = _refine_edge(accept, grid[i0 - 1], lower, refine_tol)
        if i1 < m - 1 and not failed[i1 + 1]:
            upper = _refine_edge(accept, grid[i1 + 1], upper, refine_tol)
    return ConfidenceSet(alpha, grid, accepted, stats, conv, failed, df, crit,
                         (float(lower), float(upper)), convex,
                         open_lower=bool(i0 == 0), open_upper=bool(i1 == m - 1))


def projection_df(d: int, d_beta: int, d_gamma: int) -> int:
    return d - d_beta - d_gamma + 1


@dataclass
class SearchOptions:
    lo: float = -10.0
    hi: float = 10.0
    steps: int = 401
    refine_tol: float = 1e-4


def project_ci(model: MomentModel, kernel: KernelSpec, alpha: float, component: int,
               search: SearchOptions | None = None, opts: OptimOptions | None = None):
    """Projection interval for beta[component] when d_beta > 1.

    beta[component] is accepted when min over the other beta components and
    gamma of Q_n is below the chi2(d - d_beta - d_gamma + 1) quantile.
    Returns (lower, upper), or None when no value is accepted.
    """
    if model.d_beta <= 1:
        raise UsageError("projection intervals are for d_beta > 1; use invert_ar_ci")
    search = search or SearchOptions()
    sub = reparametrize(model, [component])
    assert sub.d - sub.d_gamma == projection_df(model.d, model.d_beta, model.d_gamma)
    grid = np.linspace(search.lo, search.hi, search.steps)
    cs = invert_ar_ci(sub, kernel, alpha, grid, opts, search.refine_tol)
    return cs.interval, cs
