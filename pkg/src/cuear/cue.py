"""Continuous-updating GMM criterion, its gamma-gradient, and the subset AR statistic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import OptimizationFailed, OrderConditionViolated, SingularWeightMatrix
from .hac import HacEstimate, KernelSpec, hac_derivative, hac_matrix, kernel_cross_moment
from .moments import AffineMomentModel, MomentModel, ParamPoint, reparametrize
from .numerics import RngStream


@dataclass
class OptimOptions:
    """Knobs of the nuisance minimization.

    ``tol_grad`` is relative: a point is stationary when the projected
    gradient norm is below ``tol_grad * max(1, |Q|)``.
    """

    tol_grad: float = 1e-8
    max_iters: int = 200
    n_starts: int = 6
    gamma_box: tuple[float, float] | None = None
    start_seed: int = 20240917
    grid_points: int = 1001
    n_brackets: int = 3


@dataclass
class CueEvaluation:
    q: float
    grad_gamma: np.ndarray
    hac: HacEstimate
    gbar: np.ndarray
    n: int

    @property
    def weighted_gbar(self) -> np.ndarray:
        return self.hac.inverse @ self.gbar


@dataclass
class ArResult:
    ar_stat: float
    gamma_hat: np.ndarray
    df: int
    n_starts_used: int
    converged: bool
    at_boundary: bool = False
    objective_trace: list = field(default_factory=list)


def _cue_terms(gbar, Gbar, omega_inv, lam_half, n):
    """Q and its exact gamma-gradient from the one-sided Omega derivative.

    grad = 2n gbar' Omega^{-1} (G - (I_d kron gbar' Omega^{-1}) Lambda), with
    Lambda holding the derivative of vec(Omega) through the second factor only,
    so the expression is the derivative of n gbar' Omega^{-1} gbar.
    """
    d = gbar.size
    a = omega_inv @ gbar
    q = float(n * gbar @ a)
    corr = np.kron(np.eye(d), a[None, :]) @ lam_half
    grad = 2.0 * n * (a @ (Gbar - corr))
    return q, grad


def cue_objective(model: MomentModel, beta0, gamma, kernel: KernelSpec) -> CueEvaluation:
    """Q_n(beta0, gamma) = n gbar' Omega_hat^{-1} gbar with Omega_hat updated at gamma."""
    beta0 = np.atleast_1d(np.asarray(beta0, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    g = model.moments(beta0, gamma)
    J = model.jac_gamma(beta0, gamma)
    hac = HacEstimate(hac_matrix(g, kernel))
    lam = hac_derivative(g, J, kernel, one_sided=True)
    gbar = g.mean(axis=0)
    q, grad = _cue_terms(gbar, J.mean(axis=0), hac.inverse, lam, g.shape[0])
    return CueEvaluation(q, grad, hac, gbar, g.shape[0])


class _GeneralProfile:
    """gamma -> (Q, grad) for fixed beta0, recomputing everything per call."""

    def __init__(self, model, beta0, kernel):
        self.model, self.beta0, self.kernel = model, beta0, kernel

    def value_and_grad(self, gamma):
        try:
            ev = cue_objective(self.model, self.beta0, gamma, self.kernel)
        except SingularWeightMatrix:
            return math.inf, np.full(np.size(gamma), np.nan)
        return ev.q, ev.grad_gamma

    def q_batch(self, gammas):
        return np.array([self.value_and_grad(np.atleast_1d(g))[0] for g in gammas])


class _AffineProfile:
    """Fast profile for moments affine in gamma: g_t(gamma) = c_t + G_t gamma.

    Omega(gamma) and every derivative are quadratic/linear combinations of
    the kernel cross-moments of the stacked blocks [c_t, G_t1, ..., G_tk],
    computed once, so each evaluation costs O(d^3) regardless of n.
    """

    def __init__(self, model: AffineMomentModel, beta0, kernel):
        c = model.offset(beta0)
        G = model.jg
        n, d = c.shape
        k = G.shape[2]
        m = k + 1
        U = np.concatenate([c[:, None, :], G.transpose(0, 2, 1)], axis=1)  # (n, m, d)
        S = kernel_cross_moment(U.reshape(n, m * d), U.reshape(n, m * d), kernel)
        S = 0.5 * (S + S.T)
        self.blocks = S.reshape(m, d, m, d).transpose(0, 2, 1, 3)  # [i, j] -> d x d
        self.means = U.mean(axis=0)  # (m, d)
        self.n, self.d, self.k = n, d, k

    def _weights(self, gamma):
        return np.concatenate([[1.0], np.atleast_1d(gamma)])

    def omega(self, gamma):
        w = self._weights(gamma)
        return np.einsum("i,j,ijab->ab", w, w, self.blocks)

    def value_and_grad(self, gamma):
        w = self._weights(gamma)
        gbar = w @ self.means
        omega = np.einsum("i,j,ijab->ab", w, w, self.blocks)
        try:
            hac = HacEstimate(omega)
            a = hac.inverse @ gbar
        except SingularWeightMatrix:
            return math.inf, np.full(self.k, np.nan)
        # one-sided cross moment S(g, G_j) = sum_i w_i S[i, j+1]
        cross = np.einsum("i,ijab->jab", w, self.blocks[:, 1:])
        q = float(self.n * gbar @ a)
        grad = 2.0 * self.n * (self.means[1:] @ a - np.einsum("a,jab,b->j", a, cross, a))
        return q, grad

    def q_batch(self, gammas):
        gammas = np.asarray(gammas, dtype=float).reshape(len(gammas), self.k)
        W = np.concatenate([np.ones((len(gammas), 1)), gammas], axis=1)
        gbar = W @ self.means
        omega = np.einsum("ki,kj,ijab->kab", W, W, self.blocks)
        out = np.full(len(gammas), math.inf)
        wmin = np.linalg.eigvalsh(omega)
        ok = wmin[:, 0] > wmin[:, -1] / 1e12
        if np.any(ok):
            sol = np.linalg.solve(omega[ok], gbar[ok][:, :, None])[:, :, 0]
            out[ok] = self.n * np.einsum("ka,ka->k", gbar[ok], sol)
        return out


def cue_profile(model: MomentModel, beta0, kernel: KernelSpec):
    beta0 = np.atleast_1d(np.asarray(beta0, dtype=float))
    if isinstance(model, AffineMomentModel):
        return _AffineProfile(model, beta0, kernel)
    return _GeneralProfile(model, beta0, kernel)


# --- optimizer -------------------------------------------------------------------------


@dataclass
class _Candidate:
    q: float
    x: np.ndarray
    converged: bool
    boundary: bool


def _projected(g, x, lo, hi):
    active = ((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0))
    return np.where(active, 0.0, g), active


def bfgs_box(fun, x0, lo, hi, tol_grad=1e-8, max_iters=200) -> _Candidate:
    """Projected BFGS with backtracking Armijo search on the box [lo, hi]^k."""
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    f, g = fun(x)
    if not math.isfinite(f):
        return _Candidate(math.inf, x, False, False)
    k = x.size
    H = np.eye(k)
    scaled = False
    for _ in range(max_iters):
        pg, active = _projected(g, x, lo, hi)
        if np.linalg.norm(pg) <= tol_grad * max(1.0, abs(f)):
            return _Candidate(f, x, True, bool(np.any(active)))
        p = -(H @ pg)
        p[active] = 0.0
        if pg @ p >= 0:
            H = np.eye(k)
            p = -pg
        if not scaled:
            p = p / max(1.0, np.linalg.norm(p))
        t = 1.0
        accepted = False
        for _ls in range(60):
            xn = np.clip(x + t * p, lo, hi)
            s = xn - x
            if not np.any(s):
                break
            fn, gn = fun(xn)
            if math.isfinite(fn) and fn <= f + 1e-4 * (g @ s):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # roundoff floor: accept a non-increasing step that shrinks the gradient
            if np.any(s) and math.isfinite(fn) and fn <= f + 1e-13 * abs(f) \
                    and np.linalg.norm(_projected(gn, xn, lo, hi)[0]) < np.linalg.norm(pg):
                accepted = True
            else:
                return _Candidate(f, x, False, bool(np.any(active)))
        y = gn - g
        sy = s @ y
        if sy > 1e-14 * np.linalg.norm(s) * np.linalg.norm(y):
            if not scaled:
                H = np.eye(k) * (sy / (y @ y))
                scaled = True
            rho = 1.0 / sy
            V = np.eye(k) - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)
        x, f, g = xn, fn, gn
    pg, active = _projected(g, x, lo, hi)
    return _Candidate(f, x, bool(np.linalg.norm(pg) <= tol_grad * max(1.0, abs(f))),
                      bool(np.any(active)))


def _golden(fun, a, b, tol=1e-10):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return (a + b) / 2.0


def _scalar_candidates(profile, lo, hi, opts: OptimOptions):
    """Grid pre-scan over the box, then derivative root or golden section per bracket."""
    grid = np.linspace(lo, hi, opts.grid_points)
    qs = profile.q_batch(grid[:, None])
    finite = np.isfinite(qs)
    if not np.any(finite):
        return []
    qpad = np.concatenate([[math.inf], np.where(finite, qs, math.inf), [math.inf]])
    is_min = finite & (qpad[1:-1] <= qpad[:-2]) & (qpad[1:-1] <= qpad[2:])
    idx = np.nonzero(is_min)[0]
    idx = idx[np.lexsort((idx, qs[idx]))][: opts.n_brackets]

    def dq(x):
        return profile.value_and_grad(np.array([x]))[1][0]

    def q1(x):
        return profile.value_and_grad(np.array([x]))[0]

    out = []
    for i in idx:
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        ga, gb = dq(a), dq(b)
        if ga < 0 < gb:
            x = optimize.brentq(dq, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
        elif i == 0 and ga >= 0:
            x = a
        elif i == grid.size - 1 and gb <= 0:
            x = b
        else:
            x = _golden(q1, a, b)
        xv = np.array([x])
        f, g = profile.value_and_grad(xv)
        if not math.isfinite(f):
            continue
        pg, active = _projected(g, xv, lo, hi)
        ok = np.linalg.norm(pg) <= opts.tol_grad * max(1.0, abs(f))
        out.append(_Candidate(f, xv, bool(ok), bool(np.any(active))))
    return out


def latin_hypercube(count: int, k: int, lo: float, hi: float, seed: int) -> np.ndarray:
    rng = RngStream(seed, 0).generator()
    u = np.empty((count, k))
    for j in range(k):
        u[:, j] = (rng.permutation(count) + rng.random(count)) / count
    return lo + (hi - lo) * u


def plugin_start(model: MomentModel, beta0) -> np.ndarray:
    """One-step GMM (2SLS for IV adapters) estimate of gamma given beta0."""
    beta0 = np.atleast_1d(np.asarray(beta0, dtype=float))
    zero = np.zeros(model.d_gamma)
    c = model.moments(beta0, zero).mean(axis=0)
    G = model.jac_gamma(beta0, zero).mean(axis=0)
    W = model.first_step_weight if model.first_step_weight is not None else np.eye(model.d)
    return -np.linalg.pinv(G.T @ W @ G) @ (G.T @ W @ c)


def _minimize_profile(profile, k, box, starts, opts: OptimOptions) -> tuple[list, int]:
    lo, hi = box
    cands = []
    n_used = 0
    if k == 1:
        cands += _scalar_candidates(profile, lo, hi, opts)
        n_used += len(cands)
    for x0 in starts:
        if not np.all(np.isfinite(x0)):
            continue
        cands.append(bfgs_box(profile.value_and_grad, x0, lo, hi, opts.tol_grad, opts.max_iters))
        n_used += 1
    cands = [c for c in cands if math.isfinite(c.q)]
    if not cands:
        raise OptimizationFailed("no start produced a finite CUE objective")
    cands.sort(key=lambda c: (c.q, tuple(c.x)))
    return cands, n_used


def minimize_over_gamma(model: MomentModel, beta0, kernel: KernelSpec,
                        opts: OptimOptions | None = None) -> ArResult:
    """AR_C(beta0) = min over gamma of Q_n(beta0, gamma), multi-start."""
    opts = opts or OptimOptions()
    if model.d - model.d_gamma <= 0:
        raise OrderConditionViolated("subset AR needs d - d_gamma > 0")
    return _minimize_nuisance(model, beta0, kernel, opts)


def _minimize_nuisance(model, beta0, kernel, opts) -> ArResult:
    k = model.d_gamma
    box = opts.gamma_box or model.box
    profile = cue_profile(model, beta0, kernel)
    starts = [np.clip(plugin_start(model, beta0), *box)]
    if k > 1:
        starts.append(np.clip(np.zeros(k), *box))
        starts += list(latin_hypercube(opts.n_starts, k, box[0], box[1], opts.start_seed))
    cands, n_used = _minimize_profile(profile, k, box, starts, opts)
    best = cands[0]
    # a stationary candidate attaining the same value (to roundoff) certifies the minimum
    tie = 1e-10 * max(1.0, abs(best.q))
    certified = any(c.converged or c.boundary for c in cands if c.q <= best.q + tie)
    return ArResult(
        ar_stat=best.q,
        gamma_hat=best.x.copy(),
        df=model.d - k,
        n_starts_used=n_used,
        converged=certified,
        at_boundary=best.boundary,
        objective_trace=[(c.x.copy(), c.q) for c in cands],
    )


def cue_full_estimate(model: MomentModel, kernel: KernelSpec,
                      opts: OptimOptions | None = None) -> tuple[ParamPoint, float, ArResult]:
    """Joint CUE over (beta, gamma); returns the estimate, Q at the minimum, and details."""
    opts = opts or OptimOptions()
    if model.d - model.d_beta - model.d_gamma < 0:
        raise OrderConditionViolated("CUE needs d >= d_beta + d_gamma")
    joint = reparametrize(model, [])
    res = _minimize_nuisance(joint, np.empty(0), kernel, opts)
    theta = res.gamma_hat
    point = ParamPoint(theta[: model.d_beta], theta[model.d_beta:])
    return point, res.ar_stat, res
