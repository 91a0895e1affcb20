"""Monte Carlo designs: NKPC with stochastic volatility and a linear IV model."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import partial

import numpy as np
from scipy.signal import lfilter

from .cue import OptimOptions, minimize_over_gamma
from .errors import DegenerateDesign, DegeneracyError, InvalidCovariance, UsageError
from .hac import KernelSpec
from .inference import ar_test, klm_test, wald_t_test
from .moments import Dataset, InstrumentSet, make_nkpc_model
from .numerics import RngStream, normal_draw

SV_PERSISTENCE = 0.9
SV_INNOVATION_VAR = 0.2
SV_VAR = SV_INNOVATION_VAR / (1.0 - SV_PERSISTENCE**2)
KAPPA = math.exp(SV_VAR / 4.0)

TESTS = ("T", "AR_C", "KLM")
RHO2_GRID = (0.0, -0.05, -0.65, -0.99)
RHO_ETA_NU_GRID = (0.0, 0.2, 0.99)
MAX_FAILURE_RATE = 0.01


@dataclass(frozen=True)
class NkpcParams:
    rho1: float
    lam: float
    alpha0: float
    alpha1: float
    kappa: float


def derive_nkpc_params(rho: float, rho2: float, rho_eta_nu: float, gamma_f: float,
                       sigma_eta: float = 1.0, sigma_nu: float = 1.0) -> NkpcParams:
    rho1 = rho * (1.0 - rho2)
    denom = 1.0 - gamma_f * (rho1 + gamma_f * rho2)
    if abs(denom) < 1e-12:
        raise DegenerateDesign("1 - gamma_f (rho1 + gamma_f rho2) is zero")
    roots = np.roots([-rho2, -rho1, 1.0]) if rho2 != 0 else np.array([1.0 / rho1 if rho1 else np.inf])
    if np.any(np.abs(roots) <= 1.001):
        raise DegenerateDesign(f"x process not stationary for rho1={rho1}, rho2={rho2}")
    lam = rho_eta_nu * sigma_eta / sigma_nu * denom
    return NkpcParams(
        rho1=rho1,
        lam=lam,
        alpha0=lam / denom,
        alpha1=lam * gamma_f * rho2 / denom,
        kappa=KAPPA,
    )


@dataclass(frozen=True)
class NkpcConfig:
    T: int = 100
    rho2: float = 0.0
    rho_eta_nu: float = 0.0
    gamma_f_true: float = 0.5
    gamma_f_null: float = 0.5
    instrument_set: InstrumentSet = InstrumentSet.LAGS3
    rho: float = 0.9
    burn_in: int = 200
    seed: int = 1

    def __post_init__(self):
        object.__setattr__(self, "instrument_set", InstrumentSet(self.instrument_set))
        if not -1.0 <= self.rho_eta_nu <= 1.0:
            raise UsageError("rho_eta_nu must lie in [-1, 1]")
        if self.T < 50:
            raise UsageError("T must be at least 50")
        if self.burn_in < 0:
            raise UsageError("burn_in must be non-negative")

    def as_dict(self) -> dict:
        out = asdict(self)
        out["instrument_set"] = self.instrument_set.value
        return out


def nkpc_shocks(config: NkpcConfig, rep: int, periods: int):
    """Gaussian cores (e1, e2) with correlation rho_eta_nu and log-volatilities h (2, periods)."""
    z = normal_draw(RngStream(config.seed, rep), 4 * periods).reshape(4, periods)
    r = config.rho_eta_nu
    e1 = z[0]
    e2 = r * z[0] + math.sqrt(max(1.0 - r * r, 0.0)) * z[1]
    xi = math.sqrt(SV_INNOVATION_VAR) * z[2:]
    h = lfilter([1.0], [1.0, -SV_PERSISTENCE], xi, axis=1)
    return e1, e2, h


def nkpc_innovations(config: NkpcConfig, rep: int, periods: int):
    """(eta, nu): Gaussian cores scaled by independent stochastic volatilities.

    Corr(eta, nu) is rho_eta_nu * exp(-Var(h)/4), since the volatility
    factors are independent of each other.
    """
    e1, e2, h = nkpc_shocks(config, rep, periods)
    eta = np.exp(0.5 * h[0]) * e1 / KAPPA
    nu = np.exp(0.5 * h[1]) * e2 / KAPPA
    return eta, nu


def simulate_nkpc(config: NkpcConfig, rep: int = 0) -> Dataset:
    """Inflation/output-gap series for replication ``rep``.

    After the burn-in the sample holds the instrument presample, T usable
    periods and one lead, so the NKPC moments have exactly T observations.
    """
    p = derive_nkpc_params(config.rho, config.rho2, config.rho_eta_nu, config.gamma_f_true)
    keep = config.T + 1 + config.instrument_set.max_lag
    N = config.burn_in + keep
    eta, nu = nkpc_innovations(config, rep, N)
    x = lfilter([1.0], [1.0, -p.rho1, -config.rho2], nu)
    x1 = np.concatenate([[0.0], x[:-1]])
    x2 = np.concatenate([[0.0, 0.0], x[:-2]])
    pi = (p.alpha0 * p.rho1 + p.alpha1) * x1 + p.alpha0 * config.rho2 * x2 + eta
    return Dataset({"pi": pi[-keep:], "x": x[-keep:]}, {"y": ["pi"], "x": ["x"]})


def simulate_linear_iv(n: int, pi_x, pi_w, cov_eps_v, seed: int, rep: int = 0,
                       beta: float = 1.0, gamma=None, heteroskedastic: bool = False) -> Dataset:
    """y = x beta + w' gamma + eps, x = z' pi_x + V_x, w = pi_w' z + V_w with z ~ N(0, I).

    ``cov_eps_v`` is the covariance of (eps, V_x, V_w'). With
    ``heteroskedastic`` the structural error is scaled by sqrt((1 + z_1^2) / 2).
    """
    pi_x = np.atleast_1d(np.asarray(pi_x, dtype=float))
    pi_w = np.asarray(pi_w, dtype=float).reshape(pi_x.size, -1)
    dz, dw = pi_w.shape
    cov = np.asarray(cov_eps_v, dtype=float)
    if cov.shape != (2 + dw, 2 + dw):
        raise UsageError(f"covariance must be {(2 + dw, 2 + dw)}, got {cov.shape}")
    ev, R = np.linalg.eigh(0.5 * (cov + cov.T))
    if ev[0] < -1e-10 * max(1.0, ev[-1]):
        raise InvalidCovariance("covariance of (eps, V) is not positive semi-definite")
    root = R * np.sqrt(np.clip(ev, 0.0, None))
    gamma = np.zeros(dw) if gamma is None else np.atleast_1d(np.asarray(gamma, dtype=float))
    draws = normal_draw(RngStream(seed, rep), n * (dz + 2 + dw)).reshape(n, dz + 2 + dw)
    z = draws[:, :dz]
    errs = draws[:, dz:] @ root.T
    eps = errs[:, 0]
    if heteroskedastic:
        eps = eps * np.sqrt(0.5 * (1.0 + z[:, 0] ** 2))
    x = z @ pi_x + errs[:, 1]
    w = z @ pi_w + errs[:, 2:]
    y = beta * x + w @ gamma + eps
    cols = {"y": y, "x": x}
    cols.update({f"w{j + 1}": w[:, j] for j in range(dw)})
    cols.update({f"z{j + 1}": z[:, j] for j in range(dz)})
    roles = {"y": ["y"], "x": ["x"], "w": [f"w{j + 1}" for j in range(dw)],
             "z": [f"z{j + 1}" for j in range(dz)]}
    return Dataset(cols, roles)


# --- experiments -----------------------------------------------------------------------


def parallel_map(fn, items, threads: int = 1):
    """Ordered map; with threads > 1 the work runs in a process pool."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    chunk = max(1, len(items) // (4 * threads))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def nkpc_replication(config: NkpcConfig, rep: int, alpha: float = 0.05,
                     opts: OptimOptions | None = None) -> dict:
    """Reject flags (1/0, or None on failure) of the three tests of gamma_f = null."""
    kernel = KernelSpec("trunc0")
    out = {name: None for name in TESTS}
    try:
        model = make_nkpc_model(simulate_nkpc(config, rep), config.instrument_set)
    except DegeneracyError:
        return out
    beta0 = [config.gamma_f_null]
    try:
        out["T"] = int(wald_t_test(model, 0, config.gamma_f_null, kernel, alpha).reject)
    except DegeneracyError:
        pass
    try:
        ar = minimize_over_gamma(model, beta0, kernel, opts)
    except DegeneracyError:
        return out
    out["AR_C"] = int(ar_test(model, beta0, kernel, alpha, ar=ar).reject)
    try:
        out["KLM"] = int(klm_test(model, beta0, kernel, alpha, ar=ar).reject)
    except DegeneracyError:
        pass
    return out


def _rep_task(config, alpha, opts, rep):
    return nkpc_replication(config, rep, alpha, opts)


@dataclass
class McCell:
    config: NkpcConfig
    reps: int
    alpha: float
    rejection: dict = field(default_factory=dict)
    mc_se: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)


def run_cell(config: NkpcConfig, reps: int, alpha: float = 0.05, threads: int = 1,
             opts: OptimOptions | None = None) -> McCell:
    flags = parallel_map(partial(_rep_task, config, alpha, opts), range(reps), threads)
    cell = McCell(config, reps, alpha)
    for name in TESTS:
        vals = [f[name] for f in flags if f[name] is not None]
        fails = reps - len(vals)
        if reps and fails > MAX_FAILURE_RATE * reps:
            raise DegeneracyError(f"{name}: {fails} of {reps} replications failed in {config}")
        p = float(np.mean(vals)) if vals else math.nan
        cell.rejection[name] = p
        cell.mc_se[name] = math.sqrt(p * (1 - p) / len(vals)) if vals else math.nan
        cell.failures[name] = fails
    return cell


def run_size_experiment(cells, reps: int, alpha: float = 0.05, threads: int = 1,
                        opts: OptimOptions | None = None) -> list[McCell]:
    """Null rejection frequencies for every cell (true gamma_f equals the null)."""
    out = []
    if reps <= 0:
        return out
    for cfg in cells:
        if cfg.gamma_f_true != cfg.gamma_f_null:
            raise UsageError("size experiment needs gamma_f_true == gamma_f_null")
        out.append(run_cell(cfg, reps, alpha, threads, opts))
    return out


def default_power_grid() -> np.ndarray:
    return np.linspace(-0.5, 1.5, 41)


def run_power_experiment(base: NkpcConfig, gamma_f_true_grid, reps: int, alpha: float = 0.05,
                         threads: int = 1, opts: OptimOptions | None = None) -> list[dict]:
    """Rejection of H0: gamma_f = base.gamma_f_null as the true gamma_f varies (long format)."""
    rows = []
    if reps <= 0:
        return rows
    for gf in np.asarray(gamma_f_true_grid, dtype=float):
        if not np.isfinite(gf):
            raise UsageError("power grid must be finite")
        cell = run_cell(replace(base, gamma_f_true=float(gf)), reps, alpha, threads, opts)
        for name in TESTS:
            rows.append({"gamma_f_true": float(gf), "test": name,
                         "rejection": cell.rejection[name], "mc_se": cell.mc_se[name],
                         "failures": cell.failures[name]})
    return rows


def size_rows(cells: list[McCell]) -> list[dict]:
    rows = []
    for cell in cells:
        c = cell.config
        for name in TESTS:
            rows.append({"T": c.T, "rho2": c.rho2, "rho_eta_nu": c.rho_eta_nu,
                         "instrument_set": c.instrument_set.value, "test": name,
                         "rejection": cell.rejection[name], "mc_se": cell.mc_se[name],
                         "failures": cell.failures[name]})
    return rows


def derive_seed(base_seed: int, index: int) -> int:
    """Sub-seed for cell ``index``: first word of SeedSequence(base_seed, spawn_key=(index,))."""
    ss = np.random.SeedSequence(base_seed, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0])
