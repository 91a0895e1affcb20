import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cuear.hac import KernelSpec
from cuear.moments import MomentModel, make_nkpc_model
from cuear.simulation import NkpcConfig, derive_nkpc_params, simulate_linear_iv, simulate_nkpc

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

IV_COV = np.array([[1.0, 0.5, 0.3], [0.5, 1.0, 0.2], [0.3, 0.2, 1.0]])


def linear_iv_data(n=200, seed=1, rep=0, strength=1.0, **kw):
    pi_x = strength * np.array([1.0, 0.5, 0.3])
    pi_w = strength * np.array([[0.8], [0.2], [-0.5]])
    return simulate_linear_iv(n, pi_x, pi_w, IV_COV, seed=seed, rep=rep, **kw)


def nkpc_truth(rho2, rho_eta_nu, gamma_f=0.5):
    return derive_nkpc_params(0.9, rho2, rho_eta_nu, gamma_f).lam


def nkpc_model(T=200, rho2=-0.65, rho=0.99, inst="lags3", seed=5, rep=0):
    cfg = NkpcConfig(T=T, rho2=rho2, rho_eta_nu=rho, instrument_set=inst, seed=seed)
    return make_nkpc_model(simulate_nkpc(cfg, rep), inst)


def exp_model(n=150, seed=3):
    """Nonlinear model g_t = z_t (y_t - exp(b x_t + c w_t)) with b = 0.3, c = -0.2."""
    rng = np.random.default_rng(seed)
    z = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
    x = 0.5 * z[:, 1] + 0.3 * rng.normal(size=n)
    w = 0.5 * z[:, 2] + 0.3 * rng.normal(size=n)
    y = np.exp(0.3 * x - 0.2 * w) + 0.2 * rng.normal(size=n)

    def mu(b, c):
        return np.exp(b[0] * x + c[0] * w)

    def g(b, c):
        return z * (y - mu(b, c))[:, None]

    def jg(b, c):
        return (-z * (mu(b, c) * w)[:, None])[:, :, None]

    def jb(b, c):
        return (-z * (mu(b, c) * x)[:, None])[:, :, None]

    return MomentModel(g, jg, jb, d=3, d_beta=1, d_gamma=1, n=n, box=(-5.0, 5.0), name="exp")


@pytest.fixture
def trunc0():
    return KernelSpec("trunc0")


@pytest.fixture(params=["trunc0", "bartlett", "parzen", "qs"])
def any_kernel(request):
    return KernelSpec(request.param)
