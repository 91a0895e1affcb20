import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cuear.errors import SingularWeightMatrix, UsageError
from cuear.hac import (HacEstimate, KernelSpec, default_bandwidth, hac_covariance, hac_derivative,
                       hac_jacobian_beta, hac_jacobian_gamma, hac_matrix, kernel_cross_moment,
                       kernel_cross_moment_literal)
from cuear.moments import ParamPoint

from conftest import exp_model, linear_iv_data, nkpc_model
from cuear.moments import make_linear_iv_model

KINDS = ["trunc0", "bartlett", "parzen", "qs"]


def _literal(g, kind, a):
    # plain double loop, written independently of the package code
    n = g.shape[0]
    spec = KernelSpec(kind, a)
    out = np.zeros((g.shape[1], g.shape[1]))
    for t in range(n):
        for s in range(n):
            if kind == "trunc0":
                k = 1.0 if t == s else 0.0
            else:
                k = float(spec((t - s) / a))
            out += k * np.outer(g[t], g[s])
    return out / n


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("n", [1, 2, 7, 20])
def test_lag_sum_equals_double_sum(kind, n):
    rng = np.random.default_rng(n)
    g = rng.normal(size=(n, 3))
    for a in (0.7, 2.0, 3.5):
        np.testing.assert_allclose(hac_matrix(g, KernelSpec(kind, a)), _literal(g, kind, a),
                                   atol=1e-12, rtol=0)


def test_trunc0_is_outer_product_average():
    rng = np.random.default_rng(1)
    g = rng.normal(size=(50, 4))
    assert np.array_equal(hac_matrix(g, KernelSpec("trunc0")), g.T @ g / 50)
    one = g[:1]
    assert np.array_equal(hac_matrix(one, KernelSpec("trunc0")), np.outer(one[0], one[0]))


@pytest.mark.parametrize("kind", ["bartlett", "parzen", "qs"])
def test_kernel_shape(kind):
    k = KernelSpec(kind, 2.0)
    x = np.linspace(-5, 5, 1001)
    assert k(0.0) == 1.0
    np.testing.assert_allclose(k(x), k(-x))
    assert np.all(np.abs(k(x)) <= 1.0 + 1e-12)


def test_kernel_values():
    assert KernelSpec("bartlett", 1)(0.5) == pytest.approx(0.5)
    assert KernelSpec("parzen", 1)(0.5) == pytest.approx(0.25)
    assert KernelSpec("parzen", 1)(0.75) == pytest.approx(2 * 0.25**3)
    # QS at x: 25/(12 pi^2 x^2) (sin(u)/u - cos u), u = 6 pi x / 5
    u = 6 * np.pi / 5
    assert KernelSpec("qs", 1)(1.0) == pytest.approx(25 / (12 * np.pi**2) * (np.sin(u) / u - np.cos(u)))
    assert KernelSpec("trunc0")(0.0) == 1.0 and KernelSpec("trunc0")(0.3) == 0.0


def test_default_bandwidth():
    assert default_bandwidth(100) == 4.0
    assert default_bandwidth(1000) == np.floor(4 * 10 ** (2 / 9))
    assert KernelSpec("bartlett").resolved_bandwidth(100) == 4.0
    with pytest.raises(UsageError):
        KernelSpec("bartlett", 0.0)
    with pytest.raises(ValueError):
        KernelSpec("hann")


@given(st.sampled_from(["bartlett", "parzen", "qs"]), st.integers(2, 60), st.integers(0, 2**31))
def test_psd_kernels_give_psd_matrices(kind, n, seed):
    g = np.random.default_rng(seed).normal(size=(n, 3))
    w = np.linalg.eigvalsh(hac_matrix(g, KernelSpec(kind, 3.0)))
    assert w[0] >= -1e-10 * max(1.0, w[-1])


@given(st.integers(1, 40), st.integers(0, 2**31), st.floats(0.1, 10.0))
def test_hac_is_symmetric_and_scales_quadratically(n, seed, c):
    g = np.random.default_rng(seed).normal(size=(n, 2))
    S = hac_matrix(g, KernelSpec("bartlett", 2.0))
    assert np.array_equal(S, S.T)
    np.testing.assert_allclose(hac_matrix(c * g, KernelSpec("bartlett", 2.0)), c**2 * S,
                               rtol=1e-10, atol=1e-12)


def test_cross_moment_literal_general():
    rng = np.random.default_rng(3)
    U, V = rng.normal(size=(15, 2)), rng.normal(size=(15, 3))
    for kind in KINDS:
        spec = KernelSpec(kind, 2.5)
        np.testing.assert_allclose(kernel_cross_moment(U, V, spec),
                                   kernel_cross_moment_literal(U, V, spec), atol=1e-12)


def _fd_vec_omega(model, point, kernel, which, h=1e-6):
    base = np.r_[point.beta, point.gamma]
    db = point.beta.size
    k = point.beta.size if which == "beta" else point.gamma.size
    off = 0 if which == "beta" else db
    cols = []
    for j in range(k):
        e = np.zeros_like(base)
        e[off + j] = h
        up = hac_matrix(model.moments((base + e)[:db], (base + e)[db:]), kernel)
        dn = hac_matrix(model.moments((base - e)[:db], (base - e)[db:]), kernel)
        cols.append(((up - dn) / (2 * h)).ravel(order="F"))
    return np.column_stack(cols)


@pytest.mark.parametrize("kind", KINDS)
def test_hac_jacobians_match_finite_differences(kind):
    kernel = KernelSpec(kind, 2.0)
    for model, point in [(exp_model(), ParamPoint([0.2], [-0.1])),
                         (make_linear_iv_model(linear_iv_data(80)), ParamPoint([0.9], [0.1]))]:
        for which, fn in (("gamma", hac_jacobian_gamma), ("beta", hac_jacobian_beta)):
            an = fn(model, point, kernel)
            fd = _fd_vec_omega(model, point, kernel, which)
            np.testing.assert_allclose(an, fd, rtol=1e-6, atol=1e-7 * np.abs(fd).max())


def test_one_sided_derivative_is_half_plus_commutation():
    rng = np.random.default_rng(2)
    g, J = rng.normal(size=(30, 3)), rng.normal(size=(30, 3, 2))
    k = KernelSpec("bartlett", 3.0)
    half = hac_derivative(g, J, k, one_sided=True)
    full = hac_derivative(g, J, k)
    for j in range(2):
        H = half[:, j].reshape(3, 3, order="F")
        np.testing.assert_allclose(full[:, j].reshape(3, 3, order="F"), H + H.T, atol=1e-14)
        # column j is vec(S(g, J_j))
        np.testing.assert_allclose(H, kernel_cross_moment(g, J[:, :, j], k), atol=1e-14)


def test_singularity_is_raised_lazily():
    est = HacEstimate(np.diag([1.0, 0.0]))
    assert est.min_eigenvalue == 0.0
    with pytest.raises(SingularWeightMatrix):
        est.inverse
    with pytest.raises(SingularWeightMatrix):
        est.factor_inv_sqrt
    ok = HacEstimate(np.diag([4.0, 1.0]))
    np.testing.assert_allclose(ok.factor_inv_sqrt, np.diag([0.5, 1.0]))
    assert ok.condition_estimate == pytest.approx(4.0)


def test_hac_covariance_on_model():
    model = nkpc_model()
    pt = ParamPoint([0.5], [0.4])
    est = hac_covariance(model, pt, KernelSpec())
    g = model.moments(pt.beta, pt.gamma)
    np.testing.assert_allclose(est.omega, g.T @ g / g.shape[0])
