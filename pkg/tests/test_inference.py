import numpy as np
import pytest

from cuear.cue import minimize_over_gamma
from cuear.errors import UsageError
from cuear.hac import KernelSpec
from cuear.inference import (SearchOptions, ar_test, invert_ar_ci, klm_statistic, klm_test,
                             project_ci, projection_df, projection_matrix, two_step_gmm,
                             wald_t_test)
from cuear.moments import Dataset, make_linear_iv_model, make_local_projection_model
from cuear.numerics import chi2_quantile, chi2_sf

from conftest import linear_iv_data, nkpc_model


def test_ar_test_fields():
    model = make_linear_iv_model(linear_iv_data(200))
    r = ar_test(model, [1.0], KernelSpec(), 0.05)
    assert r.df == 2
    assert r.crit == pytest.approx(chi2_quantile(2, 0.95))
    assert r.pvalue == pytest.approx(chi2_sf(r.stat, 2))
    assert r.reject == (r.stat > r.crit)
    with pytest.raises(UsageError):
        ar_test(model, [1.0], KernelSpec(), 1.5)


def test_klm_equals_ar_when_just_identified():
    for rep in range(5):
        model = nkpc_model(T=150, rho2=-0.65, rho=0.99, inst="xlags", rep=rep)
        ar = minimize_over_gamma(model, [0.5], KernelSpec())
        if ar.at_boundary:
            continue
        klm = klm_test(model, [0.5], KernelSpec(), ar=ar)
        assert klm.df == 1
        assert klm.stat == pytest.approx(ar.ar_stat, rel=1e-6, abs=1e-9)


def test_klm_statistic_by_hand_homoskedastic_limit():
    # trunc0 kernel: rebuild the K statistic with explicit matrix algebra
    model = make_linear_iv_model(linear_iv_data(120))
    b, c = np.array([1.1]), np.array([0.3])
    g = model.moments(b, c)
    n, d = g.shape
    gbar = g.mean(0)
    Om = g.T @ g / n
    w, R = np.linalg.eigh(Om)
    Ois = (R / np.sqrt(w)) @ R.T
    Oi = np.linalg.inv(Om)

    def orth(J):
        # column j: Jbar_j - S(J_j, g) Omega^{-1} gbar
        cols = [J[:, :, j].mean(0) - (J[:, :, j].T @ g / n) @ Oi @ gbar for j in range(J.shape[2])]
        return Ois @ np.column_stack(cols)

    A, D = orth(model.jg), orth(model.jb)
    MA = np.eye(d) - A @ np.linalg.pinv(A)
    Dt = MA @ D
    v = Ois @ gbar
    expected = n * v @ Dt @ np.linalg.pinv(Dt) @ v
    stat, info = klm_statistic(model, b, c, KernelSpec())
    assert stat == pytest.approx(expected, rel=1e-9)
    assert info["rank_A"] == 1 and info["rank_D"] == 1


def test_klm_reports_rank_deficiency():
    rng = np.random.default_rng(0)
    n = 50
    z = rng.normal(size=(n, 3))
    x = rng.normal(size=n)
    d = Dataset({"y": x + rng.normal(size=n), "x": x, "w": x, "z1": z[:, 0], "z2": z[:, 1],
                 "z3": z[:, 2]}, {"y": ["y"], "x": ["x"], "w": ["w"], "z": ["z1", "z2", "z3"]})
    _, info = klm_statistic(make_linear_iv_model(d), [1.0], [0.0], KernelSpec())
    assert info["rank_deficient"]


def test_projection_matrix_properties():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(5, 2))
    P, r = projection_matrix(A)
    assert r == 2
    np.testing.assert_allclose(P @ P, P, atol=1e-12)
    np.testing.assert_allclose(P, P.T, atol=1e-14)
    np.testing.assert_allclose(P @ A, A, atol=1e-12)
    P0, r0 = projection_matrix(np.zeros((4, 1)))
    assert r0 == 0 and not P0.any()


def test_two_step_gmm_linear_iv_closed_form():
    data = linear_iv_data(400)
    m = make_linear_iv_model(data)
    y, x, w, z = (data.role(r) for r in ("y", "x", "w", "z"))
    X = np.column_stack([x, w])
    n = 400
    # first step is 2SLS
    Pz = z @ np.linalg.solve(z.T @ z, z.T)
    t1 = np.linalg.solve(X.T @ Pz @ X, X.T @ Pz @ y[:, 0])
    u1 = y[:, 0] - X @ t1
    S = (z * u1[:, None]).T @ (z * u1[:, None]) / n
    W = np.linalg.inv(S)
    ZX, Zy = z.T @ X / n, z.T @ y[:, 0] / n
    t2 = np.linalg.solve(ZX.T @ W @ ZX, ZX.T @ W @ Zy)
    theta, V = two_step_gmm(m, KernelSpec())
    np.testing.assert_allclose(theta, t2, rtol=1e-9)
    assert V.shape == (2, 2) and np.all(np.linalg.eigvalsh(V) > 0)


def test_wald_t_test_size_strong_design():
    rej = [wald_t_test(make_linear_iv_model(linear_iv_data(400, seed=9, rep=r)), 0, 1.0,
                       KernelSpec()).reject for r in range(300)]
    assert 0.02 <= np.mean(rej) <= 0.09


def test_ci_duality_and_shape():
    model = make_linear_iv_model(linear_iv_data(300, seed=2))
    grid = np.linspace(0.0, 2.0, 41)
    cs = invert_ar_ci(model, KernelSpec(), 0.05, grid)
    for b, acc in zip(grid, cs.accepted):
        assert acc == (not ar_test(model, [b], KernelSpec(), 0.05).reject)
    assert cs.interval[0] <= 1.0 <= cs.interval[1]
    assert not cs.empty
    with pytest.raises(UsageError):
        invert_ar_ci(model, KernelSpec(), 0.05, [1.0, 0.5])


def test_ci_empty_when_everything_rejected():
    model = make_linear_iv_model(linear_iv_data(300, seed=2))
    cs = invert_ar_ci(model, KernelSpec(), 0.05, np.linspace(20, 30, 5))
    assert cs.empty and cs.interval is None


def test_projection_ci():
    data = linear_iv_data(300, seed=4)
    d = Dataset(dict(data.columns), {"y": ["y"], "x": ["x"], "w": ["w1"], "z": ["z1", "z2", "z3"]})
    model = make_local_projection_model(d, 1)
    assert projection_df(model.d, model.d_beta, model.d_gamma) == 3
    interval, cs = project_ci(model, KernelSpec(), 0.05, 0, SearchOptions(0.0, 2.0, 11))
    assert cs.df == 3
    assert interval[0] < 1.0 < interval[1]
    with pytest.raises(UsageError):
        project_ci(make_linear_iv_model(data), KernelSpec(), 0.05, 0)
