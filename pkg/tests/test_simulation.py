import math

import numpy as np
import pytest

from cuear.errors import DegenerateDesign, DegeneracyError, InvalidCovariance, UsageError
from cuear.moments import make_nkpc_model
from cuear.simulation import (KAPPA, SV_VAR, NkpcConfig, derive_nkpc_params, derive_seed,
                              nkpc_innovations, nkpc_replication, nkpc_shocks, parallel_map,
                              run_cell, run_power_experiment, run_size_experiment,
                              simulate_linear_iv, simulate_nkpc, size_rows)


def test_kappa_normalizes_variance():
    assert SV_VAR == pytest.approx(0.2 / 0.19)
    # E exp(h) = exp(Var(h)/2) for stationary Gaussian h
    assert KAPPA**2 == pytest.approx(math.exp(SV_VAR / 2))


def test_innovation_moments():
    for r in (0.0, 0.99):
        cfg = NkpcConfig(rho_eta_nu=r, seed=3)
        e1, e2, _ = nkpc_shocks(cfg, 0, 10**6)
        assert np.corrcoef(e1, e2)[0, 1] == pytest.approx(r, abs=0.01)
        eta, nu = nkpc_innovations(cfg, 0, 10**6 + 200)
        assert eta[200:].var() == pytest.approx(1.0, abs=0.01)
        assert nu[200:].var() == pytest.approx(1.0, abs=0.01)


def test_derived_parameters():
    p = derive_nkpc_params(0.9, -0.65, 0.99, 0.5)
    rho1 = 0.9 * 1.65
    D = 1 - 0.5 * (rho1 - 0.5 * 0.65)
    assert p.rho1 == pytest.approx(rho1)
    assert p.lam == pytest.approx(0.99 * D)
    assert p.alpha0 == pytest.approx(0.99)
    assert p.alpha1 == pytest.approx(0.99 * 0.5 * -0.65)
    assert derive_nkpc_params(0.9, 0.0, 0.0, 0.5).lam == 0.0
    for rho2 in (0.0, -0.05, -0.65, -0.99):
        derive_nkpc_params(0.9, rho2, 0.2, 0.5)  # stationary, no error
    with pytest.raises(DegenerateDesign):
        derive_nkpc_params(1.0, 0.0, 0.2, 0.5)
    with pytest.raises(DegenerateDesign):
        derive_nkpc_params(0.9, 0.0, 0.2, 1 / 0.9)


def test_structural_moment_holds_in_population():
    # at the true parameters the NKPC moments average to ~0 in a long sample
    cfg = NkpcConfig(T=200_000, rho2=-0.65, rho_eta_nu=0.99, seed=2)
    model = make_nkpc_model(simulate_nkpc(cfg, 0), "lags3")
    lam = derive_nkpc_params(0.9, -0.65, 0.99, 0.5).lam
    g = model.moments([0.5], [lam])
    se = g.std(axis=0) / math.sqrt(g.shape[0])
    assert np.all(np.abs(g.mean(axis=0)) < 4.5 * se)


@pytest.mark.parametrize("inst,lag", [("lags3", 3), ("xlags", 2), ("xlags-text", 1)])
def test_effective_sample_is_T(inst, lag):
    cfg = NkpcConfig(T=100, instrument_set=inst)
    data = simulate_nkpc(cfg, 0)
    assert data.n == 100 + 1 + lag
    assert make_nkpc_model(data, inst).n == 100


def test_simulation_is_reproducible():
    cfg = NkpcConfig(seed=11)
    a, b = simulate_nkpc(cfg, 4), simulate_nkpc(cfg, 4)
    assert np.array_equal(a.columns["pi"], b.columns["pi"])
    assert not np.array_equal(a.columns["pi"], simulate_nkpc(cfg, 5).columns["pi"])


def test_config_validation():
    with pytest.raises(UsageError):
        NkpcConfig(rho_eta_nu=1.5)
    with pytest.raises(UsageError):
        NkpcConfig(T=10)
    with pytest.raises(ValueError):
        NkpcConfig(instrument_set="bogus")


def test_linear_iv_simulation():
    cov = np.array([[1.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 1.0]])
    d = simulate_linear_iv(200_000, [1.0, 0.0], [[0.0], [1.0]], cov, seed=1, beta=2.0, gamma=[-1.0])
    y, x, w = d.columns["y"], d.columns["x"], d.columns["w1"]
    eps = y - 2.0 * x + w
    assert eps.var() == pytest.approx(1.0, abs=0.02)
    assert np.corrcoef(eps, x - d.columns["z1"])[0, 1] == pytest.approx(0.5, abs=0.02)
    with pytest.raises(InvalidCovariance):
        simulate_linear_iv(10, [1.0], [[1.0]], -np.eye(3), seed=1)
    with pytest.raises(UsageError):
        simulate_linear_iv(10, [1.0], [[1.0]], np.eye(2), seed=1)


def test_replication_flags():
    out = nkpc_replication(NkpcConfig(seed=5), 0)
    assert set(out) == {"T", "AR_C", "KLM"}
    assert all(v in (0, 1) for v in out.values())


def test_cell_and_rows():
    cells = run_size_experiment([NkpcConfig(seed=5, instrument_set="xlags")], reps=30)
    rows = size_rows(cells)
    assert [r["test"] for r in rows] == ["T", "AR_C", "KLM"]
    for r in rows:
        p = r["rejection"]
        assert 0 <= p <= 1
        assert r["mc_se"] == pytest.approx(math.sqrt(p * (1 - p) / 30))
    assert run_size_experiment([NkpcConfig()], reps=0) == []
    with pytest.raises(UsageError):
        run_size_experiment([NkpcConfig(gamma_f_true=0.3)], reps=5)


def test_power_at_null_equals_size_cell():
    base = NkpcConfig(seed=8, instrument_set="xlags")
    rows = run_power_experiment(base, [0.5], reps=20)
    cell = run_cell(base, 20)
    for r in rows:
        assert r["rejection"] == cell.rejection[r["test"]]


def test_parallel_map_matches_serial():
    assert parallel_map(abs, [-3, 2, -1], threads=2) == [3, 2, 1]
    cfg = NkpcConfig(seed=5, instrument_set="xlags")
    assert run_cell(cfg, 12, threads=2).rejection == run_cell(cfg, 12).rejection


def test_failure_threshold(monkeypatch):
    import cuear.simulation as sim

    def flaky(config, alpha, opts, rep):
        return {"T": 0, "AR_C": None if rep < 2 else 0, "KLM": 0}

    monkeypatch.setattr(sim, "_rep_task", flaky)
    with pytest.raises(DegeneracyError):
        sim.run_cell(NkpcConfig(), 100)
    cell = sim.run_cell(NkpcConfig(), 200)
    assert cell.failures["AR_C"] == 2 and cell.rejection["AR_C"] == 0.0


def test_derive_seed():
    assert derive_seed(1, 0) == derive_seed(1, 0)
    assert len({derive_seed(1, i) for i in range(50)}) == 50
    assert derive_seed(1, 0) != derive_seed(2, 0)
