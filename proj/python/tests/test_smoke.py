import json
import math

import numpy as np
import pytest

import labkit as lk


def chain_walk(n):
    m = lk.chain_mdp(n)
    return m, lk.transition_matrix(m, lk.uniform_policy(m))


def test_td_flow_matches_expm():
    scipy_linalg = pytest.importorskip("scipy.linalg")
    m, P = chain_walk(8)
    V0 = np.linspace(-1.0, 1.0, 8)
    tr = lk.td_value_flow(V0, P, m.reward, gamma=0.9, t_end=3.0, n_snapshots=4)
    A = np.eye(8) - 0.9 * P
    vpi = np.linalg.solve(A, m.reward)
    expected = scipy_linalg.expm(-3.0 * A) @ (V0 - vpi) + vpi
    assert tr["times"] == [0.0, 1.0, 2.0, 3.0]
    np.testing.assert_allclose(tr["states"][-1].ravel(), expected, atol=1e-10)
    rk = lk.td_value_flow(V0, P, m.reward, gamma=0.9, t_end=3.0, n_snapshots=4, method="rk4", dt=1e-3)
    np.testing.assert_allclose(rk["states"][-1].ravel(), expected, atol=1e-9)


def test_spectrum_and_grassmann():
    _, P = chain_walk(10)
    vals, vecs, is_real = lk.eigendecompose(P)
    assert is_real
    np.testing.assert_allclose(vals.real, np.cos(np.pi * np.arange(10) / 10), atol=1e-12)
    Q, _ = np.linalg.qr(vecs.real[:, :3])
    assert lk.grassmann_distance(Q, Q) < 1e-12
    e = np.eye(4)
    assert abs(lk.grassmann_distance(e[:, :1], e[:, 1:2]) - math.pi / 2) < 1e-12
    with pytest.raises(ValueError):
        lk.grassmann_distance(e[:, :2], e[:, :1])


def test_rsbf_beats_random_basis():
    _, P = chain_walk(12)
    Psi = lk.resolvent(P, 0.9)
    U, sv = lk.rsbf(P, 0.9, 3)
    np.testing.assert_allclose(sv, np.linalg.svd(Psi, compute_uv=False)[:3], rtol=1e-10)
    resid = lambda Q: np.linalg.norm(Psi - Q @ (Q.T @ Psi)) ** 2
    rng = np.random.default_rng(0)
    for _ in range(20):
        Q, _ = np.linalg.qr(rng.standard_normal((12, 3)))
        assert resid(U) <= resid(Q) + 1e-9


def test_rank_estimators():
    rng = np.random.default_rng(1)
    phi = rng.standard_normal((2000, 3)) @ rng.standard_normal((3, 16))
    assert lk.feature_rank(phi)["rank"] == 3
    assert lk.update_rank(np.eye(7))["rank"] == 7


def test_evidence_against_joint_gaussian():
    models, data = lk.model_selection_task("feature_dimension", 3)
    m = models[10]
    assert m.name == "M15"
    Phi = m.features(data.inputs)
    n = Phi.shape[0]
    C = m.prior_variance * Phi @ Phi.T + m.noise_variance * np.eye(n)
    sign, logdet = np.linalg.slogdet(C)
    y = data.targets
    joint = -0.5 * y @ np.linalg.solve(C, y) - 0.5 * logdet - 0.5 * n * math.log(2 * math.pi)
    assert abs(lk.exact_log_ml(m, data) - joint) < 1e-8
    est = lk.estimate_L(m, data, 50, 1)
    assert est["value"] <= lk.exact_log_ml(m, data) + 4 * est["std_error"]


def test_kernel_td_regimes():
    mdp, train = lk.circle_mdp()
    P = mdp.transition[0]
    emb = lk.circle_embedding(50)
    out = lk.run_kernel_td(np.zeros(50), 0.01, emb, P, mdp.reward, 0.5, train, t_end=100.0)
    assert not out["diverged"]
    assert out["train_bellman_residual"] < 1e-3
    assert out["test_max_abs"] < 1e-3


def test_misa_selects_reward_ancestors():
    envs = lk.synthetic_family(3, 1000, 0, [3.0])
    report = lk.linear_misa(envs, 0.05)
    assert report["selected"] == [0, 1]
    assert report["icp_calls"] == len(report["calls"])
    assert all("subsets" in c for c in report["calls"])


def test_run_experiment_is_deterministic():
    cfg = "[two-state]\nt_end = 5\nn_snapshots = 11\n"
    files_a, derived = lk.run_experiment("two-state", 4, cfg)
    files_b, _ = lk.run_experiment("two-state", 4, cfg)
    assert files_a == files_b
    header = files_a["trajectory.csv"].decode().splitlines()[0]
    assert header.startswith("t,")
    assert isinstance(derived, dict)
    assert "two-state" in lk.experiments()


def test_errors_map_to_python():
    with pytest.raises(lk.ConfigError):
        lk.run_experiment("two-state", 1, "[two-state]\nno_such_key = 1\n")
    with pytest.raises(ValueError):
        lk.exact_value(np.eye(3), np.ones(2), 0.9)
    bad = np.array([[0.5, 0.9], [0.9, 0.1]])
    with pytest.raises(ValueError):
        lk.TabularMDP([bad], np.zeros(2))
