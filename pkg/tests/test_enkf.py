import math

import numpy as np
import pytest

from _helpers import make_ensemble
from opcov.enkf import (
    EnkfError,
    analysis_update,
    gain_continuity_bound,
    gain_operator_norm,
    kalman_gain,
    local_average_observation,
    loo_covariances,
    observation_model,
    pointwise_observation,
    state_norm,
    compare_analysis_updates,
)
from opcov.estimation import ThresholdRule, spectral_norm_dense, threshold_parameter
from opcov.kernels import se_kernel
from opcov.sampling import CovMatrix, build_mesh, covariance_matrix, sample_ensemble


def spd(rng, L, scale=1.0):
    a = rng.normal(size=(L, L))
    return scale * (a @ a.T) / L + 0.1 * np.eye(L)


# ---------------------------------------------------------------------------
# observation models
# ---------------------------------------------------------------------------


def test_pointwise_rows_are_unit_vectors():
    mesh = build_mesh(1, 16)
    obs = pointwise_observation(mesh, 4)
    assert obs.A.shape == (4, 16)
    assert np.all(obs.A.sum(axis=1) == 1.0)
    assert np.all((obs.A == 0.0) | (obs.A == 1.0))
    # orthonormal rows at distinct sites: sigma_max(A) = 1
    assert obs.a_op_norm == pytest.approx(1.0 / math.sqrt(mesh.weight), rel=1e-12)
    assert obs.gamma_inv_norm == pytest.approx(10.0, rel=1e-12)  # Gamma = 0.1 I


def test_local_average_rows():
    mesh = build_mesh(1, 20)
    obs = local_average_observation(mesh, 3, width=4)
    assert np.allclose(obs.A.sum(axis=1), 1.0)
    assert np.all(np.count_nonzero(obs.A, axis=1) == 4)


def test_observation_model_rejects_bad_gamma():
    with pytest.raises(EnkfError, match="symmetric"):
        observation_model(np.eye(2), np.array([[1.0, 0.2], [0.1, 1.0]]), 0.5)
    with pytest.raises(EnkfError, match="positive definite"):
        observation_model(np.eye(2), np.diag([1.0, -1.0]), 0.5)


def test_observation_site_bounds():
    mesh = build_mesh(1, 8)
    with pytest.raises(EnkfError):
        pointwise_observation(mesh, 0)
    with pytest.raises(EnkfError):
        pointwise_observation(mesh, 9)
    with pytest.raises(EnkfError):
        pointwise_observation(mesh, 4, noise_std=0.0)


# ---------------------------------------------------------------------------
# kalman gain
# ---------------------------------------------------------------------------


def test_gain_zero_covariance():
    mesh = build_mesh(1, 8)
    obs = pointwise_observation(mesh, 3)
    gain = kalman_gain(CovMatrix(np.zeros((8, 8)), mesh.weight), obs)
    assert np.array_equal(gain, np.zeros((8, 3)))


def test_gain_scalar_case():
    obs = observation_model(np.array([[1.0]]), np.array([[1.0]]), 1.0)
    gain = kalman_gain(CovMatrix(np.array([[1.0]]), 1.0), obs)
    assert gain == pytest.approx(np.array([[0.5]]))


def test_gain_residual_identity():
    rng = np.random.default_rng(5)
    L, d_y = 8, 3
    C = spd(rng, L)
    A = rng.normal(size=(d_y, L))
    obs = observation_model(A, np.eye(d_y), 1.0 / L)
    gain = kalman_gain(CovMatrix(C, 1.0 / L), obs)
    residual = gain @ (A @ C @ A.T + np.eye(d_y)) - C @ A.T
    assert np.max(np.abs(residual)) < 1e-10


def test_gain_rejects_indefinite_inner_matrix():
    obs = observation_model(np.array([[1.0]]), np.array([[1e-6]]), 1.0)
    with pytest.raises(EnkfError, match="positive definite"):
        kalman_gain(CovMatrix(np.array([[-1.0]]), 1.0), obs)


# ---------------------------------------------------------------------------
# analysis update
# ---------------------------------------------------------------------------


def test_update_with_zero_gain_is_identity():
    mesh = build_mesh(1, 8)
    obs = pointwise_observation(mesh, 3)
    u = np.arange(8.0)
    out = analysis_update(u, np.zeros(3), np.ones(3), np.zeros((8, 3)), obs)
    assert np.array_equal(out, u)


def test_update_zero_innovation_fixed_point():
    # integer-valued data keeps y - A u - eta exactly zero in floating point
    rng = np.random.default_rng(11)
    mesh = build_mesh(1, 10)
    obs = pointwise_observation(mesh, 4)
    u = rng.integers(-5, 6, size=10).astype(float)
    eta = rng.integers(-3, 4, size=4).astype(float)
    y = obs.A @ u + eta  # innovation vanishes exactly
    gain = rng.normal(size=(10, 4))
    assert np.array_equal(analysis_update(u, eta, y, gain, obs), u)


def test_update_scalar_case():
    obs = observation_model(np.array([[1.0]]), np.array([[1.0]]), 1.0)
    gain = kalman_gain(CovMatrix(np.array([[1.0]]), 1.0), obs)
    out = analysis_update(np.zeros(1), np.zeros(1), np.array([2.0]), gain, obs)
    assert out == pytest.approx(np.array([1.0]))


# ---------------------------------------------------------------------------
# leave-one-out covariances
# ---------------------------------------------------------------------------


def test_loo_two_particles():
    ens = make_ensemble([[1.0, 2.0], [3.0, -1.0]])
    rule = ThresholdRule(c0=1.0, form="simplified")
    items = list(loo_covariances(ens, rule))
    assert len(items) == 2
    _, loo0, _, _ = items[0]
    u2 = np.array([3.0, -1.0])
    assert np.allclose(loo0.entries, np.outer(u2, u2), atol=1e-14)


def test_loo_downdate_matches_direct_recomputation():
    rng = np.random.default_rng(21)
    fields = rng.normal(size=(5, 6))
    ens = make_ensemble(fields)
    rule = ThresholdRule(c0=1.0, form="simplified")
    for n, loo, _, _ in loo_covariances(ens, rule):
        others = np.delete(fields, n, axis=0)
        direct = others.T @ others / 4
        assert np.max(np.abs(loo.entries - direct)) < 1e-12


def test_loo_requires_two_particles():
    ens = make_ensemble([[1.0, 2.0]])
    with pytest.raises(EnkfError):
        next(loo_covariances(ens, ThresholdRule()))


def test_loo_threshold_close_to_full_threshold():
    mesh = build_mesh(1, 32)
    cov = covariance_matrix(se_kernel(0.1), mesh)
    ens = sample_ensemble(cov, 100, seed=3, mesh=mesh)
    rule = ThresholdRule(c0=1.0, form="simplified")
    rho_full = threshold_parameter(ens, rule)
    rhos = np.array([rho for _, _, _, rho in loo_covariances(ens, rule)])
    assert np.max(np.abs(rhos - rho_full)) <= 10.0 * rho_full / 100.0


# ---------------------------------------------------------------------------
# gain continuity
# ---------------------------------------------------------------------------


def test_continuity_bound_values():
    obs = observation_model(np.array([[1.0]]), np.array([[1.0]]), 1.0)
    assert gain_continuity_bound(0.0, 1.0, obs) == 0.0
    assert gain_continuity_bound(0.1, 1.0, obs) == pytest.approx(0.2)
    with pytest.raises(EnkfError):
        gain_continuity_bound(-0.1, 1.0, obs)


def test_continuity_bound_never_violated_on_spd_perturbations():
    rng = np.random.default_rng(2)
    L, d_y = 16, 4
    w = 1.0 / L
    mesh = build_mesh(1, L)
    obs = pointwise_observation(mesh, d_y)
    C = spd(rng, L)
    gain_ref = kalman_gain(CovMatrix(C, w), obs)
    c_norm = w * spectral_norm_dense(C)
    for _ in range(200):
        Chat = spd(rng, L, scale=float(rng.uniform(0.2, 3.0)))
        gain_hat = kalman_gain(CovMatrix(Chat, w), obs)
        actual = gain_operator_norm(gain_hat - gain_ref, w)
        bound = gain_continuity_bound(w * spectral_norm_dense(Chat - C), c_norm, obs)
        assert actual <= bound * (1 + 1e-9)


def test_shared_noise_coupling_identity():
    # with shared (y, eta), the update difference is exactly the gain
    # difference applied to the innovation
    rng = np.random.default_rng(13)
    L, d_y = 12, 4
    mesh = build_mesh(1, L)
    obs = pointwise_observation(mesh, d_y)
    C = spd(rng, L)
    Chat = spd(rng, L)
    u = rng.normal(size=L)
    eta = rng.normal(size=d_y)
    y = rng.normal(size=d_y)
    g_true = kalman_gain(CovMatrix(C, mesh.weight), obs)
    g_hat = kalman_gain(CovMatrix(Chat, mesh.weight), obs)
    v_star = analysis_update(u, eta, y, g_true, obs)
    v_hat = analysis_update(u, eta, y, g_hat, obs)
    innovation = y - obs.A @ u - eta
    assert np.max(np.abs((v_hat - v_star) - (g_hat - g_true) @ innovation)) < 1e-10


# ---------------------------------------------------------------------------
# the three-way comparison experiment
# ---------------------------------------------------------------------------


def test_degenerate_rank_one_loo_gives_finite_updates():
    # all-equal fields: leave-one-out covariance is rank one, updates finite
    field = np.linspace(-1.0, 1.0, 8)
    ens = make_ensemble(np.tile(field, (4, 1)))
    mesh = build_mesh(1, 8)
    obs = pointwise_observation(mesh, 3)
    rule = ThresholdRule(c0=1.0, form="simplified")
    for _, loo, loo_t, _ in loo_covariances(ens, rule):
        for est in (loo, loo_t):
            gain = kalman_gain(est, obs)
            out = analysis_update(field, np.zeros(3), np.ones(3), gain, obs)
            assert np.all(np.isfinite(out))


def test_comparison_structure_and_determinism():
    mesh = build_mesh(1, 48)
    obs = pointwise_observation(mesh, 4)
    rule = ThresholdRule(c0=5.0, form="simplified")
    a = compare_analysis_updates(se_kernel(0.05), mesh, obs, N=8, rule=rule, trials=4, seed=77)
    b = compare_analysis_updates(se_kernel(0.05), mesh, obs, N=8, rule=rule, trials=4, seed=77)
    assert len(a.trials) == 4
    assert a.mean_vanilla == b.mean_vanilla
    assert a.mean_localized == b.mean_localized
    for comp in a.trials:
        assert comp.disc_vanilla.shape == (8,)
        assert np.all(comp.disc_vanilla >= 0)
        assert np.all(comp.c_consts >= 0)
    quantiles = a.pooled_quantiles()
    assert set(quantiles) == {
        "vanilla_q50", "vanilla_q90", "vanilla_q99",
        "localized_q50", "localized_q90", "localized_q99",
    }
    assert a.continuity_all_ok


def test_comparison_vanilla_discrepancy_shrinks_at_root_n_rate():
    mesh = build_mesh(1, 64)
    obs = pointwise_observation(mesh, 4)
    rule = ThresholdRule(c0=5.0, form="simplified")
    kernel = se_kernel(0.1)
    small = compare_analysis_updates(kernel, mesh, obs, N=500, rule=rule, trials=8,
                                seed=5, check_continuity=False)
    large = compare_analysis_updates(kernel, mesh, obs, N=2000, rule=rule, trials=8,
                                seed=6, check_continuity=False)
    assert large.mean_vanilla < 0.05
    ratio = small.mean_vanilla / large.mean_vanilla
    assert 1.4 <= ratio <= 2.6  # sqrt(4) = 2 within 30%


def test_comparison_validation():
    mesh = build_mesh(1, 16)
    obs = pointwise_observation(mesh, 4)
    with pytest.raises(EnkfError):
        compare_analysis_updates(se_kernel(0.1), mesh, obs, N=1,
                            rule=ThresholdRule(), trials=2, seed=0)
    with pytest.raises(EnkfError):
        compare_analysis_updates(se_kernel(0.1), build_mesh(1, 8), obs, N=4,
                            rule=ThresholdRule(), trials=2, seed=0)


def test_state_norm_is_weighted():
    v = np.array([3.0, 4.0])
    assert state_norm(v, 0.25) == pytest.approx(2.5)
