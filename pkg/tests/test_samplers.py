import math

import numpy as np
import pytest

from hybridmcmc.errors import (
    AdaptationError,
    ConfigurationError,
    NonFinitePotential,
    ParameterError,
    StartupError,
)
from hybridmcmc.models import GaussianPotentialSpec, gaussian_posterior_covariance, phi_gaussian
from hybridmcmc.prior import KLBasis, MaternParams, matern_prior, project, reconstruct, sample_prior
from hybridmcmc.samplers import (
    AdaptState,
    HybridConfig,
    PcnConfig,
    beta_from_delta,
    default_R,
    hybrid_log_acceptance,
    hybrid_propose,
    pcn_log_acceptance,
    pcn_propose,
    run_hybrid_chain,
    run_pcn_chain,
    tune_beta,
    update_adaptive_covariance,
)


def zero_potential(u):
    return 0.0


@pytest.fixture(scope="module")
def basis():
    return matern_prior(201, MaternParams(1.0, 1.0, 2.5))


@pytest.fixture(scope="module")
def small_basis():
    return matern_prior(41, MaternParams(1.0, 0.3, 2.5))


# -- step size ----------------------------------------------------------------

def test_beta_from_delta_values():
    assert beta_from_delta(2.0) == 1.0
    assert beta_from_delta(0.5) == pytest.approx(0.8)
    assert beta_from_delta(1e-12) < 1e-5


@pytest.mark.parametrize("delta", [0.0, -1.0, 2.5])
def test_beta_from_delta_range(delta):
    with pytest.raises(ParameterError):
        beta_from_delta(delta)


@pytest.mark.parametrize("delta", np.linspace(0.01, 2.0, 17))
def test_beta_in_unit_interval(delta):
    assert 0.0 < beta_from_delta(delta) <= 1.0


# -- pCN ----------------------------------------------------------------------

def test_pcn_propose_limits(basis):
    u = sample_prior(basis, np.random.default_rng(0))
    np.testing.assert_array_equal(pcn_propose(u, 0.0, basis, np.random.default_rng(1)), u)
    w = sample_prior(basis, np.random.default_rng(1))
    np.testing.assert_allclose(pcn_propose(u, 1.0, basis, np.random.default_rng(1)), w, atol=1e-14)


def test_pcn_log_acceptance():
    assert pcn_log_acceptance(1.0, 1.0) == 0.0
    assert pcn_log_acceptance(1.0, 3.0) == -2.0
    with pytest.raises(NonFinitePotential):
        pcn_log_acceptance(1.0, math.nan)


def test_pcn_prior_invariance(basis):
    chain = run_pcn_chain(PcnConfig(0.5, 100_000), zero_potential, basis, np.zeros(201),
                          np.random.default_rng(11))
    assert chain.acceptance_rate == 1.0
    coeffs = chain.states @ basis.weighted_modes[:5].T
    rel = coeffs.var(axis=0) / basis.eigenvalues[:5] - 1.0
    assert np.max(np.abs(rel)) < 0.05


def test_pcn_independence_limit(small_basis):
    chain = run_pcn_chain(PcnConfig(1.0, 4000), zero_potential, small_basis, np.zeros(41),
                          np.random.default_rng(3))
    x = chain.states @ small_basis.weighted_modes[0]
    lag1 = np.corrcoef(x[:-1], x[1:])[0, 1]
    assert abs(lag1) < 4 / math.sqrt(x.size)


def test_pcn_gaussian_posterior(small_basis):
    spec = GaussianPotentialSpec(3, 1.0)
    chain = run_pcn_chain(PcnConfig(0.9, 60_000), lambda u: phi_gaussian(u, spec, small_basis),
                          small_basis, np.zeros(41), np.random.default_rng(21))
    x = chain.states @ small_basis.weighted_modes[:3].T
    exact = gaussian_posterior_covariance(spec, small_basis)
    assert np.linalg.norm(np.cov(x.T) - exact) / np.linalg.norm(exact) < 0.05
    assert np.all(np.abs(x.mean(axis=0)) < 0.03)


# -- hybrid proposal ----------------------------------------------------------

def test_hybrid_propose_beta_zero(basis):
    u = sample_prior(basis, np.random.default_rng(0))
    v = hybrid_propose(u, 0.0, np.eye(4) * 0.1, basis, 4, np.random.default_rng(1))
    np.testing.assert_allclose(v, u, atol=1e-12)


def test_hybrid_propose_full_J_is_random_walk(small_basis):
    n = small_basis.size
    u = sample_prior(small_basis, np.random.default_rng(2))
    sigma = np.diag(small_basis.eigenvalues)
    rng = np.random.default_rng(3)
    props = np.array([hybrid_propose(u, 0.5, sigma, small_basis, n, rng) for _ in range(20_000)])
    se = props.std(axis=0) / math.sqrt(props.shape[0])
    assert np.all(np.abs(props.mean(axis=0) - u) < 4 * se + 1e-12)


def test_hybrid_proposal_moments(basis):
    J, beta = 3, 0.6
    a = np.array([[0.5, 0.1, 0.0], [0.1, 0.2, 0.05], [0.0, 0.05, 0.1]])
    u = sample_prior(basis, np.random.default_rng(7))
    rng = np.random.default_rng(8)
    n = 100_000
    coeffs = np.empty((n, 6))
    for k in range(n):
        coeffs[k] = project(hybrid_propose(u, beta, a, basis, J, rng), basis, 6)
    x_u = project(u, basis, 6)
    expected_mean = np.concatenate([x_u[:J], math.sqrt(1 - beta**2) * x_u[J:]])
    se = coeffs.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(coeffs.mean(axis=0) - expected_mean) < 4 * se)
    cov = np.cov(coeffs[:, :J].T)
    assert np.linalg.norm(cov - beta**2 * a) / np.linalg.norm(beta**2 * a) < 0.05
    tail_var = coeffs[:, J:].var(axis=0)
    np.testing.assert_allclose(tail_var, beta**2 * basis.eigenvalues[J:6], rtol=0.05)


def test_hybrid_propose_rejects_indefinite(basis):
    with pytest.raises(AdaptationError):
        hybrid_propose(np.zeros(201), 0.5, -np.eye(2), basis, 2, np.random.default_rng(0))


def test_hybrid_log_acceptance_examples():
    grid_basis = matern_prior(5, MaternParams(1.0, 1.0))
    alpha = np.array([1.0, 0.5, 0.25, 0.1, 0.05])
    b = KLBasis(alpha, grid_basis.modes.copy(), grid_basis.grid)
    u = reconstruct([1.0], b)
    v = np.zeros(5)
    assert hybrid_log_acceptance(u, u, 0.3, 0.3, b, 1) == 0.0
    assert hybrid_log_acceptance(u, v, 0.0, 0.0, b, 1) == pytest.approx(0.5)


def test_hybrid_log_acceptance_rejects_zero_eigenvalues(basis):
    b = KLBasis(np.concatenate([basis.eigenvalues[:3], np.zeros(198)]), basis.modes.copy(), basis.grid)
    with pytest.raises(ConfigurationError):
        hybrid_log_acceptance(np.zeros(201), np.zeros(201), 0.0, 0.0, b, 5)


def test_hybrid_prior_invariance_fixed_sigma(basis):
    J = 5
    config = HybridConfig(beta=0.8, J=J, n_prerun=0, n_samples=100_000,
                          fixed_sigma=np.diag(basis.eigenvalues[:J]))
    chain = run_hybrid_chain(config, zero_potential, basis, np.zeros(201), np.random.default_rng(1))
    coeffs = chain.states @ basis.weighted_modes[:5].T
    rel = coeffs.var(axis=0) / basis.eigenvalues[:5] - 1.0
    assert np.max(np.abs(rel)) < 0.05


# -- adaptation ---------------------------------------------------------------

def test_adapt_identical_samples_give_regularizer():
    state = AdaptState.empty(2, 1e-8, 10.0)
    x = np.array([0.3, -0.2])
    state = update_adaptive_covariance(update_adaptive_covariance(state, x, 1.0), x, 1.0)
    np.testing.assert_allclose(state.sigma_hat, 1e-8 * np.eye(2), atol=1e-20)


def test_adapt_two_sample_hand_value():
    state = AdaptState.empty(2, 0.0, 10.0)
    state = update_adaptive_covariance(state, np.array([1.0, 0.0]), 1.0)
    assert state.sigma_hat is None
    state = update_adaptive_covariance(state, np.array([-1.0, 0.0]), 1.0)
    np.testing.assert_allclose(state.sigma_hat, [[2.0, 0.0], [0.0, 0.0]])


def test_adapt_norm_gate_leaves_state_unchanged():
    state = AdaptState.empty(2, 1e-8, 5.0)
    state = update_adaptive_covariance(state, np.array([1.0, 2.0]), 1.0)
    gated = update_adaptive_covariance(state, np.array([100.0, 100.0]), 5.0 + 1.0)
    assert gated is state


def test_adapt_recursion_matches_batch_formula():
    rng = np.random.default_rng(4)
    xs = rng.standard_normal((200, 4)) @ np.diag([1.0, 0.5, 2.0, 0.1])
    state = AdaptState.empty(4, 1e-6, np.inf)
    for x in xs:
        state = update_adaptive_covariance(state, x, 0.0)
    centered = xs - xs.mean(axis=0)
    batch = centered.T @ centered / (len(xs) - 1) + 1e-6 * np.eye(4)
    np.testing.assert_allclose(state.sigma_hat, batch, rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(state.running_mean, xs.mean(axis=0), atol=1e-14)


def test_adapt_diagonal_variant():
    rng = np.random.default_rng(5)
    state = AdaptState.empty(3, 1e-8, np.inf, diagonal=True)
    for x in rng.standard_normal((50, 3)):
        state = update_adaptive_covariance(state, x, 0.0)
    assert np.count_nonzero(state.sigma_hat - np.diag(np.diag(state.sigma_hat))) == 0


def test_adapt_wrong_length():
    with pytest.raises(ParameterError):
        update_adaptive_covariance(AdaptState.empty(2, 0.0, 1.0), np.zeros(3), 0.0)


# -- hybrid chain -------------------------------------------------------------

def test_hybrid_zero_potential_prerun_accepts_everything(small_basis):
    config = HybridConfig(beta=0.5, J=3, n_prerun=500, n_samples=200)
    chain = run_hybrid_chain(config, zero_potential, small_basis, np.zeros(41), np.random.default_rng(0))
    assert chain.prerun_acceptance_rate == 1.0
    assert chain.accept_count <= chain.proposal_count
    assert chain.states.shape == (200, 41)


def test_hybrid_startup_error_when_R_too_small(small_basis):
    config = HybridConfig(beta=0.5, J=3, n_prerun=50, n_samples=10, R=1e-12)
    with pytest.raises(StartupError):
        run_hybrid_chain(config, zero_potential, small_basis, np.zeros(41), np.random.default_rng(0))


def test_hybrid_rejects_J_past_zero_spectrum(small_basis):
    b = KLBasis(np.concatenate([small_basis.eigenvalues[:2], np.zeros(39)]),
                small_basis.modes.copy(), small_basis.grid)
    config = HybridConfig(beta=0.5, J=3, n_prerun=10, n_samples=10)
    with pytest.raises(ConfigurationError):
        run_hybrid_chain(config, zero_potential, b, np.zeros(41), np.random.default_rng(0))


def test_startup_error_when_prerun_stays_outside_ball(small_basis):
    # the chain starts far outside the ball and moves too slowly to enter it
    R = 0.5 * math.sqrt(small_basis.eigenvalues.sum())
    start = reconstruct([5.0], small_basis)
    config = HybridConfig(beta=0.05, J=2, n_prerun=20, n_samples=3000, R=R, snapshot_stride=500,
                          fixed_sigma=None)
    with pytest.raises(StartupError):
        run_hybrid_chain(config, zero_potential, small_basis, start, np.random.default_rng(0))


def test_snapshots_positive_definite(small_basis):
    spec = GaussianPotentialSpec(3, 14.0)
    delta = 1e-6
    config = HybridConfig(beta=0.5, J=3, n_prerun=500, n_samples=5000, delta_reg=delta,
                          snapshot_stride=500)
    chain = run_hybrid_chain(config, lambda u: phi_gaussian(u, spec, small_basis), small_basis,
                             np.zeros(41), np.random.default_rng(2))
    assert chain.sigma_snapshots.shape == (11, 3, 3)
    np.testing.assert_array_equal(chain.snapshot_iterations, np.arange(500, 5501, 500))
    for s in chain.sigma_snapshots:
        np.testing.assert_allclose(s, s.T)
        assert np.linalg.eigvalsh(s).min() >= delta * (1 - 1e-6)


def test_hybrid_reproducible(small_basis):
    spec = GaussianPotentialSpec(3, 1.0)
    config = HybridConfig(beta=0.5, J=3, n_prerun=200, n_samples=1000, seed=9)
    pot = lambda u: phi_gaussian(u, spec, small_basis)  # noqa: E731
    a = run_hybrid_chain(config, pot, small_basis, np.zeros(41))
    b = run_hybrid_chain(config, pot, small_basis, np.zeros(41))
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.sigma_snapshots, b.sigma_snapshots)
    assert a.accept_count == b.accept_count


def test_nonfinite_potential_is_rejected(small_basis):
    calls = {"n": 0}

    def flaky(u):
        calls["n"] += 1
        return math.nan if calls["n"] % 3 == 0 else 0.0

    chain = run_pcn_chain(PcnConfig(0.5, 300), flaky, small_basis, np.zeros(41), np.random.default_rng(0))
    assert chain.nonfinite_count == 100
    assert np.all(np.isfinite(chain.log_potentials))
    assert chain.accept_count == 200


def test_thinning(small_basis):
    chain = run_pcn_chain(PcnConfig(0.5, 1000, thin=10), zero_potential, small_basis, np.zeros(41),
                          np.random.default_rng(0))
    assert chain.states.shape == (100, 41)
    np.testing.assert_array_equal(chain.iterations, np.arange(10, 1001, 10))


def test_default_R_is_ten_prior_sds(basis):
    assert default_R(basis) == pytest.approx(10 * math.sqrt(basis.eigenvalues.sum()))


# -- tuning -------------------------------------------------------------------

def test_tune_beta_zero_potential_hits_clamp(small_basis):
    beta = tune_beta(0.25, zero_potential, small_basis, np.zeros(41), np.random.default_rng(0),
                     beta0=0.05, n_batches=10)
    assert beta == 1.0


def test_tune_beta_concentrated_posterior_decreases(small_basis):
    spec = GaussianPotentialSpec(5, 14.0, scale=20.0)
    history = []
    tune_beta(0.25, lambda u: phi_gaussian(u, spec, small_basis), small_basis, np.zeros(41),
              np.random.default_rng(1), beta0=0.9, n_batches=5, history=history)
    betas = [b for b, _ in history]
    assert all(b2 < b1 for b1, b2 in zip(betas, betas[1:]))


def test_tune_beta_rejects_bad_target(small_basis):
    with pytest.raises(ParameterError):
        tune_beta(1.0, zero_potential, small_basis, np.zeros(41), np.random.default_rng(0))


def test_config_validation():
    with pytest.raises(ParameterError):
        PcnConfig(1.5, 10)
    with pytest.raises(ParameterError):
        HybridConfig(beta=0.5, J=2, n_prerun=1, n_samples=10)
    with pytest.raises(ParameterError):
        HybridConfig(beta=0.5, J=0, n_prerun=10, n_samples=10)
