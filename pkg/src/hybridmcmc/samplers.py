"""pCN and hybrid adaptive samplers on a Karhunen-Loève basis.

The hybrid sampler runs an adaptive Metropolis random walk on the leading
``J`` KL coefficients and a pCN move on the remaining ones. Its proposal
covariance on the leading block is the regularized running covariance of
the chain history, updated with every state whose norm stays below ``R``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import (
    AdaptationError,
    ConfigurationError,
    NonFinitePotential,
    ParameterError,
    StartupError,
)
from .prior import KLBasis, project

log = logging.getLogger(__name__)

Potential = Callable[[np.ndarray], float]

DEFAULT_DELTA_REG = 1e-8


def beta_from_delta(delta: float) -> float:
    """pCN step size for a Crank-Nicolson time step ``delta`` in (0, 2]."""
    if not 0.0 < delta <= 2.0:
        raise ParameterError(f"delta must lie in (0, 2], got {delta}")
    return math.sqrt(8.0 * delta) / (2.0 + delta)


def default_R(basis: KLBasis) -> float:
    """Ten prior standard deviations in the grid norm."""
    return 10.0 * math.sqrt(float(basis.eigenvalues.sum()))


def _check_beta(beta: float) -> None:
    if not 0.0 <= beta <= 1.0:
        raise ParameterError(f"beta must lie in [0, 1], got {beta}")


@dataclass(frozen=True)
class PcnConfig:
    beta: float
    n_samples: int
    seed: int | None = None
    thin: int = 1

    def __post_init__(self):
        _check_beta(self.beta)
        if self.n_samples < 1:
            raise ParameterError("n_samples must be positive")
        if self.thin < 1:
            raise ParameterError("thin must be positive")


@dataclass(frozen=True)
class HybridConfig:
    """Settings for the hybrid adaptive chain.

    ``prerun_beta`` is the pCN step used in the warm start; it defaults to
    ``beta``. Setting ``fixed_sigma`` skips both the pre-run and adaptation
    and proposes with that matrix throughout.
    """

    beta: float
    J: int
    n_prerun: int
    n_samples: int
    delta_reg: float = DEFAULT_DELTA_REG
    R: float | None = None
    seed: int | None = None
    prerun_beta: float | None = None
    diagonal: bool = False
    snapshot_stride: int = 1000
    thin: int = 1
    fixed_sigma: np.ndarray | None = None

    def __post_init__(self):
        _check_beta(self.beta)
        if self.prerun_beta is not None:
            _check_beta(self.prerun_beta)
        if self.J < 1:
            raise ParameterError(f"J must be at least 1, got {self.J}")
        if self.fixed_sigma is None and self.n_prerun < 2:
            raise ParameterError("n_prerun must be at least 2")
        if self.n_samples < 1:
            raise ParameterError("n_samples must be positive")
        if self.delta_reg < 0:
            raise ParameterError("delta_reg must be non-negative")
        if self.snapshot_stride < 1 or self.thin < 1:
            raise ParameterError("snapshot_stride and thin must be positive")


@dataclass(frozen=True)
class AdaptState:
    """Running mean and scatter of projected coefficients.

    ``sigma_hat`` equals ``scatter / (count - 1) + delta_reg * I`` (only the
    diagonal of the scatter when ``diagonal`` is set) and is ``None`` until
    two samples have been absorbed.
    """

    count: int
    running_mean: np.ndarray
    running_scatter: np.ndarray
    delta_reg: float
    R: float
    diagonal: bool = False
    sigma_hat: np.ndarray | None = None

    @classmethod
    def empty(cls, J: int, delta_reg: float, R: float, diagonal: bool = False) -> "AdaptState":
        return cls(0, np.zeros(J), np.zeros((J, J)), delta_reg, R, diagonal)


def _sigma_from_scatter(count, scatter, delta_reg, diagonal):
    if count < 2:
        return None
    cov = scatter / (count - 1)
    if diagonal:
        cov = np.diag(np.diag(cov))
    return cov + delta_reg * np.eye(cov.shape[0])


def update_adaptive_covariance(state: AdaptState, x_new: np.ndarray, u_norm: float) -> AdaptState:
    if u_norm >= state.R:
        return state
    x_new = np.asarray(x_new, dtype=float)
    if x_new.shape != state.running_mean.shape:
        raise ParameterError(f"expected {state.running_mean.size} coefficients, got {x_new.shape}")
    count = state.count + 1
    d = x_new - state.running_mean
    mean = state.running_mean + d / count
    scatter = state.running_scatter + np.outer(d, x_new - mean)
    scatter = 0.5 * (scatter + scatter.T)
    sigma = _sigma_from_scatter(count, scatter, state.delta_reg, state.diagonal)
    return replace(state, count=count, running_mean=mean, running_scatter=scatter, sigma_hat=sigma)


def pcn_propose(u: np.ndarray, beta: float, basis: KLBasis, rng: np.random.Generator) -> np.ndarray:
    xi = rng.standard_normal(basis.size)
    w = (basis.sqrt_eigenvalues * xi) @ basis.modes
    return math.sqrt(1.0 - beta * beta) * u + beta * w


def pcn_log_acceptance(phi_u: float, phi_v: float) -> float:
    """Log of the pCN acceptance ratio; raises when ``phi_v`` is not finite."""
    if not math.isfinite(phi_v):
        raise NonFinitePotential(f"proposal potential is {phi_v}")
    return phi_u - phi_v


def _cholesky(sigma: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise AdaptationError("adapted covariance is not positive definite") from exc


def hybrid_propose(
    u: np.ndarray,
    beta: float,
    sigma_hat: np.ndarray,
    basis: KLBasis,
    J: int,
    rng: np.random.Generator,
    chol: np.ndarray | None = None,
) -> np.ndarray:
    """Random walk on the leading ``J`` coefficients, pCN on the rest.

    ``chol`` may carry a precomputed lower Cholesky factor of ``sigma_hat``.
    """
    if chol is None:
        chol = _cholesky(sigma_hat)
    u_plus = project(u, basis, J) @ basis.modes[:J]
    u_minus = u - u_plus
    xi = rng.standard_normal(basis.size)
    w_plus = (chol @ xi[:J]) @ basis.modes[:J]
    w_minus = (basis.sqrt_eigenvalues[J:] * xi[J:]) @ basis.modes[J:]
    return u_plus + beta * w_plus + math.sqrt(1.0 - beta * beta) * u_minus + beta * w_minus


def _check_leading_eigenvalues(basis: KLBasis, J: int) -> None:
    if J > basis.size:
        raise ConfigurationError(f"J = {J} exceeds the basis size {basis.size}")
    if np.any(basis.eigenvalues[:J] <= 0.0):
        raise ConfigurationError(f"J = {J} reaches zero eigenvalues of the discrete prior")


def hybrid_log_acceptance(u, v, phi_u, phi_v, basis: KLBasis, J: int, x_u=None, x_v=None) -> float:
    """Log acceptance ratio of the hybrid proposal.

    ``x_u`` and ``x_v`` may carry already-computed leading coefficients.
    """
    _check_leading_eigenvalues(basis, J)
    if not math.isfinite(phi_v):
        raise NonFinitePotential(f"proposal potential is {phi_v}")
    if x_u is None:
        x_u = project(u, basis, J)
    if x_v is None:
        x_v = project(v, basis, J)
    alpha = basis.eigenvalues[:J]
    return phi_u - phi_v + 0.5 * float(np.sum((x_u * x_u - x_v * x_v) / alpha))


@dataclass
class Chain:
    states: np.ndarray
    iterations: np.ndarray
    log_potentials: np.ndarray
    accept_count: int
    proposal_count: int
    beta: float
    J: int | None = None
    prerun_accept_count: int = 0
    prerun_proposal_count: int = 0
    nonfinite_count: int = 0
    snapshot_iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    sigma_snapshots: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 0)))

    @property
    def acceptance_rate(self) -> float:
        return self.accept_count / self.proposal_count if self.proposal_count else float("nan")

    @property
    def prerun_acceptance_rate(self) -> float:
        if not self.prerun_proposal_count:
            return float("nan")
        return self.prerun_accept_count / self.prerun_proposal_count


def _evaluate(potential: Potential, u: np.ndarray) -> float:
    try:
        return float(potential(u))
    except (ArithmeticError, np.linalg.LinAlgError):
        return float("nan")


class _Recorder:
    """Preallocated storage for the thinned chain."""

    def __init__(self, n_steps: int, n_points: int, thin: int):
        size = n_steps // thin
        self.thin = thin
        self.states = np.empty((size, n_points))
        self.iterations = np.empty(size, dtype=np.int64)
        self.phis = np.empty(size)
        self.k = 0

    def __call__(self, step: int, u: np.ndarray, phi: float) -> None:
        if step % self.thin == 0:
            self.states[self.k] = u
            self.iterations[self.k] = step
            self.phis[self.k] = phi
            self.k += 1


def _accept(log_a: float, rng: np.random.Generator) -> bool:
    theta = rng.random()
    return log_a >= 0.0 or theta <= math.exp(log_a)


def _pcn_step(u, phi_u, beta, basis, potential, rng):
    v = pcn_propose(u, beta, basis, rng)
    phi_v = _evaluate(potential, v)
    try:
        log_a = pcn_log_acceptance(phi_u, phi_v)
    except NonFinitePotential:
        log.warning("non-finite potential in pCN proposal; rejecting")
        rng.random()
        return u, phi_u, False, True
    if _accept(log_a, rng):
        return v, phi_v, True, False
    return u, phi_u, False, False


def _hybrid_step(u, x_u, phi_u, beta, chol, basis, J, potential, rng):
    v = hybrid_propose(u, beta, None, basis, J, rng, chol=chol)
    phi_v = _evaluate(potential, v)
    x_v = project(v, basis, J)
    try:
        log_a = hybrid_log_acceptance(u, v, phi_u, phi_v, basis, J, x_u=x_u, x_v=x_v)
    except NonFinitePotential:
        log.warning("non-finite potential in hybrid proposal; rejecting")
        rng.random()
        return u, x_u, phi_u, False, True
    if _accept(log_a, rng):
        return v, x_v, phi_v, True, False
    return u, x_u, phi_u, False, False


def _initial_potential(potential, initial):
    phi = _evaluate(potential, initial)
    if not math.isfinite(phi):
        raise StartupError("potential of the initial state is not finite")
    return phi


def run_pcn_chain(
    config: PcnConfig,
    potential: Potential,
    basis: KLBasis,
    initial: np.ndarray,
    rng: np.random.Generator | None = None,
) -> Chain:
    if rng is None:
        rng = np.random.default_rng(config.seed)
    u = np.array(initial, dtype=float)
    phi_u = _initial_potential(potential, u)
    rec = _Recorder(config.n_samples, basis.grid.size, config.thin)
    accepted = nonfinite = 0
    for step in range(1, config.n_samples + 1):
        u, phi_u, acc, bad = _pcn_step(u, phi_u, config.beta, basis, potential, rng)
        accepted += acc
        nonfinite += bad
        rec(step, u, phi_u)
    return Chain(
        states=rec.states,
        iterations=rec.iterations,
        log_potentials=rec.phis,
        accept_count=accepted,
        proposal_count=config.n_samples,
        beta=config.beta,
        nonfinite_count=nonfinite,
    )


def _seed_adaptation(config, potential, basis, u, phi_u, rng, R):
    """pCN warm start; each pre-run state passes through the adaptation gate."""
    state = AdaptState.empty(config.J, config.delta_reg, R, config.diagonal)
    beta = config.beta if config.prerun_beta is None else config.prerun_beta
    accepted = nonfinite = 0
    for _ in range(config.n_prerun):
        u, phi_u, acc, bad = _pcn_step(u, phi_u, beta, basis, potential, rng)
        accepted += acc
        nonfinite += bad
        state = update_adaptive_covariance(state, project(u, basis, config.J), basis.grid.norm(u))
    if state.count < 2:
        raise StartupError(
            f"only {state.count} pre-run states have norm below R = {R:g}; increase R"
        )
    return u, phi_u, state, accepted, nonfinite


def run_hybrid_chain(
    config: HybridConfig,
    potential: Potential,
    basis: KLBasis,
    initial: np.ndarray,
    rng: np.random.Generator | None = None,
) -> Chain:
    if rng is None:
        rng = np.random.default_rng(config.seed)
    J = config.J
    _check_leading_eigenvalues(basis, J)
    R = default_R(basis) if config.R is None else config.R
    u = np.array(initial, dtype=float)
    phi_u = _initial_potential(potential, u)

    adapt = config.fixed_sigma is None
    pre_acc = pre_bad = 0
    if adapt:
        u, phi_u, state, pre_acc, pre_bad = _seed_adaptation(config, potential, basis, u, phi_u, rng, R)
        sigma = state.sigma_hat
        offset = config.n_prerun
    else:
        sigma = np.asarray(config.fixed_sigma, dtype=float)
        if sigma.shape != (J, J):
            raise ConfigurationError(f"fixed_sigma must be {J}x{J}")
        offset = 0
    chol = _cholesky(sigma)

    snap_iters = [offset]
    snaps = [sigma.copy()]
    rec = _Recorder(config.n_samples, basis.grid.size, config.thin)
    x_u = project(u, basis, J)
    accepted = nonfinite = 0
    for step in range(1, config.n_samples + 1):
        u, x_u, phi_u, acc, bad = _hybrid_step(u, x_u, phi_u, config.beta, chol, basis, J, potential, rng)
        accepted += acc
        nonfinite += bad
        if adapt:
            new_state = update_adaptive_covariance(state, x_u, basis.grid.norm(u))
            if new_state is not state:
                state = new_state
                chol = _cholesky(state.sigma_hat)
        rec(step, u, phi_u)
        if step % config.snapshot_stride == 0:
            snap_iters.append(offset + step)
            snaps.append(state.sigma_hat.copy() if adapt else sigma.copy())
    return Chain(
        states=rec.states,
        iterations=rec.iterations + offset,
        log_potentials=rec.phis,
        accept_count=accepted,
        proposal_count=config.n_samples,
        beta=config.beta,
        J=J,
        prerun_accept_count=pre_acc,
        prerun_proposal_count=config.n_prerun if adapt else 0,
        nonfinite_count=nonfinite + pre_bad,
        snapshot_iterations=np.asarray(snap_iters, dtype=np.int64),
        sigma_snapshots=np.asarray(snaps),
    )


def tune_beta(
    target_rate: float,
    potential: Potential,
    basis: KLBasis,
    initial: np.ndarray,
    rng: np.random.Generator,
    config: HybridConfig | None = None,
    *,
    beta0: float = 0.5,
    n_batches: int = 50,
    batch_size: int = 200,
    history: list | None = None,
) -> float:
    """Find a step size giving roughly ``target_rate`` acceptance.

    Runs a throwaway chain; after each batch the step is multiplied by
    ``exp(rate - target_rate)`` and clamped to ``[1e-4, 1]``. With ``config``
    the hybrid chain is tuned (pre-run and adaptation included), otherwise
    plain pCN. ``history``, if given, receives ``(beta, rate)`` per batch.
    """
    if not 0.0 < target_rate < 1.0:
        raise ParameterError(f"target_rate must lie in (0, 1), got {target_rate}")
    beta = float(np.clip(beta0, 1e-4, 1.0))
    u = np.array(initial, dtype=float)
    phi_u = _initial_potential(potential, u)

    if config is None:
        def step(u, phi_u, beta):
            u, phi_u, acc, _ = _pcn_step(u, phi_u, beta, basis, potential, rng)
            return u, phi_u, acc
    else:
        J = config.J
        _check_leading_eigenvalues(basis, J)
        R = default_R(basis) if config.R is None else config.R
        u, phi_u, state, _, _ = _seed_adaptation(config, potential, basis, u, phi_u, rng, R)
        ctx = {"state": state, "chol": _cholesky(state.sigma_hat), "x": project(u, basis, J)}

        def step(u, phi_u, beta):
            u, ctx["x"], phi_u, acc, _ = _hybrid_step(
                u, ctx["x"], phi_u, beta, ctx["chol"], basis, J, potential, rng
            )
            new_state = update_adaptive_covariance(ctx["state"], ctx["x"], basis.grid.norm(u))
            if new_state is not ctx["state"]:
                ctx["state"] = new_state
                ctx["chol"] = _cholesky(new_state.sigma_hat)
            return u, phi_u, acc

    for _ in range(n_batches):
        accepted = 0
        for _ in range(batch_size):
            u, phi_u, acc = step(u, phi_u, beta)
            accepted += acc
        rate = accepted / batch_size
        if history is not None:
            history.append((beta, rate))
        beta = float(np.clip(beta * math.exp(rate - target_rate), 1e-4, 1.0))
    return beta
