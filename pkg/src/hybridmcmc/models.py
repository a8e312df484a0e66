"""Benchmark potentials: a quadratic Gaussian example, an ODE decay-rate
problem and a heat-equation Robin-coefficient problem."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid
from numba import njit

from .errors import ParameterError
from .prior import Grid, KLBasis, project


# -- Gaussian example -------------------------------------------------------

def build_gamma(K: int, Delta: float) -> np.ndarray:
    if K < 1:
        raise ParameterError(f"K must be at least 1, got {K}")
    if Delta <= 0:
        raise ParameterError(f"Delta must be positive, got {Delta}")
    idx = np.arange(K)
    return np.exp(-((idx[:, None] - idx[None, :]) ** 2) / Delta)


@dataclass(frozen=True)
class GaussianPotentialSpec:
    """Quadratic potential ``0.5 x^T Gamma x`` on scaled leading KL coefficients.

    ``x_i = scale * <u, e_i>_W``. With ``scale = 1 / sqrt(h)`` the coefficients
    are those of unit-Euclidean-norm grid eigenvectors, which is the regime in
    which ``Delta`` controls the posterior correlation between modes; with
    ``scale = 1`` the potential barely informs any mode beyond the first two.
    """

    K: int
    Delta: float
    scale: float = 1.0
    Gamma: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "Gamma", build_gamma(self.K, self.Delta))


def grid_coefficient_scale(grid: Grid) -> float:
    return 1.0 / float(np.sqrt(grid.spacing))


def phi_gaussian(u: np.ndarray, spec: GaussianPotentialSpec, basis: KLBasis) -> float:
    x = spec.scale * project(u, basis, spec.K)
    return 0.5 * float(x @ spec.Gamma @ x)


def gaussian_posterior_covariance(spec: GaussianPotentialSpec, basis: KLBasis) -> np.ndarray:
    """Exact posterior covariance ``(D^-1 + Gamma)^-1`` of the leading K coefficients.

    Expressed in unscaled coordinates ``<u, e_i>_W``; ``D`` holds the prior
    variances of the scaled coefficients. The posterior mean is zero and the
    remaining coefficients keep their prior law.
    """
    alpha = basis.eigenvalues[: spec.K]
    if np.any(alpha <= 0):
        raise ParameterError("K reaches zero eigenvalues of the discrete prior")
    d = spec.scale**2 * alpha
    return np.linalg.inv(np.diag(1.0 / d) + spec.Gamma) / spec.scale**2


# -- observations and misfit ------------------------------------------------

@dataclass(frozen=True)
class ObservationSet:
    times: np.ndarray
    values: np.ndarray
    noise_sd: float

    def __post_init__(self):
        if self.times.shape != self.values.shape:
            raise ParameterError("times and values must have the same length")
        if np.any(np.diff(self.times) <= 0):
            raise ParameterError("observation times must be strictly increasing")
        if not self.noise_sd > 0:
            raise ParameterError("noise_sd must be positive")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "value"])
            for t, y in zip(self.times, self.values):
                writer.writerow([f"{t:.17g}", f"{y:.17g}"])

    @classmethod
    def from_csv(cls, path, noise_sd: float) -> "ObservationSet":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], noise_sd)


def phi_misfit(predicted, data: ObservationSet, halved: bool = True) -> float:
    """Gaussian negative log-likelihood up to a constant.

    ``halved=False`` drops the factor 1/2 in front of the squared norm.
    """
    predicted = np.asarray(predicted, dtype=float)
    if predicted.shape != data.values.shape:
        raise ParameterError(f"predicted shape {predicted.shape} != data shape {data.values.shape}")
    r = (predicted - data.values) / data.noise_sd
    value = float(r @ r)
    return 0.5 * value if halved else value


# -- ODE model ---------------------------------------------------------------

def solve_ode(u: np.ndarray, grid: Grid, x0: float, obs_times) -> np.ndarray:
    """Solution of ``dx/dt = -u(t) x(t)`` at ``obs_times``.

    The field grid doubles as the time axis. The exponent is the cumulative
    trapezoid integral of ``u``; values between grid points are interpolated
    linearly.
    """
    integral = cumulative_trapezoid(u, grid.points, initial=0.0)
    x = x0 * np.exp(-integral)
    return np.interp(obs_times, grid.points, x)


@dataclass(frozen=True)
class OdeModelSpec:
    T: float = 1.0
    x0: float = 1.0
    n_obs: int = 50

    @property
    def obs_times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_obs + 1)

    def forward(self, u: np.ndarray, grid: Grid) -> np.ndarray:
        return solve_ode(u, grid, self.x0, self.obs_times)


# -- heat equation with Robin boundaries ------------------------------------

def _g(x):
    return x * x + 1.0


def _h0(t):
    return t * (2.0 * t + 1.0)


def _h1(t):
    return 2.0 + t * (2.0 * t + 2.0)


@dataclass(frozen=True)
class HeatModelSpec:
    """``u_t = u_xx`` on ``[0, L] x [0, T]`` with Robin data ``h0``, ``h1``.

    ``nx`` and ``nt`` count space intervals and time steps. The sensor sits at
    ``x = 0`` and is read every ``T / n_obs``, including ``t = 0``.
    """

    L: float = 1.0
    T: float = 1.0
    nx: int = 100
    nt: int = 200
    n_obs: int = 200
    g: Callable = _g
    h0: Callable = _h0
    h1: Callable = _h1

    def __post_init__(self):
        if self.nx < 2 or self.nt < 2:
            raise ParameterError("nx and nt must be at least 2")
        if self.nt % self.n_obs:
            raise ParameterError(f"n_obs = {self.n_obs} must divide nt = {self.nt}")

    @property
    def obs_times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_obs + 1)

    def forward(self, rho: np.ndarray, grid: Grid) -> np.ndarray:
        return solve_heat_robin(rho, self, grid)


@njit(cache=True)
def _crank_nicolson_robin(u, rho_t, h0, h1, dx, dt):
    nx = u.size - 1
    nt = rho_t.size - 1
    half = 0.5 * dt / (dx * dx)
    sensor = np.empty(nt + 1)
    sensor[0] = u[0]
    rhs = np.empty(nx + 1)
    diag = np.empty(nx + 1)
    sup = np.empty(nx + 1)
    for n in range(nt):
        d_old = -2.0 * half * (1.0 + dx * rho_t[n])
        d_new = -2.0 * half * (1.0 + dx * rho_t[n + 1])
        rhs[0] = u[0] + d_old * u[0] + 2.0 * half * u[1] + (dt / dx) * (h0[n] + h0[n + 1])
        for i in range(1, nx):
            rhs[i] = u[i] + half * (u[i - 1] - 2.0 * u[i] + u[i + 1])
        rhs[nx] = u[nx] + d_old * u[nx] + 2.0 * half * u[nx - 1] + (dt / dx) * (h1[n] + h1[n + 1])
        # Thomas sweep on the left-hand matrix I - dt/2 A(t_{n+1})
        diag[0] = 1.0 - d_new
        sup[0] = -2.0 * half
        if diag[0] == 0.0:
            sensor[n + 1:] = np.nan
            return sensor
        for i in range(1, nx + 1):
            low = -2.0 * half if i == nx else -half
            d_i = (1.0 - d_new) if i == nx else (1.0 + 2.0 * half)
            m = low / diag[i - 1]
            diag[i] = d_i - m * sup[i - 1]
            if diag[i] == 0.0:
                sensor[n + 1:] = np.nan
                return sensor
            sup[i] = -half
            rhs[i] -= m * rhs[i - 1]
        u[nx] = rhs[nx] / diag[nx]
        for i in range(nx - 1, -1, -1):
            u[i] = (rhs[i] - sup[i] * u[i + 1]) / diag[i]
        sensor[n + 1] = u[0]
    return sensor


def solve_heat_sensor(rho_t: np.ndarray, spec: HeatModelSpec) -> np.ndarray:
    """Sensor trace ``u(0, t_n)`` for ``n = 0..nt`` given ``rho`` at the solver times.

    Crank-Nicolson in time, central differences in space, Robin conditions
    through ghost nodes. Returns NaNs when a step matrix is singular.
    """
    x = np.linspace(0.0, spec.L, spec.nx + 1)
    t = np.linspace(0.0, spec.T, spec.nt + 1)
    h0 = np.asarray(spec.h0(t), dtype=float) * np.ones_like(t)
    h1 = np.asarray(spec.h1(t), dtype=float) * np.ones_like(t)
    u = np.asarray(spec.g(x), dtype=float) * np.ones_like(x)
    rho_t = np.ascontiguousarray(rho_t, dtype=float)
    return _crank_nicolson_robin(u, rho_t, h0, h1, spec.L / spec.nx, spec.T / spec.nt)


def solve_heat_robin(rho: np.ndarray, spec: HeatModelSpec, grid: Grid) -> np.ndarray:
    """Sensor readings at the observation times for a Robin coefficient field.

    ``rho`` lives on ``grid``, read as time points on ``[0, T]``; it is
    interpolated linearly onto the solver time steps.
    """
    t = np.linspace(0.0, spec.T, spec.nt + 1)
    rho_t = np.interp(t, grid.points * (spec.T / grid.length), rho)
    sensor = solve_heat_sensor(rho_t, spec)
    return sensor[:: spec.nt // spec.n_obs]


def simulate_data(truth: np.ndarray, forward: Callable[[np.ndarray], np.ndarray], times,
                  noise_sd: float, rng: np.random.Generator) -> ObservationSet:
    """Noisy synthetic observations of ``forward(truth)``; ``noise_sd = 0`` gives the clean output."""
    clean = np.asarray(forward(truth), dtype=float)
    if noise_sd < 0:
        raise ParameterError("noise_sd must be non-negative")
    noise = rng.standard_normal(clean.shape)
    values = clean + noise_sd * noise
    # ObservationSet needs a positive sd; a noiseless set carries a tiny placeholder
    return ObservationSet(np.asarray(times, dtype=float), values, noise_sd if noise_sd > 0 else 1e-300)


def make_misfit_potential(forward: Callable[[np.ndarray], np.ndarray], data: ObservationSet,
                          halved: bool = True) -> Callable[[np.ndarray], float]:
    def potential(u: np.ndarray) -> float:
        return phi_misfit(forward(u), data, halved)

    return potential
