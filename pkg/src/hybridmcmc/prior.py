"""Matérn Gaussian priors on a uniform 1-D grid and their Karhunen-Loève basis.

Fields are plain ``numpy`` arrays holding values at the grid points. Inner
products use trapezoidal quadrature, ``<f, g>_W = sum_k w_k f_k g_k``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gamma, kv

from .errors import ContractViolation, DegeneratePriorError, ParameterError


@dataclass(frozen=True)
class Grid:
    points: np.ndarray
    weights: np.ndarray

    @classmethod
    def uniform(cls, n: int, length: float = 1.0) -> "Grid":
        """Uniform grid of ``n`` points on ``[0, length]`` with trapezoid weights."""
        if n < 2:
            raise ParameterError(f"grid needs at least 2 points, got {n}")
        if length <= 0:
            raise ParameterError(f"grid length must be positive, got {length}")
        points = np.linspace(0.0, length, n)
        h = length / (n - 1)
        weights = np.full(n, h)
        weights[0] = weights[-1] = h / 2
        points.flags.writeable = False
        weights.flags.writeable = False
        return cls(points, weights)

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def length(self) -> float:
        return float(self.points[-1] - self.points[0])

    @property
    def spacing(self) -> float:
        return self.length / (self.size - 1)

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(np.dot(self.weights * f, g))

    def norm(self, f: np.ndarray) -> float:
        return float(np.sqrt(np.dot(self.weights * f, f)))


@dataclass(frozen=True)
class MaternParams:
    sigma: float = 1.0
    ell: float = 1.0
    nu: float = 2.5

    def __post_init__(self):
        for name in ("sigma", "ell", "nu"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ParameterError(f"Matérn {name} must be positive, got {value}")


def matern(d, params: MaternParams):
    """Matérn covariance as a function of distance ``d``.

    Half-integer orders 1/2, 3/2 and 5/2 use their closed forms; any other
    order goes through the modified Bessel function of the second kind.
    """
    d = np.abs(np.asarray(d, dtype=float))
    s2, ell, nu = params.sigma**2, params.ell, params.nu
    if nu == 2.5:
        r = np.sqrt(5.0) * d / ell
        return s2 * (1.0 + r + r * r / 3.0) * np.exp(-r)
    if nu == 1.5:
        r = np.sqrt(3.0) * d / ell
        return s2 * (1.0 + r) * np.exp(-r)
    if nu == 0.5:
        return s2 * np.exp(-d / ell)
    r = np.sqrt(2.0 * nu) * d / ell
    with np.errstate(invalid="ignore"):
        k = s2 * 2.0 ** (1.0 - nu) / gamma(nu) * r**nu * kv(nu, r)
    return np.where(r == 0.0, s2, k)


def build_matern_covariance(grid: Grid, params: MaternParams) -> np.ndarray:
    d = np.abs(grid.points[:, None] - grid.points[None, :])
    cov = matern(d, params)
    # exact symmetry regardless of floating-point evaluation order
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class KLBasis:
    """Eigenpairs of a discretized covariance operator.

    ``modes[j]`` holds the grid values of the j-th eigenfunction; the modes are
    orthonormal in the weighted inner product of ``grid``.
    """

    eigenvalues: np.ndarray
    modes: np.ndarray
    grid: Grid
    weighted_modes: np.ndarray = field(init=False, repr=False)
    sqrt_eigenvalues: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "weighted_modes", self.modes * self.grid.weights)
        object.__setattr__(self, "sqrt_eigenvalues", np.sqrt(self.eigenvalues))
        for arr in (self.eigenvalues, self.modes, self.weighted_modes, self.sqrt_eigenvalues):
            arr.flags.writeable = False

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    def to_csv(self, path) -> None:
        """One row per mode: index, eigenvalue, then grid values."""
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "eigenvalue"] + [f"x{k}" for k in range(self.grid.size)])
            for j, (alpha, mode) in enumerate(zip(self.eigenvalues, self.modes)):
                writer.writerow([j + 1, f"{alpha:.17g}"] + [f"{v:.17g}" for v in mode])


def kl_decompose(cov: np.ndarray, grid: Grid) -> KLBasis:
    cov = np.asarray(cov, dtype=float)
    n = grid.size
    if cov.shape != (n, n):
        raise ContractViolation(f"covariance shape {cov.shape} does not match grid size {n}")
    if np.max(np.abs(cov - cov.T)) > 1e-10:
        raise ContractViolation("covariance matrix is not symmetric")
    sw = np.sqrt(grid.weights)
    vals, vecs = np.linalg.eigh(sw[:, None] * cov * sw[None, :])
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    modes = (vecs[:, order] / sw[:, None]).T
    # fix the sign so each mode starts non-negative where it is non-zero
    signs = np.sign(modes[np.arange(n), np.argmax(np.abs(modes) > 1e-12, axis=1)])
    signs[signs == 0] = 1.0
    modes = np.ascontiguousarray(modes * signs[:, None])
    return KLBasis(vals, modes, grid)


def sample_prior(basis: KLBasis, rng: np.random.Generator) -> np.ndarray:
    xi = rng.standard_normal(basis.size)
    return (basis.sqrt_eigenvalues * xi) @ basis.modes


def project(u: np.ndarray, basis: KLBasis, J: int | None = None) -> np.ndarray:
    """Coefficients ``(<u, e_1>_W, ..., <u, e_J>_W)``."""
    if J is None:
        J = basis.size
    if not 1 <= J <= basis.size:
        raise ParameterError(f"J must lie in [1, {basis.size}], got {J}")
    return basis.weighted_modes[:J] @ u


def reconstruct(coeffs: np.ndarray, basis: KLBasis) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    return coeffs @ basis.modes[: coeffs.size]


def select_J(eigenvalues, rho: float) -> int:
    """Smallest J whose leading eigenvalues carry more than ``rho`` of the trace."""
    if not 0.0 < rho < 1.0:
        raise ParameterError(f"rho must lie in (0, 1), got {rho}")
    alpha = np.asarray(eigenvalues, dtype=float)
    total = alpha.sum()
    if total <= 0.0:
        raise DegeneratePriorError("all eigenvalues are zero")
    ratios = np.cumsum(alpha) / total
    above = np.nonzero(ratios > rho)[0]
    return int(above[0]) + 1 if above.size else alpha.size


def matern_prior(n_points: int, params: MaternParams, length: float = 1.0) -> KLBasis:
    """Convenience: grid, Matérn covariance and KL basis in one call."""
    grid = Grid.uniform(n_points, length)
    return kl_decompose(build_matern_covariance(grid, params), grid)
