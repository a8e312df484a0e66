"""Autocorrelation, effective sample size and adaptation monitors."""
from __future__ import annotations

import numpy as np

from .errors import ParameterError, ZeroVarianceError

ACF_ESTIMATOR = "biased (divide-by-n), FFT"
ESS_TRUNCATION = "Geyer initial positive sequence"


def _acf_columns(y: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased autocorrelation of each column of ``y`` up to ``max_lag``."""
    n = y.shape[0]
    centered = y - y.mean(axis=0)
    size = 1 << int(2 * n - 1).bit_length()
    f = np.fft.rfft(centered, n=size, axis=0)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=0)[: max_lag + 1]
    var = acov[0]
    if np.any(var <= 0.0):
        raise ZeroVarianceError("series has zero variance")
    return acov / var


def autocorrelation(series, max_lag: int) -> np.ndarray:
    """``rho_0 .. rho_max_lag`` with the biased estimator."""
    y = np.asarray(series, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise ParameterError("series must be a non-empty 1-D array")
    if not np.all(np.isfinite(y)):
        raise ParameterError("series contains non-finite values")
    if not 0 <= max_lag < y.size:
        raise ParameterError(f"max_lag must lie in [0, {y.size - 1}], got {max_lag}")
    return _acf_columns(y[:, None], max_lag)[:, 0]


def _geyer_tau(rho: np.ndarray) -> float:
    n_pairs = rho.size // 2
    pairs = rho[: 2 * n_pairs : 2] + rho[1 : 2 * n_pairs : 2]
    bad = np.nonzero(pairs <= 0.0)[0]
    m = bad[0] if bad.size else n_pairs
    # pairs 0..m-1 are kept; pair 0 contains rho_0 = 1
    return -1.0 + 2.0 * float(pairs[:m].sum()) if m > 0 else 1.0


def effective_sample_size(series) -> float:
    """ESS ``n / (1 + 2 sum rho_k)`` truncated by Geyer's initial positive sequence."""
    y = np.asarray(series, dtype=float)
    if y.ndim != 1 or y.size < 2:
        raise ParameterError("series must be a 1-D array with at least 2 entries")
    rho = _acf_columns(y[:, None], y.size - 1)[:, 0]
    return y.size / _geyer_tau(rho)


def ess_columns(samples: np.ndarray, chunk: int = 16) -> np.ndarray:
    """ESS of every column of a ``(n, p)`` sample matrix."""
    samples = np.asarray(samples, dtype=float)
    n, p = samples.shape
    out = np.empty(p)
    for start in range(0, p, chunk):
        rho = _acf_columns(samples[:, start : start + chunk], n - 1)
        for k in range(rho.shape[1]):
            out[start + k] = n / _geyer_tau(rho[:, k])
    return out


def acf_columns(samples: np.ndarray, max_lag: int, chunk: int = 16) -> np.ndarray:
    """Autocorrelations ``(max_lag + 1, p)`` of every column."""
    samples = np.asarray(samples, dtype=float)
    parts = [_acf_columns(samples[:, s : s + chunk], max_lag) for s in range(0, samples.shape[1], chunk)]
    return np.concatenate(parts, axis=1)


def ess_per_100(ess, n: int):
    return np.asarray(ess) * 100.0 / n


def pointwise_moments(chain) -> tuple[np.ndarray, np.ndarray]:
    """Per-grid-point mean and unbiased variance of the stored states.

    Accepts a :class:`~hybridmcmc.samplers.Chain` or a raw state matrix.
    """
    states = getattr(chain, "states", chain)
    states = np.asarray(states, dtype=float)
    if states.shape[0] == 0:
        raise ParameterError("chain has no stored states")
    var = states.var(axis=0, ddof=1) if states.shape[0] > 1 else np.zeros(states.shape[1])
    return states.mean(axis=0), var


def adaptation_decay(snapshot_iterations, sigma_snapshots) -> np.ndarray:
    """Scaled per-step covariance change ``n * ||S_n - S_n'||_F / (n' - n)``."""
    iters = np.asarray(snapshot_iterations, dtype=float)
    snaps = np.asarray(sigma_snapshots, dtype=float)
    if iters.size < 2:
        raise ParameterError("need at least two snapshots")
    diffs = np.linalg.norm(np.diff(snaps, axis=0), axis=(1, 2))
    return iters[:-1] * diffs / np.diff(iters)


def adaptation_trend_ok(decay, factor: float = 2.0) -> bool:
    """True when the last-quartile maximum is at most ``factor`` times the first-quartile maximum."""
    decay = np.asarray(decay, dtype=float)
    q = max(1, decay.size // 4)
    first, last = decay[:q].max(), decay[-q:].max()
    return bool(last <= factor * first) if first > 0 else bool(last == 0)
