"""Run configured experiments and write chains, diagnostics and summaries.

Every random stream is derived from the master seed with a fixed key, so a
sampler's chain does not depend on which other samplers run alongside it:

* ``(seed, 100)`` truth field, ``(seed, 101)`` observation noise
* ``(seed, k, 0)`` chain and ``(seed, k, 1)`` tuning run of sampler ``k``
  (pcn = 0, hybrid = 1, diagonal = 2)
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import SAMPLERS, ExperimentConfig
from .diagnostics import (
    ACF_ESTIMATOR,
    ESS_TRUNCATION,
    acf_columns,
    adaptation_decay,
    adaptation_trend_ok,
    ess_columns,
    ess_per_100,
    pointwise_moments,
)
from .models import (
    GaussianPotentialSpec,
    HeatModelSpec,
    ObservationSet,
    OdeModelSpec,
    grid_coefficient_scale,
    make_misfit_potential,
    phi_gaussian,
    simulate_data,
)
from .prior import KLBasis, MaternParams, matern_prior, sample_prior, select_J
from .samplers import (
    Chain,
    HybridConfig,
    PcnConfig,
    default_R,
    run_hybrid_chain,
    run_pcn_chain,
    tune_beta,
)

log = logging.getLogger(__name__)

STREAM_KEYS = {name: k for k, name in enumerate(SAMPLERS)}
TRUTH_KEY, NOISE_KEY = 100, 101


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


@dataclass
class Problem:
    basis: KLBasis
    potential: object
    truth: np.ndarray | None = None
    data: ObservationSet | None = None


def build_problem(cfg: ExperimentConfig, truth_basis: KLBasis | None = None) -> Problem:
    """Prior basis, potential and (for ODE/heat models) synthetic truth and data.

    The truth is drawn on ``truth_basis`` when given, so the same data can be
    reused on a refined grid.
    """
    p, m = cfg.prior, cfg.model
    basis = matern_prior(p.grid_points, MaternParams(p.sigma, p.ell, p.nu), p.length)
    grid = basis.grid
    if m.kind == "gaussian":
        scale = grid_coefficient_scale(grid) if m.coefficients == "grid" else 1.0
        spec = GaussianPotentialSpec(m.K, m.Delta, scale)

        def potential(u):
            return phi_gaussian(u, spec, basis)

        return Problem(basis, potential)

    if m.kind == "ode":
        model = OdeModelSpec(T=m.T, x0=m.x0, n_obs=m.n_obs)
    else:
        model = HeatModelSpec(T=m.T, nx=m.nx, nt=m.nt, n_obs=m.n_obs)
    source = truth_basis or basis
    truth = sample_prior(source, stream(cfg.seed, TRUTH_KEY))
    data = simulate_data(truth, lambda u: model.forward(u, source.grid), model.obs_times,
                         m.noise_sd, stream(cfg.seed, NOISE_KEY))
    if source is not basis:
        truth = np.interp(grid.points, source.grid.points, truth)
    potential = make_misfit_potential(lambda u: model.forward(u, grid), data, m.halved_misfit)
    return Problem(basis, potential, truth, data)


def resolve_J(cfg: ExperimentConfig, basis: KLBasis) -> int | None:
    if cfg.sampler.J is not None:
        return cfg.sampler.J
    if cfg.sampler.rho is not None:
        return select_J(basis.eigenvalues, cfg.sampler.rho)
    return None


@dataclass
class SamplerRun:
    name: str
    chain: Chain
    beta: float
    prerun_beta: float | None
    wall_time: float


def _hybrid_config(cfg, name, beta, prerun_beta, J, n_samples=None):
    s = cfg.sampler
    return HybridConfig(
        beta=beta, J=J, n_prerun=s.n_prerun,
        n_samples=s.n_samples if n_samples is None else n_samples,
        delta_reg=s.delta_reg, R=s.R, prerun_beta=prerun_beta,
        diagonal=(name == "diagonal"), snapshot_stride=s.snapshot_stride,
    )


def run_samplers(cfg: ExperimentConfig, problem: Problem) -> dict[str, SamplerRun]:
    s = cfg.sampler
    basis = problem.basis
    initial = np.zeros(basis.grid.size)
    J = resolve_J(cfg, basis)
    tune = dict(n_batches=s.tune_batches, batch_size=s.tune_batch_size)

    beta_pcn = s.beta_pcn
    needs_pcn_beta = "pcn" in cfg.samplers or set(cfg.samplers) & {"hybrid", "diagonal"}
    if beta_pcn is None and needs_pcn_beta:
        beta_pcn = tune_beta(s.target_rate, problem.potential, basis, initial,
                             stream(cfg.seed, STREAM_KEYS["pcn"], 1), **tune)
        log.info("tuned pcn beta = %.4g", beta_pcn)

    runs = {}
    for name in cfg.samplers:
        key = STREAM_KEYS[name]
        if name == "pcn":
            t0 = time.perf_counter()
            chain = run_pcn_chain(PcnConfig(beta_pcn, s.n_samples + s.n_prerun), problem.potential,
                                  basis, initial, stream(cfg.seed, key, 0))
            runs[name] = SamplerRun(name, chain, beta_pcn, None, time.perf_counter() - t0)
            continue
        beta = getattr(s, f"beta_{name}")
        if beta is None:
            probe = _hybrid_config(cfg, name, 0.5, beta_pcn, J, n_samples=1)
            beta = tune_beta(s.target_rate, problem.potential, basis, initial,
                             stream(cfg.seed, key, 1), probe, **tune)
            log.info("tuned %s beta = %.4g", name, beta)
        t0 = time.perf_counter()
        chain = run_hybrid_chain(_hybrid_config(cfg, name, beta, beta_pcn, J), problem.potential,
                                 basis, initial, stream(cfg.seed, key, 0))
        runs[name] = SamplerRun(name, chain, beta, beta_pcn, time.perf_counter() - t0)
    return runs


# -- diagnostics --------------------------------------------------------------

@dataclass
class ChainDiagnostics:
    x: np.ndarray
    acf_lag: np.ndarray
    ess: np.ndarray
    ess_per_100: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    acf_table: np.ndarray
    acf_points: np.ndarray


def diagnose_states(states: np.ndarray, x: np.ndarray, acf_lag: int, points) -> ChainDiagnostics:
    n = states.shape[0]
    lag = min(acf_lag, n - 1)
    acf = acf_columns(states, lag)
    ess = ess_columns(states)
    mean, var = pointwise_moments(states)
    idx = np.array([int(np.argmin(np.abs(x - t))) for t in points], dtype=int)
    return ChainDiagnostics(x, acf[lag], ess, ess_per_100(ess, n), mean, var, acf[:, idx], x[idx])


def _fmt(a) -> str:
    return f"{a:.17g}"


def write_chain_csv(path, chain: Chain, x: np.ndarray, thin: int = 1) -> None:
    header = ",".join(["iteration", "phi"] + [f"u@{float(v)!r}" for v in x])
    sel = slice(None, None, thin)
    table = np.column_stack([chain.iterations[sel], chain.log_potentials[sel], chain.states[sel]])
    fmt = ["%d", "%.17g"] + ["%.17g"] * x.size
    np.savetxt(path, table, fmt=fmt, delimiter=",", header=header, comments="")


def read_chain_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(iterations, states, x)`` from a chain CSV."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    x = np.array([float(h.split("@", 1)[1]) for h in header[2:]])
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return table[:, 0].astype(np.int64), table[:, 2:], x


def write_diagnostics_csv(path, diag: ChainDiagnostics, lag: int) -> None:
    table = np.column_stack([diag.x, diag.acf_lag, diag.ess_per_100, diag.mean, diag.variance])
    np.savetxt(path, table, fmt="%.17g", delimiter=",", comments="",
               header=f"x,acf_lag{lag},ess_per_100,mean,variance")


def write_acf_csv(path, diag: ChainDiagnostics) -> None:
    lags = np.arange(diag.acf_table.shape[0])
    header = ",".join(["lag"] + [f"t={float(t)!r}" for t in diag.acf_points])
    table = np.column_stack([lags, diag.acf_table])
    np.savetxt(path, table, fmt=["%d"] + ["%.17g"] * diag.acf_points.size, delimiter=",",
               header=header, comments="")


def _write_field(path, x, values) -> None:
    np.savetxt(path, np.column_stack([x, values]), fmt="%.17g", delimiter=",",
               header="x,value", comments="")


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run every configured sampler and write the run directory.

    Returns the summary that is also written to ``summary.json``.
    """
    out = Path(out_dir or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()
    problem = build_problem(cfg)
    x = problem.basis.grid.points
    if problem.data is not None:
        problem.data.to_csv(out / "data.csv")
        _write_field(out / "truth.csv", x, problem.truth)

    runs = run_samplers(cfg, problem)
    lag = cfg.diagnostics.acf_lag
    per_sampler = {}
    diags = {}
    for name, run in runs.items():
        chain = run.chain
        diag = diagnose_states(chain.states, x, lag, cfg.diagnostics.acf_points)
        diags[name] = diag
        write_chain_csv(out / f"chain_{name}.csv", chain, x, cfg.output.thin)
        write_diagnostics_csv(out / f"diag_{name}.csv", diag, lag)
        write_acf_csv(out / f"acf_{name}.csv", diag)
        entry = {
            "beta": run.beta,
            "prerun_beta": run.prerun_beta,
            "J": chain.J,
            "n_states": int(chain.states.shape[0]),
            "acceptance_rate": chain.acceptance_rate,
            "prerun_acceptance_rate": None if not chain.prerun_proposal_count else chain.prerun_acceptance_rate,
            "nonfinite_potentials": chain.nonfinite_count,
            "ess_per_100": {
                "min": float(diag.ess_per_100.min()),
                "median": float(np.median(diag.ess_per_100)),
                "max": float(diag.ess_per_100.max()),
            },
            "wall_time_s": run.wall_time,
            "streams": {"chain": [cfg.seed, STREAM_KEYS[name], 0], "tuning": [cfg.seed, STREAM_KEYS[name], 1]},
        }
        if chain.sigma_snapshots.shape[0] >= 2 and name != "pcn":
            decay = adaptation_decay(chain.snapshot_iterations, chain.sigma_snapshots)
            entry["adaptation_decay_max"] = float(decay.max())
            entry["adaptation_trend_ok"] = adaptation_trend_ok(decay)
        per_sampler[name] = entry

    comparisons = {}
    if "hybrid" in diags:
        h = diags["hybrid"].ess_per_100
        if "pcn" in diags:
            comparisons["hybrid_beats_pcn_fraction"] = float(np.mean(h > diags["pcn"].ess_per_100))
        if "diagonal" in diags:
            comparisons["median_hybrid_over_diagonal_ess"] = float(np.median(h / diags["diagonal"].ess_per_100))

    summary = {
        "package_version": __version__,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "J": resolve_J(cfg, problem.basis),
        "R": cfg.sampler.R if cfg.sampler.R is not None else default_R(problem.basis),
        "samplers": per_sampler,
        "comparisons": comparisons,
        "estimators": {"acf": ACF_ESTIMATOR, "ess": ESS_TRUNCATION},
        "streams": {"truth": [cfg.seed, TRUTH_KEY], "noise": [cfg.seed, NOISE_KEY]},
        "wall_time_s": time.perf_counter() - t_start,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary
