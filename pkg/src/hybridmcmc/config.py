"""Experiment configuration: presets, INI-style config files and JSON echoes.

A config file either names a preset::

    [experiment]
    preset = gauss-strong
    seed = 7

or spells out the ``prior`` and ``model`` blocks (``sampler``, ``diagnostics``
and ``output`` are optional)::

    [experiment]
    seed = 7
    samplers = pcn, hybrid

    [prior]
    sigma = 1
    ell = 0.2

    [model]
    kind = ode
    noise_sd = 0.1
    n_obs = 50

    [sampler]
    J = 10
"""
from __future__ import annotations

import configparser
import difflib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigurationError

SAMPLERS = ("pcn", "hybrid", "diagonal")
MODEL_KINDS = ("gaussian", "ode", "heat")
FULL_SCALE_SAMPLES = 500_000
FULL_SCALE_PRERUN = 50_000


@dataclass(frozen=True)
class PriorConfig:
    sigma: float = 1.0
    ell: float = 1.0
    nu: float = 2.5
    grid_points: int = 201
    length: float = 1.0


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "gaussian"
    K: int = 14
    Delta: float = 1.0
    coefficients: str = "grid"
    noise_sd: float = 0.1
    n_obs: int = 50
    x0: float = 1.0
    T: float = 1.0
    nx: int = 100
    nt: int = 200
    halved_misfit: bool = True


@dataclass(frozen=True)
class SamplerConfig:
    n_samples: int = 50_000
    n_prerun: int = 5_000
    J: int | None = None
    rho: float | None = None
    beta_pcn: float | None = None
    beta_hybrid: float | None = None
    beta_diagonal: float | None = None
    target_rate: float = 0.25
    delta_reg: float = 1e-8
    R: float | None = None
    snapshot_stride: int = 1000
    tune_batches: int = 50
    tune_batch_size: int = 200


@dataclass(frozen=True)
class DiagnosticsConfig:
    acf_lag: int = 100
    acf_points: tuple[float, ...] = (0.4, 0.8)


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "runs/out"
    thin: int = 10


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "custom"
    seed: int = 0
    samplers: tuple[str, ...] = SAMPLERS
    prior: PriorConfig = field(default_factory=PriorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> dict:
        return asdict(self)


def validate(cfg: ExperimentConfig) -> None:
    if not cfg.samplers:
        raise ConfigurationError("samplers: at least one sampler is required")
    for s in cfg.samplers:
        if s not in SAMPLERS:
            raise ConfigurationError(f"samplers: unknown sampler '{s}' (choose from {', '.join(SAMPLERS)})")
    if cfg.model.coefficients not in ("grid", "quadrature"):
        raise ConfigurationError(f"model.coefficients: expected 'grid' or 'quadrature', got '{cfg.model.coefficients}'")
    if cfg.model.kind not in MODEL_KINDS:
        raise ConfigurationError(f"model.kind: unknown model '{cfg.model.kind}'")
    positive = {
        "prior.sigma": cfg.prior.sigma, "prior.ell": cfg.prior.ell, "prior.nu": cfg.prior.nu,
        "prior.length": cfg.prior.length, "model.K": cfg.model.K, "model.Delta": cfg.model.Delta,
        "model.noise_sd": cfg.model.noise_sd, "model.n_obs": cfg.model.n_obs, "model.T": cfg.model.T,
        "sampler.n_samples": cfg.sampler.n_samples, "sampler.n_prerun": cfg.sampler.n_prerun,
        "sampler.snapshot_stride": cfg.sampler.snapshot_stride,
        "sampler.tune_batches": cfg.sampler.tune_batches,
        "sampler.tune_batch_size": cfg.sampler.tune_batch_size,
        "diagnostics.acf_lag": cfg.diagnostics.acf_lag, "output.thin": cfg.output.thin,
    }
    for key, value in positive.items():
        if not value > 0:
            raise ConfigurationError(f"{key}: must be positive, got {value}")
    if cfg.prior.grid_points < 2:
        raise ConfigurationError("prior.grid_points: must be at least 2")
    if cfg.sampler.n_prerun < 2:
        raise ConfigurationError("sampler.n_prerun: must be at least 2")
    if cfg.sampler.J is not None and cfg.sampler.rho is not None:
        raise ConfigurationError("sampler: give J or rho, not both")
    if cfg.sampler.J is None and cfg.sampler.rho is None and set(cfg.samplers) - {"pcn"}:
        raise ConfigurationError("sampler: J or rho is required for the hybrid samplers")
    if cfg.sampler.rho is not None and not 0 < cfg.sampler.rho < 1:
        raise ConfigurationError("sampler.rho: must lie in (0, 1)")
    if not 0 < cfg.sampler.target_rate < 1:
        raise ConfigurationError("sampler.target_rate: must lie in (0, 1)")
    for key in ("beta_pcn", "beta_hybrid", "beta_diagonal"):
        b = getattr(cfg.sampler, key)
        if b is not None and not 0 <= b <= 1:
            raise ConfigurationError(f"sampler.{key}: must lie in [0, 1]")
    if cfg.model.kind == "heat" and cfg.model.nt % cfg.model.n_obs:
        raise ConfigurationError("model.n_obs: must divide model.nt")


@dataclass(frozen=True)
class Preset:
    name: str
    source: str
    config: ExperimentConfig


def _preset(name, source, prior, model, J, samplers=SAMPLERS, points=(0.4, 0.8)):
    return Preset(
        name,
        source,
        ExperimentConfig(
            name=name,
            samplers=samplers,
            prior=prior,
            model=model,
            sampler=SamplerConfig(J=J),
            diagnostics=DiagnosticsConfig(acf_points=points),
        ),
    )


def _build_presets() -> dict[str, Preset]:
    smooth = PriorConfig(sigma=1.0, ell=1.0)
    rough = PriorConfig(sigma=1.0, ell=0.2)
    ode = ModelConfig(kind="ode", noise_sd=0.1, n_obs=50)
    out = [
        _preset("gauss-weak", "Gaussian example, weakly correlated modes (Delta = 1, K = 14)",
                smooth, ModelConfig(kind="gaussian", K=14, Delta=1.0), 14),
        _preset("gauss-strong", "Gaussian example, strongly correlated modes (Delta = 14, K = 14)",
                smooth, ModelConfig(kind="gaussian", K=14, Delta=14.0), 14),
        _preset("ode-1", "ODE example, test 1: smooth prior (l = 1), J = 14", smooth, ode, 14),
    ]
    for J in (5, 10, 20):
        out.append(_preset(f"ode-2-J{J}", f"ODE example, test 2: rough prior (l = 0.2), J = {J}",
                           rough, ode, J, samplers=("pcn", "hybrid")))
    out.append(_preset("robin", "Robin coefficient example: heat equation, sensor at x = 0",
                       smooth, ModelConfig(kind="heat", noise_sd=0.1, n_obs=200, nx=100, nt=200),
                       14, points=(0.1, 0.5)))
    return {p.name: p for p in out}


PRESETS = _build_presets()


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        close = difflib.get_close_matches(name, PRESETS, n=1, cutoff=0.0)
        hint = f"; did you mean '{close[0]}'?" if close else ""
        raise ConfigurationError(f"unknown preset '{name}'{hint}") from None


def list_presets() -> list[tuple[str, str]]:
    return [(p.name, p.source) for p in PRESETS.values()]


# -- parsing ------------------------------------------------------------------

_SECTIONS = {
    "prior": PriorConfig,
    "model": ModelConfig,
    "sampler": SamplerConfig,
    "diagnostics": DiagnosticsConfig,
    "output": OutputConfig,
}
_EXPERIMENT_KEYS = ("preset", "name", "seed", "samplers", "paper_scale")


def _coerce(section: str, key: str, raw, annotation: str):
    text = str(raw).strip()
    try:
        if annotation == "bool":
            if isinstance(raw, bool):
                return raw
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if annotation.startswith("tuple"):
            items = raw if isinstance(raw, (list, tuple)) else [s for s in text.split(",") if s.strip()]
            return tuple(float(s) for s in items)
        if "None" in annotation and (raw is None or text.lower() in ("", "none")):
            return None
        if annotation.startswith("int"):
            value = float(text)
            if value != int(value):
                raise ValueError(text)
            return int(value)
        if annotation.startswith("float"):
            return float(text)
        return text
    except ValueError:
        raise ConfigurationError(f"[{section}] {key}: invalid value '{text}'") from None


def _block(section: str, cls, values: dict):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigurationError(f"[{section}] unknown key '{key}'")
        kwargs[key] = _coerce(section, key, raw, str(known[key].type))
    return cls(**kwargs)


def _samplers(raw) -> tuple[str, ...]:
    if isinstance(raw, (list, tuple)):
        return tuple(raw)
    return tuple(s.strip() for s in str(raw).split(",") if s.strip())


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a config from nested dicts (the JSON echo or a parsed INI file)."""
    data = dict(data)
    for key in data:
        if key not in _SECTIONS and key not in ("experiment",) + _EXPERIMENT_KEYS:
            raise ConfigurationError(f"unknown section or key '{key}'")
    exp = dict(data.pop("experiment", {}))
    for key in _EXPERIMENT_KEYS:
        if key in data:
            exp[key] = data.pop(key)
    for key in exp:
        if key not in _EXPERIMENT_KEYS:
            raise ConfigurationError(f"[experiment] unknown key '{key}'")

    paper_scale = _coerce("experiment", "paper_scale", exp.get("paper_scale", False), "bool")
    if "preset" in exp:
        if data:
            raise ConfigurationError(
                f"a preset config may not also define blocks: {', '.join(sorted(data))}"
            )
        cfg = get_preset(str(exp["preset"]).strip()).config
        changes = {}
        if "seed" in exp:
            changes["seed"] = _coerce("experiment", "seed", exp["seed"], "int")
        if "samplers" in exp:
            changes["samplers"] = _samplers(exp["samplers"])
        if "name" in exp:
            changes["name"] = str(exp["name"])
        cfg = replace(cfg, **changes) if changes else cfg
    else:
        missing = [s for s in ("prior", "model") if s not in data]
        if missing:
            raise ConfigurationError(f"explicit config needs blocks: {', '.join(missing)}")
        blocks = {name: _block(name, cls, data.get(name, {})) for name, cls in _SECTIONS.items()}
        cfg = ExperimentConfig(
            name=str(exp.get("name", "custom")),
            seed=_coerce("experiment", "seed", exp.get("seed", 0), "int"),
            samplers=_samplers(exp.get("samplers", ",".join(SAMPLERS))),
            **blocks,
        )
    if paper_scale:
        cfg = with_overrides(cfg, paper_scale=True)
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read an INI-style config file or a JSON config/summary echo."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        return config_from_dict(data.get("config", data))
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path))
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigurationError(f"{path}: line {exc.lineno}: expected a [section] header") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigurationError(f"{path}: line {lineno}: cannot parse {line.strip()!r}") from None
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        where = f"line {lineno}: " if lineno else ""
        raise ConfigurationError(f"{path}: {where}{str(exc).splitlines()[0]}") from None
    data = {name: dict(parser[name]) for name in parser.sections()}
    for name in data:
        if name != "experiment" and name not in _SECTIONS:
            raise ConfigurationError(f"{path}: unknown section [{name}]")
    return config_from_dict(data)


def with_overrides(cfg: ExperimentConfig, *, seed=None, samples=None, prerun=None,
                   paper_scale=False, grid_points=None, out=None) -> ExperimentConfig:
    """Apply command-line overrides; explicit counts win over ``paper_scale``."""
    sampler = cfg.sampler
    if paper_scale:
        sampler = replace(sampler, n_samples=FULL_SCALE_SAMPLES, n_prerun=FULL_SCALE_PRERUN)
    if samples is not None:
        sampler = replace(sampler, n_samples=samples)
    if prerun is not None:
        sampler = replace(sampler, n_prerun=prerun)
    prior = cfg.prior if grid_points is None else replace(cfg.prior, grid_points=grid_points)
    output = cfg.output if out is None else replace(cfg.output, dir=str(out))
    return replace(
        cfg,
        seed=cfg.seed if seed is None else seed,
        sampler=sampler,
        prior=prior,
        output=output,
    )
