"""Run-configuration loading and validation.

Configs are single JSON files (nested key/value objects).  Every field is
validated against the owning module's invariants at load time and unknown
keys are rejected, so a typo fails fast with the offending field path in the
message.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

from .errors import ConfigError, ValidationError
from .expfam_model import ExpFamSpec
from .experiments import ExperimentGrid
from .partition_laws import MarkedHyper
from .samplers import SamplerConfig
from .sgp_prior import KernelParams

DEFAULT_CONFIG = {
    "model": "dsdp",
    "seed": 0,
    "hyper": {"alpha_star": 1.0, "a0": 1.0, "b0": 1.0, "gamma_mfm": 1.0},
    "expfam": {
        "dimension": 1,
        "known_variance": [1.0],
        "prior_mean": [0.0],
        "pseudo_count": 1.0,
    },
    "kernel": {"variance": 1.0, "lengthscale": [1.0], "jitter": 1e-8},
    "sgp": {"proposal_b": 0.5},
    "sampler": {
        "aux_m": 3,
        "iters": 200,
        "burn_in": 100,
        "split_merge_every": 1,
        "restricted_scans": 3,
        "collect_topics": False,
        "domain_expand": 0.1,
    },
    "io": {"format": "generic", "score_last": 1000},
}

_GRID_KEYS = {"data_sizes", "alpha_fractions", "replicates", "models"}


@dataclass(frozen=True)
class RunConfig:
    model: str
    seed: int
    hyper: MarkedHyper
    spec: ExpFamSpec
    kernel: KernelParams
    sampler: SamplerConfig
    proposal_b: float
    io_format: str
    score_last: int
    grid: ExperimentGrid = None
    raw: dict = None


def _merge_defaults(user: dict, defaults: dict, path: str) -> dict:
    out = dict(defaults)
    for key, value in user.items():
        where = f"{path}.{key}" if path else key
        if key == "grid":
            out[key] = value
            continue
        if key not in defaults:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be an object")
            out[key] = _merge_defaults(value, defaults[key], where)
        else:
            out[key] = value
    return out


def _as_vector(value, dimension, name):
    if isinstance(value, (int, float)):
        return (float(value),) * dimension
    if isinstance(value, (list, tuple)):
        if len(value) == 1:
            return (float(value[0]),) * dimension
        if len(value) != dimension:
            raise ConfigError(f"{name} must be a scalar or a list of length {dimension}")
        return tuple(float(v) for v in value)
    raise ConfigError(f"{name} must be a number or a list of numbers")


def config_from_dict(raw: dict) -> RunConfig:
    """Validate a config dictionary and build the typed run configuration."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    merged = _merge_defaults(raw, DEFAULT_CONFIG, "")
    try:
        hyper = MarkedHyper(**{k: float(v) for k, v in merged["hyper"].items()})
    except (ValidationError, TypeError) as exc:
        raise ConfigError(f"hyper: {exc}") from exc
    ef = merged["expfam"]
    try:
        dim = int(ef["dimension"])
        spec = ExpFamSpec.gaussian(
            dimension=dim,
            known_variance=_as_vector(ef["known_variance"], dim, "expfam.known_variance"),
            prior_mean=_as_vector(ef["prior_mean"], dim, "expfam.prior_mean"),
            pseudo_count=float(ef["pseudo_count"]),
        )
    except (ValidationError, TypeError, KeyError) as exc:
        raise ConfigError(f"expfam: {exc}") from exc
    kc = merged["kernel"]
    try:
        kernel = KernelParams(
            variance=float(kc["variance"]),
            lengthscale=_as_vector(kc["lengthscale"], dim, "kernel.lengthscale"),
            jitter=float(kc["jitter"]),
        )
    except (ValidationError, TypeError) as exc:
        raise ConfigError(f"kernel: {exc}") from exc
    sc = merged["sampler"]
    model = merged["model"]
    try:
        sampler = SamplerConfig(
            model=model,
            aux_m=int(sc["aux_m"]),
            iters=int(sc["iters"]),
            burn_in=int(sc["burn_in"]),
            split_merge_every=int(sc["split_merge_every"]),
            restricted_scans=int(sc["restricted_scans"]),
            collect_topics=bool(sc["collect_topics"]),
            domain_expand=float(sc["domain_expand"]),
        )
    except (ValidationError, TypeError) as exc:
        raise ConfigError(f"sampler: {exc}") from exc
    proposal_b = float(merged["sgp"]["proposal_b"])
    if not 0 < proposal_b < 1:
        raise ConfigError(f"sgp.proposal_b must be in (0, 1), got {proposal_b}")
    io_format = merged["io"]["format"]
    if io_format not in ("generic", "galaxy"):
        raise ConfigError(f"io.format must be 'generic' or 'galaxy', got {io_format!r}")
    score_last = int(merged["io"]["score_last"])
    if score_last < 1:
        raise ConfigError("io.score_last must be >= 1")
    grid = None
    if "grid" in merged:
        gd = merged["grid"]
        if not isinstance(gd, dict):
            raise ConfigError("grid must be an object")
        unknown = set(gd) - _GRID_KEYS
        if unknown:
            raise ConfigError(f"unknown config key: grid.{sorted(unknown)[0]}")
        try:
            grid = ExperimentGrid(
                data_sizes=tuple(int(n) for n in gd["data_sizes"]),
                alpha_fractions=tuple(float(d) for d in gd["alpha_fractions"]),
                replicates=int(gd.get("replicates", 1)),
                models=tuple(gd.get("models", ["dsdp", "dpmm"])),
            )
        except (ValidationError, TypeError, KeyError) as exc:
            raise ConfigError(f"grid: {exc}") from exc
    return RunConfig(
        model=model,
        seed=int(merged["seed"]),
        hyper=hyper,
        spec=spec,
        kernel=kernel,
        sampler=sampler,
        proposal_b=proposal_b,
        io_format=io_format,
        score_last=score_last,
        grid=grid,
        raw=merged,
    )


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def config_sha256(cfg: RunConfig) -> str:
    canon = json.dumps(cfg.raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
