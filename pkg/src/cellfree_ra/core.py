"""Configuration types, validation, and the deterministic RNG contract.

Everything downstream (topology draws, channel draws, GA populations,
Gaussian randomization) derives its random stream from a single 64-bit
seed through :func:`derive_rng` / :func:`derive_seed`, so two runs with
the same configs are bit-identical.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path

import numpy as np


class Deployment(Enum):
    CELL_FREE = "cell_free"
    CENTRALIZED = "centralized"


class Scheme(Enum):
    """User scheduling scheme: at most one user per RE, all users, or free."""

    SU = "su"
    FU = "fu"
    MU = "mu"


class Regime(Enum):
    """Rate model: Shannon (infinite blocklength) or normal approximation."""

    INFBL = "infbl"
    FBL = "fbl"


class ConfigError(ValueError):
    """Raised for malformed configuration files or override strings."""


def _as_tuple(value, n: int) -> tuple[float, ...]:
    if np.isscalar(value):
        return (float(value),) * n
    out = tuple(float(v) for v in value)
    return out


@dataclass(frozen=True)
class SystemConfig:
    """Full description of one simulated downlink.

    Counts: n_aps transmitters with antennas_per_ap antennas each serve
    n_users single-antenna users over a grid of n_slots time slots by
    n_subcarriers subcarriers.  Powers are linear per resource element;
    the total budget is set by snr_db relative to noise_power.

    quantization_noise_power=None resolves to 30 dB below the power
    budget split evenly over users and subcarriers, so compression noise
    is a perturbation rather than the dominant impairment.
    """

    n_aps: int = 8
    antennas_per_ap: int = 2
    n_users: int = 16
    n_slots: int = 6
    n_subcarriers: int = 3
    cell_radius_m: float = 500.0
    reference_distance_m: float = 100.0
    path_loss_exponent: float = 3.0
    snr_db: float = 40.0
    noise_power: float = 1.0
    quantization_noise_power: float | None = None
    bler: float = 1e-5
    min_bits: float | tuple[float, ...] = 1.0
    weights: float | tuple[float, ...] = 1.0
    min_sinr_floor: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        # Broadcast per-user fields only when the user count is usable;
        # validate_config still has to accept broken configs.
        if isinstance(self.n_users, int) and self.n_users >= 1:
            object.__setattr__(self, "min_bits", _as_tuple(self.min_bits, self.n_users))
            object.__setattr__(self, "weights", _as_tuple(self.weights, self.n_users))
            if self.quantization_noise_power is None and self.n_subcarriers >= 1:
                p_t = derive_power_budget(self)
                q = 1e-3 * p_t / (self.n_users * self.n_subcarriers)
                object.__setattr__(self, "quantization_noise_power", q)

    @property
    def total_antennas(self) -> int:
        return self.n_aps * self.antennas_per_ap

    @property
    def n_res(self) -> int:
        return self.n_slots * self.n_subcarriers


@dataclass(frozen=True)
class GaConfig:
    """Gene-aided scheduling parameters.

    biased_mutation=False falls back to a plain uniform bit flip instead
    of pulling toward the incumbent best genome (ablation switch).
    """

    population_size: int = 16
    elite_count: int = 2
    crossover_prob: float = 0.8
    mutation_prob: float = 0.9
    max_generations: int = 30
    stage2_generations: int = 10
    biased_mutation: bool = True


@dataclass(frozen=True)
class SolverConfig:
    max_sca_iters: int = 20
    convergence_tol: float = 1e-4
    rank1_ratio_threshold: float = 0.99
    randomization_trials: int = 50


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.violations


def derive_power_budget(cfg: SystemConfig) -> float:
    """Per-slot power budget p_t = noise_power * 10^(snr_db/10)."""
    return float(cfg.noise_power) * 10.0 ** (float(cfg.snr_db) / 10.0)


def validate_config(cfg: SystemConfig) -> ValidationReport:
    """Check invariants; returns a report instead of raising.

    The one structural warning: SU scheduling cannot satisfy positive
    per-user bit demands when there are more users than resource
    elements, since each RE carries at most one user.
    """
    bad: list[str] = []
    warn: list[str] = []
    for name in ("n_aps", "antennas_per_ap", "n_users", "n_slots", "n_subcarriers"):
        v = getattr(cfg, name)
        if not isinstance(v, (int, np.integer)) or v < 1:
            bad.append(f"{name} must be a positive integer, got {v!r}")
    for name in ("cell_radius_m", "reference_distance_m", "path_loss_exponent"):
        v = getattr(cfg, name)
        if not v > 0:
            bad.append(f"{name} must be positive, got {v!r}")
    if not cfg.noise_power > 0:
        bad.append(f"noise_power must be positive, got {cfg.noise_power!r}")
    if cfg.quantization_noise_power is not None and cfg.quantization_noise_power < 0:
        bad.append("quantization_noise_power must be nonnegative")
    if not (0.0 < cfg.bler < 0.5):
        bad.append("bler out of range (must lie in (0, 0.5))")
    if cfg.min_sinr_floor < 0:
        bad.append("min_sinr_floor must be nonnegative")

    if isinstance(cfg.n_users, int) and cfg.n_users >= 1:
        min_bits = np.atleast_1d(np.asarray(cfg.min_bits, dtype=float))
        weights = np.atleast_1d(np.asarray(cfg.weights, dtype=float))
        if min_bits.size != cfg.n_users:
            bad.append(f"min_bits must have {cfg.n_users} entries, got {min_bits.size}")
        elif np.any(min_bits < 0):
            bad.append("min_bits entries must be nonnegative")
        if weights.size != cfg.n_users:
            bad.append(f"weights must have {cfg.n_users} entries, got {weights.size}")
        elif np.any(weights <= 0):
            bad.append("weights entries must be strictly positive")
        if (
            min_bits.size == cfg.n_users
            and np.any(min_bits > 0)
            and isinstance(cfg.n_slots, int)
            and isinstance(cfg.n_subcarriers, int)
            and cfg.n_users > cfg.n_slots * cfg.n_subcarriers
        ):
            warn.append("SU-MIMO infeasible: K > T*F")
    return ValidationReport(tuple(bad), tuple(warn))


def validate_ga_config(cfg: GaConfig) -> ValidationReport:
    bad = []
    for name in ("population_size", "elite_count", "max_generations", "stage2_generations"):
        v = getattr(cfg, name)
        if not isinstance(v, (int, np.integer)) or v < 1:
            bad.append(f"{name} must be a positive integer, got {v!r}")
    for name in ("crossover_prob", "mutation_prob"):
        v = getattr(cfg, name)
        if not (0.0 <= v <= 1.0):
            bad.append(f"{name} must lie in [0, 1], got {v!r}")
    if isinstance(cfg.elite_count, int) and isinstance(cfg.population_size, int):
        if cfg.elite_count >= cfg.population_size:
            bad.append("elite_count must be smaller than population_size")
    return ValidationReport(tuple(bad))


def validate_solver_config(cfg: SolverConfig) -> ValidationReport:
    bad = []
    if not (isinstance(cfg.max_sca_iters, (int, np.integer)) and cfg.max_sca_iters >= 1):
        bad.append("max_sca_iters must be a positive integer")
    if not cfg.convergence_tol > 0:
        bad.append("convergence_tol must be positive")
    if not (0.0 < cfg.rank1_ratio_threshold <= 1.0):
        bad.append("rank1_ratio_threshold must lie in (0, 1]")
    if cfg.randomization_trials < 0:
        bad.append("randomization_trials must be nonnegative")
    return ValidationReport(tuple(bad))


# ---------------------------------------------------------------------------
# Deterministic stream splitting.
#
# Rule: a stream is addressed by (master_seed, *path) where path entries are
# small ints or short strings (strings hash via crc32).  The tuple feeds
# numpy's SeedSequence, so any two distinct paths give independent streams
# and the mapping is stable across platforms and runs.
# ---------------------------------------------------------------------------

STREAM_TOPOLOGY_USERS = 1
STREAM_TOPOLOGY_APS = 2
STREAM_CHANNEL = 3
STREAM_GA_INIT = 4
STREAM_GA_EVOLVE = 5
STREAM_RANDOMIZATION = 6
STREAM_STAGE2 = 7


def _path_entry(entry) -> int:
    if isinstance(entry, (int, np.integer)):
        return int(entry) & 0xFFFFFFFF
    if isinstance(entry, str):
        return zlib.crc32(entry.encode("utf-8"))
    if isinstance(entry, Enum):
        return zlib.crc32(str(entry.value).encode("utf-8"))
    raise TypeError(f"unsupported stream path entry {entry!r}")


def derive_rng(master_seed: int, *path) -> np.random.Generator:
    entropy = (int(master_seed) & 0xFFFFFFFFFFFFFFFF,) + tuple(_path_entry(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(master_seed: int, *path) -> int:
    """64-bit child seed for the same (master, path) addressing scheme."""
    entropy = (int(master_seed) & 0xFFFFFFFFFFFFFFFF,) + tuple(_path_entry(p) for p in path)
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


# ---------------------------------------------------------------------------
# JSON configuration files.
#
# Layout: {"system": {...}, "ga": {...}, "solver": {...}, "experiment": {...}}
# Section keys mirror the dataclass field names exactly (snake_case);
# unknown keys are an error at every level.  The optional experiment
# section describes what to run (scheme/deployment/regime/axis/...).
# ---------------------------------------------------------------------------

_SECTION_TYPES = {"system": SystemConfig, "ga": GaConfig, "solver": SolverConfig}

EXPERIMENT_KEYS = (
    "scheme",
    "deployment",
    "regime",
    "axis",
    "values",
    "schemes",
    "deployments",
    "regimes",
    "n_trials",
)


def _build_section(cls, data: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}' section: {', '.join(unknown)}")
    coerced = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        if isinstance(v, list):
            v = tuple(v)
        coerced[f.name] = v
    return cls(**coerced)


def parse_config_dict(raw: dict) -> tuple[SystemConfig, GaConfig, SolverConfig, dict]:
    if not isinstance(raw, dict):
        raise ConfigError("configuration root must be a JSON object")
    unknown = sorted(set(raw) - set(_SECTION_TYPES) - {"experiment"})
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")
    out = []
    for section, cls in _SECTION_TYPES.items():
        data = raw.get(section, {})
        if not isinstance(data, dict):
            raise ConfigError(f"'{section}' section must be a JSON object")
        try:
            out.append(_build_section(cls, data, section))
        except TypeError as exc:
            raise ConfigError(f"bad '{section}' section: {exc}") from exc
    experiment = raw.get("experiment", {})
    if not isinstance(experiment, dict):
        raise ConfigError("'experiment' section must be a JSON object")
    unknown = sorted(set(experiment) - set(EXPERIMENT_KEYS))
    if unknown:
        raise ConfigError(f"unknown keys in 'experiment' section: {', '.join(unknown)}")
    return out[0], out[1], out[2], dict(experiment)


def load_config_file(path: str | Path) -> tuple[SystemConfig, GaConfig, SolverConfig, dict]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config_dict(raw)


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply `section.key=value` strings on top of a raw config dict.

    Values parse as JSON when possible, otherwise as bare strings, so
    `system.snr_db=30` and `experiment.regime=fbl` both work.
    """
    out = json.loads(json.dumps(raw))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        dotted, text = item.split("=", 1)
        parts = dotted.strip().split(".")
        if len(parts) != 2:
            raise ConfigError(f"override key must be section.key, got {dotted!r}")
        section, key = parts
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        out.setdefault(section, {})[key] = value
    return out


def config_to_dict(cfg: SystemConfig, ga: GaConfig, solver: SolverConfig, experiment: dict | None = None) -> dict:
    def section(obj):
        d = {}
        for f in fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        return d

    out = {"system": section(cfg), "ga": section(ga), "solver": section(solver)}
    if experiment:
        out["experiment"] = dict(experiment)
    return out


def replace_config(cfg: SystemConfig, **changes) -> SystemConfig:
    """dataclasses.replace that re-runs broadcasting for per-user fields."""
    if "n_users" in changes and changes["n_users"] != cfg.n_users:
        for name in ("min_bits", "weights"):
            if name in changes:
                continue
            vals = getattr(cfg, name)
            if isinstance(vals, tuple):
                uniq = set(vals)
                if len(uniq) > 1:
                    raise ConfigError(
                        f"cannot resize non-uniform {name} when changing n_users; pass {name} explicitly"
                    )
                changes[name] = vals[0] if vals else 1.0
    return replace(cfg, **changes)
