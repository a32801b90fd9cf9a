"""Monte Carlo harness: seeded trials, axis sweeps, convergence traces.

A sweep cell is one (axis value, scheme, deployment, regime) tuple; the
cell mean averages the reported throughput over n_trials independent
channel drops.  Infeasible outcomes report zero throughput (they still
count in the service-rate denominator).

Trial seeds derive from the master seed and the cell coordinates, so
results are independent of execution order and worker count.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .channel import generate_channels, generate_topology
from .core import (
    ConfigError,
    Deployment,
    GaConfig,
    Regime,
    Scheme,
    SolverConfig,
    SystemConfig,
    derive_seed,
    replace_config,
)
from .metrics import AllocationResult
from .scheduling import GaTrace, two_stage


class Axis(Enum):
    MAX_LATENCY_T = "max_latency_t"
    SUBCARRIERS_F = "subcarriers_f"
    USERS_K = "users_k"
    APS_N = "aps_n"
    BLER_EPS = "bler_eps"
    ANTENNAS = "antennas"


AXIS_LABELS = {
    Axis.MAX_LATENCY_T: "T",
    Axis.SUBCARRIERS_F: "F",
    Axis.USERS_K: "K",
    Axis.APS_N: "N",
    Axis.BLER_EPS: "eps",
    Axis.ANTENNAS: "N",
}


@dataclass(frozen=True)
class SweepSpec:
    axis: Axis
    values: tuple
    schemes: tuple[Scheme, ...] = (Scheme.MU,)
    deployments: tuple[Deployment, ...] = (Deployment.CELL_FREE,)
    regimes: tuple[Regime, ...] = (Regime.FBL,)
    n_trials: int = 10


@dataclass(frozen=True)
class CellKey:
    value: object
    scheme: Scheme
    deployment: Deployment
    regime: Regime


@dataclass(frozen=True)
class CellStats:
    mean_wtp: float
    std_err: float
    service_rate: float
    n_trials: int
    wtps: tuple[float, ...]
    feasible: tuple[bool, ...]
    seeds: tuple[int, ...]


@dataclass(frozen=True)
class SweepResult:
    spec: SweepSpec
    cells: dict  # CellKey -> CellStats

    def cell(self, value, scheme, deployment, regime) -> CellStats:
        return self.cells[CellKey(value, scheme, deployment, regime)]


@dataclass(frozen=True)
class TraceBundle:
    sca_trace: tuple[float, ...]
    ga_trace: tuple[float, ...]


def apply_axis(cfg: SystemConfig, axis: Axis, value) -> SystemConfig:
    """Instantiate one sweep point.

    The ANTENNAS axis sweeps the AP count while holding the total
    antenna count n_aps * antennas_per_ap fixed.
    """
    if axis is Axis.MAX_LATENCY_T:
        return replace_config(cfg, n_slots=int(value))
    if axis is Axis.SUBCARRIERS_F:
        return replace_config(cfg, n_subcarriers=int(value))
    if axis is Axis.USERS_K:
        return replace_config(cfg, n_users=int(value))
    if axis is Axis.APS_N:
        return replace_config(cfg, n_aps=int(value))
    if axis is Axis.BLER_EPS:
        return replace_config(cfg, bler=float(value))
    total = cfg.n_aps * cfg.antennas_per_ap
    n = int(value)
    if total % n != 0:
        raise ConfigError(f"antenna sweep point N={n} does not divide total antennas {total}")
    return replace_config(cfg, n_aps=n, antennas_per_ap=total // n)


def run_trial(
    cfg: SystemConfig,
    ga_cfg: GaConfig,
    solver_cfg: SolverConfig,
    scheme: Scheme,
    deployment: Deployment,
    regime: Regime,
    seed: int,
) -> AllocationResult:
    """One channel drop, full two-stage optimization."""
    return _run_trial_full(cfg, ga_cfg, solver_cfg, scheme, deployment, regime, seed)[2]


def _run_trial_full(cfg, ga_cfg, solver_cfg, scheme, deployment, regime, seed):
    cfg_t = replace_config(cfg, rng_seed=int(seed))
    topology = generate_topology(cfg_t, deployment)
    ch = generate_channels(topology, cfg_t)
    zeta, w, result, trace = two_stage(ch, cfg_t, ga_cfg, solver_cfg, scheme, regime)
    return zeta, w, result, trace


def reported_wtp(result: AllocationResult) -> float:
    """Throughput as plotted: infeasible allocations count as zero."""
    return result.weighted_throughput if result.feasible else 0.0


def trial_seed(master_seed: int, axis: Axis, value, scheme: Scheme, deployment: Deployment, regime: Regime, trial: int) -> int:
    return derive_seed(master_seed, axis, str(value), scheme, deployment, regime, trial)


def _cell_trial(cfg, ga_cfg, solver_cfg, axis, value, scheme, deployment, regime, seed):
    cfg_v = apply_axis(cfg, axis, value)
    result = run_trial(cfg_v, ga_cfg, solver_cfg, scheme, deployment, regime, seed)
    return reported_wtp(result), result.feasible


def run_sweep(
    spec: SweepSpec,
    cfg: SystemConfig,
    ga_cfg: GaConfig,
    solver_cfg: SolverConfig,
    n_jobs: int | None = None,
) -> SweepResult:
    tasks = []
    for value in spec.values:
        for scheme in spec.schemes:
            for deployment in spec.deployments:
                for regime in spec.regimes:
                    seeds = tuple(
                        trial_seed(cfg.rng_seed, spec.axis, value, scheme, deployment, regime, i)
                        for i in range(spec.n_trials)
                    )
                    tasks.append((CellKey(value, scheme, deployment, regime), seeds))

    flat = [
        (key, seed)
        for key, seeds in tasks
        for seed in seeds
    ]
    if n_jobs and n_jobs != 1:
        from joblib import Parallel, delayed

        outcomes = Parallel(n_jobs=n_jobs)(
            delayed(_cell_trial)(
                cfg, ga_cfg, solver_cfg, spec.axis, key.value, key.scheme, key.deployment, key.regime, seed
            )
            for key, seed in flat
        )
    else:
        outcomes = [
            _cell_trial(cfg, ga_cfg, solver_cfg, spec.axis, key.value, key.scheme, key.deployment, key.regime, seed)
            for key, seed in flat
        ]

    cells = {}
    pos = 0
    for key, seeds in tasks:
        chunk = outcomes[pos : pos + len(seeds)]
        pos += len(seeds)
        wtps = np.array([c[0] for c in chunk], dtype=float)
        feas = tuple(bool(c[1]) for c in chunk)
        se = float(np.std(wtps, ddof=1) / np.sqrt(len(wtps))) if len(wtps) > 1 else 0.0
        cells[key] = CellStats(
            mean_wtp=float(wtps.mean()) if len(wtps) else 0.0,
            std_err=se,
            service_rate=float(np.mean(feas)) if feas else 0.0,
            n_trials=len(seeds),
            wtps=tuple(float(x) for x in wtps),
            feasible=feas,
            seeds=seeds,
        )
    return SweepResult(spec=spec, cells=cells)


def convergence_report(
    cfg: SystemConfig,
    ga_cfg: GaConfig,
    solver_cfg: SolverConfig,
    scheme: Scheme,
    deployment: Deployment,
    regime: Regime,
    seed: int,
) -> TraceBundle:
    """Inner (surrogate objective) and outer (best fitness) traces of one trial."""
    _, _, result, ga_trace = _run_trial_full(cfg, ga_cfg, solver_cfg, scheme, deployment, regime, seed)
    return TraceBundle(sca_trace=tuple(result.trace), ga_trace=ga_trace.best_fitness_per_generation)


# ---------------------------------------------------------------------------
# Persistence: one row per trial, one row per cell, and a manifest that
# pins everything needed to reproduce the run bit for bit.
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return format(x, ".9g")
    return str(x)


def write_trials_csv(result: SweepResult, path: Path) -> None:
    label = AXIS_LABELS[result.spec.axis]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([label, "scheme", "deployment", "regime", "trial", "seed", "wtp", "feasible"])
        for key, stats in result.cells.items():
            for i, (wtp, feas, seed) in enumerate(zip(stats.wtps, stats.feasible, stats.seeds)):
                writer.writerow(
                    [
                        _fmt(key.value),
                        key.scheme.value,
                        key.deployment.value,
                        key.regime.value,
                        i,
                        seed,
                        _fmt(float(wtp)),
                        _fmt(feas),
                    ]
                )


def write_aggregate_csv(result: SweepResult, path: Path) -> None:
    label = AXIS_LABELS[result.spec.axis]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            [label, "scheme", "deployment", "regime", "mean_wtp", "std_err", "service_rate", "n_trials"]
        )
        for key, stats in result.cells.items():
            writer.writerow(
                [
                    _fmt(key.value),
                    key.scheme.value,
                    key.deployment.value,
                    key.regime.value,
                    _fmt(stats.mean_wtp),
                    _fmt(stats.std_err),
                    _fmt(stats.service_rate),
                    stats.n_trials,
                ]
            )


def write_manifest(raw_config: dict, version: str, path: Path, extra: dict | None = None) -> None:
    manifest = {
        "version": version,
        "config": raw_config,
        "seed_rule": "trial seed = SeedSequence((master, axis, str(value), scheme, deployment, regime, trial))",
    }
    if extra:
        manifest.update(extra)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Presets (desk-scale reproductions of the headline figures)
# ---------------------------------------------------------------------------

_CI_SYSTEM = {
    "n_aps": 4,
    "antennas_per_ap": 2,
    "n_users": 4,
    "n_slots": 3,
    "n_subcarriers": 2,
    "min_bits": 1.0,
}
_CI_GA = {"population_size": 8, "elite_count": 2, "max_generations": 6, "stage2_generations": 2}

PRESETS: dict[str, dict] = {
    "table1-defaults": {
        "system": {},
        "ga": {},
        "solver": {},
        "experiment": {"scheme": "mu", "deployment": "cell_free", "regime": "fbl"},
    },
    "ci-small": {
        "system": dict(_CI_SYSTEM),
        "ga": dict(_CI_GA),
        "solver": {},
        "experiment": {
            "scheme": "mu",
            "deployment": "cell_free",
            "regime": "fbl",
            "n_trials": 50,
        },
    },
    "fig3": {
        "system": dict(_CI_SYSTEM),
        "ga": dict(_CI_GA),
        "solver": {},
        "experiment": {"scheme": "mu", "deployment": "cell_free", "regime": "fbl"},
    },
    "fig4": {
        "system": dict(_CI_SYSTEM),
        "ga": dict(_CI_GA),
        "solver": {},
        "experiment": {"scheme": "mu", "deployment": "cell_free", "regime": "infbl"},
    },
    "fig5": {
        "system": dict(_CI_SYSTEM),
        "ga": dict(_CI_GA),
        "solver": {},
        "experiment": {
            "axis": "max_latency_t",
            "values": [2, 4, 6, 8, 10],
            "schemes": ["su", "fu", "mu"],
            "deployments": ["cell_free", "centralized"],
            "regimes": ["fbl"],
            "n_trials": 10,
        },
    },
    "fig6": {
        "system": dict(_CI_SYSTEM),
        "ga": dict(_CI_GA),
        "solver": {},
        "experiment": {
            "axis": "bler_eps",
            "values": [1e-1, 1e-3, 1e-5, 1e-7, 1e-9],
            "schemes": ["su", "fu", "mu"],
            "deployments": ["cell_free", "centralized"],
            "regimes": ["fbl"],
            "n_trials": 10,
        },
    },
    "fig7": {
        "system": {**_CI_SYSTEM, "n_aps": 6, "antennas_per_ap": 2},
        "ga": dict(_CI_GA),
        "solver": {},
        "experiment": {
            "axis": "users_k",
            "values": [1, 2, 4, 8],
            "schemes": ["su", "fu", "mu"],
            "deployments": ["cell_free", "centralized"],
            "regimes": ["fbl", "infbl"],
            "n_trials": 10,
        },
    },
    "fig8": {
        "system": dict(_CI_SYSTEM),
        "ga": dict(_CI_GA),
        "solver": {},
        "experiment": {
            "axis": "subcarriers_f",
            "values": [1, 2, 3, 4, 5],
            "schemes": ["su", "fu", "mu"],
            "deployments": ["cell_free", "centralized"],
            "regimes": ["fbl"],
            "n_trials": 10,
        },
    },
    "fig9": {
        "system": {**_CI_SYSTEM, "n_aps": 8, "antennas_per_ap": 2},
        "ga": dict(_CI_GA),
        "solver": {},
        "experiment": {
            "axis": "antennas",
            "values": [1, 2, 4, 8, 16],
            "schemes": ["fu", "mu"],
            "deployments": ["cell_free"],
            "regimes": ["fbl"],
            "n_trials": 10,
        },
    },
}
