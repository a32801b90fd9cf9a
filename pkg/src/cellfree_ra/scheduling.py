"""Gene-aided user scheduling, scheme encodings, and the exhaustive oracle.

A genome is a (K, T, F) binary schedule.  Fitness of a genome is the
weighted throughput delivered by a beamformer run under that schedule;
infeasible genomes score the negative QoS deficit so selection pressure
survives among them.  Elites are copied verbatim each generation, which
makes the best-fitness trace nondecreasing.

Variation operators:
* crossover swaps one RE column (the K-vector of one (t, f) cell)
  between two parents,
* mutation flips one uniformly chosen bit; by default the new value is
  biased toward the incumbent best genome's bit (probability 0.75),
* scheme projection repairs rows that violate the SU restriction by
  keeping the entry matching the fitter parent.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .beamforming import bf_fbl, bf_infbl, mmse_beamformer
from .channel import ChannelRealization
from .core import (
    GaConfig,
    Regime,
    Scheme,
    SolverConfig,
    STREAM_GA_EVOLVE,
    STREAM_GA_INIT,
    STREAM_STAGE2,
    SystemConfig,
    derive_rng,
)
from .metrics import AllocationResult, BeamformerSet, ScheduleMatrix, weighted_throughput

ORACLE_BITS_LIMIT = 16
MUTATION_BIAS = 0.75  # pull toward the incumbent best genome's bit value


class Evaluator(Enum):
    MMSE = "mmse"
    BF_INFBL = "bf_infbl"
    BF_FBL = "bf_fbl"


@dataclass
class Individual:
    zeta: ScheduleMatrix
    fitness: float | None = None


@dataclass(frozen=True)
class GaTrace:
    best_fitness_per_generation: tuple[float, ...]
    best_individual: Individual
    generations_run: int


def _sca_evaluator(regime: Regime) -> Evaluator:
    return Evaluator.BF_INFBL if regime is Regime.INFBL else Evaluator.BF_FBL


# ---------------------------------------------------------------------------
# Population construction
# ---------------------------------------------------------------------------


def _random_genome(rng: np.random.Generator, scheme: Scheme, K: int, T: int, F: int) -> np.ndarray:
    if scheme is Scheme.FU:
        return np.ones((K, T, F), dtype=np.int8)
    if scheme is Scheme.MU:
        return rng.integers(0, 2, size=(K, T, F)).astype(np.int8)
    z = np.zeros((K, T, F), dtype=np.int8)
    for t in range(T):
        for f in range(F):
            pick = int(rng.integers(0, K + 1))  # K means "idle RE"
            if pick < K:
                z[pick, t, f] = 1
    return z


def init_population(cfg: SystemConfig, ga_cfg: GaConfig, scheme: Scheme, seed: int) -> list[Individual]:
    rng = derive_rng(seed, STREAM_GA_INIT)
    K, T, F = cfg.n_users, cfg.n_slots, cfg.n_subcarriers
    return [
        Individual(ScheduleMatrix(_random_genome(rng, scheme, K, T, F)))
        for _ in range(ga_cfg.population_size)
    ]


# ---------------------------------------------------------------------------
# Fitness
# ---------------------------------------------------------------------------


def _evaluate(
    ind: Individual,
    ch: ChannelRealization,
    cfg: SystemConfig,
    solver_cfg: SolverConfig,
    evaluator: Evaluator,
    regime: Regime,
) -> tuple[float, BeamformerSet, AllocationResult]:
    if evaluator is Evaluator.MMSE:
        w = mmse_beamformer(ch, ind.zeta, cfg)
        result = weighted_throughput(ch, w, ind.zeta, cfg, regime)
    elif evaluator is Evaluator.BF_INFBL:
        if regime is not Regime.INFBL:
            raise ValueError("BF_INFBL evaluator requires the INFBL regime")
        w, result = bf_infbl(ch, ind.zeta, cfg, solver_cfg)
    else:
        if regime is not Regime.FBL:
            raise ValueError("BF_FBL evaluator requires the FBL regime")
        w, result = bf_fbl(ch, ind.zeta, cfg, solver_cfg)

    if result.feasible:
        fitness = result.weighted_throughput
    else:
        deficit = np.maximum(0.0, np.asarray(cfg.min_bits) - result.raw_per_user_bits)
        fitness = -float(np.sum(deficit))
    ind.fitness = fitness
    return fitness, w, result


def evaluate_fitness(
    ind: Individual,
    ch: ChannelRealization,
    cfg: SystemConfig,
    solver_cfg: SolverConfig,
    evaluator: Evaluator,
    regime: Regime,
) -> float:
    return _evaluate(ind, ch, cfg, solver_cfg, evaluator, regime)[0]


# ---------------------------------------------------------------------------
# Variation
# ---------------------------------------------------------------------------


def _project_scheme(genome: np.ndarray, scheme: Scheme, hint: np.ndarray | None) -> np.ndarray:
    """Repair a genome after variation so it stays scheme-valid.

    SU rows with several scheduled users keep the entry matching the
    hint genome (the fitter parent) when one matches, otherwise the
    lowest user index.
    """
    if scheme is Scheme.FU:
        return np.ones_like(genome)
    if scheme is Scheme.MU:
        return genome
    out = genome.copy()
    K, T, F = out.shape
    for t in range(T):
        for f in range(F):
            users = np.flatnonzero(out[:, t, f])
            if users.size <= 1:
                continue
            keep = None
            if hint is not None:
                hinted = np.flatnonzero(hint[:, t, f])
                if hinted.size == 1 and hinted[0] in users:
                    keep = int(hinted[0])
            if keep is None:
                keep = int(users[0])
            out[:, t, f] = 0
            out[keep, t, f] = 1
    return out


def _mutate(
    genome: np.ndarray,
    rng: np.random.Generator,
    ga_cfg: GaConfig,
    best_genome: np.ndarray,
) -> np.ndarray:
    K, T, F = genome.shape
    flat = int(rng.integers(0, K * T * F))
    k, t, f = np.unravel_index(flat, (K, T, F))
    out = genome.copy()
    if ga_cfg.biased_mutation and rng.random() < MUTATION_BIAS:
        out[k, t, f] = best_genome[k, t, f]
    else:
        out[k, t, f] = 1 - out[k, t, f]
    return out


def evolve(
    population: list[Individual],
    ga_cfg: GaConfig,
    rng: np.random.Generator,
    scheme: Scheme = Scheme.MU,
) -> list[Individual]:
    """One generation step: elitism, proportional selection, variation.

    Requires every individual's fitness to be set.  The FU scheme has a
    single admissible genome, so the population passes through as is.
    """
    if scheme is Scheme.FU:
        return list(population)
    ranked = sorted(population, key=lambda ind: ind.fitness, reverse=True)
    best_genome = ranked[0].zeta.zeta
    next_pop: list[Individual] = [
        Individual(ind.zeta, ind.fitness) for ind in ranked[: ga_cfg.elite_count]
    ]

    fits = np.array([ind.fitness for ind in ranked], dtype=float)
    shifted = fits - fits.min()
    span = shifted.max()
    shifted += max(span, 1.0) * 1e-6  # minimum fitness keeps a small positive weight
    probs = shifted / shifted.sum()

    while len(next_pop) < ga_cfg.population_size:
        ia, ib = rng.choice(len(ranked), size=2, p=probs)
        pa, pb = ranked[int(ia)], ranked[int(ib)]
        ga = pa.zeta.zeta.copy()
        gb = pb.zeta.zeta.copy()
        if rng.random() < ga_cfg.crossover_prob:
            T, F = ga.shape[1], ga.shape[2]
            cell = int(rng.integers(0, T * F))
            t, f = divmod(cell, F)
            ga[:, t, f], gb[:, t, f] = gb[:, t, f].copy(), ga[:, t, f].copy()
        fitter = pa if pa.fitness >= pb.fitness else pb
        for child in (ga, gb):
            if len(next_pop) >= ga_cfg.population_size:
                break
            if rng.random() < ga_cfg.mutation_prob:
                child = _mutate(child, rng, ga_cfg, best_genome)
            child = _project_scheme(child, scheme, fitter.zeta.zeta)
            next_pop.append(Individual(ScheduleMatrix(child)))
    return next_pop


# ---------------------------------------------------------------------------
# GA driver
# ---------------------------------------------------------------------------


@dataclass
class _Best:
    fitness: float
    zeta: ScheduleMatrix
    w: BeamformerSet
    result: AllocationResult


def _run_ga(
    ch: ChannelRealization,
    cfg: SystemConfig,
    ga_cfg: GaConfig,
    solver_cfg: SolverConfig,
    scheme: Scheme,
    regime: Regime,
    evaluator: Evaluator,
    population: list[Individual],
    rng: np.random.Generator,
    generations: int,
) -> tuple[_Best, list[float], int]:
    best: _Best | None = None
    trace: list[float] = []
    gens = 0
    for g in range(generations):
        for ind in population:
            if ind.fitness is None:
                fit, w, result = _evaluate(ind, ch, cfg, solver_cfg, evaluator, regime)
                if best is None or fit > best.fitness:
                    best = _Best(fit, ind.zeta, w, result)
        gen_best = max(ind.fitness for ind in population)
        trace.append(max(gen_best, best.fitness))
        gens = g + 1
        if g < generations - 1:
            population = evolve(population, ga_cfg, rng, scheme)
        if scheme is Scheme.FU:
            break  # single admissible genome; nothing left to search
    return best, trace, gens


def usbda(
    ch: ChannelRealization,
    cfg: SystemConfig,
    ga_cfg: GaConfig,
    solver_cfg: SolverConfig,
    scheme: Scheme,
    regime: Regime,
    evaluator: Evaluator | None = None,
) -> tuple[ScheduleMatrix, BeamformerSet, AllocationResult, GaTrace]:
    """Joint scheduling and beamforming: GA outside, beamformer inside."""
    evaluator = evaluator or _sca_evaluator(regime)
    population = init_population(cfg, ga_cfg, scheme, cfg.rng_seed)
    rng = derive_rng(cfg.rng_seed, STREAM_GA_EVOLVE)
    best, trace, gens = _run_ga(
        ch, cfg, ga_cfg, solver_cfg, scheme, regime, evaluator, population, rng, ga_cfg.max_generations
    )
    ga_trace = GaTrace(tuple(trace), Individual(best.zeta, best.fitness), gens)
    return best.zeta, best.w, best.result, ga_trace


def two_stage(
    ch: ChannelRealization,
    cfg: SystemConfig,
    ga_cfg: GaConfig,
    solver_cfg: SolverConfig,
    scheme: Scheme,
    regime: Regime,
) -> tuple[ScheduleMatrix, BeamformerSet, AllocationResult, GaTrace]:
    """Cheap-fitness warm start, then a short run with the full design.

    Stage 1 searches schedules with the MMSE fitness; stage 2 reseeds
    the population with the stage-1 winner (plus mutated copies) and
    refines for stage2_generations using the regime's iterative design.
    """
    _, _, _, stage1 = usbda(ch, cfg, ga_cfg, solver_cfg, scheme, regime, Evaluator.MMSE)
    seed_genome = stage1.best_individual.zeta

    rng = derive_rng(cfg.rng_seed, STREAM_STAGE2)
    population = [Individual(seed_genome)]
    while len(population) < ga_cfg.population_size:
        mutated = _mutate(seed_genome.zeta, rng, GaConfig(biased_mutation=False), seed_genome.zeta)
        mutated = _project_scheme(mutated, scheme, seed_genome.zeta)
        population.append(Individual(ScheduleMatrix(mutated)))

    best, trace, gens = _run_ga(
        ch,
        cfg,
        ga_cfg,
        solver_cfg,
        scheme,
        regime,
        _sca_evaluator(regime),
        population,
        rng,
        ga_cfg.stage2_generations,
    )
    full_trace = stage1.best_fitness_per_generation + tuple(trace)
    ga_trace = GaTrace(full_trace, Individual(best.zeta, best.fitness), stage1.generations_run + gens)
    return best.zeta, best.w, best.result, ga_trace


# ---------------------------------------------------------------------------
# Exhaustive oracle
# ---------------------------------------------------------------------------


def _enumerate_genomes(scheme: Scheme, K: int, T: int, F: int):
    """All scheme-valid genomes in lexicographic order of the flat bits."""
    if scheme is Scheme.FU:
        yield np.ones((K, T, F), dtype=np.int8)
        return
    if scheme is Scheme.MU:
        for bits in itertools.product((0, 1), repeat=K * T * F):
            yield np.array(bits, dtype=np.int8).reshape(K, T, F)
        return
    genomes = []
    for picks in itertools.product(range(K + 1), repeat=T * F):
        z = np.zeros((K, T, F), dtype=np.int8)
        for cell, pick in enumerate(picks):
            if pick < K:
                t, f = divmod(cell, F)
                z[pick, t, f] = 1
        genomes.append(z)
    genomes.sort(key=lambda z: tuple(z.ravel()))
    yield from genomes


def exhaustive_oracle(
    ch: ChannelRealization,
    cfg: SystemConfig,
    solver_cfg: SolverConfig,
    scheme: Scheme,
    regime: Regime,
    evaluator: Evaluator,
) -> tuple[ScheduleMatrix, float]:
    """Brute-force best schedule under the given evaluator.

    Ties break toward the lexicographically first genome.  Guarded by
    an enumeration bound of K*T*F <= 16 bits.
    """
    K, T, F = cfg.n_users, cfg.n_slots, cfg.n_subcarriers
    if K * T * F > ORACLE_BITS_LIMIT:
        raise ValueError(f"oracle bound exceeded: K*T*F = {K * T * F} > {ORACLE_BITS_LIMIT}")
    best_z = None
    best_fit = -np.inf
    for genome in _enumerate_genomes(scheme, K, T, F):
        ind = Individual(ScheduleMatrix(genome))
        fit = evaluate_fitness(ind, ch, cfg, solver_cfg, evaluator, regime)
        if fit > best_fit:
            best_fit, best_z = fit, ind.zeta
    return best_z, float(best_fit)
