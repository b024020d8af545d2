"""Evolutionary search: elitism, fitness-weighted parent roulette with state
exclusion, layer-wise generation from parent chains, residual substitution.

Every generated individual is assembled layer by layer: for the current chain
state a parent is drawn by roulette over the individuals whose chains can
leave that state, the next state and its component tuple are sampled from that
parent, input dimensions are rewired to fit the running shape, and the walk
stops on OUTPUT, an empty candidate pool, an infeasible layer, or the
max-layers cap; forced stops append a classifier head so the result always
validates.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .arch import (
    Architecture,
    Layer,
    ShapeError,
    classifier_head,
    layer_output_shape,
    rewire_layer,
    validate_architecture,
)
from .chain import sample_components, sample_transition
from .evaluator import ENTIRE, PARTIAL
from .population import Individual, Origin, Population, build_search_space, make_individual
from .registry import OUTPUT, START


class EmptyCandidatePool(ValueError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    """Search hyperparameters; defaults follow the reported experimental setup."""

    generations: int = 50
    individuals: int = 25
    elitism_rate: float = 0.15
    residual_prob: float = 0.10
    max_layers: int = 256
    partial_epochs: int = 1
    master_seed: int = 0
    dataset_variant: str = PARTIAL
    input_shape: tuple[int, int, int] = (3, 32, 32)
    num_classes: int = 10
    workers: int = 1

    def __post_init__(self):
        if not 0.0 <= self.elitism_rate < 1.0:
            raise ValueError(f"elitism_rate must be in [0, 1), got {self.elitism_rate}")
        if self.individuals < 1:
            raise ValueError("individuals must be >= 1")
        if self.max_layers < 2:
            raise ValueError("max_layers must be >= 2")
        if not 0.0 <= self.residual_prob <= 1.0:
            raise ValueError(f"residual_prob must be in [0, 1], got {self.residual_prob}")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if self.partial_epochs < 1:
            raise ValueError("partial_epochs must be >= 1")
        if self.dataset_variant not in (PARTIAL, ENTIRE):
            raise ValueError(f"dataset_variant must be PARTIAL or ENTIRE, got {self.dataset_variant}")


@dataclass(frozen=True)
class GenStreams:
    """Independent named random streams for one generated individual."""

    parent: np.random.Generator
    transition: np.random.Generator
    components: np.random.Generator
    residual: np.random.Generator

    @classmethod
    def shared(cls, rng: np.random.Generator) -> "GenStreams":
        return cls(parent=rng, transition=rng, components=rng, residual=rng)


def derive_streams(master_seed: int, generation: int, slot: int) -> GenStreams:
    """One substream per purpose, keyed by (generation, slot, purpose)."""
    streams = [
        np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=(generation, slot, purpose))))
        for purpose in range(4)
    ]
    return GenStreams(*streams)


@dataclass(frozen=True)
class IndividualSummary:
    id: str
    fitness: float
    origin: str
    evaluation_failed: bool = False


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    best_fitness: float
    mean_fitness: float
    n_cache_hits: int
    wall_time_s: float
    elite_ids: tuple[str, ...]
    individuals: tuple[IndividualSummary, ...]


@dataclass
class SearchResult:
    best: Individual
    history: list[GenerationRecord]
    config: SearchConfig
    generation_zero: tuple[IndividualSummary, ...] = ()
    final_population: Population | None = None


def _summaries(population: Population) -> tuple[IndividualSummary, ...]:
    return tuple(
        IndividualSummary(ind.id, ind.fitness, ind.origin.value, ind.evaluation_failed)
        for ind in population.individuals
    )


def select_parent(population, current_state: str, rng: np.random.Generator) -> Individual:
    """Roulette draw proportional to fitness over the individuals whose chains
    can leave ``current_state``; uniform when all eligible fitnesses are 0."""
    individuals = population.individuals if isinstance(population, Population) else population
    pool = [ind for ind in individuals if ind.chain.has_state(current_state)]
    if not pool:
        raise EmptyCandidatePool(f"no chain contains state {current_state!r} with outgoing edges")
    pool.sort(key=lambda ind: ind.id)
    total = float(sum(ind.fitness for ind in pool))
    u = rng.random()
    if total <= 0.0:
        return pool[int(u * len(pool))]
    target = u * total
    acc = 0.0
    for ind in pool:
        acc += ind.fitness
        if target < acc:
            return ind
    return pool[-1]


def apply_residual_substitution(layer: Layer, config: SearchConfig, rng: np.random.Generator) -> Layer:
    """Mark a sampled convolution as a bottleneck residual block with probability
    ``residual_prob``; non-convolutions pass through untouched."""
    if layer.op != "CONV2D":
        return layer
    if rng.random() < config.residual_prob:
        return replace(layer, is_residual_block=True)
    return layer


def _feasible_shape(layer: Layer, shape):
    """Output shape if the layer fits the running shape, else None."""
    try:
        return layer_output_shape(layer, shape)
    except ShapeError:
        return None


def generate_architecture(
    population: Population,
    config: SearchConfig,
    rng: GenStreams | np.random.Generator,
) -> Architecture:
    streams = GenStreams.shared(rng) if isinstance(rng, np.random.Generator) else rng
    shape = tuple(config.input_shape)
    layers: list[Layer] = []
    state = START

    while len(layers) < config.max_layers:
        try:
            parent = select_parent(population, state, streams.parent)
        except EmptyCandidatePool:
            break
        next_state = sample_transition(parent.chain, state, streams.transition)
        if next_state == OUTPUT:
            break
        components = sample_components(parent.chain, next_state, streams.components)
        layer = apply_residual_substitution(Layer(next_state, components), config, streams.residual)

        if layer.op == "FLATTEN" and len(shape) == 1:
            state = next_state  # already flat: drop the layer, keep walking
            continue
        if layer.op == "LINEAR" and len(shape) == 3:
            flatten = Layer("FLATTEN")
            shape = _feasible_shape(flatten, shape)
            layers.append(flatten)
        layer = rewire_layer(layer, shape)
        new_shape = _feasible_shape(layer, shape)
        if new_shape is None:
            break  # infeasible on the running shape: force termination
        layers.append(layer)
        shape = new_shape
        state = next_state

    if layers and layers[-1].op == "LINEAR":
        head = layers[-1]
        if head.components["out_features"] != config.num_classes:
            layers[-1] = replace(
                head, components={**head.components, "out_features": config.num_classes}
            )
    else:
        layers.extend(classifier_head(shape, config.num_classes))

    return Architecture(
        layers=tuple(layers), input_shape=tuple(config.input_shape), num_classes=config.num_classes
    )


def elite_count(population_size: int, elitism_rate: float, cap: int) -> int:
    """max(1, ceil(rate * size)), capped at the per-generation individual count."""
    return min(max(1, math.ceil(elitism_rate * population_size)), cap)


def next_generation(population: Population, evaluator, config: SearchConfig) -> Population:
    """Elites copied unchanged (top fitness, ties by hash), the rest generated
    and evaluated; evaluator failures score 0 and the run continues."""
    generation = population.generation_index + 1
    n_elites = elite_count(len(population.individuals), config.elitism_rate, config.individuals)
    ranked = sorted(population.individuals, key=lambda ind: (-ind.fitness, ind.id))
    elites = [replace(ind, origin=Origin.ELITE) for ind in ranked[:n_elites]]

    archs = [
        generate_architecture(population, config, derive_streams(config.master_seed, generation, slot))
        for slot in range(config.individuals - n_elites)
    ]
    for arch in archs:
        report = validate_architecture(arch)
        if not report.ok:  # contract: generation always yields valid architectures
            raise AssertionError(f"generated architecture failed validation: {report.issues}")

    generated = []
    for arch, result in zip(archs, evaluator.evaluate_many(archs)):
        if result.ok and result.fitness is not None:
            generated.append(make_individual(arch, result.fitness, Origin.GENERATED))
        else:
            generated.append(make_individual(arch, 0.0, Origin.GENERATED, evaluation_failed=True))
    return Population(generation_index=generation, individuals=elites + generated)


def run_search(config: SearchConfig, descriptions: Sequence[Architecture], evaluator) -> SearchResult:
    """Full loop: generation 0 from descriptions, then ``generations`` steps.

    The best individual of the LAST generation is returned (with elitism it is
    also the global best); final from-scratch training is a separate step.
    """
    if not descriptions:
        raise ValueError("at least one description is required")
    population = build_search_space(descriptions, evaluator)
    generation_zero = _summaries(population)
    history: list[GenerationRecord] = []
    for _ in range(config.generations):
        started = time.perf_counter()
        hits_before = getattr(evaluator, "hits", 0)
        population = next_generation(population, evaluator, config)
        best = population.best()
        history.append(
            GenerationRecord(
                generation=population.generation_index,
                best_fitness=best.fitness,
                mean_fitness=population.mean_fitness(),
                n_cache_hits=getattr(evaluator, "hits", 0) - hits_before,
                wall_time_s=time.perf_counter() - started,
                elite_ids=tuple(ind.id for ind in population.individuals if ind.origin is Origin.ELITE),
                individuals=_summaries(population),
            )
        )
    return SearchResult(
        best=population.best(),
        history=history,
        config=config,
        generation_zero=generation_zero,
        final_population=population,
    )
