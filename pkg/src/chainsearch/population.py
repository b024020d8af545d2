"""Population construction: individuals, generations, and the generation-0 search space."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .arch import Architecture, canonical_hash
from .chain import TransitionChain, build_chain


class Origin(Enum):
    SEED = "SEED"
    ELITE = "ELITE"
    GENERATED = "GENERATED"


@dataclass(frozen=True)
class Individual:
    architecture: Architecture
    chain: TransitionChain
    fitness: float
    origin: Origin
    id: str
    evaluation_failed: bool = False


@dataclass
class Population:
    generation_index: int
    individuals: list[Individual] = field(default_factory=list)

    def best(self) -> Individual:
        return min(self.individuals, key=lambda ind: (-ind.fitness, ind.id))

    def mean_fitness(self) -> float:
        return sum(ind.fitness for ind in self.individuals) / len(self.individuals)


def make_individual(
    arch: Architecture,
    fitness: float,
    origin: Origin,
    evaluation_failed: bool = False,
) -> Individual:
    return Individual(
        architecture=arch,
        chain=build_chain(arch),
        fitness=fitness,
        origin=origin,
        id=canonical_hash(arch),
        evaluation_failed=evaluation_failed,
    )


def build_search_space(descriptions: Sequence[Architecture], evaluator) -> Population:
    """Generation 0: one individual per description, fitness from the evaluator.

    An evaluator failure yields fitness 0 for that individual (flagged) instead
    of aborting; roulette selection then effectively excludes it.
    """
    individuals = []
    for arch in descriptions:
        result = evaluator.evaluate(arch)
        if result.ok and result.fitness is not None:
            individuals.append(make_individual(arch, result.fitness, Origin.SEED))
        else:
            individuals.append(make_individual(arch, 0.0, Origin.SEED, evaluation_failed=True))
    return Population(generation_index=0, individuals=individuals)
