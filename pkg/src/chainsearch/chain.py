"""Per-model state-transition chains over layer types, with component distributions.

States are the layer ops of one architecture plus virtual START/OUTPUT
endpoints.  Transition probabilities are the empirical adjacent-pair
frequencies of the source layer sequence, stored as exact rationals; per-state
component distributions hold the complete component tuples observed for that
op, sampled whole.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Any

import numpy as np

from .arch import Architecture
from .registry import OUTPUT, START

CompKey = tuple[tuple[str, Any], ...]


class NoOutgoingTransitions(ValueError):
    pass


class EmptyComponentDistribution(ValueError):
    pass


def _comp_key(components: dict[str, Any]) -> CompKey:
    return tuple(sorted(components.items()))


@dataclass(frozen=True)
class _Sampler:
    choices: tuple[Any, ...]
    cumulative: np.ndarray  # same length; last entry forced to 1.0

    def draw(self, rng: np.random.Generator) -> Any:
        return self.choices[bisect_right(self.cumulative, rng.random())]


def _build_sampler(weights: dict[Any, Fraction], key) -> _Sampler:
    items = sorted(weights.items(), key=key)
    cumulative = np.cumsum([float(p) for _, p in items])
    cumulative[-1] = 1.0
    return _Sampler(tuple(choice for choice, _ in items), cumulative)


class TransitionChain:
    """Immutable after construction; sampling uses caller-owned random streams."""

    def __init__(
        self,
        transitions: dict[str, dict[str, Fraction]],
        component_dists: dict[str, dict[CompKey, Fraction]],
    ):
        self.transitions = transitions
        self.component_dists = component_dists
        self.states = frozenset(transitions) | {OUTPUT}
        self._transition_samplers = {
            state: _build_sampler(edges, key=lambda item: item[0])
            for state, edges in transitions.items()
        }
        self._component_samplers = {
            state: _build_sampler(dist, key=lambda item: json.dumps(item[0]))
            for state, dist in component_dists.items()
            if dist
        }

    def has_state(self, state: str) -> bool:
        return state in self.transitions and bool(self.transitions[state])


def build_chain(arch: Architecture) -> TransitionChain:
    """Empirical chain over START, layer ops in order, OUTPUT."""
    sequence = [START] + [layer.op for layer in arch.layers] + [OUTPUT]
    pair_counts: dict[str, Counter] = {}
    for src, dst in zip(sequence, sequence[1:]):
        pair_counts.setdefault(src, Counter())[dst] += 1

    transitions = {
        src: {dst: Fraction(count, sum(counts.values())) for dst, count in counts.items()}
        for src, counts in pair_counts.items()
    }

    tuple_counts: dict[str, Counter] = {}
    for layer in arch.layers:
        tuple_counts.setdefault(layer.op, Counter())[_comp_key(layer.components)] += 1
    component_dists = {
        op: {key: Fraction(count, sum(counts.values())) for key, count in counts.items()}
        for op, counts in tuple_counts.items()
    }
    return TransitionChain(transitions, component_dists)


def sample_transition(chain: TransitionChain, state: str, rng: np.random.Generator) -> str:
    if state not in chain._transition_samplers:
        raise NoOutgoingTransitions(f"state {state!r} has no outgoing transitions")
    return chain._transition_samplers[state].draw(rng)


def sample_components(chain: TransitionChain, state: str, rng: np.random.Generator) -> dict[str, Any]:
    if state not in chain._component_samplers:
        raise EmptyComponentDistribution(f"state {state!r} has no component distribution")
    return dict(chain._component_samplers[state].draw(rng))


def export_dot(chain: TransitionChain) -> str:
    """DOT text with lexicographically ordered nodes/edges and 3-decimal probabilities."""
    lines = ["digraph transition_chain {", "  rankdir=LR;"]
    for state in sorted(chain.states):
        lines.append(f'  "{state}";')
    for src in sorted(chain.transitions):
        for dst in sorted(chain.transitions[src]):
            p = float(chain.transitions[src][dst])
            lines.append(f'  "{src}" -> "{dst}" [label="{p:.3f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
