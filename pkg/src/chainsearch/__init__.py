"""chainsearch: evolutionary CNN architecture search over layer-transition chains."""

__version__ = "0.1.0"

from .arch import (
    Architecture,
    Layer,
    canonical_hash,
    infer_shapes,
    param_count,
    parse_architecture,
    to_document,
    validate_architecture,
)
from .chain import TransitionChain, build_chain, export_dot, sample_components, sample_transition
from .evaluator import EvalBudget, EvaluationRequest, EvaluationResult, surrogate_evaluate
from .population import Individual, Origin, Population, build_search_space
from .search import SearchConfig, SearchResult, generate_architecture, run_search, select_parent
