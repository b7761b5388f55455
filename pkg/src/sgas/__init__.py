"""Sequential greedy architecture search on a small numpy autodiff engine."""
__version__ = "0.1.0"

from .criteria import CriterionScores, DecisionHistory, score_edges
from .datasets import Dataset, load_csv, make_blobs, make_spirals, split
from .estimators import SGASSearch, StandaloneClassifier
from .evaluation import EvalConfig, kendall_tau, run_experiment
from .search import SearchConfig, SearchResult, run_search
from .supernet import Genotype, SuperNetwork, instantiate_standalone, toy_operation_set

__all__ = [
    "CriterionScores", "DecisionHistory", "score_edges",
    "Dataset", "load_csv", "make_blobs", "make_spirals", "split",
    "SGASSearch", "StandaloneClassifier",
    "EvalConfig", "kendall_tau", "run_experiment",
    "SearchConfig", "SearchResult", "run_search",
    "Genotype", "SuperNetwork", "instantiate_standalone", "toy_operation_set",
]
