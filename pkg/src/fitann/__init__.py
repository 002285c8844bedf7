"""fitann: workload-fitted filtered vector search.

Fits a memory-budgeted collection of small-world graph subindexes to an
observed query-filter workload with an analytical size/speed/recall model,
and serves filtered top-k queries by dynamically choosing the cheapest
strategy (parameterized subindex search or brute-force scan) at a target
recall.
"""
from .bitmaps import Bitmap, bitmap, cardinality, subsumes_bitmap
from .costmodel import (CostParams, QueryCost, brute_cost, calibrate_gamma,
                        index_model_size, indexed_cost, m_downscale,
                        query_cost, sef_downscale)
from .dataset import AttributedDataset, AttributeSet, attribute_sets
from .filters import (TRUE, And, AttrContains, FilterExpr, FilterParseError,
                      Or, Range, TrueFilter, and_, canonical_key,
                      canonicalize, evaluate, or_, parse, subsumes_logical,
                      to_text)
from .hnsw import HnswGraph, SearchResult, brute_force_knn
from .optimizer import (CandidateDag, CandidateNode, RefitResult,
                        SelectionResult, WorkloadTally, build_candidate_dag,
                        collection_cost, greedy_ratio, marginal_benefit,
                        prune_candidates, refit, selection_manifest)
from .serving import IndexCollection, ServingPlan, SubindexEntry, build_hasse

__version__ = "0.1.0"

__all__ = [
    "AttributeSet", "AttributedDataset", "attribute_sets",
    "FilterExpr", "TrueFilter", "AttrContains", "Range", "And", "Or", "TRUE",
    "parse", "to_text", "canonicalize", "canonical_key", "evaluate",
    "subsumes_logical", "FilterParseError", "and_", "or_",
    "Bitmap", "bitmap", "cardinality", "subsumes_bitmap",
    "CostParams", "QueryCost", "m_downscale", "sef_downscale",
    "index_model_size", "indexed_cost", "brute_cost", "calibrate_gamma",
    "query_cost",
    "HnswGraph", "SearchResult", "brute_force_knn",
    "WorkloadTally", "CandidateDag", "CandidateNode", "SelectionResult",
    "RefitResult", "build_candidate_dag", "prune_candidates",
    "marginal_benefit", "greedy_ratio", "collection_cost", "refit",
    "selection_manifest",
    "IndexCollection", "ServingPlan", "SubindexEntry", "build_hasse",
]
