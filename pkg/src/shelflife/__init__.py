"""Heterogeneous temporal decay for knowledge-graph retrieval."""

from .errors import ConfigError, DataError, FitError, ShelfLifeError
from .store import Edge, EdgeStore, Value, concept_history, embed_distance, load_edges, write_edges
from .signals import (CENSORED, REINFORCEMENT, SUPERSEDED, ConceptSignals,
                      LifetimeRecord, PredicateStats, compute_velocity,
                      compute_volatility, concept_covariates, concept_signals,
                      extract_lifetimes, predicate_signals, write_lifetimes_csv)
from .clustering import (ClusterModel, PredicateProfile, assign_cold_start,
                         build_profiles, cluster_density, cluster_dpmixture,
                         cluster_metrics, silhouette)
from .survival import (ParamFit, SurfaceFit, compare_aic, exponential_pdf,
                       exponential_sf, fit_exponential, fit_lognormal,
                       fit_parametric, fit_surface, fit_weibull,
                       hazard_decreasing_at, lognormal_hazard_peak,
                       lognormal_pdf, lognormal_sf, tau_floor, weibull_pdf,
                       weibull_sf)
from .hierarchy import (DecayParams, HierarchyModel, effective_tau,
                        fit_hierarchy, load_model, resolve_params, save_model)
from .retrieval import (METHODS, Query, RankedResult, ScoredEdge, rank,
                        score_edge, semantic_sim, uniform_decay_params)
from .generator import (ClusterSpec, ContextSpec, GenConfig, GroundTruth,
                        default_config, dump, generate, load_truth)
from .evaluation import (BenchmarkReport, TemporalQuery, generate_queries,
                         metrics, ndcg_at_k, precision_at_k, reciprocal_rank,
                         run_benchmark, threshold_sweep)

__version__ = "0.1.0"
