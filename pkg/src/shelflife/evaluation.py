"""Temporal-query benchmark: query sampling, rank metrics, six-condition
comparison and the change-threshold sensitivity sweep.

Ground-truth relevance for a query (concept, t_q) is the set of the
concept's edges that exist at t_q and are not superseded by any other edge
up to t_q; supersession is recomputed against t_q, so values replaced only
later still count as current. The candidate pool is the queried subject's
edges, which keeps the distractors informative (the subject's other
predicates and the concept's own stale values).

Distractor similarities are graded rather than binary: with exact 0/1
matching and deterministic tie-breaking every weighting method produces
the same ranking (matching edges first, newest first), and the comparison
degenerates. Each query therefore assigns the queried concept similarity
1.0 and every other predicate of the subject a reproducible pseudo-random
similarity in [sim_low, sim_high].
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .clustering import build_profiles, cluster_density, cluster_metrics
from .errors import DataError
from .hierarchy import HierarchyModel, fit_hierarchy
from .retrieval import METHODS, Query, RankedResult, rank, uniform_decay_params
from .signals import (SUPERSEDED, EpsilonSpec, LifetimeRecord, concept_covariates,
                      epsilon_for, extract_lifetimes, predicate_signals)
from .store import EdgeStore, embed_distance
from .survival import fit_weibull


@dataclass
class TemporalQuery:
    subject: str
    predicate: str
    t_q: float
    relevant: frozenset
    sim_table: dict
    flagged: bool = False


@dataclass
class BenchmarkReport:
    per_method: dict[str, dict[str, float]]
    n_queries: int
    seed: int
    tau_uniform: float
    half_life: float
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"per_method": self.per_method, "n_queries": self.n_queries,
                "seed": self.seed, "tau_uniform": self.tau_uniform,
                "half_life": self.half_life, "config": self.config}


# ---------------------------------------------------------------------------
# Ranking metrics


def dcg_at_k(gains: Sequence[float], k: int) -> float:
    g = np.asarray(gains, dtype=float)[:k]
    if g.size == 0:
        return 0.0
    return float((g / np.log2(np.arange(2, g.size + 2))).sum())


def ndcg_at_k(ranked_ids: Sequence[int], relevant: frozenset, k: int) -> float:
    if k < 1:
        raise DataError("k must be >= 1")
    if not relevant:
        return 0.0
    gains = [1.0 if rid in relevant else 0.0 for rid in ranked_ids[:k]]
    ideal = dcg_at_k([1.0] * min(len(relevant), k), k)
    return dcg_at_k(gains, k) / ideal if ideal > 0 else 0.0


def precision_at_k(ranked_ids: Sequence[int], relevant: frozenset, k: int) -> float:
    if k < 1:
        raise DataError("k must be >= 1")
    hits = sum(1 for rid in ranked_ids[:k] if rid in relevant)
    return hits / k


def reciprocal_rank(ranked_ids: Sequence[int], relevant: frozenset) -> float:
    for i, rid in enumerate(ranked_ids, start=1):
        if rid in relevant:
            return 1.0 / i
    return 0.0


def metrics(ranked: RankedResult, relevant: frozenset, k: int) -> tuple[float, float, float]:
    """(ndcg@k, p@k, reciprocal rank); all zero for an empty relevant set."""
    ids = ranked.ids()
    if not relevant:
        return 0.0, 0.0, 0.0
    return (ndcg_at_k(ids, relevant, k), precision_at_k(ids, relevant, k),
            reciprocal_rank(ids, relevant))


# ---------------------------------------------------------------------------
# Query generation


def current_edge_ids(store: EdgeStore, subject: str, predicate: str, t_q: float,
                     epsilon: EpsilonSpec, metric: str = "euclidean") -> frozenset:
    """Edges of the concept at t_q that no other edge up to t_q supersedes."""
    eps = epsilon_for(epsilon, predicate)
    hist = [e for e in store.history(subject, predicate) if e.t <= t_q]
    if not hist:
        return frozenset()
    emb = np.vstack([e.value.embedding for e in hist])
    diff = emb[:, None, :] - emb[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    ts = np.array([e.t for e in hist])
    ids = np.array([e.id for e in hist])
    later = (ts[None, :] > ts[:, None]) | ((ts[None, :] == ts[:, None]) & (ids[None, :] > ids[:, None]))
    superseded = ((dist > eps) & later).any(axis=1)
    return frozenset(int(ids[i]) for i in range(len(hist)) if not superseded[i])


def generate_queries(store: EdgeStore, epsilon: EpsilonSpec, n: int = 200,
                     seed: int = 0, sim_low: float = 0.1, sim_high: float = 0.35,
                     ) -> list[TemporalQuery]:
    """Sample n (concept, t_q) queries with t_q uniform over the window's
    second half and the concept uniform among those already observed by
    t_q. Flags queries when the store is too small for distinct draws."""
    if n < 1:
        raise DataError("n must be >= 1")
    if store.window is None:
        raise DataError("store has no window")
    rng = np.random.default_rng(seed)
    t0, t1 = store.window
    concepts = store.concepts()
    first_t = {c: store.history(*c)[0].t for c in concepts}
    predicates = store.predicates()

    queries: list[TemporalQuery] = []
    seen: set[tuple[str, str, float]] = set()
    duplicates = 0
    for _ in range(n):
        t_q = float(rng.uniform((t0 + t1) / 2.0, t1))
        eligible = [c for c in concepts if first_t[c] <= t_q]
        if not eligible:
            continue
        subject, predicate = eligible[int(rng.integers(len(eligible)))]
        key = (subject, predicate, round(t_q, 6))
        if key in seen:
            duplicates += 1
        seen.add(key)
        relevant = current_edge_ids(store, subject, predicate, t_q, epsilon)
        sims = {p: float(rng.uniform(sim_low, sim_high)) for p in predicates}
        sims[predicate] = 1.0
        queries.append(TemporalQuery(subject=subject, predicate=predicate, t_q=t_q,
                                     relevant=relevant, sim_table=sims,
                                     flagged=not relevant))
    if duplicates:
        warnings.warn(f"{duplicates} duplicate queries sampled (store too small)")
    return queries


# ---------------------------------------------------------------------------
# Benchmark


def run_benchmark(store: EdgeStore, model: Optional[HierarchyModel],
                  queries: Sequence[TemporalQuery],
                  records: Optional[Sequence[LifetimeRecord]] = None,
                  methods: Sequence[str] = METHODS,
                  alpha: float = 1.0, beta: float = 1.0,
                  tau_uniform: Optional[float] = None,
                  half_life: Optional[float] = None,
                  seed: int = 0) -> BenchmarkReport:
    """Rank every query under every method and aggregate mean metrics."""
    if any(m.startswith("level") for m in methods) and model is None:
        raise DataError("hierarchical methods need a fitted model")
    if tau_uniform is None or half_life is None:
        if records is None:
            raise DataError("need records (or explicit rates) for uniform baselines")
        tu, hl = uniform_decay_params(records)
        tau_uniform = tau_uniform if tau_uniform is not None else tu
        half_life = half_life if half_life is not None else hl
    covariates = concept_covariates(store)

    per_method: dict[str, dict[str, float]] = {}
    for method in methods:
        rows = []
        for tq in queries:
            q = Query(t_q=tq.t_q, subject=tq.subject, predicate=tq.predicate,
                      alpha=alpha, beta=beta, method=method, sim_table=tq.sim_table,
                      tau_uniform=tau_uniform, half_life=half_life)
            ranked = rank(store, q, model=model, covariates=covariates)
            n5, p5, rr = metrics(ranked, tq.relevant, 5)
            n10, p10, _ = metrics(ranked, tq.relevant, 10)
            rows.append((n5, n10, rr, p5, p10))
        arr = np.asarray(rows) if rows else np.zeros((0, 5))
        per_method[method] = {
            "ndcg@5": float(arr[:, 0].mean()) if len(arr) else 0.0,
            "ndcg@10": float(arr[:, 1].mean()) if len(arr) else 0.0,
            "mrr": float(arr[:, 2].mean()) if len(arr) else 0.0,
            "p@5": float(arr[:, 3].mean()) if len(arr) else 0.0,
            "p@10": float(arr[:, 4].mean()) if len(arr) else 0.0,
        }
    return BenchmarkReport(per_method=per_method, n_queries=len(queries), seed=seed,
                           tau_uniform=float(tau_uniform), half_life=float(half_life))


# ---------------------------------------------------------------------------
# Threshold sensitivity sweep


@dataclass
class SweepRow:
    epsilon: float
    n_clusters: int
    ari: Optional[float]
    nmi: Optional[float]
    n_superseded: int
    kappa_by_cluster: dict[int, float]


def threshold_sweep(store: EdgeStore, epsilons: Sequence[float],
                    truth_labels: Optional[Mapping[str, int]] = None,
                    min_obs: int = 5, min_cluster_size: int = 3,
                    min_samples: int = 2) -> list[SweepRow]:
    """Re-run extract -> profile -> cluster -> per-cluster shape fit for
    each threshold and report cluster counts, recovery and shapes."""
    if len(epsilons) < 2:
        raise DataError("sweep needs at least 2 threshold values")
    if store.window is None:
        raise DataError("store has no window")
    window = store.window[1] - store.window[0]
    rows: list[SweepRow] = []
    for eps in epsilons:
        records = extract_lifetimes(store, eps)
        stats, _ = predicate_signals(store, records)
        profiles, _ = build_profiles(stats, window=window, min_obs=min_obs)
        model = cluster_density(profiles, min_cluster_size=min_cluster_size,
                                min_samples=min_samples)
        ari = nmi = None
        if truth_labels is not None:
            preds = [p.predicate for p in profiles]
            a = [truth_labels[p] for p in preds]
            b = [model.labels[p] for p in preds]
            ari, nmi = cluster_metrics(a, b)
        kappas: dict[int, float] = {}
        by_cluster: dict[int, list[LifetimeRecord]] = {}
        for r in records:
            cid = model.labels.get(r.predicate, -1)
            if cid != -1:
                by_cluster.setdefault(cid, []).append(r)
        for cid, recs in sorted(by_cluster.items()):
            try:
                kappas[cid] = fit_weibull(recs).params["kappa"]
            except Exception:
                kappas[cid] = float("nan")
        rows.append(SweepRow(epsilon=float(eps), n_clusters=model.n_clusters,
                             ari=ari, nmi=nmi,
                             n_superseded=sum(1 for r in records if r.event == SUPERSEDED),
                             kappa_by_cluster=kappas))
    return rows


# ---------------------------------------------------------------------------
# Report output


def write_benchmark_csv(report: BenchmarkReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        cols = ["ndcg@5", "ndcg@10", "mrr", "p@5", "p@10"]
        w.writerow(["method", *cols])
        for method, vals in report.per_method.items():
            w.writerow([method, *[f"{vals[c]:.4f}" for c in cols]])


def write_benchmark_json(report: BenchmarkReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)


def write_survival_curves_tsv(model: HierarchyModel, path,
                              t_grid: Optional[Sequence[float]] = None) -> None:
    """Per-cluster survival curves S(t) at cluster-mean covariates, for
    external plotting."""
    from .hierarchy import effective_tau
    from .survival import weibull_sf
    if t_grid is None:
        t_grid = np.geomspace(0.1, max(model.window, 1.0), 200)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("cluster\tt_days\tsurvival\n")
        for cid, params in sorted(model.clusters.items()):
            tr = model.transforms.get(cid)
            v, s_cov = (tr.mean_v, tr.mean_s) if tr is not None else (0.0, 0.0)
            tau = effective_tau(params, v, s_cov)
            tau = max(tau, params.tau_floor, 1e-6)
            for t in t_grid:
                s = weibull_sf(float(t), tau, params.kappa)
                fh.write(f"{cid}\t{float(t):.6g}\t{s:.6g}\n")
