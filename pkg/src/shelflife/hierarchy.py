"""Three-level shelf-life parameter tree with shrinkage toward parents.

Level 1 fits a decay surface per discovered predicate cluster. Level 2
refits the surface coefficients per (cluster, context) with an L2 pull
toward the cluster solution; level 3 does the same per entity under its
context. The shape parameter is shared down a cluster's subtree unless
per-context refitting is switched on. Resolution walks entity -> context
-> cluster and never fails, so sparse or brand-new keys borrow strength
from above.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .clustering import NOISE, ClusterModel, Standardization, assign_cold_start
from .errors import DataError, FitError
from .signals import CENSORED, SUPERSEDED, LifetimeRecord
from .store import EdgeStore
from .survival import (CovTransform, SurfaceFit, fit_surface, observation_gaps,
                       records_to_arrays, refit_theta, tau_floor, theta_to_raw)


@dataclass
class DecayParams:
    theta: np.ndarray            # raw covariate scale: tau = exp(theta . (1, v, s, v*s))
    kappa: float
    tau_floor: float
    n_records: int
    level: str                   # "cluster" | "context" | "entity"
    key: tuple
    parent: Optional[tuple] = None
    no_event: bool = False
    converged: bool = True
    inherited: bool = False

    def to_dict(self) -> dict:
        return {
            "theta": [float(x) for x in self.theta],
            "kappa": float(self.kappa),
            "tau_floor": float(self.tau_floor),
            "n_records": int(self.n_records),
            "level": self.level,
            "key": list(self.key),
            "parent": None if self.parent is None else list(self.parent),
            "no_event": self.no_event,
            "converged": self.converged,
            "inherited": self.inherited,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecayParams":
        return cls(theta=np.asarray(d["theta"], dtype=float), kappa=d["kappa"],
                   tau_floor=d["tau_floor"], n_records=d["n_records"],
                   level=d["level"], key=tuple(d["key"]),
                   parent=None if d["parent"] is None else tuple(d["parent"]),
                   no_event=d["no_event"], converged=d["converged"],
                   inherited=d.get("inherited", False))


@dataclass
class HierarchyModel:
    clusters: dict[int, DecayParams]
    contexts: dict[tuple[int, str], DecayParams]
    entities: dict[tuple[int, str, str], DecayParams]
    cluster_assignment: dict[str, int]
    transforms: dict[int, CovTransform]
    lambda_context: float
    lambda_entity: float
    window: float
    cluster_model: Optional[ClusterModel] = None
    per_context_kappa: bool = False

    def node_count(self) -> dict:
        return {"clusters": len(self.clusters), "contexts": len(self.contexts),
                "entities": len(self.entities)}


def effective_tau(params: DecayParams, v: float, sigma: float) -> float:
    """Shelf life from the decay surface at raw covariates, floored by the
    context observation cadence."""
    x = params.theta[0] + params.theta[1] * v + params.theta[2] * sigma \
        + params.theta[3] * v * sigma
    tau = math.exp(min(x, 700.0))
    return max(tau, params.tau_floor)


def _predicate_features_from_records(recs: Sequence[LifetimeRecord], window: float) -> np.ndarray:
    """Temporal feature vector of a predicate recomputed from its records
    (used to cold-start predicates the cluster model labeled noise)."""
    by_subject: dict[str, tuple[float, float]] = {}
    for r in recs:
        by_subject[r.subject] = (r.velocity, r.volatility)
    vel = float(np.mean([v for v, _ in by_subject.values()]))
    vol = float(np.mean([s for _, s in by_subject.values()]))
    sup = [r.duration for r in recs if r.event == SUPERSEDED]
    n_sup = len(sup)
    n_rei = sum(1 for r in recs if r.event == "reinforcement")
    n_cen = sum(1 for r in recs if r.event == CENSORED)
    tbar = float(np.mean(sup)) if sup else window
    rho = n_sup / (n_sup + n_rei) if (n_sup + n_rei) else 0.0
    sup_rate = n_sup / (n_sup + n_cen) if (n_sup + n_cen) else 0.0
    return np.array([vel, vol, math.log(max(tbar, 1e-12)), rho, sup_rate])


def annotate_clusters(records: Sequence[LifetimeRecord], cluster_model: ClusterModel,
                      window: float) -> None:
    """Fill each record's cluster id from the model; noise or unseen
    predicates are routed through cold-start assignment in place."""
    by_pred: dict[str, list[LifetimeRecord]] = {}
    for r in records:
        by_pred.setdefault(r.predicate, []).append(r)
    resolved: dict[str, int] = {}
    for pred, recs in by_pred.items():
        label = cluster_model.labels.get(pred, NOISE)
        if label == NOISE:
            feats = _predicate_features_from_records(recs, window)
            label = assign_cold_start(cluster_model, raw_features=feats)
        resolved[pred] = int(label)
    for r in records:
        r.cluster = resolved[r.predicate]


def _no_event_params(window: float, level: str, key: tuple, parent, n: int,
                     floor: float) -> DecayParams:
    # never-superseded group: shelf life pinned at the observation window
    return DecayParams(theta=np.array([math.log(max(window, 1e-3)), 0.0, 0.0, 0.0]),
                       kappa=1.0, tau_floor=floor, n_records=n, level=level,
                       key=key, parent=parent, no_event=True)


def fit_hierarchy(records: Sequence[LifetimeRecord], cluster_model: ClusterModel,
                  lambda_context: float = 1.0, lambda_entity: float = 1.0,
                  min_obs: int = 5, min_entity_records: int = 10,
                  per_context_kappa: bool = False,
                  store: Optional[EdgeStore] = None,
                  window: Optional[float] = None) -> HierarchyModel:
    """Fit the cluster -> context -> entity decay-parameter tree.

    Cluster level: full accelerated-failure-time surface fit. Context and
    entity levels: coefficients refitted with the cluster shape held fixed
    and an L2 penalty toward the parent; groups under the record threshold
    inherit the parent coefficients outright. Observation-cadence floors
    are computed per (cluster, context) from the store when provided and
    attached to context and entity nodes.
    """
    records = list(records)
    if window is None:
        if store is not None and store.window is not None:
            window = store.window[1] - store.window[0]
        else:
            window = max((r.duration for r in records), default=1.0)
    annotate_clusters(records, cluster_model, window)

    by_cluster: dict[int, list[LifetimeRecord]] = {}
    for r in records:
        by_cluster.setdefault(r.cluster, []).append(r)

    pred_by_cluster: dict[int, set] = {}
    for r in records:
        pred_by_cluster.setdefault(r.cluster, set()).add(r.predicate)

    clusters: dict[int, DecayParams] = {}
    contexts: dict[tuple[int, str], DecayParams] = {}
    entities: dict[tuple[int, str, str], DecayParams] = {}
    transforms: dict[int, CovTransform] = {}
    surface_by_cluster: dict[int, Optional[SurfaceFit]] = {}

    for cid in sorted(by_cluster):
        recs = by_cluster[cid]
        t, d, v, s = records_to_arrays(recs)
        cluster_floor = 0.0
        if store is not None:
            cluster_floor = tau_floor(observation_gaps(store, pred_by_cluster[cid], None))
        try:
            fit = fit_surface(t, events=d, velocity=v, volatility=s)
            clusters[cid] = DecayParams(theta=fit.theta_raw, kappa=fit.kappa,
                                        tau_floor=cluster_floor, n_records=len(recs),
                                        level="cluster", key=(cid,),
                                        converged=fit.converged)
            transforms[cid] = fit.transform
            surface_by_cluster[cid] = fit
        except FitError:
            clusters[cid] = _no_event_params(window, "cluster", (cid,), None,
                                             len(recs), cluster_floor)
            transforms[cid] = CovTransform.fit(v, s)
            surface_by_cluster[cid] = None

    for cid in sorted(by_cluster):
        recs = by_cluster[cid]
        fit = surface_by_cluster[cid]
        tr = transforms[cid]
        parent = clusters[cid]
        by_context: dict[str, list[LifetimeRecord]] = {}
        for r in recs:
            if r.context is not None:
                by_context.setdefault(r.context, []).append(r)

        for ctx in sorted(by_context):
            crecs = by_context[ctx]
            floor = 0.0
            if store is not None:
                floor = tau_floor(observation_gaps(store, pred_by_cluster[cid], ctx))
            key = (cid, ctx)
            if fit is None:
                contexts[key] = DecayParams(theta=parent.theta.copy(), kappa=parent.kappa,
                                            tau_floor=floor, n_records=len(crecs),
                                            level="context", key=key, parent=(cid,),
                                            no_event=parent.no_event, inherited=True)
                continue
            if len(crecs) < min_obs:
                theta_std = fit.theta.copy()
                kappa = fit.kappa
                contexts[key] = DecayParams(theta=parent.theta.copy(), kappa=kappa,
                                            tau_floor=floor, n_records=len(crecs),
                                            level="context", key=key, parent=(cid,),
                                            inherited=True)
            else:
                t, d, v, s = records_to_arrays(crecs)
                X = tr.design(v, s)
                theta_std, kappa, _, ok = refit_theta(
                    t, d, X, fit.kappa, fit.theta, lambda_context,
                    shrink_kappa_to=fit.kappa if per_context_kappa else None)
                contexts[key] = DecayParams(theta=theta_to_raw(theta_std, tr), kappa=kappa,
                                            tau_floor=floor, n_records=len(crecs),
                                            level="context", key=key, parent=(cid,),
                                            converged=ok)
            by_entity: dict[str, list[LifetimeRecord]] = {}
            for r in crecs:
                if r.entity is not None:
                    by_entity.setdefault(r.entity, []).append(r)
            for ent in sorted(by_entity):
                erecs = by_entity[ent]
                ekey = (cid, ctx, ent)
                if len(erecs) < min_entity_records:
                    continue
                te, de, ve, se = records_to_arrays(erecs)
                Xe = tr.design(ve, se)
                etheta, ekappa, _, eok = refit_theta(
                    te, de, Xe, kappa, theta_std, lambda_entity)
                entities[ekey] = DecayParams(theta=theta_to_raw(etheta, tr), kappa=ekappa,
                                             tau_floor=floor, n_records=len(erecs),
                                             level="entity", key=ekey, parent=key,
                                             converged=eok)

    return HierarchyModel(clusters=clusters, contexts=contexts, entities=entities,
                          cluster_assignment=dict(cluster_model.labels),
                          transforms=transforms, lambda_context=lambda_context,
                          lambda_entity=lambda_entity, window=window,
                          cluster_model=cluster_model,
                          per_context_kappa=per_context_kappa)


def resolve_params(model: HierarchyModel, predicate: str,
                   context: Optional[str] = None, entity: Optional[str] = None,
                   max_level: str = "entity",
                   raw_features: Optional[np.ndarray] = None,
                   embedding: Optional[np.ndarray] = None) -> DecayParams:
    """Deepest available parameter node for (predicate, context, entity).

    Unknown predicates are routed through cold-start cluster assignment
    when a feature vector or embedding is supplied; otherwise the largest
    fitted cluster serves as the fallback prior. max_level caps the walk
    ("cluster", "context" or "entity") so retrieval can rank at a chosen
    hierarchy depth.
    """
    cid = model.cluster_assignment.get(predicate)
    if cid is None or cid == NOISE:
        if model.cluster_model is not None and (raw_features is not None or embedding is not None):
            cid = assign_cold_start(model.cluster_model, raw_features=raw_features,
                                    embedding=embedding)
        else:
            cid = max(model.clusters, key=lambda c: model.clusters[c].n_records)
    if cid not in model.clusters:
        cid = max(model.clusters, key=lambda c: model.clusters[c].n_records)
    if max_level == "entity" and context is not None and entity is not None:
        node = model.entities.get((cid, context, entity))
        if node is not None:
            return node
    if max_level in ("entity", "context") and context is not None:
        node = model.contexts.get((cid, context))
        if node is not None:
            return node
    return model.clusters[cid]


# ---------------------------------------------------------------------------
# Snapshot serialization


def model_to_dict(model: HierarchyModel) -> dict:
    out = {
        "window": float(model.window),
        "lambda_context": float(model.lambda_context),
        "lambda_entity": float(model.lambda_entity),
        "per_context_kappa": model.per_context_kappa,
        "cluster_assignment": {k: int(v) for k, v in sorted(model.cluster_assignment.items())},
        "transforms": {str(cid): tr.to_dict() for cid, tr in sorted(model.transforms.items())},
        "clusters": [model.clusters[k].to_dict() for k in sorted(model.clusters)],
        "contexts": [model.contexts[k].to_dict() for k in sorted(model.contexts)],
        "entities": [model.entities[k].to_dict() for k in sorted(model.entities)],
    }
    cm = model.cluster_model
    if cm is not None:
        out["cluster_model"] = {
            "method": cm.method,
            "labels": {k: int(v) for k, v in sorted(cm.labels.items())},
            "centroids": {str(c): [float(x) for x in v] for c, v in sorted(cm.centroids.items())},
            "standardization": cm.standardization.to_dict(),
            "embedding_centroids": {str(c): [float(x) for x in v]
                                    for c, v in sorted(cm.embedding_centroids.items())},
            "converged": cm.converged,
        }
    return out


def model_from_dict(d: dict) -> HierarchyModel:
    cm = None
    if "cluster_model" in d:
        c = d["cluster_model"]
        cm = ClusterModel(
            method=c["method"],
            labels={k: int(v) for k, v in c["labels"].items()},
            centroids={int(k): np.asarray(v, dtype=float) for k, v in c["centroids"].items()},
            standardization=Standardization.from_dict(c["standardization"]),
            embedding_centroids={int(k): np.asarray(v, dtype=float)
                                 for k, v in c["embedding_centroids"].items()},
            converged=c["converged"],
        )
    clusters = {tuple(x["key"])[0]: DecayParams.from_dict(x) for x in d["clusters"]}
    contexts = {tuple(x["key"]): DecayParams.from_dict(x) for x in d["contexts"]}
    entities = {tuple(x["key"]): DecayParams.from_dict(x) for x in d["entities"]}
    return HierarchyModel(
        clusters=clusters, contexts=contexts, entities=entities,
        cluster_assignment={k: int(v) for k, v in d["cluster_assignment"].items()},
        transforms={int(k): CovTransform.from_dict(v) for k, v in d["transforms"].items()},
        lambda_context=d["lambda_context"], lambda_entity=d["lambda_entity"],
        window=d["window"], cluster_model=cm,
        per_context_kappa=d.get("per_context_kappa", False),
    )


def save_model(model: HierarchyModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=1)


def load_model(path) -> HierarchyModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
