"""Unsupervised discovery of temporal knowledge types over predicates.

Each predicate gets a 5-feature temporal profile (velocity, volatility,
log mean lifetime, change fraction, supersession rate), z-scored across
predicates. Two backends cluster the profiles: a from-scratch density
method (mutual-reachability distances, minimum spanning tree, single
linkage, excess-of-mass flat extraction) and a truncated Dirichlet-process
Gaussian mixture (variational EM, diagonal covariances). Recovery metrics
and a nearest-centroid cold-start assignment round out the module.
"""

from __future__ import annotations

import json
import csv
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from sklearn.metrics import (adjusted_rand_score, normalized_mutual_info_score,
                             silhouette_score)
from sklearn.mixture import BayesianGaussianMixture

from .errors import DataError
from .signals import PredicateStats

NOISE = -1


@dataclass
class Standardization:
    means: np.ndarray
    sds: np.ndarray

    def transform(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw, dtype=float) - self.means) / self.sds

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "sds": self.sds.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardization":
        return cls(np.asarray(d["means"], dtype=float), np.asarray(d["sds"], dtype=float))


@dataclass
class PredicateProfile:
    predicate: str
    features: np.ndarray                 # raw feature values
    zfeatures: np.ndarray                # z-scored across predicates
    embedding: Optional[np.ndarray] = None
    n_records: int = 0


@dataclass
class ClusterModel:
    method: str
    labels: dict[str, int]
    centroids: dict[int, np.ndarray]     # standardized feature space
    standardization: Standardization
    embedding_centroids: dict[int, np.ndarray] = field(default_factory=dict)
    converged: bool = True

    @property
    def n_clusters(self) -> int:
        return len(self.centroids)

    def label_vector(self, predicates: Sequence[str]) -> np.ndarray:
        return np.array([self.labels[p] for p in predicates], dtype=int)


FEATURE_NAMES = ("velocity", "volatility", "log_mean_lifetime",
                 "change_fraction", "supersession_rate")


def build_profiles(pred_stats: Mapping[str, PredicateStats], window: float,
                   min_obs: int = 5,
                   embeddings: Optional[Mapping[str, np.ndarray]] = None,
                   ) -> tuple[list[PredicateProfile], Standardization]:
    """Assemble and z-score per-predicate temporal feature vectors.

    Predicates with fewer than min_obs records are excluded. A predicate
    with no observed supersessions gets the window length as its mean
    lifetime so the log stays finite.
    """
    names = sorted(p for p, st in pred_stats.items() if st.n_records >= min_obs)
    if len(names) < 2:
        raise DataError(f"need at least 2 eligible predicates, got {len(names)}")
    rows = []
    for p in names:
        st = pred_stats[p]
        tbar = st.mean_lifetime
        if not np.isfinite(tbar):
            tbar = window
        rows.append([st.velocity, st.volatility, np.log(max(tbar, 1e-12)),
                     st.change_fraction, st.supersession_rate])
    raw = np.asarray(rows, dtype=float)
    means = raw.mean(axis=0)
    sds = raw.std(axis=0)
    sds = np.where(sds > 1e-12, sds, 1.0)
    std = Standardization(means=means, sds=sds)
    z = (raw - means) / sds
    profiles = [
        PredicateProfile(predicate=p, features=raw[i], zfeatures=z[i],
                         embedding=None if embeddings is None else embeddings.get(p),
                         n_records=pred_stats[p].n_records)
        for i, p in enumerate(names)
    ]
    return profiles, std


# ---------------------------------------------------------------------------
# Density backend


def _mutual_reachability(X: np.ndarray, min_samples: int) -> np.ndarray:
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    k = min(min_samples, X.shape[0]) - 1
    core = np.sort(dist, axis=1)[:, k]
    mr = np.maximum(dist, np.maximum(core[:, None], core[None, :]))
    np.fill_diagonal(mr, 0.0)
    return mr


def _prim_mst(weights: np.ndarray) -> list[tuple[float, int, int]]:
    n = weights.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    best_from = np.full(n, -1, dtype=int)
    in_tree[0] = True
    best_cand = weights[0].copy()
    best_cand[0] = np.inf
    best = best_cand
    best_from[:] = 0
    edges = []
    for _ in range(n - 1):
        j = int(np.argmin(np.where(in_tree, np.inf, best)))
        edges.append((float(best[j]), int(best_from[j]), j))
        in_tree[j] = True
        closer = weights[j] < best
        upd = closer & ~in_tree
        best[upd] = weights[j][upd]
        best_from[upd] = j
    edges.sort(key=lambda e: (e[0], e[1], e[2]))
    return edges


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(2 * n - 1))
        self.size = [1] * n + [0] * (n - 1)
        self.next_node = n

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def merge(self, a: int, b: int) -> int:
        node = self.next_node
        self.next_node += 1
        self.parent[a] = node
        self.parent[b] = node
        self.size[node] = self.size[a] + self.size[b]
        return node


def _single_linkage_tree(mst_edges, n: int):
    """Merge tree from sorted MST edges: node -> (left, right, distance)."""
    uf = _UnionFind(n)
    children: dict[int, tuple[int, int, float]] = {}
    for w, a, b in mst_edges:
        ra, rb = uf.find(a), uf.find(b)
        node = uf.merge(ra, rb)
        children[node] = (ra, rb, w)
    return children, 2 * n - 2  # root id


def _leaves_under(node: int, children, n: int) -> list[int]:
    out, stack = [], [node]
    while stack:
        cur = stack.pop()
        if cur < n:
            out.append(cur)
        else:
            l, r, _ = children[cur]
            stack.extend((l, r))
    return out


def _condense_tree(children, root: int, n: int, min_cluster_size: int):
    """Collapse the merge tree into clusters of >= min_cluster_size points.

    Returns a list of condensed clusters, each with birth lambda, the
    lambda at which each member point leaves, and child cluster ids.
    """
    clusters = []

    def new_cluster(birth_lambda: float, parent: Optional[int]) -> int:
        clusters.append({"birth": birth_lambda, "parent": parent,
                         "leave": [], "children": [], "points": []})
        return len(clusters) - 1

    def lam_of(dist: float) -> float:
        return 1.0 / max(dist, 1e-12)

    root_cid = new_cluster(0.0, None)
    stack = [(root, root_cid)]
    while stack:
        node, cid = stack.pop()
        if node < n:
            # cluster shrank to a single point: it leaves "at the end"
            clusters[cid]["leave"].append((node, np.inf))
            clusters[cid]["points"].append(node)
            continue
        l, r, dist = children[node]
        lam = lam_of(dist)
        size_l = len(_leaves_under(l, children, n))
        size_r = len(_leaves_under(r, children, n))
        big_l = size_l >= min_cluster_size
        big_r = size_r >= min_cluster_size
        if big_l and big_r:
            for child in (l, r):
                sub = new_cluster(lam, cid)
                clusters[cid]["children"].append(sub)
                pts = _leaves_under(child, children, n)
                clusters[cid]["leave"].extend((p, lam) for p in pts)
                clusters[cid]["points"].extend(pts)
                stack.append((child, sub))
        elif big_l or big_r:
            keep, drop = (l, r) if big_l else (r, l)
            pts = _leaves_under(drop, children, n)
            clusters[cid]["leave"].extend((p, lam) for p in pts)
            clusters[cid]["points"].extend(pts)
            stack.append((keep, cid))
        else:
            pts = _leaves_under(node, children, n)
            clusters[cid]["leave"].extend((p, lam) for p in pts)
            clusters[cid]["points"].extend(pts)
    return clusters


def _stability(cluster) -> float:
    birth = cluster["birth"]
    total = 0.0
    for _, lam in cluster["leave"]:
        contrib = (lam - birth) if np.isfinite(lam) else 1e12
        total += contrib
    return total


def _select_clusters(clusters) -> list[int]:
    """Excess-of-mass: keep a cluster unless its children are jointly more
    stable. The root competes only when the tree never split."""
    if len(clusters) == 1:
        return [0] if clusters[0]["points"] else []
    order = sorted(range(len(clusters)), key=lambda c: clusters[c]["birth"], reverse=True)
    stab = {c: _stability(clusters[c]) for c in range(len(clusters))}
    selected = {c: True for c in range(len(clusters))}
    for c in order:
        kids = clusters[c]["children"]
        if not kids:
            continue
        child_total = sum(stab[k] for k in kids)
        if c == 0 or child_total > stab[c]:
            # the root never competes; elsewhere the children win on mass
            stab[c] = child_total
            selected[c] = False
        else:
            stack = list(kids)
            while stack:
                k = stack.pop()
                selected[k] = False
                stack.extend(clusters[k]["children"])
    return [c for c in range(1, len(clusters)) if selected[c]]


def cluster_density(profiles: Sequence[PredicateProfile], min_cluster_size: int = 3,
                    min_samples: int = 2) -> ClusterModel:
    """Density clustering of predicate profiles in standardized space.

    Core distances come from the min_samples-th neighbor, a minimum
    spanning tree over mutual-reachability distances gives the single
    linkage hierarchy, and flat clusters are extracted by the
    excess-of-mass stability rule. Points in no stable cluster are noise
    (label -1).
    """
    if len(profiles) < min_cluster_size:
        raise DataError(f"need at least {min_cluster_size} profiles, got {len(profiles)}")
    X = np.vstack([p.zfeatures for p in profiles])
    n = X.shape[0]
    mr = _mutual_reachability(X, min_samples)
    edges = _prim_mst(mr)
    children, root = _single_linkage_tree(edges, n)
    condensed = _condense_tree(children, root, n, min_cluster_size)
    chosen = _select_clusters(condensed)

    point_label = np.full(n, NOISE, dtype=int)
    chosen_sorted = sorted(chosen, key=lambda c: min(condensed[c]["points"]))
    for cid, c in enumerate(chosen_sorted):
        for p in condensed[c]["points"]:
            point_label[p] = cid

    if not chosen:
        warnings.warn("density clustering found no stable cluster; all points noise")

    labels = {profiles[i].predicate: int(point_label[i]) for i in range(n)}
    return _finalize_model("density", labels, profiles)


def _finalize_model(method: str, labels: dict[str, int],
                    profiles: Sequence[PredicateProfile],
                    converged: bool = True) -> ClusterModel:
    by_pred = {p.predicate: p for p in profiles}
    centroids: dict[int, np.ndarray] = {}
    emb_centroids: dict[int, np.ndarray] = {}
    for cid in sorted({l for l in labels.values() if l != NOISE}):
        members = [by_pred[p] for p, l in labels.items() if l == cid]
        centroids[cid] = np.mean([m.zfeatures for m in members], axis=0)
        embs = [m.embedding for m in members if m.embedding is not None]
        if embs:
            emb_centroids[cid] = np.mean(embs, axis=0)
    raw = np.vstack([p.features for p in profiles])
    means = raw.mean(axis=0)
    sds = raw.std(axis=0)
    sds = np.where(sds > 1e-12, sds, 1.0)
    return ClusterModel(method=method, labels=labels, centroids=centroids,
                        standardization=Standardization(means, sds),
                        embedding_centroids=emb_centroids, converged=converged)


def cluster_dpmixture(profiles: Sequence[PredicateProfile], max_components: int = 10,
                      weight_concentration: float = 1.0, seed: int = 0) -> ClusterModel:
    """Truncated Dirichlet-process Gaussian mixture over predicate profiles.

    Variational EM with diagonal covariances; components whose posterior
    weight falls below 1/(10 * max_components) are dropped and labels are
    the argmax responsibility among the survivors.
    """
    if len(profiles) < 2:
        raise DataError("need at least 2 profiles")
    X = np.vstack([p.zfeatures for p in profiles])
    n_comp = min(max_components, X.shape[0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        bgm = BayesianGaussianMixture(
            n_components=n_comp,
            covariance_type="diag",
            weight_concentration_prior_type="dirichlet_process",
            weight_concentration_prior=weight_concentration,
            random_state=seed,
            max_iter=500,
            n_init=1,
            reg_covar=1e-6,
        )
        bgm.fit(X)
        resp = bgm.predict_proba(X)
    keep = np.where(bgm.weights_ >= 1.0 / (10.0 * max_components))[0]
    if keep.size == 0:
        keep = np.array([int(np.argmax(bgm.weights_))])
    sub = resp[:, keep]
    raw_labels = keep[np.argmax(sub, axis=1)]
    # compact relabel in order of first appearance over sorted predicates
    order: dict[int, int] = {}
    labels: dict[str, int] = {}
    for p, rl in zip(profiles, raw_labels):
        if rl not in order:
            order[int(rl)] = len(order)
        labels[p.predicate] = order[int(rl)]
    if not bgm.converged_:
        warnings.warn("dpmixture variational EM did not converge; best iterate returned")
    return _finalize_model("dpmixture", labels, profiles, converged=bool(bgm.converged_))


# ---------------------------------------------------------------------------
# Metrics


def cluster_metrics(labels_a: Sequence[int], labels_b: Sequence[int]) -> tuple[float, float]:
    """(adjusted Rand index, normalized mutual information)."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise DataError("label vectors must have equal length")
    ari = float(adjusted_rand_score(a, b))
    nmi = float(normalized_mutual_info_score(a, b))
    return ari, nmi


def silhouette(profiles: Sequence[PredicateProfile], labels: Sequence[int]) -> float:
    X = np.vstack([p.zfeatures for p in profiles])
    lab = np.asarray(labels)
    if len(set(lab.tolist())) < 2:
        raise DataError("silhouette needs at least 2 clusters")
    return float(silhouette_score(X, lab))


def assign_cold_start(model: ClusterModel, profile: Optional[PredicateProfile] = None,
                      raw_features: Optional[np.ndarray] = None,
                      embedding: Optional[np.ndarray] = None) -> int:
    """Assign a new predicate to its nearest cluster.

    A temporal profile (raw features) wins when available; otherwise the
    predicate-name embedding is matched against per-cluster embedding
    centroids. Ties break toward the lower cluster id.
    """
    if not model.centroids:
        raise DataError("model has no clusters")
    if profile is not None and raw_features is None:
        raw_features = profile.features
    if raw_features is not None:
        z = model.standardization.transform(raw_features)
        best, best_d = None, np.inf
        for cid in sorted(model.centroids):
            d = float(np.linalg.norm(z - model.centroids[cid]))
            if d < best_d - 1e-12:
                best, best_d = cid, d
        return int(best)
    if embedding is not None:
        if not model.embedding_centroids:
            raise DataError("model has no embedding centroids for cold start")
        emb = np.asarray(embedding, dtype=float)
        best, best_d = None, np.inf
        for cid in sorted(model.embedding_centroids):
            d = float(np.linalg.norm(emb - model.embedding_centroids[cid]))
            if d < best_d - 1e-12:
                best, best_d = cid, d
        return int(best)
    raise DataError("need a profile or an embedding for cold start")


# ---------------------------------------------------------------------------
# Reports


def write_cluster_csv(profiles: Sequence[PredicateProfile], model: ClusterModel, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["predicate", "cluster_id", *FEATURE_NAMES])
        for p in sorted(profiles, key=lambda q: q.predicate):
            w.writerow([p.predicate, model.labels[p.predicate],
                        *[f"{x:.6g}" for x in p.features]])


def cluster_summary(profiles: Sequence[PredicateProfile], model: ClusterModel) -> dict:
    by_cluster: dict[int, list[str]] = {}
    for p, l in model.labels.items():
        by_cluster.setdefault(l, []).append(p)
    out = {"method": model.method, "n_clusters": model.n_clusters, "clusters": []}
    for cid in sorted(model.centroids):
        out["clusters"].append({
            "cluster_id": cid,
            "size": len(by_cluster.get(cid, [])),
            "predicates": sorted(by_cluster.get(cid, [])),
            "centroid": [round(float(x), 6) for x in model.centroids[cid]],
            "interpretation": "",
        })
    noise = sorted(by_cluster.get(NOISE, []))
    if noise:
        out["noise_predicates"] = noise
    return out


def write_cluster_summary(profiles, model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cluster_summary(profiles, model), fh, indent=2)
