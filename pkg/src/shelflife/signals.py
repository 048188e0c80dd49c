"""Velocity/volatility signals and survival-record extraction.

Velocity is the observation rate of a concept; volatility is the mean
embedding distance between consecutive observed values and is deliberately
not normalized by time, so the two stay orthogonal. Walking each concept's
history against a per-predicate change threshold yields the survival
dataset: superseded spans (events), reinforcements and window-end censoring
(both right-censored).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import DataError
from .store import Edge, EdgeStore, embed_distance

SUPERSEDED = "superseded"
CENSORED = "censored"
REINFORCEMENT = "reinforcement"

EpsilonSpec = Union[float, Mapping[str, float]]


@dataclass(slots=True)
class ConceptSignals:
    velocity: float
    volatility: float
    n_obs: int
    vol_defined: bool


@dataclass(slots=True)
class LifetimeRecord:
    edge_id: int
    duration: float
    event: str
    velocity: float
    volatility: float
    predicate: str
    context: Optional[str]
    entity: Optional[str]
    subject: str
    cluster: Optional[int] = None
    superseded_by: Optional[int] = None
    vol_defined: bool = True


@dataclass
class PredicateStats:
    velocity: float
    volatility: float
    mean_lifetime: float
    change_fraction: float
    supersession_rate: float
    n_records: int
    n_superseded: int
    n_reinforced: int
    n_censored: int


def epsilon_for(epsilon: EpsilonSpec, predicate: str) -> float:
    if isinstance(epsilon, Mapping):
        val = epsilon.get(predicate, epsilon.get("default"))
        if val is None:
            raise DataError(f"no threshold for predicate {predicate!r} and no default")
        return float(val)
    return float(epsilon)


def compute_velocity(history: Sequence[Edge], t: Optional[float] = None,
                     window: Optional[float] = None) -> float:
    """Observations per day in [t - window, t].

    Defaults: t = last observation, window = the concept's full observed
    span (min 1 day), which matches how aggregate rates are reported.
    """
    if not history:
        return 0.0
    if t is None:
        t = history[-1].t
    if window is None:
        window = max(history[-1].t - history[0].t, 1.0)
    if window <= 0:
        raise DataError("velocity window must be positive")
    lo = t - window
    n = sum(1 for e in history if lo <= e.t <= t)
    return n / window


def compute_volatility(history: Sequence[Edge], metric: str = "euclidean") -> float:
    """Mean embedding distance between consecutive observed values.

    Returns 0.0 for histories shorter than 2; use concept_signals to get
    the defined/undefined flag. Must not be divided by the time between
    observations.
    """
    if len(history) < 2:
        return 0.0
    dists = [
        embed_distance(history[i].value, history[i + 1].value, metric=metric)
        for i in range(len(history) - 1)
    ]
    return float(np.mean(dists))


def concept_signals(history: Sequence[Edge], t: Optional[float] = None,
                    window: Optional[float] = None, metric: str = "euclidean") -> ConceptSignals:
    n = len(history)
    vel = compute_velocity(history, t=t, window=window)
    defined = n >= 2
    vol = compute_volatility(history, metric=metric) if defined else 0.0
    return ConceptSignals(velocity=vel, volatility=vol, n_obs=n, vol_defined=defined)


def extract_lifetimes(store: EdgeStore, epsilon: EpsilonSpec,
                      min_duration: float = 1e-3,
                      reset_clock: bool = False,
                      metric: str = "euclidean",
                      velocity_window: Optional[float] = None) -> list[LifetimeRecord]:
    """Walk every concept in time order and emit survival records.

    A new observation farther than the predicate threshold from the live
    value supersedes it (event, duration measured exactly); anything closer
    is a reinforcement (right-censored at the observation). The final live
    value of each concept is censored at the store window end. Durations
    are measured from the live edge's creation; `reset_clock=True` instead
    measures reinforcements from the previous confirmation.

    Concepts with a single observation get their volatility imputed later
    (predicate mean); here they carry vol_defined=False.
    """
    if isinstance(epsilon, Mapping):
        for k, v in epsilon.items():
            if float(v) <= 0:
                raise DataError(f"threshold for {k!r} must be > 0")
    elif float(epsilon) <= 0:
        raise DataError("threshold must be > 0")

    t_now = store.t_now if store.window is not None else None
    records: list[LifetimeRecord] = []
    pred_vol_sums: dict[str, list[float]] = {}

    # First pass: per-concept signals (needed as record covariates).
    sig_cache: dict[tuple[str, str], ConceptSignals] = {}
    for concept in store.concepts():
        hist = store.history(*concept)
        sig = concept_signals(hist, window=velocity_window, metric=metric)
        sig_cache[concept] = sig
        if sig.vol_defined:
            pred_vol_sums.setdefault(concept[1], []).append(sig.volatility)
    pred_vol_mean = {p: float(np.mean(v)) for p, v in pred_vol_sums.items()}

    for concept in store.concepts():
        hist = store.history(*concept)
        if not hist:
            continue
        subject, predicate = concept
        eps = epsilon_for(epsilon, predicate)
        sig = sig_cache[concept]
        vol = sig.volatility if sig.vol_defined else pred_vol_mean.get(predicate, 0.0)

        def rec(edge: Edge, duration: float, event: str, superseded_by=None) -> LifetimeRecord:
            return LifetimeRecord(
                edge_id=edge.id,
                duration=max(duration, min_duration),
                event=event,
                velocity=sig.velocity,
                volatility=vol,
                predicate=predicate,
                context=edge.context,
                entity=edge.entity if edge.entity is not None else subject,
                subject=subject,
                superseded_by=superseded_by,
                vol_defined=sig.vol_defined,
            )

        live = hist[0]
        clock_start = live.t
        for e in hist[1:]:
            d = embed_distance(live.value, e.value, metric=metric)
            if d > eps:
                records.append(rec(live, e.t - live.t, SUPERSEDED, superseded_by=e.id))
                live = e
                clock_start = e.t
            else:
                start = clock_start if reset_clock else live.t
                records.append(rec(live, e.t - start, REINFORCEMENT))
                if reset_clock:
                    clock_start = e.t
        end = t_now if t_now is not None else hist[-1].t
        records.append(rec(live, end - live.t, CENSORED))
    return records


def concept_covariates(store: EdgeStore, velocity_window: Optional[float] = None,
                       metric: str = "euclidean") -> dict[tuple[str, str], tuple[float, float]]:
    """(velocity, volatility) per concept, with volatility imputed from the
    predicate mean for single-observation concepts."""
    sigs: dict[tuple[str, str], ConceptSignals] = {}
    pred_vols: dict[str, list[float]] = {}
    for concept in store.concepts():
        sig = concept_signals(store.history(*concept), window=velocity_window, metric=metric)
        sigs[concept] = sig
        if sig.vol_defined:
            pred_vols.setdefault(concept[1], []).append(sig.volatility)
    pred_mean = {p: float(np.mean(v)) for p, v in pred_vols.items()}
    return {
        c: (s.velocity, s.volatility if s.vol_defined else pred_mean.get(c[1], 0.0))
        for c, s in sigs.items()
    }


def predicate_signals(store: EdgeStore, records: Sequence[LifetimeRecord],
                      velocity_window: Optional[float] = None,
                      metric: str = "euclidean") -> tuple[dict[str, PredicateStats], list[str]]:
    """Aggregate per-predicate temporal statistics across subjects.

    mean_lifetime averages superseded durations only; change_fraction is
    superseded / (superseded + reinforcement) counted per event;
    supersession_rate is the superseded share among terminal records
    (superseded + censored). Predicates with no records land in the skip
    list instead of the map.
    """
    by_pred: dict[str, list[LifetimeRecord]] = {}
    for r in records:
        by_pred.setdefault(r.predicate, []).append(r)

    out: dict[str, PredicateStats] = {}
    skipped: list[str] = []
    for predicate in store.predicates():
        recs = by_pred.get(predicate)
        if not recs:
            skipped.append(predicate)
            continue
        vels: list[float] = []
        vols: list[float] = []
        for subject in {r.subject for r in recs}:
            hist = store.history(subject, predicate)
            sig = concept_signals(hist, window=velocity_window, metric=metric)
            vels.append(sig.velocity)
            if sig.vol_defined:
                vols.append(sig.volatility)
        n_sup = sum(1 for r in recs if r.event == SUPERSEDED)
        n_rei = sum(1 for r in recs if r.event == REINFORCEMENT)
        n_cen = sum(1 for r in recs if r.event == CENSORED)
        sup_durs = [r.duration for r in recs if r.event == SUPERSEDED]
        out[predicate] = PredicateStats(
            velocity=float(np.mean(vels)) if vels else 0.0,
            volatility=float(np.mean(vols)) if vols else 0.0,
            mean_lifetime=float(np.mean(sup_durs)) if sup_durs else float("nan"),
            change_fraction=n_sup / (n_sup + n_rei) if (n_sup + n_rei) else 0.0,
            supersession_rate=n_sup / (n_sup + n_cen) if (n_sup + n_cen) else 0.0,
            n_records=len(recs),
            n_superseded=n_sup,
            n_reinforced=n_rei,
            n_censored=n_cen,
        )
    return out, skipped


def write_lifetimes_csv(records: Sequence[LifetimeRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["edge_id", "predicate", "context", "entity",
                    "duration_days", "event", "velocity", "volatility"])
        for r in records:
            w.writerow([r.edge_id, r.predicate, r.context or "", r.entity or "",
                        f"{r.duration:.6g}", r.event, f"{r.velocity:.6g}", f"{r.volatility:.6g}"])


def read_lifetimes_csv(path) -> list[LifetimeRecord]:
    records: list[LifetimeRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            records.append(LifetimeRecord(
                edge_id=int(row["edge_id"]),
                duration=float(row["duration_days"]),
                event=row["event"],
                velocity=float(row["velocity"]),
                volatility=float(row["volatility"]),
                predicate=row["predicate"],
                context=row["context"] or None,
                entity=row["entity"] or None,
                subject=row["entity"] or "",
            ))
    return records
