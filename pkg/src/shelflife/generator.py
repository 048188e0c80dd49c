"""Synthetic temporal KG with planted clusters, contexts and entities.

Each concept (subject, predicate) carries a hidden value process: value
lifetimes drawn i.i.d. from the cluster's Weibull, chained across the
concept's observation span, with supersession jumps large enough to always
clear the change threshold. What lands in the graph is an observation
process: a Poisson stream at the cluster's velocity (plus an initial
reading) that re-emits the currently live value with a small measurement
jitter. An observation whose underlying value differs from the previous
reading is the observed supersession event; the ground-truth log records
exactly those, so extraction can be validated against it edge for edge.

Timestamps snap to a 1-day grid except where that would collapse sub-day
spacing, which is kept fractional. Everything is deterministic given the
seed: each concept draws from its own spawned substream.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .errors import ConfigError
from .store import Edge, EdgeStore, Value, write_edges


@dataclass
class ContextSpec:
    name: str
    tau_multiplier: float


@dataclass
class ClusterSpec:
    name: str
    tau_base: float
    kappa: float
    velocity: float
    volatility: float
    predicates: list[str]
    contexts: list[ContextSpec]
    value_kind: str = "numeric"
    obs_span: Optional[tuple[float, float]] = None   # (lo, hi) days; None = full window


@dataclass
class GenConfig:
    clusters: list[ClusterSpec]
    entities_per_context: tuple[int, int] = (10, 30)
    sigma_entity: float = 0.2
    window_days: float = 1825.0
    epsilon: float = 0.3
    embed_dim: int = 8
    seed: int = 42
    rate_frailty_sd: float = 0.3    # per-concept spread of observation cadence
    obs_gap_log_sd: float = 1.0     # log-sd of inter-observation gaps (revisit pattern)
    new_concept_prob: float = 0.25  # share of concepts first recorded mid-window
    onset_max_frac: float = 0.8     # latest onset as a fraction of the window
    event_obs_prob: float = 0.3     # chance a value change itself prompts a recording
    event_obs_delay: float = 8.0    # median delay (days) of such a triggered recording
    event_obs_delay_sd: float = 1.0  # log-sd of the triggered-recording delay
    jitter_frailty_sd: float = 0.8  # per-concept spread of measurement noise

    def validate(self) -> None:
        if not self.clusters:
            raise ConfigError("config needs at least one cluster")
        names = [c.name for c in self.clusters]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate cluster names")
        preds = [p for c in self.clusters for p in c.predicates]
        if len(set(preds)) != len(preds):
            raise ConfigError("duplicate predicate names across clusters")
        for c in self.clusters:
            if c.tau_base <= 0 or c.kappa <= 0 or c.velocity <= 0 or c.volatility <= 0:
                raise ConfigError(f"cluster {c.name}: rates and scales must be > 0")
            for ctx in c.contexts:
                if ctx.tau_multiplier <= 0:
                    raise ConfigError(f"context {ctx.name}: multiplier must be > 0")
            if c.obs_span is not None and not (0 < c.obs_span[0] <= c.obs_span[1] <= self.window_days):
                raise ConfigError(f"cluster {c.name}: invalid obs_span")
        lo, hi = self.entities_per_context
        if not (1 <= lo <= hi):
            raise ConfigError("entities_per_context must be a valid range")
        if self.window_days <= 0 or self.epsilon <= 0 or self.embed_dim < 1:
            raise ConfigError("window, epsilon and embed_dim must be positive")


def default_config(seed: int = 42) -> GenConfig:
    """The four planted temporal clusters over a 5-year window."""
    return GenConfig(
        seed=seed,
        clusters=[
            ClusterSpec(
                name="permanent_facts", tau_base=2981.0, kappa=0.5,
                velocity=0.01, volatility=0.02, value_kind="categorical",
                predicates=["braf_status", "blood_type", "genetic_risk",
                            "birth_country", "baseline_allergy"],
                contexts=[ContextSpec("genomic", 1.74),
                          ContextSpec("demographic", 0.95),
                          ContextSpec("established_knowledge", 1.43)],
            ),
            ClusterSpec(
                name="current_state", tau_base=245.0, kappa=1.2,
                velocity=0.1, volatility=0.4, value_kind="categorical",
                predicates=["treatment_regimen", "medication_dose", "employment_status",
                            "care_plan", "disease_stage"],
                contexts=[ContextSpec("aggressive_disease", 0.21),
                          ContextSpec("routine_care", 0.6),
                          ContextSpec("stable_chronic", 1.44)],
            ),
            ClusterSpec(
                name="volatile_measurements", tau_base=20.0, kappa=1.0,
                velocity=0.8, volatility=0.7,
                predicates=["heart_rate", "blood_pressure", "respiratory_rate",
                            "oxygen_saturation", "blood_glucose"],
                contexts=[ContextSpec("icu", 0.12),
                          ContextSpec("inpatient_ward", 0.26),
                          ContextSpec("outpatient", 1.3)],
                obs_span=(200.0, 500.0),
            ),
            ClusterSpec(
                name="periodic_assessments", tau_base=90.0, kappa=0.8,
                velocity=0.03, volatility=0.3,
                predicates=["hba1c_level", "cholesterol_panel", "depression_screen",
                            "renal_function", "liver_panel"],
                contexts=[ContextSpec("quarterly_monitoring", 1.3),
                          ContextSpec("annual_review", 2.81),
                          ContextSpec("specialist_consult", 2.11)],
            ),
        ],
    )


@dataclass
class ObservedEvent:
    subject: str
    predicate: str
    t_live: float
    t_obs: float
    duration: float


@dataclass
class GroundTruth:
    predicate_clusters: dict[str, int]
    cluster_names: list[str]
    events: list[ObservedEvent]
    concept_tau: dict[tuple[str, str], float]
    lifetime_draws: dict[str, list[float]]     # normalized Weibull(1, kappa) draws
    n_entities: int
    n_subjects: int
    n_edges: int
    config: dict

    def event_count(self) -> int:
        return len(self.events)


def _partition(total: int, k: int, lo: int, hi: int, rng) -> list[int]:
    """k integers in [lo, hi] summing to total (assumes feasibility)."""
    parts = []
    rem = total
    for i in range(k - 1):
        left = k - i - 1
        lo_i = max(lo, rem - hi * left)
        hi_i = min(hi, rem - lo * left)
        parts.append(int(rng.integers(lo_i, hi_i + 1)))
        rem -= parts[-1]
    parts.append(rem)
    return parts


def _unit_vector(rng, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    n = np.linalg.norm(v)
    while n < 1e-12:
        v = rng.standard_normal(dim)
        n = np.linalg.norm(v)
    return v / n


def _quantize_times(times: np.ndarray) -> np.ndarray:
    """Snap to the day grid, keeping sub-day spacing fractional so order
    and near-zero gaps survive."""
    out = np.empty_like(times)
    prev_q = -np.inf
    prev_t = None
    for i, t in enumerate(times):
        q = float(round(t))
        if q <= prev_q:
            q = prev_q + max(t - prev_t, 1e-3)
        out[i] = q
        prev_q = q
        prev_t = t
    return out


def _jump_magnitude(rng, epsilon: float, volatility: float) -> float:
    # always clears the threshold: mean max(2 eps, 2.75 vol), sd 0.1 eps
    mean = max(2.0 * epsilon, 2.75 * volatility)
    return max(float(rng.normal(mean, 0.1 * epsilon)), 1.02 * epsilon)


def _jitter_radius(epsilon: float, volatility: float) -> float:
    # measurement noise; twice the radius must stay below any usable
    # threshold so re-readings are never spurious supersessions
    return float(np.clip(0.11 * volatility, 0.012, 0.049 * (epsilon / 0.3)))


def generate(config: GenConfig) -> tuple[EdgeStore, GroundTruth]:
    """Build the synthetic store and its ground truth. Deterministic."""
    config.validate()
    W = config.window_days
    root = np.random.SeedSequence(config.seed)
    ss_roster, ss_concepts = root.spawn(2)
    rng = np.random.default_rng(ss_roster)

    # subject roster shared by all clusters; each cluster partitions it
    # into its own contexts
    lo, hi = config.entities_per_context
    n_ctx0 = len(config.clusters[0].contexts)
    sizes0 = [int(rng.integers(lo, hi + 1)) for _ in range(n_ctx0)]
    n_subjects = sum(sizes0)
    subjects = [f"s{i:03d}" for i in range(n_subjects)]

    context_of: dict[tuple[int, str], str] = {}
    for ci, cl in enumerate(config.clusters):
        k = len(cl.contexts)
        sizes = sizes0 if ci == 0 else _partition(n_subjects, k, lo, hi, rng)
        perm = rng.permutation(n_subjects)
        pos = 0
        for ctx, size in zip(cl.contexts, sizes):
            for idx in perm[pos:pos + size]:
                context_of[(ci, subjects[idx])] = ctx.name
            pos += size

    concepts = [
        (ci, cl, pred, subj)
        for ci, cl in enumerate(config.clusters)
        for pred in cl.predicates
        for subj in subjects
    ]
    streams = ss_concepts.spawn(len(concepts))

    raw_edges = []   # (t, subject, predicate, seq, value_raw, emb, context)
    events: list[ObservedEvent] = []
    concept_tau: dict[tuple[str, str], float] = {}
    draws_by_cluster: dict[str, list[float]] = {cl.name: [] for cl in config.clusters}
    mult_of = {(ci, ctx.name): ctx.tau_multiplier
               for ci, cl in enumerate(config.clusters) for ctx in cl.contexts}

    for (ci, cl, pred, subj), stream in zip(concepts, streams):
        crng = np.random.default_rng(stream)
        ctx = context_of[(ci, subj)]
        tau_i = cl.tau_base * mult_of[(ci, ctx)] * math.exp(crng.normal(0.0, config.sigma_entity))
        concept_tau[(subj, pred)] = tau_i

        fresh_onset = False
        if cl.obs_span is not None:
            span_len = float(crng.uniform(cl.obs_span[0], cl.obs_span[1]))
            start = W - span_len
        elif crng.uniform() < config.new_concept_prob:
            # fact first recorded mid-window: the chain starts fresh
            fresh_onset = True
            start = float(crng.uniform(0.0, config.onset_max_frac * W))
            span_len = W - start
        else:
            start, span_len = 0.0, W
        end = start + span_len

        # observation stream: initial reading, then log-normal revisit gaps
        # (the usual shape of human recording activity); the gap median is
        # set so the mean cadence stays at the concept's rate
        rate = cl.velocity * math.exp(crng.normal(0.0, config.rate_frailty_sd)
                                      - 0.5 * config.rate_frailty_sd ** 2)
        sg = config.obs_gap_log_sd
        gap_med = math.exp(-0.5 * sg * sg) / rate
        obs_list = [start]
        t = start
        while True:
            t += math.exp(math.log(gap_med) + sg * float(crng.standard_normal()))
            if t > end:
                break
            obs_list.append(t)
        # hidden value chain. A fact already standing at the span start is
        # in equilibrium: its remaining life follows the length-biased
        # residual distribution. A fact born at its onset starts fresh.
        if fresh_onset:
            first = float(crng.weibull(cl.kappa))
            draws_by_cluster[cl.name].append(first)
            cum = first * tau_i
        else:
            g = float(crng.gamma(1.0 + 1.0 / cl.kappa))
            cum = tau_i * (g ** (1.0 / cl.kappa)) * (1.0 - float(crng.uniform()))
        change_times: list[float] = []
        while cum <= span_len:
            change_times.append(start + cum)
            w = float(crng.weibull(cl.kappa))
            draws_by_cluster[cl.name].append(w)
            cum += w * tau_i
        changes = np.asarray(change_times)

        # a change often prompts a recording of its own (new values tend to
        # be written down when they appear, not only at routine readings)
        for c in change_times:
            if crng.uniform() < config.event_obs_prob:
                delay = math.exp(math.log(config.event_obs_delay)
                                 + float(crng.normal(0.0, config.event_obs_delay_sd)))
                t_trig = c + min(delay, 60.0)
                if t_trig <= end:
                    obs_list.append(t_trig)
        obs = np.asarray(sorted(obs_list))
        q_obs = _quantize_times(obs)

        base = crng.standard_normal(config.embed_dim)
        values = [base]
        for _ in changes:
            jump = _jump_magnitude(crng, config.epsilon, cl.volatility) \
                * _unit_vector(crng, config.embed_dim)
            values.append(values[-1] + jump)

        # measurement noise varies by concept (instrument / source quality)
        jit_mult = math.exp(crng.normal(0.0, config.jitter_frailty_sd)
                            - 0.5 * config.jitter_frailty_sd ** 2)
        jitter_r = float(np.clip(_jitter_radius(config.epsilon, cl.volatility) * jit_mult,
                                 0.003, 0.049 * (config.epsilon / 0.3)))
        v_idx = np.searchsorted(changes, obs, side="right")
        q_emit = np.round(q_obs, 6)
        live_q = float(q_emit[0])
        prev_idx = 0
        for seq in range(len(obs)):
            j = int(v_idx[seq])
            q = float(q_emit[seq])
            emb = values[j] + jitter_r * _unit_vector(crng, config.embed_dim)
            emb = np.round(emb, 6)
            if seq > 0 and j > prev_idx:
                events.append(ObservedEvent(subject=subj, predicate=pred,
                                            t_live=live_q, t_obs=q,
                                            duration=q - live_q))
                live_q = q
            prev_idx = j
            raw_edges.append((q, subj, pred, seq, f"{pred}#{j}", emb, ctx))

    raw_edges.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    edges = [
        Edge(id=i, subject=s, predicate=p, t=t,
             value=Value(kind=_kind_of(config, p), raw=raw, embedding=emb),
             context=ctx, entity=s)
        for i, (t, s, p, _, raw, emb, ctx) in enumerate(raw_edges)
    ]
    store = EdgeStore(edges)
    truth = GroundTruth(
        predicate_clusters={p: ci for ci, cl in enumerate(config.clusters)
                            for p in cl.predicates},
        cluster_names=[cl.name for cl in config.clusters],
        events=events,
        concept_tau=concept_tau,
        lifetime_draws={k: [round(float(x), 6) for x in v]
                        for k, v in draws_by_cluster.items()},
        n_entities=len(config.clusters) * n_subjects,
        n_subjects=n_subjects,
        n_edges=len(edges),
        config=_config_dict(config),
    )
    return store, truth


def _kind_of(config: GenConfig, predicate: str) -> str:
    for cl in config.clusters:
        if predicate in cl.predicates:
            return cl.value_kind
    return "numeric"


def _config_dict(config: GenConfig) -> dict:
    d = asdict(config)
    d["entities_per_context"] = list(config.entities_per_context)
    for c in d["clusters"]:
        if c["obs_span"] is not None:
            c["obs_span"] = list(c["obs_span"])
    return d


def config_from_dict(d: dict) -> GenConfig:
    clusters = [
        ClusterSpec(
            name=c["name"], tau_base=c["tau_base"], kappa=c["kappa"],
            velocity=c["velocity"], volatility=c["volatility"],
            predicates=list(c["predicates"]),
            contexts=[ContextSpec(x["name"], x["tau_multiplier"]) for x in c["contexts"]],
            value_kind=c.get("value_kind", "numeric"),
            obs_span=None if c.get("obs_span") is None else tuple(c["obs_span"]),
        )
        for c in d["clusters"]
    ]
    return GenConfig(
        clusters=clusters,
        entities_per_context=tuple(d.get("entities_per_context", (10, 30))),
        sigma_entity=d.get("sigma_entity", 0.2),
        window_days=d.get("window_days", 1825.0),
        epsilon=d.get("epsilon", 0.3),
        embed_dim=d.get("embed_dim", 8),
        seed=d.get("seed", 42),
        rate_frailty_sd=d.get("rate_frailty_sd", 0.35),
    )


def dump(store: EdgeStore, truth: GroundTruth, edges_path, truth_path) -> None:
    """Write the JSONL edge file plus the ground-truth JSON."""
    write_edges(store.edges, edges_path)
    obj = {
        "predicate_clusters": truth.predicate_clusters,
        "cluster_names": truth.cluster_names,
        "n_entities": truth.n_entities,
        "n_subjects": truth.n_subjects,
        "n_edges": truth.n_edges,
        "events": [[e.subject, e.predicate, e.t_live, e.t_obs, round(e.duration, 6)]
                   for e in truth.events],
        "concept_tau": {f"{s}|{p}": round(t, 6) for (s, p), t in sorted(truth.concept_tau.items())},
        "lifetime_draws": truth.lifetime_draws,
        "config": truth.config,
    }
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)


def load_truth(path) -> GroundTruth:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    return GroundTruth(
        predicate_clusters={k: int(v) for k, v in obj["predicate_clusters"].items()},
        cluster_names=list(obj["cluster_names"]),
        events=[ObservedEvent(s, p, tl, to, d) for s, p, tl, to, d in obj["events"]],
        concept_tau={(k.split("|")[0], k.split("|")[1]): float(v)
                     for k, v in obj["concept_tau"].items()},
        lifetime_draws={k: list(map(float, v)) for k, v in obj["lifetime_draws"].items()},
        n_entities=int(obj["n_entities"]),
        n_subjects=int(obj["n_subjects"]),
        n_edges=int(obj["n_edges"]),
        config=obj["config"],
    )
