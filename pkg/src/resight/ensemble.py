"""Score normalization, bagging, the matcher cascade, and online weights.

The cascade runs a cheap invariant method over the whole candidate pool,
keeps the top fraction, and spends the expensive selective method only
on those survivors; survivor scores are rank-normalized per method and
combined by the current ensemble weights. Weights adapt online from
verified pairs through a multiplicative (Hedge-style) update on each
method's same-minus-different score margin.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from resight import rng
from resight.constants import BAG_FRACTION, DEFAULT_CASCADE, HEDGE_ETA, WEIGHT_FLOOR

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Weights


@dataclass
class EnsembleWeights:
    """Per-method weights on the probability simplex (floored at epsilon)."""

    weights: dict[str, float]

    def __post_init__(self):
        self.weights = _project_to_simplex(self.weights)

    @classmethod
    def uniform(cls, method_ids) -> "EnsembleWeights":
        method_ids = list(method_ids)
        return cls({m: 1.0 / len(method_ids) for m in method_ids})

    def __getitem__(self, method_id: str) -> float:
        return self.weights[method_id]

    def as_dict(self) -> dict[str, float]:
        return dict(self.weights)


def _project_to_simplex(weights: dict[str, float]) -> dict[str, float]:
    if not weights:
        raise ValueError("weights must cover at least one method")
    floored = {m: max(float(w), WEIGHT_FLOOR) for m, w in weights.items()}
    total = sum(floored.values())
    return {m: w / total for m, w in floored.items()}


def update_weights(weights: EnsembleWeights, verified_pairs, method_scores, eta: float = HEDGE_ETA) -> EnsembleWeights:
    """Multiplicative-weights update from verified pairs.

    verified_pairs: iterable of (pair_key, label) with label "same" or
    "different". method_scores: method_id -> {pair_key: normalized score}.
    Each method's margin is mean(score | same) - mean(score | different);
    weights move by exp(eta * margin) and re-project to the simplex.
    No-ops (with a notice) when eta is 0, the verified set is empty, or
    only one class is present.
    """
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    verified = list(verified_pairs)
    if eta == 0.0 or not verified:
        return EnsembleWeights(weights.as_dict())
    labels = {label for _, label in verified}
    if labels <= {"same"} or labels <= {"different"}:
        logger.info("update_weights: verified set is single-class, weights unchanged")
        return EnsembleWeights(weights.as_dict())
    updated = {}
    for method_id, w in weights.as_dict().items():
        scores = method_scores[method_id]
        missing = [pair for pair, _ in verified if pair not in scores]
        if missing:
            raise ValueError(f"method {method_id} lacks scores for verified pairs {missing[:3]}")
        same = [scores[pair] for pair, label in verified if label == "same"]
        diff = [scores[pair] for pair, label in verified if label == "different"]
        margin = float(np.mean(same) - np.mean(diff))
        updated[method_id] = w * math.exp(eta * margin)
    return EnsembleWeights(updated)


# ---------------------------------------------------------------------------
# Normalization and aggregation


def normalize_scores(raw_scores) -> np.ndarray:
    """Rank-based normalization of one method's scores over one pool.

    Maps to (rank_from_bottom - 1) / (n - 1) in [0, 1]; ties share their
    mean rank, so equal raws get equal normalized scores and any
    positive monotone rescaling of the raws is absorbed.
    """
    raw = np.asarray(raw_scores, dtype=np.float64)
    if raw.ndim != 1 or raw.size < 2:
        raise ValueError("need at least two candidates to normalize")
    ranks = rankdata(raw, method="average")
    return (ranks - 1.0) / (raw.size - 1.0)


def aggregate(method_scores: dict[str, dict], weights: EnsembleWeights) -> dict:
    """Weighted arithmetic mean of per-method normalized scores.

    Every method must score exactly the same candidate set.
    """
    candidate_sets = {m: frozenset(scores) for m, scores in method_scores.items()}
    distinct = set(candidate_sets.values())
    if len(distinct) != 1:
        raise ValueError("methods scored different candidate sets")
    if set(method_scores) != set(weights.as_dict()):
        raise ValueError("weights and scores cover different methods")
    (candidates,) = distinct
    return {
        c: sum(weights[m] * method_scores[m][c] for m in method_scores) for c in candidates
    }


# ---------------------------------------------------------------------------
# Bagging


def bagged_score(features_a, features_b, base_method, bags: int = 16, seed: int = 0):
    """Mean of ``base_method`` over seeded random fiducial subsets.

    base_method takes two FeatureSets and returns a float. Each subset
    draws ceil(2/3 * n) of the common fiducials; bags=1 uses the full
    set and reduces exactly to the plain method. Fewer than 3 common
    fiducials falls back to the plain method with a warning.
    """
    if bags < 1:
        raise ValueError("bags must be >= 1")
    common = [i for i in features_a.index if i in features_b.index]
    if len(common) < 3:
        logger.warning("bagged_score: only %d common fiducials, falling back to plain method", len(common))
        return base_method(features_a, features_b)
    if bags == 1:
        return base_method(features_a, features_b)
    subset_size = math.ceil(BAG_FRACTION * len(common))
    gen = rng.generator("bagging", seed)
    total = 0.0
    for _ in range(bags):
        picked = sorted(gen.choice(len(common), size=subset_size, replace=False))
        keep = [common[i] for i in picked]
        total += base_method(features_a.subset(keep), features_b.subset(keep))
    return total / bags


# ---------------------------------------------------------------------------
# Cascade


@dataclass
class CascadeConfig:
    """Ordered (method_id, survivor_fraction) stages, cheap to expensive.

    Stage i's fraction determines how many of its ranked candidates
    advance to stage i+1; the final stage keeps all its survivors.
    """

    stages: tuple = DEFAULT_CASCADE

    def __post_init__(self):
        self.stages = tuple((str(m), float(rho)) for m, rho in self.stages)
        if not self.stages:
            raise ValueError("cascade needs at least one stage")
        for _, rho in self.stages:
            if not (0.0 < rho <= 1.0):
                raise ValueError(f"survivor fraction {rho} outside (0, 1]")
        fractions = [rho for _, rho in self.stages[:-1]]
        if any(b >= a for a, b in zip(fractions, fractions[1:])):
            raise ValueError("survivor fractions must strictly decrease before the final stage")

    @property
    def method_ids(self):
        return tuple(m for m, _ in self.stages)


@dataclass
class RankedList:
    """Per-query candidate ordering with stage accounting."""

    query_id: str
    ranking: list            # (candidate_id, combined_score), best first
    method_calls: dict[str, int] = field(default_factory=dict)
    survivor_scores: dict[str, dict] = field(default_factory=dict)

    def top(self, k: int):
        return self.ranking[:k]


def cascade_match(query_id, pool_ids, scorers: dict, config: CascadeConfig, weights: EnsembleWeights) -> RankedList:
    """Rank ``pool_ids`` for one query through the staged cascade.

    scorers: method_id -> callable(candidate_id) -> raw score in [0, 1].
    Stage 1 scores the whole pool; each later stage scores only the top
    ceil(rho * |pool|) candidates of the previous one. Survivors get the
    weighted sum of per-method rank-normalized scores; non-survivors
    keep their stage-1 ordering strictly below every survivor.
    """
    pool = list(pool_ids)
    if not pool:
        return RankedList(query_id=query_id, ranking=[])
    calls = {m: 0 for m in config.method_ids}

    first_method = config.stages[0][0]
    stage_raw: dict[str, dict] = {first_method: {}}
    for candidate in pool:
        stage_raw[first_method][candidate] = float(scorers[first_method](candidate))
        calls[first_method] += 1
    # deterministic ordering: score desc, candidate id asc
    stage1_order = sorted(pool, key=lambda c: (-stage_raw[first_method][c], c))

    survivors = stage1_order
    for (method_id, rho), nxt in zip(config.stages, config.stages[1:]):
        keep = min(len(survivors), math.ceil(rho * len(pool)))
        survivors = survivors[:keep]
        next_method = nxt[0]
        stage_raw[next_method] = {}
        for candidate in survivors:
            stage_raw[next_method][candidate] = float(scorers[next_method](candidate))
            calls[next_method] += 1
        survivors = sorted(survivors, key=lambda c: (-stage_raw[next_method][c], c))

    survivor_set = survivors
    if len(survivor_set) == 1:
        combined = {survivor_set[0]: 1.0}
        normalized = {m: {survivor_set[0]: 1.0} for m in stage_raw}
    else:
        normalized = {}
        for method_id, raw in stage_raw.items():
            values = normalize_scores([raw[c] for c in survivor_set])
            normalized[method_id] = dict(zip(survivor_set, values))
        active = EnsembleWeights({m: weights[m] for m in normalized})
        combined = aggregate(normalized, active)

    ranked = sorted(survivor_set, key=lambda c: (-combined[c], c))
    ranking = [(c, float(combined[c])) for c in ranked]
    non_survivors = [c for c in stage1_order if c not in set(survivor_set)]
    if non_survivors:
        # stage-1 ordering encoded as strictly negative sentinel scores, so
        # a plain score sort keeps non-survivors below every survivor (whose
        # combined score can legitimately be 0 under rank normalization)
        n = len(non_survivors)
        for i, candidate in enumerate(non_survivors):
            ranking.append((candidate, -(i + 1.0) / (n + 1.0)))
    return RankedList(
        query_id=query_id,
        ranking=ranking,
        method_calls=calls,
        survivor_scores={m: dict(v) for m, v in normalized.items()} if survivor_set else {},
    )
