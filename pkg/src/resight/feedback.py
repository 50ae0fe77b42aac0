"""Relevance-feedback machinery: verification tasks, crowd quality
control, consensus, and cohort (capture-history) maintenance.

Top-scored unverified pairs go out as tasks under a budget of a fixed
fraction of the indexing pool. Annotators self-select: a task is offered
to every active annotator, each may answer or skip, and every k-th task
an annotator answers is a hidden-truth gold task that feeds a Beta
reliability posterior. Consensus is reliability-weighted; resolved
"same" pairs merge cohorts under cannot-link constraints from resolved
"different" pairs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from resight.constants import (
    CONSENSUS_WEIGHT,
    DEACTIVATE_BELOW,
    DEACTIVATE_MIN_GOLD,
    GOLD_CADENCE,
    RELIABILITY_PRIOR,
    TASK_REDUNDANCY,
)

logger = logging.getLogger(__name__)

LABELS = ("same", "different", "unsure")


def pair_key(image_a: str, image_b: str) -> tuple[str, str]:
    """Canonical unordered pair identity."""
    return (image_a, image_b) if image_a <= image_b else (image_b, image_a)


# ---------------------------------------------------------------------------
# Tasks


@dataclass
class VerificationTask:
    task_id: str
    pair: tuple[str, str]
    state: str = "open"                       # open | assigned | resolved | expired
    responses: list = field(default_factory=list)   # (annotator_id, label, timestamp)
    consensus: str | None = None
    gold: bool = False
    gold_truth: str | None = None

    def respondents(self) -> set[str]:
        return {a for a, _, _ in self.responses}


@dataclass
class AnnotatorProfile:
    annotator_id: str
    alpha: float = RELIABILITY_PRIOR[0]
    beta: float = RELIABILITY_PRIOR[1]
    gold_correct: int = 0
    gold_total: int = 0
    answered: int = 0
    active: bool = True

    @property
    def reliability(self) -> float:
        return self.alpha / (self.alpha + self.beta)


# ---------------------------------------------------------------------------
# Pair selection


def select_verification_pairs(rankings, pool_size: int, budget_fraction: float, already_verified) -> list:
    """The ceil(f * pool_size) globally best-scored unverified pairs.

    rankings: query_id -> iterable of (candidate_id, combined_score).
    The unordered pair's score is the best over both directions; ties
    break lexicographically by (min_id, max_id).
    """
    if not rankings:
        raise ValueError("no rankings to select from")
    if not (0.0 < budget_fraction <= 1.0):
        raise ValueError(f"budget fraction {budget_fraction} outside (0, 1]")
    verified = {pair_key(*p) for p in already_verified}
    best: dict[tuple[str, str], float] = {}
    for query, ranking in rankings.items():
        for candidate, score in ranking:
            key = pair_key(query, candidate)
            if key in verified:
                continue
            if score > best.get(key, -math.inf):
                best[key] = float(score)
    budget = math.ceil(budget_fraction * pool_size)
    ordered = sorted(best.items(), key=lambda item: (-item[1], item[0]))
    return [key for key, _ in ordered[:budget]]


# ---------------------------------------------------------------------------
# Assignment with self-selection and gold cadence


def assign(tasks, profiles, annotator_behaviors, redundancy: int = TASK_REDUNDANCY, gold_source=None, gold_cadence: int = GOLD_CADENCE):
    """Offer open tasks to active annotators until each has ``redundancy``
    accepted responses (or annotators are exhausted).

    annotator_behaviors: annotator_id -> callable(task) -> label or None
    (None means the annotator skips; self-selection). Every
    ``gold_cadence``-th task an annotator answers is drawn from
    ``gold_source`` (a callable returning a fresh gold VerificationTask),
    answered, and scored against its hidden truth before the real task
    continues. Returns the list of gold tasks answered.
    """
    active = [p for p in profiles.values() if p.active]
    golds_answered = []
    if not active:
        logger.warning("assign: no active annotators, %d tasks stay open", len(tasks))
        return golds_answered
    for task in tasks:
        if task.state not in ("open", "assigned"):
            continue
        task.state = "assigned"
        for profile in active:
            if not profile.active:
                continue
            if len(task.responses) >= redundancy:
                break
            if profile.annotator_id in task.respondents():
                continue
            behavior = annotator_behaviors[profile.annotator_id]
            label = behavior(task)
            if label is None:
                continue  # skipped; no credit, task flows to others
            if label not in LABELS:
                raise ValueError(f"bad label {label!r}")
            profile.answered += 1
            if gold_source is not None and profile.answered % gold_cadence == 0:
                gold = gold_source()
                if gold is not None:
                    gold_label = behavior(gold)
                    if gold_label is not None:
                        gold.responses.append((profile.annotator_id, gold_label, profile.answered))
                        gold.state = "resolved"
                        gold.consensus = gold_label
                        update_reliability(profile, gold_label == gold.gold_truth)
                        golds_answered.append(gold)
            task.responses.append((profile.annotator_id, label, profile.answered))
    return golds_answered


# ---------------------------------------------------------------------------
# Consensus


def resolve(task: VerificationTask, profiles, redundancy: int = TASK_REDUNDANCY) -> str | None:
    """Reliability-weighted consensus; None while still open.

    "unsure" abstains. Resolve early when the leading label holds >= 70%
    of cast weight with >= 2 non-abstain responses; at ``redundancy``
    responses fall back to plain weighted majority (ties resolve to
    "different": a false merge is costlier than a false split). All
    abstentions re-open the task.
    """
    if not task.responses:
        return None
    weights = {"same": 0.0, "different": 0.0}
    non_abstain = 0
    for annotator_id, label, _ in task.responses:
        if label == "unsure":
            continue
        non_abstain += 1
        reliability = profiles[annotator_id].reliability if annotator_id in profiles else 0.5
        weights[label] += reliability
    cast = weights["same"] + weights["different"]
    if non_abstain >= 2 and cast > 0:
        leader = max(weights, key=lambda l: weights[l])
        if weights[leader] >= CONSENSUS_WEIGHT * cast:
            task.state = "resolved"
            task.consensus = leader
            return leader
    if len(task.responses) >= redundancy:
        if non_abstain == 0:
            task.state = "open"
            task.responses = []
            logger.info("task %s re-opened: all responses abstained", task.task_id)
            return None
        task.state = "resolved"
        task.consensus = "same" if weights["same"] > weights["different"] else "different"
        return task.consensus
    return None


def update_reliability(profile: AnnotatorProfile, correct: bool) -> AnnotatorProfile:
    """Beta posterior update from one gold outcome, with deactivation."""
    profile.gold_total += 1
    if correct:
        profile.alpha += 1.0
        profile.gold_correct += 1
    else:
        profile.beta += 1.0
    if profile.gold_total >= DEACTIVATE_MIN_GOLD and profile.reliability < DEACTIVATE_BELOW:
        if profile.active:
            logger.warning(
                "annotator %s deactivated: reliability %.3f after %d golds",
                profile.annotator_id,
                profile.reliability,
                profile.gold_total,
            )
        profile.active = False
    return profile


# ---------------------------------------------------------------------------
# Cohorts


class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def add(self, x):
        if x not in self.parent:
            self.parent[x] = x

    def find(self, x):
        self.add(x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # deterministic root choice keeps cohort ids stable
            lo, hi = sorted((ra, rb))
            self.parent[hi] = lo


@dataclass
class CohortPartition:
    cohorts: dict[str, list]              # cohort_id (min member) -> sorted members
    provenance: dict[str, list] = field(default_factory=dict)
    conflicts: list = field(default_factory=list)

    def cohort_of(self, image_id: str) -> str | None:
        for cid, members in self.cohorts.items():
            if image_id in members:
                return cid
        return None


def merge_cohorts(same_pairs, different_pairs=(), images=()) -> CohortPartition:
    """Union-find over verified same-edges with cannot-link constraints.

    A same-edge whose merge would join two images connected by a
    cannot-link is recorded as a conflict (expert escalation) instead of
    merging. Edges are processed in canonical sorted order so the result
    is independent of input ordering. ``images`` seeds singletons for
    unmatched ids.
    """
    uf = _UnionFind()
    for image in images:
        uf.add(image)
    cannot: list[tuple[str, str]] = sorted({pair_key(a, b) for a, b in different_pairs})
    for a, b in cannot:
        uf.add(a)
        uf.add(b)

    provenance: dict = {}
    conflicts = []
    ordered = sorted({pair_key(a, b) for a, b in same_pairs})
    for a, b in ordered:
        uf.add(a)
        uf.add(b)
        ra, rb = uf.find(a), uf.find(b)
        if ra == rb:
            provenance.setdefault(ra, []).append((a, b))
            continue
        violated = [
            (x, y)
            for x, y in cannot
            if {uf.find(x), uf.find(y)} == {ra, rb}
        ]
        if violated:
            conflicts.append({"pair": (a, b), "cannot_link": violated})
            logger.warning("merge conflict: %s-%s contradicts %s", a, b, violated)
            continue
        merged_prov = provenance.pop(ra, []) + provenance.pop(rb, []) + [(a, b)]
        uf.union(a, b)
        provenance[uf.find(a)] = merged_prov

    groups: dict = {}
    for x in uf.parent:
        groups.setdefault(uf.find(x), []).append(x)
    cohorts = {min(members): sorted(members) for members in groups.values()}
    prov_by_id = {}
    for root, pairs in provenance.items():
        members = groups.get(root, [root])
        prov_by_id[min(members)] = pairs
    return CohortPartition(cohorts=cohorts, provenance=prov_by_id, conflicts=conflicts)
