"""Retrieval evaluation: pair-score AUC, recall@k, and the CMC curve.

AUC is the Mann-Whitney statistic over same/different pair scores: the
fraction of (positive, negative) pairs where the positive scores higher,
ties counted 0.5. Computed via average ranks, which is algebraically
identical to brute-force pair counting (the test suite checks exact
equality against an independent counting oracle).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

logger = logging.getLogger(__name__)


@dataclass
class MetricReport:
    """Evaluation summary for one ranking pass."""

    auc: float
    recall: dict[int, float]
    cmc: list[float]
    counts: dict[str, int] = field(default_factory=dict)


def compute_auc(scores, labels) -> float:
    """AUC over pair scores.

    scores: array of pairwise similarity scores.
    labels: array of 1 (same individual) / 0 (different).
    Raises ValueError unless both classes are present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D arrays")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def recall_at_k(rankings: dict, truth: dict, k: int) -> float:
    """Fraction of queries with >= 1 true mate in the top k.

    rankings: query_id -> candidate ids ordered best first.
    truth: image_id -> individual identity.
    Queries without any true mate in their candidate pool are excluded
    (the exclusion count is logged; ``retrieval_report`` exposes it).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    hits, included, excluded = 0, 0, 0
    for query, candidates in rankings.items():
        mates = [c for c in candidates if truth[c] == truth[query]]
        if not mates:
            excluded += 1
            continue
        included += 1
        if any(truth[c] == truth[query] for c in candidates[:k]):
            hits += 1
    if excluded:
        logger.warning("recall@%d: excluded %d mate-less queries", k, excluded)
    if included == 0:
        raise ValueError("no query has a true mate in its pool")
    return hits / included


def cmc_curve(rankings: dict, truth: dict) -> list[float]:
    """Cumulative match curve: CMC[k-1] = recall@k for k = 1..pool size.

    Non-decreasing by construction; reaches 1.0 at the full pool size
    provided each query's ranking covers its whole candidate pool.
    """
    first_hit = []
    excluded = 0
    depth = 0
    for query, candidates in rankings.items():
        depth = max(depth, len(candidates))
        rank = next(
            (i for i, c in enumerate(candidates) if truth[c] == truth[query]), None
        )
        if rank is None and not any(truth[c] == truth[query] for c in candidates):
            excluded += 1
            continue
        first_hit.append(rank if rank is not None else depth)
    if excluded:
        logger.warning("cmc: excluded %d mate-less queries", excluded)
    if not first_hit:
        raise ValueError("no query has a true mate in its pool")
    hits = np.asarray(first_hit)
    return [float(np.mean(hits < k)) for k in range(1, depth + 1)]


def retrieval_report(rankings: dict, truth: dict, pair_scores=None, ks=(1, 5)) -> MetricReport:
    """Bundle AUC (when labeled pair scores are given), recall@k, and CMC."""
    auc = float("nan")
    n_pos = n_neg = 0
    if pair_scores is not None:
        scores = np.asarray([s for s, _ in pair_scores], dtype=np.float64)
        labels = np.asarray([l for _, l in pair_scores])
        auc = compute_auc(scores, labels)
        n_pos = int((labels == 1).sum())
        n_neg = int(labels.size - n_pos)
    excluded = sum(
        1
        for query, candidates in rankings.items()
        if not any(truth[c] == truth[query] for c in candidates)
    )
    recall = {k: recall_at_k(rankings, truth, k) for k in ks}
    counts = {
        "queries": len(rankings),
        "excluded_queries": excluded,
        "positives": n_pos,
        "negatives": n_neg,
    }
    return MetricReport(auc=auc, recall=recall, cmc=cmc_curve(rankings, truth), counts=counts)
