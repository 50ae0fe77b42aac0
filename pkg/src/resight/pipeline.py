"""End-to-end indexing experiments: ingest, index, iterate feedback.

The orchestration drives a DEI + IPE pair over a synthetic (or loaded)
population: images advance raw -> indexed through the workflow engine,
candidate rankings come from the matcher cascade, verification tasks go
to an annotator pool (oracle, simulated, or live humans through the
API), and each feedback iteration re-ranks with adapted ensemble
weights and merged cohorts.

Evaluation AUC is computed over a seeded pair sample (every positive
pair plus a fixed-size draw of negatives plus everything verified): the
ensemble score of a pair is the weighted mean of per-method global rank
quantiles over that sample. This keeps the expensive matcher budget at
the cascade's survivor count instead of all O(n^2) pairs.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from resight import rng
from resight.constants import HEDGE_ETA
from resight.dei.core import DeiCore, SessionBoundDei
from resight.ensemble import EnsembleWeights, normalize_scores, update_weights
from resight.feedback import (
    AnnotatorProfile,
    VerificationTask,
    assign,
    merge_cohorts,
    pair_key,
    resolve,
    select_verification_pairs,
)
from resight.imageio import encode_pgm
from resight.ipe import IpeWorker
from resight.metrics import compute_auc, recall_at_k
from resight.synthpop import Population, SyntheticSpec, generate_population, load_population
from resight.workflow import shipped_workflow

logger = logging.getLogger(__name__)

MACHINE_CAPABILITIES = ["preprocess", "extract_features", "match", "queue_verification", "finalize"]
METRIC_NEGATIVE_SAMPLE = 4000


@dataclass
class ExperimentConfig:
    dataset: SyntheticSpec | str | Path = field(default_factory=SyntheticSpec)
    workflow: str = "synthetic"
    cascade: tuple | None = None          # overrides the workflow's cascade stages
    budget_fraction: float = 0.01
    iterations: int = 2
    annotator_mode: str = "oracle"        # oracle | simulated:<accuracy> | live
    annotators: int = 3
    seed: int = 7
    out_dir: str | Path | None = None
    data_dir: str | Path | None = None
    durability: str = "full"

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not (0.0 <= self.budget_fraction <= 1.0):
            raise ValueError("budget fraction must be within [0, 1]")


@dataclass
class ExperimentResult:
    rows: list[dict]
    config: ExperimentConfig
    core: DeiCore
    truth: dict
    weights: EnsembleWeights
    cohorts: dict
    elapsed: float
    worker: IpeWorker | None = None

    @property
    def final_auc(self) -> float:
        return self.rows[-1]["auc"]

    @property
    def baseline_auc(self) -> float:
        return self.rows[0]["auc"]


# ---------------------------------------------------------------------------
# annotator pools


class OracleAnnotator:
    """Perfect, tireless annotator backed by ground truth."""

    def __init__(self, truth: dict):
        self.truth = truth

    def __call__(self, task) -> str:
        a, b = task.pair
        return "same" if self.truth[a] == self.truth[b] else "different"


class SimulatedAnnotator:
    """Noisy annotator: wrong with probability 1 - accuracy, may skip."""

    def __init__(self, truth: dict, accuracy: float, skip_rate: float, seed: int):
        self.truth = truth
        self.accuracy = accuracy
        self.skip_rate = skip_rate
        self.gen = rng.generator("sim-annotator", seed)

    def __call__(self, task) -> str | None:
        if self.gen.random() < self.skip_rate:
            return None
        a, b = task.pair
        correct = "same" if self.truth[a] == self.truth[b] else "different"
        if self.gen.random() < self.accuracy:
            return correct
        return "different" if correct == "same" else "same"


def build_annotator_pool(config: ExperimentConfig, truth: dict):
    profiles, behaviors = {}, {}
    if config.annotator_mode == "live":
        return profiles, behaviors
    for i in range(max(1, config.annotators)):
        annotator_id = f"ann{i:02d}"
        profiles[annotator_id] = AnnotatorProfile(annotator_id=annotator_id)
        if config.annotator_mode == "oracle":
            behaviors[annotator_id] = OracleAnnotator(truth)
        elif config.annotator_mode.startswith("simulated"):
            accuracy = float(config.annotator_mode.split(":")[1]) if ":" in config.annotator_mode else 0.85
            behaviors[annotator_id] = SimulatedAnnotator(truth, accuracy, skip_rate=0.1, seed=config.seed * 1000 + i)
        else:
            raise ValueError(f"unknown annotator mode {config.annotator_mode!r}")
    return profiles, behaviors


# ---------------------------------------------------------------------------
# experiment


def load_dataset(config: ExperimentConfig) -> Population:
    if isinstance(config.dataset, (str, Path)):
        return load_population(config.dataset)
    return generate_population(config.dataset)


def run_experiment(config: ExperimentConfig, core: DeiCore | None = None) -> ExperimentResult:
    started = time.time()
    population = load_dataset(config)
    truth = population.truth

    if core is None:
        data_dir = Path(config.data_dir) if config.data_dir else Path(config.out_dir or ".") / "dei-data"
        core = DeiCore(data_dir, durability=config.durability)
    workflow = core.register_workflow(shipped_workflow(config.workflow))
    core.add_principal("ipe", "ipe-secret", MACHINE_CAPABILITIES)
    params = dict(workflow.params)
    if config.cascade is not None:
        ensemble_override = dict(params.get("ensemble", {}))
        ensemble_override["cascade"] = [list(stage) for stage in config.cascade]
        params["ensemble"] = ensemble_override
    ensemble_params = params.get("ensemble", {})
    eta = float(ensemble_params.get("eta", HEDGE_ETA))
    redundancy = int(params.get("feedback", {}).get("redundancy", 1))
    gold_cadence = int(params.get("feedback", {}).get("gold_cadence", 10))

    # ingest
    for img in population.images:
        core.put_image(
            encode_pgm(img.pixels),
            species=workflow.name,
            metadata={"image_id": img.image_id, "view": "dorsal", "individual": img.individual},
            fiducials=img.fiducials,
        )
    pool_size = len(population.images)

    # machine phases, strictly ordered so matching sees a complete pool
    dei = SessionBoundDei(core, "ipe", "ipe-secret", MACHINE_CAPABILITIES)
    worker = IpeWorker(dei, workflow_params=params, seed=config.seed)
    for _ in range(3):  # preprocess -> extract -> match (+ queue)
        worker.run_until_idle()

    weights = worker.weights
    evaluator = Evaluator(population, worker, seed=config.seed)
    profiles, behaviors = build_annotator_pool(config, truth)
    gold_pairs = GoldSource(population, config.seed) if behaviors else None

    verified: dict = {}
    rows = [evaluator.metrics_row(0, weights, verified, core, pairs_this_iteration=0)]
    core.put_metrics_row(rows[0])

    for iteration in range(1, config.iterations + 1):
        rankings = evaluator.selection_rankings(core)
        budget_pairs = select_verification_pairs(
            rankings, pool_size, config.budget_fraction, already_verified=list(verified)
        )
        tasks = []
        for pair in budget_pairs:
            task_id = core.put_task({"pair": list(pair)})
            record = core.store.get("tasks", task_id)
            tasks.append(
                VerificationTask(task_id=task_id, pair=tuple(record["pair"]), state=record["state"])
            )
        if config.annotator_mode == "live":
            _await_live_resolution(core, tasks, profiles, redundancy)
        else:
            assign(
                tasks,
                profiles,
                behaviors,
                redundancy=redundancy,
                gold_source=gold_pairs,
                gold_cadence=gold_cadence,
            )
            for task in tasks:
                for annotator_id, label, _ in task.responses:
                    core.respond_task(task.task_id, annotator_id, label)
                consensus = resolve(task, profiles, redundancy=redundancy)
                stored = core.store.get("tasks", task.task_id)
                stored["state"] = task.state
                stored["consensus"] = consensus
                core.write_task(stored)
        resolved = {
            tuple(sorted(t["pair"])): t["consensus"]
            for t in core.store.read(lambda s: [dict(v) for v in s["tasks"].values()])
            if t["state"] == "resolved" and not t.get("gold") and t["consensus"] in ("same", "different")
        }
        verified.update(resolved)

        same_pairs = [p for p, label in verified.items() if label == "same"]
        diff_pairs = [p for p, label in verified.items() if label == "different"]
        partition = merge_cohorts(same_pairs, diff_pairs, images=[i.image_id for i in population.images])
        core.put_cohorts(partition.cohorts, {k: list(map(list, v)) for k, v in partition.provenance.items()}, partition.conflicts)

        weights = update_weights(
            weights, list(verified.items()), evaluator.method_quantiles(list(verified)), eta=eta
        )
        evaluator.rerank(weights, core)
        row = evaluator.metrics_row(iteration, weights, verified, core, pairs_this_iteration=len(budget_pairs))
        rows.append(row)
        core.put_metrics_row(row)

    # finalize: everything still pending acquires its cohort identity
    worker.weights = weights
    worker.run_until_idle()
    result = ExperimentResult(
        rows=rows,
        config=config,
        core=core,
        truth=truth,
        weights=weights,
        cohorts=core.get_cohorts(),
        elapsed=time.time() - started,
        worker=worker,
    )
    if config.out_dir is not None:
        write_metrics_csv(Path(config.out_dir) / "metrics.csv", rows)
        write_cmc_csv(Path(config.out_dir) / "cmc.csv", evaluator, weights)
    return result


def _await_live_resolution(core, tasks, profiles, redundancy, poll_interval: float = 1.0):
    """Block until live annotators resolve the iteration's tasks.

    The pipeline gate is asynchronous by design: it waits indefinitely
    (no timeout) because human input arrives on human schedules.
    """
    pending = {t.task_id for t in tasks}
    while pending:
        for task_id in sorted(pending):
            stored = core.store.get("tasks", task_id)
            task = VerificationTask(
                task_id=task_id,
                pair=tuple(stored["pair"]),
                state=stored["state"],
                responses=[tuple(r) for r in stored["responses"]],
            )
            consensus = resolve(task, profiles, redundancy=redundancy)
            if consensus is not None or task.state == "resolved":
                stored["state"] = "resolved"
                stored["consensus"] = consensus
                core.write_task(stored)
                pending.discard(task_id)
        if pending:
            time.sleep(poll_interval)


class GoldSource:
    """Known-answer tasks drawn from ground truth (sandbox mode)."""

    def __init__(self, population: Population, seed: int):
        self.truth = population.truth
        self.ids = [img.image_id for img in population.images]
        self.gen = rng.generator("gold-source", seed)
        self.counter = 0

    def __call__(self) -> VerificationTask | None:
        if len(self.ids) < 2:
            return None
        self.counter += 1
        a, b = (str(x) for x in self.gen.choice(self.ids, size=2, replace=False))
        truth = "same" if self.truth[a] == self.truth[b] else "different"
        return VerificationTask(
            task_id=f"gold-{self.counter:04d}", pair=pair_key(a, b), gold=True, gold_truth=truth
        )


# ---------------------------------------------------------------------------
# evaluation


class Evaluator:
    """Sampled-pair evaluation and re-ranking over the worker's caches."""

    def __init__(self, population: Population, worker: IpeWorker, seed: int):
        self.truth = population.truth
        self.ids = sorted(img.image_id for img in population.images)
        self.worker = worker
        self.has_truth = len(set(self.truth.values())) > 1
        gen = rng.generator("metric-sample", seed)
        positives, negatives = [], []
        for i, a in enumerate(self.ids):
            for b in self.ids[i + 1 :]:
                (positives if self.truth[a] == self.truth[b] else negatives).append((a, b))
        if len(negatives) > METRIC_NEGATIVE_SAMPLE:
            picked = sorted(gen.choice(len(negatives), size=METRIC_NEGATIVE_SAMPLE, replace=False))
            negatives = [negatives[i] for i in picked]
        self.sample = positives + negatives
        self.methods = list(self.worker.cascade.method_ids)

    # -- scores ----------------------------------------------------------

    def _raw(self, pair, method) -> float:
        return self.worker.method_raw(pair[0], pair[1], method)

    def ensemble_sample_scores(self, weights: EnsembleWeights, extra_pairs=()) -> dict:
        """Pair -> weighted mean of per-method global rank quantiles."""
        pairs = list(dict.fromkeys(list(self.sample) + [pair_key(*p) for p in extra_pairs]))
        combined = {p: 0.0 for p in pairs}
        for method in self.methods:
            raws = [self._raw(p, method) for p in pairs]
            quantiles = normalize_scores(raws)
            for p, q in zip(pairs, quantiles):
                combined[p] += weights[method] * q
        return combined

    def method_quantiles(self, pairs) -> dict:
        """Per-method normalized scores for the verified set."""
        out = {}
        for method in self.methods:
            raws = [self._raw(p, method) for p in self.sample]
            order = np.sort(np.asarray(raws))
            scores = {}
            for p in pairs:
                value = self._raw(pair_key(*p), method)
                rank = np.searchsorted(order, value, side="left")
                rank_hi = np.searchsorted(order, value, side="right")
                scores[pair_key(*p)] = float((rank + rank_hi) / 2.0 / max(1, len(order) - 1))
            out[method] = scores
        return out

    # -- rankings ----------------------------------------------------------

    def selection_rankings(self, core) -> dict:
        """The stored per-query ranked lists, as selection input."""
        rankings = {}
        for query in self.ids:
            entry = core.store.get("scores", query)
            if entry:
                rankings[query] = [(c, s) for c, s in entry["ranking"]]
        return rankings

    def rerank(self, weights: EnsembleWeights, core) -> None:
        """Re-aggregate stored survivor scores under new weights."""
        for query in self.ids:
            entry = core.store.get("scores", query)
            if not entry or not entry.get("survivor_scores"):
                continue
            survivor_scores = entry["survivor_scores"]
            methods = [m for m in self.methods if m in survivor_scores]
            survivors = set.intersection(*(set(survivor_scores[m]) for m in methods))
            combined = {
                c: sum(weights[m] * survivor_scores[m][c]["norm"] for m in methods) for c in survivors
            }
            ranked = sorted(survivors, key=lambda c: (-combined[c], c))
            ranking = [(c, float(combined[c])) for c in ranked]
            old_tail = [c for c, s in entry["ranking"] if c not in survivors]
            n = len(old_tail)
            ranking += [(c, -(i + 1.0) / (n + 1.0)) for i, c in enumerate(old_tail)]
            core.system_put_scores(query, ranking, method_calls=entry.get("method_calls"), survivor_scores=survivor_scores)

    # -- metrics ----------------------------------------------------------

    def metrics_row(self, iteration: int, weights, verified, core, pairs_this_iteration: int) -> dict:
        auc = float("nan")
        recall1 = recall5 = float("nan")
        if self.has_truth:
            scores = self.ensemble_sample_scores(weights, extra_pairs=list(verified))
            labels = [1 if self.truth[a] == self.truth[b] else 0 for a, b in scores]
            auc = compute_auc(list(scores.values()), labels)
            rankings = {}
            for query in self.ids:
                entry = core.store.get("scores", query)
                if entry:
                    rankings[query] = [c for c, _ in entry["ranking"]]
            if rankings:
                recall1 = recall_at_k(rankings, self.truth, 1)
                recall5 = recall_at_k(rankings, self.truth, 5)
        expensive = 0
        for query in self.ids:
            entry = core.store.get("scores", query)
            if entry:
                expensive += int(entry.get("method_calls", {}).get(self.methods[-1], 0))
        conflicts = len(core.get_cohorts().get("conflicts", []))
        return {
            "iteration": iteration,
            "auc": auc,
            "recall@1": recall1,
            "recall@5": recall5,
            "pairs_verified": pairs_this_iteration,
            "expensive_calls": expensive,
            "conflicts": conflicts,
        }


# ---------------------------------------------------------------------------
# primed-feature experiment


def primed_feature_experiment(
    population: Population,
    worker: IpeWorker,
    seed: int = 7,
    train_fraction: float = 2.0 / 3.0,
    epochs: int = 60,
    negatives_per_positive: int = 4,
) -> dict:
    """Train the pair CNN on alignment feature maps; compare against the
    closed-form deformation score on held-out individuals.

    The split is disjoint by individual (pairs of training animals train,
    pairs of held-out animals test), mirroring how a deployed model would
    meet unseen individuals.
    """
    from resight.matchers.cnn import forward_batch, primed_cnn_train

    truth = population.truth
    individuals = sorted({img.individual for img in population.images})
    cut = max(1, int(round(train_fraction * len(individuals))))
    train_individuals = set(individuals[:cut])
    ids = sorted(img.image_id for img in population.images)

    gen = rng.generator("primed-split", seed)
    train_pos, train_neg, test_pairs = [], [], []
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            pair = (a, b)
            same = truth[a] == truth[b]
            if truth[a] in train_individuals and truth[b] in train_individuals:
                (train_pos if same else train_neg).append(pair)
            elif truth[a] not in train_individuals and truth[b] not in train_individuals:
                test_pairs.append(pair)
    keep_neg = min(len(train_neg), negatives_per_positive * len(train_pos))
    picked = sorted(gen.choice(len(train_neg), size=keep_neg, replace=False))
    train_neg = [train_neg[i] for i in picked]
    # cap test negatives for tractable exhaustive evaluation
    test_pos = [p for p in test_pairs if truth[p[0]] == truth[p[1]]]
    test_neg = [p for p in test_pairs if truth[p[0]] != truth[p[1]]]
    if len(test_neg) > 1500:
        picked = sorted(gen.choice(len(test_neg), size=1500, replace=False))
        test_neg = [test_neg[i] for i in picked]
    test_pairs = test_pos + test_neg

    def maps_for(pair):
        worker.method_raw(pair[0], pair[1], "deformation")
        return worker.maps_cache[pair_key(*pair)].astype(np.float64)

    training = [
        (maps_for(p)[0], maps_for(p)[1], 1 if truth[p[0]] == truth[p[1]] else 0)
        for p in train_pos * negatives_per_positive + train_neg
    ]
    model = primed_cnn_train(training, lr=0.1, epochs=epochs, batch=64, seed=seed)

    x_test = np.stack([maps_for(p) for p in test_pairs])
    probabilities = forward_batch(model, x_test)
    labels = [1 if truth[a] == truth[b] else 0 for a, b in test_pairs]
    deformation = [worker.method_raw(a, b, "deformation") for a, b in test_pairs]
    cnn_auc = compute_auc(probabilities, labels)
    deformation_auc = compute_auc(deformation, labels)
    return {
        "cnn_auc": cnn_auc,
        "deformation_auc": deformation_auc,
        "gap": cnn_auc - deformation_auc,
        "train_pairs": len(training),
        "test_pairs": len(test_pairs),
        "model": model,
    }


# ---------------------------------------------------------------------------
# outputs


def write_metrics_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = ["iteration", "auc", "recall@1", "recall@5", "pairs_verified", "expensive_calls", "conflicts"]
    lines = [",".join(columns)]
    for row in rows:
        cells = []
        for col in columns:
            value = row.get(col)
            cells.append(f"{value:.6f}" if isinstance(value, float) else str(value))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def write_cmc_csv(path: Path, evaluator: Evaluator, weights) -> None:
    from resight.metrics import cmc_curve

    if not evaluator.has_truth:
        return
    rankings = {}
    for query in evaluator.ids:
        pool = [c for c in evaluator.ids if c != query]
        scored = [
            (c, sum(weights[m] * evaluator.worker.pair_cache.get(pair_key(query, c), {}).get(m, 0.0) for m in evaluator.methods))
            for c in pool
            if evaluator.worker.pair_cache.get(pair_key(query, c))
        ]
        if scored:
            rankings[query] = [c for c, _ in sorted(scored, key=lambda cs: -cs[1])]
    if not rankings:
        return
    curve = cmc_curve(rankings, evaluator.truth)
    lines = ["k,cmc"] + [f"{k+1},{v:.6f}" for k, v in enumerate(curve)]
    path.write_text("\n".join(lines) + "\n")
