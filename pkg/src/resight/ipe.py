"""Image Processing Engine: the stateless worker side of the twin-server
pair.

A worker discovers a DEI (directly or through the name service),
authenticates for the steps it can execute, polls for leased work, and
advances images through their workflow: decoding and fiducial ingestion,
descriptor extraction, cascade matching, verification queueing, and
finalization. All derived artifacts are pushed back to the DEI; the
worker keeps only caches.
"""

from __future__ import annotations

import io
import logging

import numpy as np

from resight.dei.core import ConflictError, ValidationError
from resight.ensemble import CascadeConfig, EnsembleWeights, cascade_match
from resight.feedback import pair_key
from resight.imageio import decode_image, to_float
from resight.matchers.cnn import prepare_maps
from resight.matchers.scoring import (
    ImageArtifacts,
    deformation_score,
    pair_deformation_maps,
    prepare_artifacts,
    pair_score_classical,
)

logger = logging.getLogger(__name__)

MACHINE_STEPS = ("preprocess", "extract_features", "match", "queue_verification", "finalize")


def serialize_features(artifacts: ImageArtifacts) -> bytes:
    buffer = io.BytesIO()
    np.savez(
        buffer,
        positions=artifacts.features.positions,
        descriptors=artifacts.features.descriptors,
        index=np.asarray(artifacts.features.index),
        patch=artifacts.body_patch.pixels,
    )
    return buffer.getvalue()


class IpeWorker:
    """Executes machine steps against one DEI.

    ``dei`` may be a DeiCore (in-process) or a DeiClient (remote); both
    expose the same worker-facing methods.
    """

    def __init__(self, dei, workflow_params: dict | None = None, seed: int = 0):
        self.dei = dei
        self.seed = seed
        params = dict(workflow_params or {})
        ensemble = params.get("ensemble", {})
        self.cascade = CascadeConfig(
            stages=tuple((m, float(r)) for m, r in ensemble.get("cascade", CascadeConfig().stages))
        )
        self.weights = EnsembleWeights(
            dict(ensemble.get("weights")) if ensemble.get("weights") else
            {m: 1.0 / len(self.cascade.method_ids) for m in self.cascade.method_ids}
        )
        self.artifacts: dict[str, ImageArtifacts] = {}
        self.pair_cache: dict = {}          # unordered pair -> {method: raw}
        self.maps_cache: dict = {}          # unordered pair -> prepared CNN maps
        self._cosine_matrix = None          # (ids, index map, matrix) for big pools
        self.handlers = {
            "preprocess": self.handle_preprocess,
            "extract_features": self.handle_extract,
            "match": self.handle_match,
            "queue_verification": self.handle_queue_verification,
            "finalize": self.handle_finalize,
        }

    # ------------------------------------------------------------------

    def run_until_idle(self, max_batch: int = 32) -> int:
        """Poll and execute until the queue has nothing for us."""
        handled = 0
        while True:
            items = self.dei.poll_work(max_batch)
            if not items:
                return handled
            for item in items:
                try:
                    self.handlers[item["step"]](item)
                    handled += 1
                except (ConflictError, ValidationError) as exc:
                    logger.warning("work item %s failed: %s", item["work_id"], exc)

    # ------------------------------------------------------------------
    # step handlers

    def handle_preprocess(self, item):
        record = self.dei.get_image(item["image_id"])
        # fiducial ingestion: programmatic fiducials arrive with the upload
        payload = {"step": "preprocess", "fiducials": record.get("fiducials", [])}
        self.dei.commit_transition(item["image_id"], "raw", "preprocessed", payload)

    def handle_extract(self, item):
        image_id = item["image_id"]
        artifacts = self._artifacts(image_id)
        ref = self.dei.put_feature_blob(serialize_features(artifacts))
        self.dei.commit_transition(
            image_id, "preprocessed", "featured", {"step": "extract_features", "featureset_ref": ref}
        )

    def handle_match(self, item):
        image_id = item["image_id"]
        record = self.dei.get_image(image_id)
        pool = self._match_pool(record)
        if not pool:
            self.dei.commit_transition(image_id, "featured", "matched", {"step": "match", "scored": 0})
            return
        self.ensure_cosine_matrix([image_id, *pool])
        ranked = self.rank(image_id, pool)
        survivor_payload = {
            m: {c: {"norm": v} for c, v in scores.items()} for m, scores in ranked.survivor_scores.items()
        }
        for m in survivor_payload:
            for c in survivor_payload[m]:
                survivor_payload[m][c]["raw"] = self.method_raw(image_id, c, m)
        self.dei.put_scores(image_id, ranked.ranking, method_calls=ranked.method_calls, survivor_scores=survivor_payload)
        self.dei.commit_transition(image_id, "featured", "matched", {"step": "match", "scored": len(pool)})

    def handle_queue_verification(self, item):
        self.dei.commit_transition(
            item["image_id"], "matched", "pending_verification", {"step": "queue_verification", "verified_tasks": []}
        )

    def handle_finalize(self, item):
        image_id = item["image_id"]
        partition = self.dei.get_cohorts()
        cohort_id = image_id
        for cid, members in partition.get("cohorts", {}).items():
            if image_id in members:
                cohort_id = cid
                break
        self.dei.commit_transition(
            image_id, "pending_verification", "indexed", {"step": "finalize", "cohort_id": cohort_id}
        )

    # ------------------------------------------------------------------
    # matching machinery

    def rank(self, query_id: str, pool):
        scorers = {
            "descriptor_cosine": lambda c: self.method_raw(query_id, c, "descriptor_cosine"),
            "ransac": lambda c: self.method_raw(query_id, c, "ransac"),
            "deformation": lambda c: self.method_raw(query_id, c, "deformation"),
        }
        return cascade_match(query_id, pool, scorers, self.cascade, self.weights)

    def method_raw(self, a: str, b: str, method: str) -> float:
        key = pair_key(a, b)
        if method == "descriptor_cosine" and self._cosine_matrix is not None:
            index, matrix = self._cosine_matrix
            ia, ib = index.get(key[0]), index.get(key[1])
            if ia is not None and ib is not None:
                return float(matrix[ia, ib])
        cached = self.pair_cache.setdefault(key, {})
        if method not in cached:
            art_a, art_b = self._artifacts(key[0]), self._artifacts(key[1])
            if method == "deformation":
                div_map, err_map, div, res = pair_deformation_maps(art_a, art_b)
                # resampled float32 keeps the cache ~8 KB/pair
                self.maps_cache[key] = prepare_maps(div_map, err_map).astype(np.float32)
                cached[method] = deformation_score(div, res)
            else:
                cached[method] = pair_score_classical(art_a, art_b, method, seed=self.seed).raw
        return cached[method]

    def ensure_cosine_matrix(self, ids) -> None:
        """Vectorize descriptor cosine over a pool (one einsum instead of
        O(n^2) python calls; the per-pair route stays for odd pools)."""
        ids = sorted(ids)
        if self._cosine_matrix is not None and set(ids) <= set(self._cosine_matrix[0]):
            return
        stacks, shapes, indexes = [], set(), set()
        for image_id in ids:
            features = self._artifacts(image_id).features
            shapes.add(features.descriptors.shape)
            indexes.add(tuple(features.index))
            norms = np.linalg.norm(features.descriptors, axis=1, keepdims=True)
            stacks.append(features.descriptors / np.where(norms > 0, norms, 1.0))
        if len(shapes) != 1 or len(indexes) != 1:
            return  # ragged fiducial sets: keep the per-pair route
        tensor = np.stack(stacks)  # (n, n_fid, dim)
        cosine = np.einsum("afd,bfd->ab", tensor, tensor) / tensor.shape[1]
        self._cosine_matrix = ({image_id: i for i, image_id in enumerate(ids)}, (cosine + 1.0) / 2.0)

    def _artifacts(self, image_id: str) -> ImageArtifacts:
        if image_id not in self.artifacts:
            record = self.dei.get_image(image_id)
            pixels = to_float(decode_image(self.dei.get_image_blob(image_id)))
            self.artifacts[image_id] = prepare_artifacts(image_id, pixels, record["fiducials"])
        return self.artifacts[image_id]

    def _match_pool(self, record: dict) -> list:
        view = (record.get("metadata") or {}).get("view")
        pool = []
        for other_id in self.dei.list_images():
            if other_id == record["image_id"]:
                continue
            other = self.dei.get_image(other_id)
            if other["state"] in ("raw", "preprocessed"):
                continue
            if view is not None and (other.get("metadata") or {}).get("view") not in (None, view):
                continue  # within-view matching by default
            pool.append(other_id)
        return sorted(pool)
