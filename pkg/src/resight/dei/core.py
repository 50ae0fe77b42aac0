"""Domain service over the durable store.

Owns authentication, the lease-based work queue, workflow-checked state
transitions, and CRUD for images / scores / tasks / cohorts. Every
mutation goes through DeiStore.commit, so the whole service state is
crash-recoverable from the log.
"""

from __future__ import annotations

import secrets
import time
import uuid

from resight.constants import LEASE_TTL_SECONDS
from resight.imageio import decode_image
from resight.workflow import WorkflowDef, load_workflow, next_steps, validate_payload

SYSTEM_ACTOR = "system"


class AuthenticationError(Exception):
    pass


class AuthorizationError(Exception):
    pass


class ConflictError(Exception):
    pass


class NotFoundError(Exception):
    pass


class ValidationError(Exception):
    pass


class DeiCore:
    def __init__(self, data_dir, durability: str = "full", lease_ttl: float = LEASE_TTL_SECONDS, clock=time.time):
        from resight.dei.store import DeiStore

        self.store = DeiStore(data_dir, durability=durability, appliers=APPLIERS)
        self.lease_ttl = float(lease_ttl)
        self.clock = clock
        self._workflow_cache: dict[str, WorkflowDef] = {}

    # ------------------------------------------------------------------
    # setup

    def register_workflow(self, document) -> WorkflowDef:
        workflow = document if isinstance(document, WorkflowDef) else load_workflow(document)
        doc = {
            "name": workflow.name,
            "states": list(workflow.states),
            "edges": [
                {"from": e.source, "to": e.target, "step": e.step, "executor": e.executor, "payload": e.payload_schema}
                for e in workflow.edges
            ],
            "params": workflow.params,
        }
        self.store.commit("upsert", {"collection": "workflows", "records": {workflow.name: doc}})
        self._workflow_cache[workflow.name] = workflow
        return workflow

    def workflow(self, name: str) -> WorkflowDef:
        if name not in self._workflow_cache:
            doc = self.store.get("workflows", name)
            if doc is None:
                raise NotFoundError(f"no workflow {name!r}")
            self._workflow_cache[name] = load_workflow(doc)
        return self._workflow_cache[name]

    def add_principal(self, principal: str, secret: str, capabilities) -> None:
        record = {
            "principal": principal,
            "secret_sha": _hash_secret(secret),
            "capabilities": sorted(capabilities),
        }
        self.store.commit("upsert", {"collection": "principals", "records": {principal: record}})

    # ------------------------------------------------------------------
    # sessions

    def authenticate(self, principal: str, secret: str, requested_capabilities) -> dict:
        record = self.store.get("principals", principal)
        if record is None or record["secret_sha"] != _hash_secret(secret):
            raise AuthenticationError(f"unknown principal or bad secret: {principal}")
        granted = sorted(set(requested_capabilities) & set(record["capabilities"]))
        if not granted:
            raise AuthorizationError(
                f"{principal} requested {sorted(requested_capabilities)}, permitted {record['capabilities']}"
            )
        token = secrets.token_hex(16)
        session = {
            "session_id": token,
            "principal": principal,
            "capabilities": granted,
            "expires": self.clock() + 3600.0,
        }
        self.store.commit("upsert", {"collection": "sessions", "records": {token: session}})
        return dict(session)

    def _session(self, token: str) -> dict:
        session = self.store.get("sessions", token)
        if session is None:
            raise AuthenticationError("unknown session token")
        if session["expires"] <= self.clock():
            raise AuthenticationError("session expired")
        return session

    # ------------------------------------------------------------------
    # images

    def put_image(self, blob: bytes, species: str, metadata: dict | None = None, fiducials=None) -> dict:
        from resight.imageio import ImageFormatError

        try:
            pixels = decode_image(blob)
        except ImageFormatError as exc:
            raise ValidationError(str(exc))
        workflow = self.workflow(species)  # must exist
        blob_ref = self.store.put_blob(blob)
        image_id = f"img-{uuid.uuid4().hex[:12]}"
        metadata = dict(metadata or {})
        if "image_id" in metadata:
            image_id = str(metadata.pop("image_id"))
        if self.store.get("images", image_id) is not None:
            raise ConflictError(f"image {image_id} already exists")
        record = {
            "image_id": image_id,
            "blob_ref": blob_ref,
            "state": "raw",
            "species": workflow.name,
            "metadata": metadata,
            "fiducials": [list(map(float, f)) for f in fiducials or []],
            "width": int(pixels.shape[1]),
            "height": int(pixels.shape[0]),
            "history": [{"state": "raw", "at": self.clock(), "actor": SYSTEM_ACTOR}],
        }
        for fx, fy in record["fiducials"]:
            if not (0 <= fx < record["width"] and 0 <= fy < record["height"]):
                raise ValidationError(f"fiducial ({fx}, {fy}) outside image bounds")
        self.store.commit("upsert", {"collection": "images", "records": {image_id: record}})
        self._refresh_work_items(image_id, record)
        return dict(record)

    def get_image(self, image_id: str) -> dict:
        record = self.store.get("images", image_id)
        if record is None:
            raise NotFoundError(f"no image {image_id}")
        return record

    def get_image_blob(self, image_id: str) -> bytes:
        return self.store.get_blob(self.get_image(image_id)["blob_ref"])

    def list_images(self, state: str | None = None) -> list:
        if state is None:
            return self.store.list_keys("images")

        def scan(s):
            return sorted(i for i, rec in s["images"].items() if rec["state"] == state)

        return self.store.read(scan)

    def put_feature_blob(self, data: bytes) -> str:
        return self.store.put_blob(data)

    # ------------------------------------------------------------------
    # work queue

    def poll_work(self, token: str, max_items: int) -> list:
        session = self._session(token)
        if max_items < 1:
            return []
        now = self.clock()
        capabilities = set(session["capabilities"])

        def pick(state):
            items = []
            for work_id in sorted(state["work_items"]):
                item = state["work_items"][work_id]
                if item["step"] not in capabilities:
                    continue
                if item["claimed_by"] and item["lease_expiry"] > now:
                    continue
                items.append(work_id)
                if len(items) == max_items:
                    break
            return items

        with self.store.lock:
            chosen = self.store.read(pick)
            if not chosen:
                return []
            records = {}
            for work_id in chosen:
                item = dict(self.store.get("work_items", work_id))
                item["claimed_by"] = session["session_id"]
                item["lease_expiry"] = now + self.lease_ttl
                records[work_id] = item
            self.store.commit("upsert", {"collection": "work_items", "records": records})
            return [dict(r) for r in records.values()]

    def _refresh_work_items(self, image_id: str, record: dict) -> None:
        """Replace an image's queue entries to match its current state."""
        workflow = self.workflow(record["species"])
        removals = {
            work_id: None
            for work_id in self.store.list_keys("work_items")
            if self.store.get("work_items", work_id)["image_id"] == image_id
        }
        records = dict(removals)
        for step, executor in next_steps(record["state"], workflow):
            if executor != "machine":
                continue
            work_id = f"work-{image_id}-{step}"
            records[work_id] = {
                "work_id": work_id,
                "image_id": image_id,
                "step": step,
                "claimed_by": "",
                "lease_expiry": 0.0,
            }
        if records:
            self.store.commit("upsert", {"collection": "work_items", "records": records})

    # ------------------------------------------------------------------
    # transitions

    def commit_transition(self, token: str, image_id: str, from_state: str, to_state: str, payload: dict | None = None) -> str:
        session = self._session(token)
        return self._transition(image_id, from_state, to_state, payload, actor=session["principal"])

    def system_transition(self, image_id: str, from_state: str, to_state: str, payload: dict | None = None) -> str:
        return self._transition(image_id, from_state, to_state, payload, actor=SYSTEM_ACTOR)

    def _transition(self, image_id, from_state, to_state, payload, actor) -> str:
        payload = dict(payload or {})
        with self.store.lock:
            record = self.store.get("images", image_id)
            if record is None:
                raise NotFoundError(f"no image {image_id}")
            workflow = self.workflow(record["species"])
            edge = workflow.edge(from_state, to_state, payload.get("step"))
            if edge is None:
                raise ValidationError(f"no edge {from_state} -> {to_state} in workflow {workflow.name}")
            violations = validate_payload(edge, payload)
            if violations:
                raise ValidationError("; ".join(violations))
            if record["state"] != from_state:
                raise ConflictError(
                    f"image {image_id} is in {record['state']!r}, not {from_state!r}"
                )
            self.store.commit(
                "transition",
                {
                    "image_id": image_id,
                    "from_state": from_state,
                    "to_state": to_state,
                    "step": edge.step,
                    "actor": actor,
                    "payload": payload,
                    "at": self.clock(),
                },
            )
            self._refresh_work_items(image_id, self.store.get("images", image_id))
            return to_state

    @staticmethod
    def _apply_transition(state, payload):
        record = state["images"][payload["image_id"]]
        record["state"] = payload["to_state"]
        record["history"].append(
            {"state": payload["to_state"], "at": payload["at"], "actor": payload["actor"], "step": payload["step"]}
        )
        body = payload["payload"]
        if "fiducials" in body:
            record["fiducials"] = body["fiducials"]
        if "featureset_ref" in body:
            record["featureset_ref"] = body["featureset_ref"]
        if "cohort_id" in body:
            record["cohort_id"] = body["cohort_id"]
        return payload["to_state"]

    # ------------------------------------------------------------------
    # scores and rankings

    def put_scores(self, token: str, query_id: str, ranking: list, method_calls: dict | None = None, survivor_scores=None) -> None:
        self._session(token)
        self._write_scores(query_id, ranking, method_calls, survivor_scores)

    def system_put_scores(self, query_id: str, ranking: list, method_calls=None, survivor_scores=None) -> None:
        self._write_scores(query_id, ranking, method_calls, survivor_scores)

    def _write_scores(self, query_id, ranking, method_calls, survivor_scores) -> None:
        if self.store.get("images", query_id) is None:
            raise NotFoundError(f"no image {query_id}")
        # pairs may arrive unordered; the stored ranking is the
        # deterministic score sort (ties break by candidate id)
        ordered = sorted(((c, float(s)) for c, s in ranking), key=lambda cs: (-cs[1], cs[0]))
        self.store.commit(
            "score-write",
            {
                "query_id": query_id,
                "ranking": [[c, s] for c, s in ordered],
                "method_calls": dict(method_calls or {}),
                "survivor_scores": survivor_scores or {},
            },
        )

    @staticmethod
    def _apply_score_write(state, payload):
        state["scores"][payload["query_id"]] = {
            "ranking": payload["ranking"],
            "method_calls": payload["method_calls"],
            "survivor_scores": payload["survivor_scores"],
        }
        return None

    def get_rankings(self, image_id: str, k: int | None = None, debug: bool = False) -> dict:
        if self.store.get("images", image_id) is None:
            raise NotFoundError(f"no image {image_id}")
        entry = self.store.get("scores", image_id)
        if entry is None:
            return {"query_id": image_id, "ranking": []}
        ranking = entry["ranking"][: k if k else None]
        out = {"query_id": image_id, "ranking": [(c, s) for c, s in ranking]}
        if debug:
            out["method_calls"] = entry["method_calls"]
            out["survivor_scores"] = entry["survivor_scores"]
        return out

    # ------------------------------------------------------------------
    # tasks

    def put_task(self, record: dict) -> str:
        task_id = record.get("task_id") or f"task-{uuid.uuid4().hex[:12]}"
        record = dict(record, task_id=task_id)
        record.setdefault("state", "open")
        record.setdefault("responses", [])
        record.setdefault("consensus", None)
        record.setdefault("gold", False)
        if "pair" not in record:
            raise ValidationError("task needs a pair")
        existing = self._open_task_for_pair(tuple(record["pair"]))
        if existing is not None:
            raise ConflictError(f"pair already has open task {existing}")
        self.store.commit("task-write", {"task_id": task_id, "record": record})
        return task_id

    def _open_task_for_pair(self, pair) -> str | None:
        pair = sorted(pair)

        def scan(state):
            for task_id, task in state["tasks"].items():
                if sorted(task["pair"]) == pair and task["state"] in ("open", "assigned"):
                    return task_id
            return None

        return self.store.read(scan)

    def get_tasks(self, annotator: str | None = None, max_items: int = 20, states=("open", "assigned")) -> list:
        def scan(state):
            out = []
            for task_id in sorted(state["tasks"]):
                task = state["tasks"][task_id]
                if task["state"] not in states:
                    continue
                if annotator and any(r[0] == annotator for r in task["responses"]):
                    continue
                public = {k: v for k, v in task.items() if k not in ("gold_truth",)}
                out.append(dict(public))
                if len(out) == max_items:
                    break
            return out

        return self.store.read(scan)

    def respond_task(self, task_id: str, annotator: str, label: str) -> dict:
        if label not in ("same", "different", "unsure"):
            raise ValidationError(f"bad label {label!r}")
        with self.store.lock:
            task = self.store.get("tasks", task_id)
            if task is None:
                raise NotFoundError(f"no task {task_id}")
            if task["state"] not in ("open", "assigned"):
                raise ConflictError(f"task {task_id} is {task['state']}")
            if any(r[0] == annotator for r in task["responses"]):
                raise ConflictError(f"{annotator} already responded to {task_id}")
            task["responses"] = [list(r) for r in task["responses"]] + [[annotator, label, self.clock()]]
            task["state"] = "assigned"
            self.store.commit("task-write", {"task_id": task_id, "record": task})
            return dict(task)

    def write_task(self, task: dict) -> None:
        self.store.commit("task-write", {"task_id": task["task_id"], "record": dict(task)})

    @staticmethod
    def _apply_task_write(state, payload):
        state["tasks"][payload["task_id"]] = payload["record"]
        return None

    # ------------------------------------------------------------------
    # cohorts

    def put_cohorts(self, cohorts: dict, provenance: dict | None = None, conflicts=None) -> None:
        self.store.commit(
            "merge",
            {
                "cohorts": {cid: sorted(members) for cid, members in cohorts.items()},
                "provenance": provenance or {},
                "conflicts": list(conflicts or []),
            },
        )

    @staticmethod
    def _apply_merge(state, payload):
        state["cohorts"].clear()
        state["cohorts"]["partition"] = payload
        return None

    def get_cohorts(self) -> dict:
        partition = self.store.get("cohorts", "partition")
        return partition or {"cohorts": {}, "provenance": {}, "conflicts": []}

    # ------------------------------------------------------------------
    # metrics

    def put_metrics_row(self, row: dict) -> None:
        rows = self.store.get("meta", "metrics_rows") or []
        rows.append(row)
        self.store.commit("upsert", {"collection": "meta", "records": {"metrics_rows": rows}})

    def metrics(self) -> dict:
        def scan(state):
            images = state["images"]
            tasks = state["tasks"]
            resolved = [t for t in tasks.values() if t["state"] == "resolved"]
            partition = state["cohorts"].get("partition") or {}
            rows = state["meta"].get("metrics_rows") or []
            return {
                "images_total": len(images),
                "images_indexed": sum(1 for i in images.values() if i["state"] == "indexed"),
                "states": _state_histogram(images),
                "tasks_open": sum(1 for t in tasks.values() if t["state"] in ("open", "assigned")),
                "tasks_resolved": len(resolved),
                "pairs_verified": len(resolved),
                "conflicts": len(partition.get("conflicts", [])),
                "cohorts": len(partition.get("cohorts", {})),
                "rows": [dict(r) for r in rows],
            }

        return self.store.read(scan)

    def metrics_csv(self) -> str:
        columns = ["iteration", "auc", "recall@1", "recall@5", "pairs_verified", "expensive_calls", "conflicts"]
        lines = [",".join(columns)]
        for row in self.metrics()["rows"]:
            lines.append(
                ",".join(
                    _format_cell(row.get(col)) for col in columns
                )
            )
        return "\n".join(lines) + "\n"


APPLIERS = {
    "transition": DeiCore._apply_transition,
    "score-write": DeiCore._apply_score_write,
    "task-write": DeiCore._apply_task_write,
    "merge": DeiCore._apply_merge,
}


class SessionBoundDei:
    """In-process view of a DeiCore carrying one session token, exposing
    the same method surface as the HTTP DeiClient."""

    def __init__(self, core: DeiCore, principal: str, secret: str, capabilities):
        self.core = core
        self._token = core.authenticate(principal, secret, capabilities)["session_id"]

    def poll_work(self, max_items: int) -> list:
        return self.core.poll_work(self._token, max_items)

    def commit_transition(self, image_id, from_state, to_state, payload=None) -> str:
        return self.core.commit_transition(self._token, image_id, from_state, to_state, payload)

    def put_scores(self, query_id, ranking, method_calls=None, survivor_scores=None) -> None:
        self.core.put_scores(self._token, query_id, ranking, method_calls, survivor_scores)

    def __getattr__(self, name):
        # read-only and unauthenticated surfaces pass straight through
        return getattr(self.core, name)


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def _state_histogram(images: dict) -> dict:
    histogram: dict[str, int] = {}
    for record in images.values():
        histogram[record["state"]] = histogram.get(record["state"], 0) + 1
    return histogram


def _hash_secret(secret: str) -> str:
    import hashlib

    return hashlib.sha256(secret.encode("utf-8")).hexdigest()
