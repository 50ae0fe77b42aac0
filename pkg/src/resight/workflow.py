"""Species workflow definitions: finite state machines over image states.

A workflow document declares the states an image moves through (always
starting at "raw" and terminating at "indexed"), the edges between them
(each a named step executed by a machine worker or a human), and the
tuning block (matcher, ensemble, and feedback parameters) that the
pipeline reads. Documents are YAML; two ship with the package:
``workflows/default.cfg`` (human fiducial entry and verification) and
``workflows/synthetic.cfg`` (fully programmatic, for benchmark runs).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

INITIAL_STATE = "raw"
TERMINAL_STATE = "indexed"
EXECUTORS = ("machine", "human")

# payload schema name -> keys the transition payload must carry
PAYLOAD_SCHEMAS = {
    "none": (),
    "fiducials": (),
    "featureset": ("featureset_ref",),
    "fiducials_and_featureset": ("fiducials", "featureset_ref"),
    "scores": ("scored",),
    "verification": ("verified_tasks",),
    "cohort": ("cohort_id",),
}


class WorkflowValidationError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    step: str
    executor: str
    payload_schema: str


@dataclass(frozen=True)
class WorkflowDef:
    name: str
    states: tuple[str, ...]
    edges: tuple[Edge, ...]
    params: dict = field(default_factory=dict, hash=False, compare=False)

    @property
    def human_edges(self) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if e.executor == "human")

    def out_edges(self, state: str) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if e.source == state)

    def edge(self, source: str, target: str, step: str | None = None) -> Edge | None:
        for e in self.edges:
            if e.source == source and e.target == target and (step is None or e.step == step):
                return e
        return None

    def edge_for_step(self, step: str) -> Edge | None:
        for e in self.edges:
            if e.step == step:
                return e
        return None


def validate_workflow(workflow: WorkflowDef) -> list[str]:
    """All invariant violations, empty when the definition is sound."""
    violations = []
    states = set(workflow.states)
    if INITIAL_STATE not in states:
        violations.append(f"missing initial state: {INITIAL_STATE}")
    if TERMINAL_STATE not in states:
        violations.append(f"missing terminal state: {TERMINAL_STATE}")

    steps = [e.step for e in workflow.edges]
    for step in sorted({s for s in steps if steps.count(s) > 1}):
        violations.append(f"duplicate step: {step}")
    for e in workflow.edges:
        if e.source not in states:
            violations.append(f"edge {e.step} from undeclared state: {e.source}")
        if e.target not in states:
            violations.append(f"edge {e.step} to undeclared state: {e.target}")
        if e.executor not in EXECUTORS:
            violations.append(f"edge {e.step} has unknown executor: {e.executor}")
        if e.payload_schema not in PAYLOAD_SCHEMAS:
            violations.append(f"edge {e.step} names unknown payload schema: {e.payload_schema}")

    adjacency: dict[str, set[str]] = {s: set() for s in states}
    for e in workflow.edges:
        if e.source in states and e.target in states:
            adjacency[e.source].add(e.target)

    if INITIAL_STATE in states:
        reached = _reachable(adjacency, INITIAL_STATE)
        for state in sorted(states - reached):
            violations.append(f"unreachable: {state}")
    if TERMINAL_STATE in states:
        reversed_adj: dict[str, set[str]] = {s: set() for s in states}
        for src, targets in adjacency.items():
            for dst in targets:
                reversed_adj[dst].add(src)
        can_finish = _reachable(reversed_adj, TERMINAL_STATE)
        for state in sorted(states - can_finish):
            violations.append(f"no path to {TERMINAL_STATE}: {state}")

    terminals = sorted(s for s in states if not adjacency.get(s))
    if terminals != [TERMINAL_STATE] and TERMINAL_STATE in states:
        extra = [s for s in terminals if s != TERMINAL_STATE]
        if extra:
            violations.append(f"extra terminal states: {', '.join(extra)}")
        if TERMINAL_STATE not in terminals:
            violations.append(f"{TERMINAL_STATE} must be terminal (has out-edges)")
    return violations


def _reachable(adjacency: dict[str, set[str]], start: str) -> set[str]:
    seen = {start}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for nxt in adjacency.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def next_steps(state: str, workflow: WorkflowDef) -> list[tuple[str, str]]:
    """Outgoing (step, executor) pairs for an image in ``state``.

    Machine steps become work items; human steps become UI tasks.
    """
    if state not in workflow.states:
        raise ValueError(f"unknown state {state!r} for workflow {workflow.name}")
    return [(e.step, e.executor) for e in workflow.out_edges(state)]


def load_workflow(document) -> WorkflowDef:
    """Parse and validate a workflow document.

    ``document`` may be a path to a YAML file, YAML text, or an
    already-parsed mapping.
    """
    if isinstance(document, dict):
        data = document
    else:
        text = None
        if isinstance(document, Path) or (
            isinstance(document, str) and "\n" not in document and document.endswith((".cfg", ".yaml", ".yml"))
        ):
            text = Path(document).read_text()
        else:
            text = str(document)
        data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise WorkflowValidationError(["document is not a mapping"])
    missing = [k for k in ("name", "states", "edges") if k not in data]
    if missing:
        raise WorkflowValidationError([f"missing field: {k}" for k in missing])
    edges = []
    for i, raw in enumerate(data["edges"]):
        try:
            edges.append(
                Edge(
                    source=str(raw["from"]),
                    target=str(raw["to"]),
                    step=str(raw["step"]),
                    executor=str(raw["executor"]),
                    payload_schema=str(raw.get("payload", "none")),
                )
            )
        except KeyError as exc:
            raise WorkflowValidationError([f"edge {i} missing field: {exc.args[0]}"]) from exc
    workflow = WorkflowDef(
        name=str(data["name"]),
        states=tuple(str(s) for s in data["states"]),
        edges=tuple(edges),
        params=dict(data.get("params", {})),
    )
    violations = validate_workflow(workflow)
    if violations:
        raise WorkflowValidationError(violations)
    return workflow


def shipped_workflow(name: str) -> WorkflowDef:
    """Load one of the packaged workflow documents ("default", "synthetic")."""
    ref = resources.files("resight").joinpath(f"workflows/{name}.cfg")
    return load_workflow(yaml.safe_load(ref.read_text()))


def validate_payload(edge: Edge, payload: dict) -> list[str]:
    """Violations of the edge's payload schema (empty when satisfied)."""
    required = PAYLOAD_SCHEMAS[edge.payload_schema]
    payload = payload or {}
    return [f"payload for step {edge.step} missing key: {k}" for k in required if k not in payload]
