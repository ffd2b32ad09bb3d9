"""Service call graph from trace spans, and the candidate-filter closure.

Every cross-service parent→child span pair contributes a (caller, callee)
edge; the union over traces must be a DAG. For an anomalous service the
filter set is that service plus all transitive callers and callees — an
installation outside this closure cannot have caused the anomaly through the
RPC structure and is discarded before counterfactual analysis.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError, GraphCycleError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Span:
    trace_id: str
    span_id: str
    parent_span_id: str | None
    service: str
    start: float
    duration: float

    def __post_init__(self):
        if self.duration < 0:
            raise DataError(f"span {self.span_id!r} has negative duration")

    def to_record(self) -> dict:
        return {"trace_id": self.trace_id, "span_id": self.span_id,
                "parent_span_id": self.parent_span_id, "service": self.service,
                "start": self.start, "duration": self.duration}

    @classmethod
    def from_record(cls, rec: dict) -> "Span":
        return cls(trace_id=rec["trace_id"], span_id=rec["span_id"],
                   parent_span_id=rec.get("parent_span_id"),
                   service=rec["service"], start=float(rec["start"]),
                   duration=float(rec["duration"]))


def load_spans(path: str | Path, t_start: float | None = None,
               t_end: float | None = None) -> list[Span]:
    spans = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            span = Span.from_record(json.loads(line))
            if t_start is not None and span.start < t_start:
                continue
            if t_end is not None and span.start >= t_end:
                continue
            spans.append(span)
    return spans


def write_spans(path: str | Path, spans: Iterable[Span]) -> None:
    with open(path, "w") as fh:
        for span in spans:
            fh.write(json.dumps(span.to_record(), sort_keys=True,
                                separators=(",", ":")) + "\n")


@dataclass
class CausalGraph:
    """Service-level DAG: nodes are services, edges are caller→callee."""

    nodes: set[str]
    edges: set[tuple[str, str]]

    def callees(self, service: str) -> set[str]:
        return {b for a, b in self.edges if a == service}

    def callers(self, service: str) -> set[str]:
        return {a for a, b in self.edges if b == service}


def _find_cycle(nodes: set[str], edges: set[tuple[str, str]]) -> list[str] | None:
    """Kahn's algorithm; on failure walk the leftover subgraph for one cycle."""
    out = {n: set() for n in nodes}
    indeg = {n: 0 for n in nodes}
    for a, b in edges:
        out[a].add(b)
        indeg[b] += 1
    queue = deque(n for n in nodes if indeg[n] == 0)
    seen = 0
    while queue:
        n = queue.popleft()
        seen += 1
        for m in out[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                queue.append(m)
    if seen == len(nodes):
        return None
    remaining = {n for n in nodes if indeg[n] > 0}
    start = sorted(remaining)[0]
    path, pos = [start], {start: 0}
    while True:
        nxt = sorted(out[path[-1]] & remaining)[0]
        if nxt in pos:
            return path[pos[nxt]:] + [nxt]
        pos[nxt] = len(path)
        path.append(nxt)


def build_graph(spans: Sequence[Span]) -> CausalGraph:
    """Derive the service DAG from spans.

    A child span whose resolved parent sits in a different service adds one
    deduplicated edge; same-service parent-child pairs add none. Spans with
    unresolvable parent references are skipped (and tallied in a warning);
    a cyclic result is a hard error since the closure below is undefined on
    cycles.
    """
    nodes: set[str] = set()
    edges: set[tuple[str, str]] = set()
    by_trace: dict[str, dict[str, Span]] = {}
    for span in spans:
        nodes.add(span.service)
        by_trace.setdefault(span.trace_id, {})[span.span_id] = span

    skipped = 0
    for span in spans:
        if span.parent_span_id is None:
            continue
        parent = by_trace[span.trace_id].get(span.parent_span_id)
        if parent is None:
            skipped += 1
            continue
        if parent.service != span.service:
            edges.add((parent.service, span.service))
    if skipped:
        logger.warning("skipped %d spans with unresolvable parent references", skipped)

    cycle = _find_cycle(nodes, edges)
    if cycle is not None:
        raise GraphCycleError(cycle)
    return CausalGraph(nodes, edges)


def _reach(graph: CausalGraph, service: str, forward: bool) -> set[str]:
    adj: dict[str, list[str]] = {n: [] for n in graph.nodes}
    for a, b in graph.edges:
        if forward:
            adj[a].append(b)
        else:
            adj[b].append(a)
    found: set[str] = set()
    queue = deque([service])
    while queue:
        n = queue.popleft()
        for m in adj[n]:
            if m not in found:
                found.add(m)
                queue.append(m)
    return found


def critical_path(graph: CausalGraph, service: str) -> set[str]:
    """The service plus all transitive callers and callees."""
    if service not in graph.nodes:
        raise DataError(f"service {service!r} is not in the call graph")
    return {service} | _reach(graph, service, forward=True) | _reach(graph, service, forward=False)


def filter_installs(events: Sequence[tuple[int, object]],
                    critical: set[str]) -> list[tuple[int, object]]:
    """Order-preserving subset of (timestamp, event) with event.service in
    the closure."""
    return [(ts, e) for ts, e in events if e.service in critical]
