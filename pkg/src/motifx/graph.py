"""Event-stream data model: ingestion, temporal indexing, neighborhood extraction, synthesis.

Timestamps are float64 and may repeat; wherever an order over events is
needed, ties are broken by event id (lower id = earlier). Event ids are
dense 0..N-1, assigned in non-decreasing timestamp order.
"""
from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import IngestError, SchemaError

DEFAULT_PER_HOP_CAP = 20


@dataclass(frozen=True, eq=False)
class Event:
    id: int
    u: int
    v: int
    t: float
    attrs: np.ndarray


def query_event(u: int, v: int, t: float, attr_width: int = 0) -> Event:
    """A synthetic target event (e.g. a negative link) that is not part of the graph."""
    return Event(id=-1, u=u, v=v, t=t, attrs=np.zeros(attr_width))


class TemporalGraph:
    """Immutable store of undirected timestamped interaction events.

    Construction stable-sorts events by timestamp and builds, for every
    node, the list of incident event ids in ascending (t, id) order so
    that history lookups are binary searches.
    """

    __slots__ = ("src", "dst", "t", "attrs", "node_count", "attr_width",
                 "_nbr_ids", "_nbr_times")

    def __init__(self, src, dst, t, attrs, node_count: int):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        t = np.asarray(t, dtype=np.float64)
        attrs = np.asarray(attrs, dtype=np.float64)
        if attrs.ndim != 2:
            attrs = attrs.reshape(len(src), -1)
        order = np.argsort(t, kind="stable")
        self.src = src[order]
        self.dst = dst[order]
        self.t = t[order]
        self.attrs = attrs[order]
        self.node_count = int(node_count)
        self.attr_width = int(self.attrs.shape[1])

        incident: list[list[int]] = [[] for _ in range(self.node_count)]
        for i in range(len(self.src)):
            incident[self.src[i]].append(i)
            incident[self.dst[i]].append(i)
        # events are visited in id order == (t, id) order, so each per-node
        # list is already sorted the way binary search needs it
        self._nbr_ids = [np.asarray(ix, dtype=np.int64) for ix in incident]
        self._nbr_times = [self.t[ix] for ix in self._nbr_ids]

    @property
    def n_events(self) -> int:
        return len(self.src)

    @property
    def time_span(self) -> float:
        if self.n_events == 0:
            return 0.0
        return float(self.t[-1] - self.t[0])

    def event(self, i: int) -> Event:
        return Event(id=int(i), u=int(self.src[i]), v=int(self.dst[i]),
                     t=float(self.t[i]), attrs=self.attrs[i])

    def events(self):
        for i in range(self.n_events):
            yield self.event(i)

    def other_endpoint(self, event_id: int, node: int) -> int:
        u, v = int(self.src[event_id]), int(self.dst[event_id])
        return v if u == node else u

    def incident_before(self, node: int, before: float, strict: bool = True) -> np.ndarray:
        """Event ids incident to `node` with t < before (or <= if not strict), ascending (t, id)."""
        times = self._nbr_times[node]
        cut = np.searchsorted(times, before, side="left" if strict else "right")
        return self._nbr_ids[node][:cut]

    def degree_before(self, node: int, before: float) -> int:
        times = self._nbr_times[node]
        return int(np.searchsorted(times, before, side="left"))

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        events = [[int(u), int(v), float(tt), [float(a) for a in row]]
                  for u, v, tt, row in zip(self.src, self.dst, self.t, self.attrs)]
        payload = {"node_count": self.node_count, "attr_width": self.attr_width,
                   "events": events}
        return json.dumps(payload, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TemporalGraph":
        payload = json.loads(text)
        ev = payload["events"]
        src = [e[0] for e in ev]
        dst = [e[1] for e in ev]
        t = [e[2] for e in ev]
        attrs = np.array([e[3] for e in ev], dtype=np.float64)
        if attrs.size == 0:
            attrs = np.zeros((len(ev), payload["attr_width"]))
        return cls(src, dst, t, attrs, payload["node_count"])


@dataclass
class IngestReport:
    rows_total: int = 0
    rows_kept: int = 0
    self_loops_skipped: int = 0
    warnings: list = field(default_factory=list)


def ingest_csv(path, has_header: bool = False) -> tuple[TemporalGraph, IngestReport]:
    """Load `u,v,t[,a_1..a_k]` rows into a TemporalGraph.

    Node labels are arbitrary strings and get remapped to dense ids in
    order of first appearance after time-sorting. Self-loop rows are
    skipped with a counted warning; malformed rows abort with the line
    number; an inconsistent attribute width is a schema error.
    """
    report = IngestReport()
    rows = []
    attr_width = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and has_header:
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            report.rows_total += 1
            if len(row) < 3:
                raise IngestError(f"line {lineno}: expected at least 3 columns, got {len(row)}")
            u_raw, v_raw = row[0].strip(), row[1].strip()
            try:
                t = float(row[2])
            except ValueError as exc:
                raise IngestError(f"line {lineno}: bad timestamp {row[2]!r}") from exc
            if not math.isfinite(t):
                raise IngestError(f"line {lineno}: non-finite timestamp {row[2]!r}")
            try:
                attrs = [float(x) for x in row[3:]]
            except ValueError as exc:
                raise IngestError(f"line {lineno}: bad attribute in {row[3:]!r}") from exc
            if attr_width is None:
                attr_width = len(attrs)
            elif len(attrs) != attr_width:
                raise SchemaError(
                    f"line {lineno}: attribute width {len(attrs)} != {attr_width} seen earlier")
            if u_raw == v_raw:
                report.self_loops_skipped += 1
                report.warnings.append(f"line {lineno}: self-loop {u_raw!r} skipped")
                continue
            rows.append((t, u_raw, v_raw, attrs))
    rows.sort(key=lambda r: r[0])  # stable: ties keep file order
    node_ids: dict[str, int] = {}
    src, dst, ts, attr_rows = [], [], [], []
    for t, u_raw, v_raw, attrs in rows:
        for name in (u_raw, v_raw):
            if name not in node_ids:
                node_ids[name] = len(node_ids)
        src.append(node_ids[u_raw])
        dst.append(node_ids[v_raw])
        ts.append(t)
        attr_rows.append(attrs)
    report.rows_kept = len(rows)
    width = attr_width or 0
    attrs_arr = np.array(attr_rows, dtype=np.float64) if attr_rows else np.zeros((0, width))
    g = TemporalGraph(src, dst, ts, attrs_arr.reshape(len(rows), width), len(node_ids))
    return g, report


def neighbor_events(g: TemporalGraph, nodes, before: float, strict: bool = True) -> np.ndarray:
    """All event ids incident to any node in `nodes` with t < before (strict) or t <= before.

    Deduplicated, ascending id order. Empty result is valid.
    """
    parts = [g.incident_before(w, before, strict) for w in set(int(n) for n in nodes)]
    if not parts:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(parts))


@dataclass
class EventSubset:
    """The L-hop historical neighborhood a predictor can see for one target."""
    target_u: int
    target_v: int
    target_t: float
    target_id: int
    members: frozenset
    hop_of: dict

    @property
    def member_ids(self) -> np.ndarray:
        return np.array(sorted(self.members), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.members)


def computational_graph(g: TemporalGraph, target: Event, hops: int = 1,
                        per_hop_cap: int = DEFAULT_PER_HOP_CAP) -> EventSubset:
    """Breadth-first expansion over temporal adjacency from the target endpoints.

    Per hop, each frontier node contributes at most `per_hop_cap` of its
    most recent events strictly earlier than the target time. A target
    with no history yields an empty subset.
    """
    if hops < 1 or per_hop_cap < 1:
        raise ValueError("hops and per_hop_cap must be >= 1")
    members: set[int] = set()
    hop_of: dict[int, int] = {}
    visited = {target.u, target.v}
    frontier = sorted(visited)
    for hop in range(1, hops + 1):
        next_nodes: set[int] = set()
        for w in frontier:
            ids = g.incident_before(w, target.t, strict=True)
            recent = ids[-per_hop_cap:]
            for eid in recent:
                eid = int(eid)
                if eid not in members:
                    members.add(eid)
                    hop_of[eid] = hop
                other = g.other_endpoint(eid, w)
                if other not in visited:
                    next_nodes.add(other)
        visited |= next_nodes
        frontier = sorted(next_nodes)
        if not frontier:
            break
    return EventSubset(target.u, target.v, target.t, target.id,
                       frozenset(members), hop_of)


def degree_spectrum(g: TemporalGraph) -> list[int]:
    """Per-node incident-event counts, sorted descending."""
    if g.node_count == 0:
        return []
    counts = np.bincount(np.concatenate([g.src, g.dst]), minlength=g.node_count)
    return sorted((int(c) for c in counts), reverse=True)


def node_base_features(g: TemporalGraph, nodes, before: float) -> np.ndarray:
    """Inductive node inputs for the link predictor: [1.0, log1p(degree before t)]."""
    out = np.ones((len(nodes), 2))
    for i, w in enumerate(nodes):
        out[i, 1] = math.log1p(g.degree_before(int(w), before))
    return out


# -- synthetic generators ----------------------------------------------------

RULES = ("triadic-closure", "preferential-attachment", "uniform-random")
TRIADIC_WINDOW = 15  # events considered "recent" when looking for open wedges
TRIADIC_WEDGE_PROB = 0.8


def generate_synthetic(rule: str, n_nodes: int, n_events: int, seed: int) -> TemporalGraph:
    """Planted-rule event streams with strictly increasing integer timestamps.

    triadic-closure: with probability 0.8 the next event closes an open
    wedge among recent events (nodes u,v sharing a recent partner w and
    not recently linked themselves), else a uniform pair. The wedge pool
    is drawn from a sliding window of recent events so the rule stays
    active on small node sets instead of saturating once every pair has
    interacted.

    preferential-attachment: both endpoints drawn proportional to
    (degree + 1). uniform-random: uniform distinct pairs.
    """
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")
    if n_nodes < 3 or n_events < 1:
        raise ValueError("need n_nodes >= 3 and n_events >= 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xC0FFEE])))
    src, dst = [], []

    def uniform_pair():
        u = int(rng.integers(n_nodes))
        v = int(rng.integers(n_nodes - 1))
        if v >= u:
            v += 1
        return u, v

    if rule == "uniform-random":
        for _ in range(n_events):
            u, v = uniform_pair()
            src.append(u)
            dst.append(v)
    elif rule == "preferential-attachment":
        deg = np.ones(n_nodes)
        for _ in range(n_events):
            p = deg / deg.sum()
            u = int(rng.choice(n_nodes, p=p))
            q = deg.copy()
            q[u] = 0.0
            q /= q.sum()
            v = int(rng.choice(n_nodes, p=q))
            src.append(u)
            dst.append(v)
            deg[u] += 1
            deg[v] += 1
    else:  # triadic-closure
        window: deque[tuple[int, int]] = deque(maxlen=TRIADIC_WINDOW)
        for _ in range(n_events):
            pair = None
            if window and rng.random() < TRIADIC_WEDGE_PROB:
                partners: dict[int, set[int]] = {}
                recent_pairs = set()
                for a, b in window:
                    partners.setdefault(a, set()).add(b)
                    partners.setdefault(b, set()).add(a)
                    recent_pairs.add((min(a, b), max(a, b)))
                wedges = set()
                for w, nbrs in partners.items():
                    for a in nbrs:
                        for b in nbrs:
                            if a < b and (a, b) not in recent_pairs:
                                wedges.add((a, b))
                if wedges:
                    cand = sorted(wedges)
                    pair = cand[int(rng.integers(len(cand)))]
            if pair is None:
                pair = uniform_pair()
            src.append(pair[0])
            dst.append(pair[1])
            window.append(pair)
    ts = np.arange(1, n_events + 1, dtype=np.float64)
    return TemporalGraph(src, dst, ts, np.zeros((n_events, 0)), n_nodes)
