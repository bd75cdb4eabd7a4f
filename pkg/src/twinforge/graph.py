"""Typed property graph of the data-center building.

The graph is the single source of topology for the synthetic plant, the
feature extractor feeding the neural scorer, and the operator UI. Graphs are
built through ``add_node``/``add_edge`` (which enforce the structural
invariants), then frozen; a frozen graph is an immutable snapshot that is safe
to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, TextIO

import numpy as np

from .errors import (
    ContainsCycle,
    DuplicateId,
    FrozenGraph,
    InvalidAttrs,
    MissingEndpoint,
    MissingSensorValue,
    ParseError,
    SelfLoop,
)
from .util import stable_hash

TOPOLOGY_HEADER = "twinforge-topology v1"
SCHEMA_VERSION = 1


class NodeKind(str, Enum):
    FLOOR = "Floor"
    ZONE = "Zone"
    RACK = "Rack"
    SERVER = "Server"
    CRAC = "CracUnit"
    SENSOR = "Sensor"
    GATEWAY = "Gateway"


class EdgeKind(str, Enum):
    CONTAINS = "Contains"
    AIRFLOW = "Airflow"
    POWER_FEED = "PowerFeed"
    MONITORS = "Monitors"
    UPLINK = "Uplink"


SENSOR_CHANNELS = ("temperature", "humidity", "airquality", "power")

# Attribute vocabulary and the min-max normalization constants used by
# featurize(). Fixed per schema version so feature vectors are stable
# across runs and checkpoints remain comparable.
ATTR_SCALES = {
    "age": 30.0,        # years
    "size": 1000.0,     # square meters or rated watts
    "setpoint": 50.0,   # degC
    "idle_watts": 1000.0,
    "max_watts": 1000.0,
}
ATTR_ORDER = ("age", "size", "setpoint", "idle_watts", "max_watts")

# Min-max windows applied to the latest sensor reading copied into the
# feature row: value -> (value - lo) / (hi - lo). Windows bracket the nominal
# operating range so fault-sized deviations land at feature scale O(0.1-1),
# which keeps the scorer trainable within its epoch budget.
CHANNEL_WINDOWS = {
    "temperature": (20.0, 30.0),  # degC
    "humidity": (35.0, 55.0),     # percent
    "airquality": (0.5, 1.0),     # index, 1 = clean
    "power": (0.0, 1000.0),       # watts
}

# one-hot kind | attr values | attr presence | channel one-hot | per-channel reading
FEATURE_DIM = len(NodeKind) + 2 * len(ATTR_ORDER) + 2 * len(SENSOR_CHANNELS)

_KIND_INDEX = {kind: i for i, kind in enumerate(NodeKind)}
_CHANNEL_INDEX = {ch: i for i, ch in enumerate(SENSOR_CHANNELS)}


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    attrs: dict[str, float] = field(default_factory=dict)
    channel: Optional[str] = None  # sensor channel; Sensor nodes only


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    kind: EdgeKind


@dataclass(frozen=True)
class Violation:
    rule: str
    subject: str

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return f"{self.rule}({self.subject})"


@dataclass
class FeatureSet:
    """Numeric view of one (graph, telemetry frame) pair.

    ``features`` is row-per-node in ``node_order`` (ids sorted); ``adjacency``
    holds symmetric neighbor index lists derived from all edge kinds.
    """

    node_order: list[str]
    features: np.ndarray
    adjacency: list[list[int]]
    schema_version: int = SCHEMA_VERSION

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])


def _check_attrs(kind: NodeKind, attrs: Mapping[str, float], channel: Optional[str]) -> None:
    for name, value in attrs.items():
        if name not in ATTR_SCALES:
            raise InvalidAttrs(f"unknown attribute {name!r}")
        try:
            fval = float(value)
        except (TypeError, ValueError):
            raise InvalidAttrs(f"attribute {name!r} is not a number: {value!r}") from None
        if not np.isfinite(fval):
            raise InvalidAttrs(f"attribute {name!r} must be finite, got {value!r}")
    if "age" in attrs and float(attrs["age"]) < 0:
        raise InvalidAttrs("age must be >= 0")
    if "size" in attrs and float(attrs["size"]) <= 0:
        raise InvalidAttrs("size must be > 0")
    if kind is NodeKind.SERVER:
        idle = attrs.get("idle_watts")
        peak = attrs.get("max_watts")
        if idle is None or peak is None:
            raise InvalidAttrs("Server requires idle_watts and max_watts")
        if float(idle) <= 0 or float(peak) <= 0:
            raise InvalidAttrs("Server idle_watts and max_watts must be > 0")
        if float(idle) > float(peak):
            raise InvalidAttrs("Server requires idle_watts <= max_watts")
    if kind is NodeKind.SENSOR:
        if channel is None:
            raise InvalidAttrs("Sensor requires exactly one sensor_channel")
        if channel not in SENSOR_CHANNELS:
            raise InvalidAttrs(f"unknown sensor_channel {channel!r}")
    elif channel is not None:
        raise InvalidAttrs(f"{kind.value} nodes carry no sensor_channel")


class BuildingGraph:
    """Mutable during a build phase, immutable after ``freeze()``."""

    def __init__(self) -> None:
        self._nodes: dict[str, Node] = {}
        self._edges: list[Edge] = []
        self._contains_parent: dict[str, str] = {}
        self.version = 0
        self.frozen = False
        self._known_valid = False

    # -- construction --------------------------------------------------------

    def add_node(
        self,
        kind: NodeKind | str,
        attrs: Optional[Mapping[str, float]] = None,
        *,
        node_id: Optional[str] = None,
        channel: Optional[str] = None,
    ) -> str:
        self._check_mutable()
        kind = NodeKind(kind)
        attrs = {k: float(v) for k, v in (attrs or {}).items()}
        _check_attrs(kind, attrs, channel)
        if node_id is None:
            node_id = f"{kind.value.lower()}-{len(self._nodes) + 1}"
            while node_id in self._nodes:
                node_id = f"{node_id}x"
        if not node_id or any(c.isspace() for c in node_id):
            raise InvalidAttrs(f"node id must be non-empty without whitespace: {node_id!r}")
        if node_id in self._nodes:
            raise DuplicateId(node_id)
        self._nodes[node_id] = Node(node_id, kind, attrs, channel)
        self.version += 1
        return node_id

    def add_edge(self, src: str, dst: str, kind: EdgeKind | str) -> int:
        self._check_mutable()
        kind = EdgeKind(kind)
        if src not in self._nodes:
            raise MissingEndpoint(src)
        if dst not in self._nodes:
            raise MissingEndpoint(dst)
        if src == dst:
            raise SelfLoop(src)
        if kind is EdgeKind.CONTAINS:
            self._check_contains(src, dst)
            self._contains_parent[dst] = src
        self._edges.append(Edge(src, dst, kind))
        self.version += 1
        return len(self._edges) - 1

    def _check_contains(self, src: str, dst: str) -> None:
        if self._nodes[dst].kind is NodeKind.FLOOR:
            raise ContainsCycle(f"Floor {dst!r} cannot be contained")
        if dst in self._contains_parent:
            raise ContainsCycle(f"{dst!r} already has a containing parent")
        # Walking up from src must not reach dst, else the edge closes a cycle.
        cursor: Optional[str] = src
        while cursor is not None:
            if cursor == dst:
                raise ContainsCycle(f"Contains edge {src!r}->{dst!r} closes a cycle")
            cursor = self._contains_parent.get(cursor)

    def freeze(self) -> "BuildingGraph":
        self.frozen = True
        return self

    def _check_mutable(self) -> None:
        if self.frozen:
            raise FrozenGraph("graph is frozen; build a new version instead")

    @classmethod
    def from_parts(cls, nodes: Iterable[Node], edges: Iterable[Edge]) -> "BuildingGraph":
        """Assemble without invariant checks (for tests and low-level loaders);
        run validate() to inspect the result."""
        g = cls()
        for n in nodes:
            g._nodes[n.id] = n
        for e in edges:
            g._edges.append(e)
            if e.kind is EdgeKind.CONTAINS:
                g._contains_parent.setdefault(e.dst, e.src)
        return g

    # -- access ---------------------------------------------------------------

    @property
    def nodes(self) -> dict[str, Node]:
        return dict(self._nodes)

    @property
    def edges(self) -> list[Edge]:
        return list(self._edges)

    def node(self, node_id: str) -> Node:
        return self._nodes[node_id]

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def nodes_of_kind(self, kind: NodeKind) -> list[Node]:
        return [n for n in self._nodes.values() if n.kind is kind]

    def contains_parent(self, node_id: str) -> Optional[str]:
        for e in self._edges:
            if e.kind is EdgeKind.CONTAINS and e.dst == node_id:
                return e.src
        return None

    def contains_children(self, node_id: str) -> list[str]:
        return [e.dst for e in self._edges if e.kind is EdgeKind.CONTAINS and e.src == node_id]

    def floor_of(self, node_id: str) -> Optional[str]:
        """Ascend the containment chain to the owning Floor."""
        cursor: Optional[str] = node_id
        seen = set()
        while cursor is not None and cursor not in seen:
            if self._nodes[cursor].kind is NodeKind.FLOOR:
                return cursor
            seen.add(cursor)
            cursor = self.contains_parent(cursor)
        return None

    def monitored_by(self, sensor_id: str) -> Optional[str]:
        for e in self._edges:
            if e.kind is EdgeKind.MONITORS and e.src == sensor_id:
                return e.dst
        return None

    def structural_key(self) -> tuple:
        nodes = tuple(
            (n.id, n.kind.value, tuple(sorted(n.attrs.items())), n.channel)
            for n in sorted(self._nodes.values(), key=lambda n: n.id)
        )
        edges = tuple(sorted((e.src, e.dst, e.kind.value) for e in self._edges))
        return (nodes, edges)

    def structurally_equal(self, other: "BuildingGraph") -> bool:
        return self.structural_key() == other.structural_key()

    def graph_hash(self) -> str:
        nodes, edges = self.structural_key()
        return stable_hash({"schema": SCHEMA_VERSION, "nodes": nodes, "edges": edges})

    # -- validation -----------------------------------------------------------

    def validate(self) -> list[Violation]:
        out: list[Violation] = []
        for n in self._nodes.values():
            try:
                _check_attrs(n.kind, n.attrs, n.channel)
            except InvalidAttrs as exc:
                out.append(Violation(f"InvalidAttrs:{exc}", n.id))
        if not any(n.kind is NodeKind.FLOOR for n in self._nodes.values()):
            out.append(Violation("NoFloor", "<graph>"))

        parents: dict[str, list[str]] = {}
        for i, e in enumerate(self._edges):
            subject = f"{e.src}->{e.dst}:{e.kind.value}"
            if e.src not in self._nodes or e.dst not in self._nodes:
                out.append(Violation("MissingEndpoint", subject))
                continue
            if e.src == e.dst:
                out.append(Violation("SelfLoop", subject))
                continue
            if e.kind is EdgeKind.CONTAINS:
                parents.setdefault(e.dst, []).append(e.src)
            elif e.kind is EdgeKind.MONITORS:
                if self._nodes[e.src].kind is not NodeKind.SENSOR:
                    out.append(Violation("MonitorsOrigin", subject))
            elif e.kind is EdgeKind.UPLINK:
                if self._nodes[e.src].kind not in (NodeKind.SENSOR, NodeKind.GATEWAY):
                    out.append(Violation("UplinkOrigin", subject))

        out.extend(self._validate_contains_forest(parents))

        monitor_counts: dict[str, int] = {}
        for e in self._edges:
            if e.kind is EdgeKind.MONITORS and e.src in self._nodes:
                monitor_counts[e.src] = monitor_counts.get(e.src, 0) + 1
        for n in self._nodes.values():
            if n.kind is NodeKind.SENSOR:
                count = monitor_counts.get(n.id, 0)
                if count == 0:
                    out.append(Violation("OrphanSensor", n.id))
                elif count > 1:
                    out.append(Violation("MultiMonitor", n.id))
        return out

    def _validate_contains_forest(self, parents: dict[str, list[str]]) -> list[Violation]:
        out: list[Violation] = []
        for child, ps in parents.items():
            if len(ps) > 1:
                out.append(Violation("ContainsForestViolation", child))
            if self._nodes.get(child) and self._nodes[child].kind is NodeKind.FLOOR:
                out.append(Violation("ContainsForestViolation", child))
        # Cycle detection and root-kind check over the single-parent projection.
        parent_of = {c: ps[0] for c, ps in parents.items()}
        for start in parent_of:
            cursor: Optional[str] = start
            hops = 0
            while cursor in parent_of:
                cursor = parent_of[cursor]
                hops += 1
                if cursor == start:
                    out.append(Violation("ContainsForestViolation", f"cycle@{start}"))
                    break
                if hops > len(self._nodes):
                    break
            else:
                root = cursor
                if root in self._nodes and self._nodes[root].kind is not NodeKind.FLOOR:
                    out.append(Violation("ContainsForestViolation", f"root@{root}"))
        return out

    # -- featurization ---------------------------------------------------------

    def featurize(self, frame=None) -> FeatureSet:
        """Build the fixed-dimension numeric view used by the scorer.

        ``frame`` is anything with a ``readings`` mapping (a TelemetryFrame),
        a bare mapping of sensor id to value, or None for a sensorless graph.
        Raises MissingSensorValue when a sensor in the graph has no reading.
        """
        if not (self.frozen and self._known_valid):
            violations = self.validate()
            if violations:
                raise InvalidAttrs(f"graph invalid: {[str(v) for v in violations[:4]]}")
            if self.frozen:
                self._known_valid = True
        readings: Mapping[str, float]
        if frame is None:
            readings = {}
        elif hasattr(frame, "readings"):
            readings = frame.readings
        else:
            readings = frame

        order = sorted(self._nodes)
        index = {nid: i for i, nid in enumerate(order)}
        feats = np.zeros((len(order), FEATURE_DIM), dtype=np.float64)
        n_kind = len(NodeKind)
        n_attr = len(ATTR_ORDER)
        ch_base = n_kind + 2 * n_attr
        val_base = ch_base + len(SENSOR_CHANNELS)

        for nid in order:
            node = self._nodes[nid]
            row = feats[index[nid]]
            row[_KIND_INDEX[node.kind]] = 1.0
            for a, name in enumerate(ATTR_ORDER):
                if name in node.attrs:
                    row[n_kind + a] = node.attrs[name] / ATTR_SCALES[name]
                    row[n_kind + n_attr + a] = 1.0
            if node.kind is NodeKind.SENSOR:
                ch = _CHANNEL_INDEX[node.channel]
                row[ch_base + ch] = 1.0
                if nid not in readings:
                    raise MissingSensorValue(nid)
                lo, hi = CHANNEL_WINDOWS[node.channel]
                row[val_base + ch] = (float(readings[nid]) - lo) / (hi - lo)

        if not np.all(np.isfinite(feats)):
            raise InvalidAttrs("non-finite feature value")

        return FeatureSet(
            node_order=order, features=feats, adjacency=self._adjacency(order, index)
        )

    def _adjacency(self, order: list[str], index: dict[str, int]) -> list[list[int]]:
        # Frozen graphs hand out one shared adjacency object so downstream
        # consumers can batch FeatureSets from the same topology.
        cached = getattr(self, "_adjacency_cache", None)
        if self.frozen and cached is not None:
            return cached
        neighbors: list[set[int]] = [set() for _ in order]
        for e in self._edges:
            i, j = index[e.src], index[e.dst]
            neighbors[i].add(j)
            neighbors[j].add(i)
        adjacency = [sorted(s) for s in neighbors]
        if self.frozen:
            self._adjacency_cache = adjacency
        return adjacency


def mean_aggregation_matrix(adjacency: list[list[int]]) -> np.ndarray:
    """Row-normalized neighbor averaging operator; isolated nodes get a zero row."""
    n = len(adjacency)
    mat = np.zeros((n, n), dtype=np.float64)
    for i, nbrs in enumerate(adjacency):
        if nbrs:
            mat[i, nbrs] = 1.0 / len(nbrs)
    return mat


# -- persistence ---------------------------------------------------------------

def _format_value(value) -> str:
    if isinstance(value, str):
        return value
    return repr(float(value))


def save_topology(graph: BuildingGraph, sink: str | TextIO) -> None:
    lines = [TOPOLOGY_HEADER]
    for node in sorted(graph.nodes.values(), key=lambda n: n.id):
        parts = [f"node {node.id} {node.kind.value}"]
        if node.channel is not None:
            parts.append(f"channel={node.channel}")
        for key in sorted(node.attrs):
            parts.append(f"{key}={_format_value(node.attrs[key])}")
        lines.append(" ".join(parts))
    for src, dst, kind in sorted((e.src, e.dst, e.kind.value) for e in graph.edges):
        lines.append(f"edge {src} {dst} {kind}")
    text = "\n".join(lines) + "\n"
    if isinstance(sink, str):
        from .util import atomic_write_text

        atomic_write_text(sink, text)
    else:
        sink.write(text)


def load_topology(source: str | TextIO) -> BuildingGraph:
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = source.read()

    lines = text.splitlines()
    if not lines or lines[0].strip() != TOPOLOGY_HEADER:
        raise ParseError(f"line 1: expected header {TOPOLOGY_HEADER!r}")

    graph = BuildingGraph()
    pending_edges: list[tuple[int, str, str, str]] = []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        tag = fields[0]
        try:
            if tag == "node":
                if len(fields) < 3:
                    raise ParseError(f"line {lineno}: node needs id and kind")
                _, node_id, kind_name, *attr_fields = fields
                if kind_name not in NodeKind._value2member_map_:
                    raise ParseError(f"line {lineno}: unknown NodeKind {kind_name!r}")
                attrs: dict[str, float] = {}
                channel = None
                for item in attr_fields:
                    if "=" not in item:
                        raise ParseError(f"line {lineno}: malformed attribute {item!r}")
                    key, _, value = item.partition("=")
                    if key == "channel":
                        channel = value
                    else:
                        try:
                            attrs[key] = float(value)
                        except ValueError:
                            raise ParseError(
                                f"line {lineno}: attribute {key!r} is not a number: {value!r}"
                            ) from None
                graph.add_node(kind_name, attrs, node_id=node_id, channel=channel)
            elif tag == "edge":
                if len(fields) != 4:
                    raise ParseError(f"line {lineno}: edge needs <from> <to> <kind>")
                pending_edges.append((lineno, fields[1], fields[2], fields[3]))
            else:
                raise ParseError(f"line {lineno}: unknown record {tag!r}")
        except (InvalidAttrs, DuplicateId) as exc:
            raise ParseError(f"line {lineno}: {exc}") from exc

    for lineno, src, dst, kind_name in pending_edges:
        if kind_name not in EdgeKind._value2member_map_:
            raise ParseError(f"line {lineno}: unknown EdgeKind {kind_name!r}")
        try:
            graph.add_edge(src, dst, kind_name)
        except (MissingEndpoint, SelfLoop, ContainsCycle) as exc:
            raise ParseError(f"line {lineno}: {exc}") from exc

    if not graph.nodes_of_kind(NodeKind.FLOOR):
        raise ParseError("topology must define at least one Floor node")
    return graph
