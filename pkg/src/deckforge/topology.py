"""Schematic node annotations to 1-D component geometry and connectivity.

A schematic is a planar (X-Y) drawing; components become 1-D segments defined
by start point, unit orientation, and length. Junctions join segment ends at
shared nodes. The deck embeds the plane at z = 0.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

from .deck_model import Block, Param, ParamValue

__all__ = [
    "TopologyError",
    "DegenerateSegment",
    "UnresolvedReference",
    "PortMismatch",
    "AmbiguousTraversal",
    "Node",
    "Segment",
    "Junction",
    "TopologyGraph",
    "FlowPathReport",
    "EPS_GEOM",
    "segment_from_nodes",
    "build_graph",
    "check_closure",
    "to_components",
    "load_topology_json",
]

EPS_GEOM = 1e-9

SEGMENT_KINDS = ("pipe", "core-channel", "plenum", "pump", "heat-exchanger", "other")

# Deck `type` for each segment kind, and for junction sub-blocks.
_KIND_TO_TYPE = {
    "pipe": "PBOneDFluidComponent",
    "core-channel": "PBCoreChannel",
    "plenum": "PBOneDFluidComponent",
    "pump": "PBPump",
    "heat-exchanger": "PBHeatExchanger",
    "other": "PBOneDFluidComponent",
}
_JUNCTION_TYPE = "PBBranch"


class TopologyError(Exception):
    pass


class DegenerateSegment(TopologyError):
    pass


class UnresolvedReference(TopologyError):
    def __init__(self, names):
        self.names = tuple(names)
        super().__init__("unresolved node/segment references: " + ", ".join(self.names))


class PortMismatch(TopologyError):
    pass


class AmbiguousTraversal(TopologyError):
    pass


@dataclass(frozen=True)
class Node:
    id: str
    x: float
    y: float

    def __post_init__(self):
        if not self.id:
            raise TopologyError("node id must be nonempty")
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise TopologyError(f"node {self.id!r} has non-finite coordinates")


@dataclass(frozen=True)
class Segment:
    name: str
    kind: str
    start_node: str
    end_node: str
    orientation: tuple[float, float]
    length: float

    def __post_init__(self):
        if self.kind not in SEGMENT_KINDS:
            raise TopologyError(f"segment {self.name!r}: unknown kind {self.kind!r}")
        norm = math.hypot(*self.orientation)
        if abs(norm - 1.0) > 1e-12:
            raise TopologyError(f"segment {self.name!r}: orientation is not unit length")
        if self.length <= 0:
            raise TopologyError(f"segment {self.name!r}: length must be positive")


@dataclass(frozen=True)
class Junction:
    name: str
    node: str
    ports: tuple[tuple[str, str], ...]  # (segment name, "inlet" | "outlet")

    def __post_init__(self):
        if len(self.ports) < 2:
            raise TopologyError(f"junction {self.name!r} needs at least 2 ports")
        for seg, end in self.ports:
            if end not in ("inlet", "outlet"):
                raise TopologyError(
                    f"junction {self.name!r}: port end must be inlet or outlet, got {end!r}")


@dataclass(frozen=True)
class TopologyGraph:
    nodes: tuple[Node, ...]
    segments: tuple[Segment, ...]
    junctions: tuple[Junction, ...] = ()
    declared_flow_path: tuple[str, ...] | None = None
    source: str | None = None

    def node(self, node_id: str) -> Node | None:
        for n in self.nodes:
            if n.id == node_id:
                return n
        return None

    def segment(self, name: str) -> Segment | None:
        for s in self.segments:
            if s.name == name:
                return s
        return None


@dataclass(frozen=True)
class FlowPathReport:
    closed: bool
    order: tuple[str, ...]
    unreachable: tuple[str, ...]
    terminal_node: str | None = None

    def summary(self) -> str:
        lines = [f"closed loop: {'yes' if self.closed else 'no'}",
                 "traversal: " + (" -> ".join(self.order) if self.order else "(none)")]
        if not self.closed and self.terminal_node:
            lines.append(f"terminates at node {self.terminal_node}")
        if self.unreachable:
            lines.append("unreachable: " + ", ".join(self.unreachable))
        return "\n".join(lines)


def segment_from_nodes(name: str, kind: str, a: Node, b: Node) -> Segment:
    """Build a segment between two annotated nodes.

    Orientation is the unit vector from a to b; length is their Euclidean
    distance. Raises DegenerateSegment when the nodes coincide (within
    EPS_GEOM).
    """
    dx, dy = b.x - a.x, b.y - a.y
    length = math.hypot(dx, dy)
    if length < EPS_GEOM:
        raise DegenerateSegment(
            f"segment {name!r}: nodes {a.id!r} and {b.id!r} coincide")
    return Segment(name=name, kind=kind, start_node=a.id, end_node=b.id,
                   orientation=(dx / length, dy / length), length=length)


def build_graph(nodes, segment_specs, junction_specs=(), *,
                declared_flow_path=None, port_tolerance: float = EPS_GEOM,
                source: str | None = None) -> TopologyGraph:
    """Assemble and verify a topology graph.

    ``segment_specs`` are (name, kind, start id, end id) tuples;
    ``junction_specs`` are (name, node id, ports) tuples. Node references must
    resolve, junction ports must name existing segments whose relevant end
    lies within ``port_tolerance`` of the junction node, and no two segments
    may duplicate each other (same endpoints, same direction).
    """
    nodes = tuple(nodes)
    by_id: dict[str, Node] = {}
    for n in nodes:
        if n.id in by_id:
            raise TopologyError(f"duplicate node id {n.id!r}")
        by_id[n.id] = n

    missing = []
    segments = []
    seg_names = set()
    for name, kind, start, end in segment_specs:
        if start not in by_id:
            missing.append(start)
        if end not in by_id:
            missing.append(end)
        if missing:
            continue
        if name in seg_names:
            raise TopologyError(f"duplicate segment name {name!r}")
        seg_names.add(name)
        segments.append(segment_from_nodes(name, kind, by_id[start], by_id[end]))
    if missing:
        raise UnresolvedReference(missing)

    seen_edges = set()
    for s in segments:
        edge = (s.start_node, s.end_node)
        if edge in seen_edges:
            raise TopologyError(
                f"duplicate edge: segment {s.name!r} repeats {edge[0]} -> {edge[1]}")
        seen_edges.add(edge)

    seg_by_name = {s.name: s for s in segments}
    junctions = []
    for name, node_id, ports in junction_specs:
        if node_id not in by_id:
            raise UnresolvedReference([node_id])
        jnode = by_id[node_id]
        checked_ports = []
        for seg_name, end in ports:
            if seg_name not in seg_by_name:
                raise UnresolvedReference([seg_name])
            seg = seg_by_name[seg_name]
            # inlet port sits at the segment start, outlet at its end
            ref = seg.start_node if end == "inlet" else seg.end_node
            refn = by_id[ref]
            dist = math.hypot(refn.x - jnode.x, refn.y - jnode.y)
            if dist > port_tolerance:
                raise PortMismatch(
                    f"junction {name!r}: port {seg_name}({end}) is {dist:.3g} m "
                    f"from node {node_id!r} (tolerance {port_tolerance:.3g})")
            checked_ports.append((seg_name, end))
        junctions.append(Junction(name=name, node=node_id, ports=tuple(checked_ports)))

    if declared_flow_path is not None:
        unknown = [n for n in declared_flow_path if n not in seg_by_name]
        if unknown:
            raise UnresolvedReference(unknown)
        declared_flow_path = tuple(declared_flow_path)

    return TopologyGraph(nodes=nodes, segments=tuple(segments),
                         junctions=tuple(junctions),
                         declared_flow_path=declared_flow_path, source=source)


def check_closure(graph: TopologyGraph) -> FlowPathReport:
    """Walk the flow path segment by segment and test loop closure.

    Starting from the first declared segment (or the first segment listed),
    each step continues to a segment whose inlet sits at the current outlet
    node, either via a junction port pair or a directly shared node. A closed
    loop returns to the starting node after visiting segments once; an open
    path terminates at a node with no continuation.
    """
    if not graph.segments:
        return FlowPathReport(closed=False, order=(), unreachable=())

    declared = graph.declared_flow_path or ()
    start = next((graph.segment(n) for n in declared if graph.segment(n)), None)
    if start is None:
        start = graph.segments[0]

    # continuation routes: segments starting at a shared node, plus
    # junction links from an outlet port to the sibling inlet ports
    outgoing: dict[str, list[str]] = {}
    for s in graph.segments:
        outgoing.setdefault(s.start_node, []).append(s.name)
    junction_next: dict[str, list[str]] = {}
    for j in graph.junctions:
        inlets = [seg for seg, end in j.ports if end == "inlet"]
        for seg, end in j.ports:
            if end == "outlet":
                junction_next.setdefault(seg, []).extend(inlets)

    declared_rank = {name: i for i, name in enumerate(declared)}
    visited: list[str] = []
    seen = set()
    current = start
    closed = False
    terminal = None
    while True:
        visited.append(current.name)
        seen.add(current.name)
        node = current.end_node
        if node == start.start_node:
            closed = True
            break
        candidates = []
        for name in outgoing.get(node, []) + junction_next.get(current.name, []):
            if name not in seen and name not in candidates:
                candidates.append(name)
        if not candidates:
            terminal = node
            break
        if len(candidates) > 1:
            ranked = [n for n in candidates if n in declared_rank]
            if len(ranked) != 1:
                ranked.sort(key=lambda n: declared_rank[n])
            if not ranked:
                raise AmbiguousTraversal(
                    f"multiple continuations at node {node!r}: "
                    + ", ".join(sorted(candidates)))
            current = graph.segment(ranked[0])
        else:
            current = graph.segment(candidates[0])

    unreachable = tuple(s.name for s in graph.segments if s.name not in seen)
    return FlowPathReport(closed=closed, order=tuple(visited),
                          unreachable=unreachable, terminal_node=terminal)


def to_components(graph: TopologyGraph) -> list[Block]:
    """Emit one deck sub-block per segment and per junction.

    Segment sub-blocks carry position (start node, z = 0), orientation, and
    length. Junction sub-blocks list the connected component ends. Ordering is
    the declared flow path where given, insertion order otherwise, junctions
    last.
    """
    order = list(graph.declared_flow_path or ())
    ordered = [graph.segment(n) for n in order]
    ordered += [s for s in graph.segments if s.name not in set(order)]

    nodes = {n.id: n for n in graph.nodes}
    blocks: list[Block] = []
    for seg in ordered:
        start = nodes[seg.start_node]
        params = (
            Param("type", ParamValue.string(_KIND_TO_TYPE[seg.kind])),
            Param("position", ParamValue.real_vector([start.x, start.y, 0.0])),
            Param("orientation",
                  ParamValue.real_vector([seg.orientation[0], seg.orientation[1], 0.0])),
            Param("length", ParamValue.real(seg.length)),
        )
        blocks.append(Block(name=seg.name, params=params))

    for j in graph.junctions:
        inputs = [f"{seg}(out)" for seg, end in j.ports if end == "outlet"]
        outputs = [f"{seg}(in)" for seg, end in j.ports if end == "inlet"]
        params = [Param("type", ParamValue.string(_JUNCTION_TYPE))]
        if inputs:
            params.append(Param("inputs", ParamValue.string_vector(inputs)))
        if outputs:
            params.append(Param("outputs", ParamValue.string_vector(outputs)))
        blocks.append(Block(name=j.name, params=tuple(params)))
    return blocks


def load_topology_json(text_or_path, *, source: str | None = None) -> TopologyGraph:
    """Load a topology graph from its JSON file format.

    The document holds ``nodes`` (id, x, y), ``segments`` (name, kind, start,
    end), optional ``junctions`` (name, node, ports as ["seg", "inlet"]
    pairs), optional ``flow_path``, optional ``scale`` (coordinate multiplier,
    default 1.0 for meters), and optional ``port_tolerance``.
    """
    try:
        is_path = isinstance(text_or_path, (str, os.PathLike)) and os.path.exists(str(text_or_path))
    except ValueError:
        is_path = False
    if is_path:
        source = source or str(text_or_path)
        with open(text_or_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    else:
        doc = json.loads(text_or_path)

    if not isinstance(doc, dict):
        raise TopologyError("topology document must be a JSON object")
    scale = float(doc.get("scale", 1.0))
    try:
        nodes = [Node(id=str(n["id"]), x=float(n["x"]) * scale, y=float(n["y"]) * scale)
                 for n in doc.get("nodes", [])]
        segment_specs = [(str(s["name"]), str(s.get("kind", "pipe")),
                          str(s["start"]), str(s["end"]))
                         for s in doc.get("segments", [])]
        junction_specs = [(str(j["name"]), str(j["node"]),
                           [(str(p[0]), str(p[1])) for p in j.get("ports", [])])
                          for j in doc.get("junctions", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise TopologyError(f"malformed topology document: {exc}") from exc

    return build_graph(
        nodes, segment_specs, junction_specs,
        declared_flow_path=doc.get("flow_path"),
        port_tolerance=float(doc.get("port_tolerance", EPS_GEOM)),
        source=source,
    )
