"""Road network model: directed graph, congestion cost functions, OD pairs,
and feasible path sets.

A network is a directed graph whose edges carry a volume-delay cost function
from one of two families:

* ``bpr``    -- t * (1 + alpha * (x / k) ** beta), the standard volume-delay
  curve with free-flow time t and capacity k.
* ``affine`` -- a + b * x, which covers constant-time links (b = 0) and purely
  flow-proportional links (a = 0) that the bpr family cannot express with a
  positive free-flow time.

Paths are stored as sequences of edge ids. Node sequences are accepted at the
file-format boundary and converted; edge ids are the internal currency because
they stay unambiguous if the format ever grows parallel links.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import networkx as nx

ODPair = tuple[str, str]


class NetworkError(ValueError):
    """Malformed network input."""


class UnreachableODError(NetworkError):
    """No directed path exists from an OD pair's origin to its destination."""


@dataclass(frozen=True)
class BPRCost:
    """Volume-delay curve t * (1 + alpha * (x / k) ** beta)."""

    t: float
    k: float
    alpha: float = 0.15
    beta: float = 4.0

    def value(self, flow: float) -> float:
        return self.t * (1.0 + self.alpha * (flow / self.k) ** self.beta)

    def deriv(self, flow: float) -> float:
        # d/dx of the curve; for 0 < beta < 1 this is unbounded at flow 0.
        if self.beta == 0.0 or self.alpha == 0.0:
            return 0.0
        return self.t * self.alpha * self.beta * flow ** (self.beta - 1.0) / self.k ** self.beta

    def integral(self, flow: float) -> float:
        return self.t * (flow + self.alpha * flow ** (self.beta + 1.0) / ((self.beta + 1.0) * self.k ** self.beta))

    def params(self) -> dict:
        return {"family": "bpr", "t": self.t, "k": self.k, "alpha": self.alpha, "beta": self.beta}

    def violations(self) -> list[str]:
        out = []
        if not (math.isfinite(self.t) and self.t > 0):
            out.append(f"bpr free-flow time must be finite and > 0, got {self.t}")
        if not (math.isfinite(self.k) and self.k > 0):
            out.append(f"bpr capacity must be finite and > 0, got {self.k}")
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            out.append(f"bpr alpha must be finite and >= 0, got {self.alpha}")
        if not (math.isfinite(self.beta) and self.beta >= 0):
            out.append(f"bpr beta must be finite and >= 0, got {self.beta}")
        return out


@dataclass(frozen=True)
class AffineCost:
    """Cost a + b * x."""

    a: float
    b: float = 0.0

    def value(self, flow: float) -> float:
        return self.a + self.b * flow

    def deriv(self, flow: float) -> float:
        return self.b

    def integral(self, flow: float) -> float:
        return self.a * flow + 0.5 * self.b * flow * flow

    def params(self) -> dict:
        return {"family": "affine", "a": self.a, "b": self.b}

    def violations(self) -> list[str]:
        out = []
        if not (math.isfinite(self.a) and self.a >= 0):
            out.append(f"affine intercept must be finite and >= 0, got {self.a}")
        if not (math.isfinite(self.b) and self.b >= 0):
            out.append(f"affine slope must be finite and >= 0, got {self.b}")
        return out


CostFunction = BPRCost | AffineCost


def edge_cost(cost: CostFunction, flow: float) -> float:
    """Travel cost on an edge carrying the given flow.

    Raises ValueError for negative or non-finite flow.
    """
    flow = float(flow)
    if not math.isfinite(flow) or flow < 0.0:
        raise ValueError(f"flow must be finite and >= 0, got {flow}")
    return cost.value(flow)


@dataclass(frozen=True)
class Edge:
    id: str
    tail: str
    head: str
    cost: CostFunction


@dataclass(frozen=True)
class Network:
    """Immutable directed road network.

    Lookups are precomputed at construction; all reads are thread-safe.
    """

    name: str
    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    _edge_by_id: dict[str, Edge] = field(init=False, repr=False, compare=False)
    _edge_index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        by_id = {}
        index = {}
        for i, e in enumerate(self.edges):
            if e.id in by_id:
                raise NetworkError(f"duplicate edge id {e.id!r}")
            by_id[e.id] = e
            index[e.id] = i
        object.__setattr__(self, "_edge_by_id", by_id)
        object.__setattr__(self, "_edge_index", index)

    def edge(self, edge_id: str) -> Edge:
        try:
            return self._edge_by_id[edge_id]
        except KeyError:
            raise NetworkError(f"unknown edge id {edge_id!r}") from None

    def edge_ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.edges)

    def edge_position(self, edge_id: str) -> int:
        try:
            return self._edge_index[edge_id]
        except KeyError:
            raise NetworkError(f"unknown edge id {edge_id!r}") from None

    def has_node(self, node: str) -> bool:
        return node in set(self.nodes)

    def free_flow_cost(self, edge_id: str) -> float:
        return self.edge(edge_id).cost.value(0.0)

    def to_digraph(self) -> nx.DiGraph:
        """networkx view weighted by free-flow cost. Fresh copy per call."""
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        for e in self.edges:
            g.add_edge(e.tail, e.head, weight=e.cost.value(0.0), edge_id=e.id)
        return g

    def node_path_to_edges(self, nodes: Sequence[str]) -> tuple[str, ...]:
        """Convert a node sequence into the corresponding edge-id sequence."""
        pairs = {(e.tail, e.head): e.id for e in self.edges}
        out = []
        for u, v in zip(nodes, nodes[1:]):
            if (u, v) not in pairs:
                raise NetworkError(f"no edge from {u!r} to {v!r}")
            out.append(pairs[(u, v)])
        return tuple(out)

    def edge_path_to_nodes(self, edge_ids: Sequence[str]) -> tuple[str, ...]:
        """Convert an edge-id sequence back to the node sequence it traverses."""
        if not edge_ids:
            raise NetworkError("empty path")
        nodes = [self.edge(edge_ids[0]).tail]
        for eid in edge_ids:
            e = self.edge(eid)
            if e.tail != nodes[-1]:
                raise NetworkError(f"edge {eid!r} does not continue the path at {nodes[-1]!r}")
            nodes.append(e.head)
        return tuple(nodes)


@dataclass(frozen=True)
class PathSet:
    """Enumerated (or explicitly supplied) simple paths for one OD pair.

    ``paths`` holds edge-id sequences; order is meaningful and drives the
    indexing of recommendation strategy vectors.
    """

    od: ODPair
    paths: tuple[tuple[str, ...], ...]
    k: int

    def __len__(self) -> int:
        return len(self.paths)


def validate_network(network: Network) -> list[str]:
    """Return a list of invariant violations; empty means well-formed."""
    out: list[str] = []
    nodes = set(network.nodes)
    if len(nodes) < 2:
        out.append(f"network needs at least 2 nodes, has {len(nodes)}")
    if len(nodes) != len(network.nodes):
        out.append("duplicate node ids")
    seen_pairs: set[tuple[str, str]] = set()
    for e in network.edges:
        if e.tail not in nodes:
            out.append(f"edge {e.id!r} tail {e.tail!r} is not a node")
        if e.head not in nodes:
            out.append(f"edge {e.id!r} head {e.head!r} is not a node")
        if e.tail == e.head:
            out.append(f"edge {e.id!r} is a self-loop at {e.tail!r}")
        if (e.tail, e.head) in seen_pairs:
            out.append(f"duplicate directed edge {e.tail!r}->{e.head!r}")
        seen_pairs.add((e.tail, e.head))
        for msg in e.cost.violations():
            out.append(f"edge {e.id!r}: {msg}")
    return out


def validate_od(network: Network, od: ODPair) -> None:
    origin, destination = od
    nodes = set(network.nodes)
    if origin not in nodes or destination not in nodes:
        raise NetworkError(f"OD pair {od} references unknown nodes")
    if origin == destination:
        raise NetworkError(f"OD pair {od} has identical origin and destination")


def _path_free_flow_cost(network: Network, edge_ids: Sequence[str]) -> float:
    return sum(network.free_flow_cost(eid) for eid in edge_ids)


def _ordered_unique(paths: Iterable[tuple[float, tuple[str, ...]]]) -> list[tuple[float, tuple[str, ...]]]:
    """Sort (cost, edge-seq) pairs: cost ascending, lexicographic edge ids on
    ties. Float ties are grouped with a relative tolerance so platform-level
    rounding cannot reorder equal-cost paths."""
    items = sorted(set(paths), key=lambda it: (it[0], it[1]))
    out: list[tuple[float, tuple[str, ...]]] = []
    group: list[tuple[float, tuple[str, ...]]] = []
    for item in items:
        if group and item[0] > group[0][0] + 1e-12 * (1.0 + abs(group[0][0])):
            group.sort(key=lambda it: it[1])
            out.extend(group)
            group = []
        group.append(item)
    group.sort(key=lambda it: it[1])
    out.extend(group)
    return out


def enumerate_paths(network: Network, od: ODPair, k: int | None) -> PathSet:
    """Up to k loopless paths for an OD pair, cheapest free-flow cost first.

    k = None enumerates every simple path (exhaustive; intended for small
    graphs and oracle checks). Deterministic: ties in cost are broken by the
    lexicographic order of the edge-id sequence.
    """
    validate_od(network, od)
    if k is not None and k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    origin, destination = od
    g = network.to_digraph()
    if origin not in g or not nx.has_path(g, origin, destination):
        raise UnreachableODError(f"no path from {origin!r} to {destination!r}")

    scored: list[tuple[float, tuple[str, ...]]] = []
    if k is None:
        for node_path in nx.all_simple_paths(g, origin, destination):
            edge_ids = network.node_path_to_edges(node_path)
            scored.append((_path_free_flow_cost(network, edge_ids), edge_ids))
        ranked = _ordered_unique(scored)
        paths = tuple(seq for _, seq in ranked)
        return PathSet(od=od, paths=paths, k=len(paths))

    # Yen-style generation, then pull extra paths tied with the k-th before
    # cutting so the lexicographic tie-break is applied over the full tie group.
    gen = nx.shortest_simple_paths(g, origin, destination, weight="weight")
    kth_cost = None
    for node_path in gen:
        edge_ids = network.node_path_to_edges(node_path)
        cost = _path_free_flow_cost(network, edge_ids)
        if kth_cost is not None and cost > kth_cost + 1e-12 * (1.0 + abs(kth_cost)):
            break
        scored.append((cost, edge_ids))
        if len(scored) >= k and kth_cost is None:
            kth_cost = cost
    ranked = _ordered_unique(scored)[:k]
    return PathSet(od=od, paths=tuple(seq for _, seq in ranked), k=k)


class Incidence:
    """Road-path incidence: which edges lie on which enumerated paths.

    Queryable in both directions: edge -> paths containing it, and
    (od, path index) -> edges of that path.
    """

    def __init__(self, network: Network, path_sets: Sequence[PathSet]):
        self._edges_of: dict[tuple[ODPair, int], tuple[str, ...]] = {}
        self._paths_through: dict[str, list[tuple[ODPair, int]]] = {eid: [] for eid in network.edge_ids()}
        for ps in path_sets:
            for i, edge_ids in enumerate(ps.paths):
                for eid in edge_ids:
                    if eid not in self._paths_through:
                        raise NetworkError(f"path references unknown edge {eid!r}")
                self._edges_of[(ps.od, i)] = tuple(edge_ids)
                for eid in set(edge_ids):
                    self._paths_through[eid].append((ps.od, i))

    def contains(self, edge_id: str, od: ODPair, path_index: int) -> int:
        """1 if the edge lies on the indexed path, else 0."""
        return int(edge_id in self._edges_of[(od, path_index)])

    def edges_of(self, od: ODPair, path_index: int) -> tuple[str, ...]:
        return self._edges_of[(od, path_index)]

    def paths_through(self, edge_id: str) -> tuple[tuple[ODPair, int], ...]:
        return tuple(self._paths_through[edge_id])


def incidence(network: Network, path_sets: Sequence[PathSet]) -> Incidence:
    return Incidence(network, path_sets)


# ---------------------------------------------------------------------------
# file format

_COST_FAMILIES = {"bpr", "affine"}


def cost_from_dict(d: Mapping) -> CostFunction:
    if not isinstance(d, Mapping) or "family" not in d:
        raise NetworkError(f"cost must be a mapping with a 'family' key, got {d!r}")
    family = d["family"]
    params = {key: d[key] for key in d if key != "family"}
    try:
        if family == "bpr":
            return BPRCost(**{key: float(val) for key, val in params.items()})
        if family == "affine":
            return AffineCost(**{key: float(val) for key, val in params.items()})
    except TypeError as exc:
        raise NetworkError(f"bad {family} cost parameters {params}: {exc}") from None
    raise NetworkError(f"unknown cost family {family!r}, expected one of {sorted(_COST_FAMILIES)}")


def network_from_dict(doc: Mapping) -> tuple[Network, list[PathSet]]:
    """Build a Network (plus any explicit path sets) from a parsed document.

    The document layout: ``name``, ``nodes`` (list of ids), ``edges`` (list of
    {id, tail, head, cost}), optional ``paths`` (list of {od, paths} with paths
    given as node sequences).
    """
    if not isinstance(doc, Mapping):
        raise NetworkError("network document must be a mapping")
    unknown = set(doc) - {"name", "nodes", "edges", "paths"}
    if unknown:
        raise NetworkError(f"unknown network fields: {sorted(unknown)}")
    if "nodes" not in doc or "edges" not in doc:
        raise NetworkError("network document needs 'nodes' and 'edges'")
    nodes = tuple(str(n) for n in doc["nodes"])
    edges = []
    for i, rec in enumerate(doc["edges"]):
        missing = {"id", "tail", "head", "cost"} - set(rec)
        if missing:
            raise NetworkError(f"edge #{i} missing fields {sorted(missing)}")
        extra = set(rec) - {"id", "tail", "head", "cost"}
        if extra:
            raise NetworkError(f"edge #{i} has unknown fields {sorted(extra)}")
        edges.append(Edge(id=str(rec["id"]), tail=str(rec["tail"]), head=str(rec["head"]),
                          cost=cost_from_dict(rec["cost"])))
    network = Network(name=str(doc.get("name", "unnamed")), nodes=nodes, edges=tuple(edges))
    problems = validate_network(network)
    if problems:
        raise NetworkError("; ".join(problems))

    path_sets = []
    for i, rec in enumerate(doc.get("paths") or []):
        if set(rec) != {"od", "paths"}:
            raise NetworkError(f"paths entry #{i} must have exactly 'od' and 'paths'")
        od = (str(rec["od"][0]), str(rec["od"][1]))
        validate_od(network, od)
        edge_paths = []
        for node_path in rec["paths"]:
            node_path = [str(n) for n in node_path]
            if node_path[0] != od[0] or node_path[-1] != od[1]:
                raise NetworkError(f"path {node_path} does not run {od[0]!r}->{od[1]!r}")
            if len(set(node_path)) != len(node_path):
                raise NetworkError(f"path {node_path} repeats a node")
            edge_paths.append(network.node_path_to_edges(node_path))
        if not edge_paths:
            raise NetworkError(f"paths entry #{i} is empty")
        if len(set(edge_paths)) != len(edge_paths):
            raise NetworkError(f"paths entry #{i} lists a duplicate path")
        path_sets.append(PathSet(od=od, paths=tuple(edge_paths), k=len(edge_paths)))
    return network, path_sets


def load_network(path) -> tuple[Network, list[PathSet]]:
    import yaml

    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return network_from_dict(doc)
