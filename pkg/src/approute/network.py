"""Traffic network graphs: links, junctions, ramps, paths and min-cut capacity.

Links are the first-class objects. Each link ``l`` joins a tail node to a head
node, and a ramp ``(l, m)`` exists whenever the head of ``l`` is the tail of
``m``. The network has a single source link (nothing flows into it) and a
single destination link (nothing flows out of it).
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from collections.abc import Hashable, Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

__all__ = [
    "UNBOUNDED",
    "Unbounded",
    "NetworkError",
    "CycleDetected",
    "MultipleSources",
    "MultipleDestinations",
    "UnreachableLink",
    "PathExplosion",
    "KeyMismatch",
    "TrafficNetwork",
    "PathSet",
    "RoutingState",
    "build_network",
    "enumerate_paths",
    "min_cut_capacity",
    "check_feasible_routing",
    "is_unbounded",
    "id_key",
]

LinkId = Hashable
Ramp = tuple[Hashable, Hashable]

DEFAULT_PATH_CAP = 100_000


class NetworkError(ValueError):
    """Base class for invalid network definitions."""


class CycleDetected(NetworkError):
    pass


class MultipleSources(NetworkError):
    pass


class MultipleDestinations(NetworkError):
    pass


class UnreachableLink(NetworkError):
    pass


class PathExplosion(RuntimeError):
    """Raised when a network has too many source-destination paths."""


class KeyMismatch(KeyError):
    """Routing ratios keyed on a ramp set different from the network's."""


class Unbounded:
    """Infinite flow capacity.

    A singleton that compares greater than every real number, so capacity
    comparisons stay exact. ``float(UNBOUNDED)`` gives ``inf`` for numerics.
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNBOUNDED"

    def __str__(self):
        return "unbounded"

    def __float__(self):
        return math.inf

    def __eq__(self, other):
        return other is self or (isinstance(other, float) and other == math.inf)

    def __hash__(self):
        return hash(math.inf)

    def __lt__(self, other):
        return False

    def __le__(self, other):
        return self == other

    def __gt__(self, other):
        return not self == other

    def __ge__(self, other):
        return True


UNBOUNDED = Unbounded()


def is_unbounded(c) -> bool:
    return c is None or c is UNBOUNDED or (isinstance(c, (int, float)) and math.isinf(c))


def id_key(link_id):
    """Sort key that orders integer ids numerically and puts strings after."""
    if isinstance(link_id, (int, np.integer)) and not isinstance(link_id, bool):
        return (0, int(link_id), "")
    return (1, 0, str(link_id))


@dataclass(frozen=True, eq=False)
class TrafficNetwork:
    """Validated, immutable traffic network.

    ``links`` is stored in a deterministic topological order (smallest id
    first among ready links). ``ramps`` is sorted lexicographically by
    ``(id(l), id(m))``; this is also the layout of routing vectors.
    """

    links: tuple
    tails: Mapping
    heads: Mapping
    nodes: tuple
    source: LinkId
    destination: LinkId
    ramps: tuple
    downstream: Mapping
    upstream: Mapping
    index: Mapping = field(repr=False)
    ramp_index: Mapping = field(repr=False)

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def n_ramps(self) -> int:
        return len(self.ramps)

    @property
    def junctions(self) -> tuple:
        """Links with at least one downstream ramp (rows of the routing matrix)."""
        return tuple(l for l in self.links if self.downstream[l])

    def ramps_from(self, link) -> tuple:
        return tuple((link, m) for m in self.downstream[link])

    def routing(self, ratios: Mapping | None = None) -> "RoutingState":
        """Build a routing state; junctions with one ramp default to ratio 1.

        Junctions not listed in ``ratios`` get uniform ratios.
        """
        if ratios is None:
            return RoutingState.uniform(self)
        return RoutingState.from_mapping(self, ratios)

    def link_specs(self) -> list:
        return [(l, self.tails[l], self.heads[l]) for l in self.links]


def _topological_links(link_ids, downstream, upstream):
    indeg = {l: len(upstream[l]) for l in link_ids}
    ready = [(id_key(l), l) for l in link_ids if indeg[l] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        _, l = heapq.heappop(ready)
        order.append(l)
        for m in downstream[l]:
            indeg[m] -= 1
            if indeg[m] == 0:
                heapq.heappush(ready, (id_key(m), m))
    return order


def build_network(link_specs: Iterable[Sequence], source, destination) -> TrafficNetwork:
    """Validate ``(id, tail, head)`` triples and build a network.

    Raises
    ------
    CycleDetected, MultipleSources, MultipleDestinations, UnreachableLink
        For the respective structural violations.
    NetworkError
        For duplicate ids or unknown source/destination.
    """
    specs = [tuple(s) for s in link_specs]
    if not specs:
        raise NetworkError("network has no links")
    tails, heads = {}, {}
    for spec in specs:
        if len(spec) != 3:
            raise NetworkError(f"link spec must be (id, tail, head), got {spec!r}")
        l, t, h = spec
        if l in tails:
            raise NetworkError(f"duplicate link id {l!r}")
        if t == h:
            raise CycleDetected(f"link {l!r} is a self-loop at node {t!r}")
        tails[l], heads[l] = t, h
    for name, l in (("source", source), ("destination", destination)):
        if l not in tails:
            raise NetworkError(f"{name} link {l!r} is not declared")

    link_ids = sorted(tails, key=id_key)
    out_of_node: dict = {}
    for l in link_ids:
        out_of_node.setdefault(tails[l], []).append(l)
    downstream = {l: tuple(out_of_node.get(heads[l], ())) for l in link_ids}
    upstream = {l: [] for l in link_ids}
    for l in link_ids:
        for m in downstream[l]:
            upstream[m].append(l)
    upstream = {l: tuple(v) for l, v in upstream.items()}

    order = _topological_links(link_ids, downstream, upstream)
    if len(order) != len(link_ids):
        stuck = sorted(set(link_ids) - set(order), key=id_key)
        raise CycleDetected(f"links on or behind a cycle: {stuck}")

    if upstream[source]:
        raise MultipleSources(f"source link {source!r} has upstream links {list(upstream[source])}")
    if downstream[destination]:
        raise MultipleDestinations(
            f"destination link {destination!r} has downstream links {list(downstream[destination])}"
        )
    extra_src = [l for l in link_ids if not upstream[l] and l != source]
    if extra_src:
        raise MultipleSources(f"links with no upstream ramp besides the source: {extra_src}")
    extra_dst = [l for l in link_ids if not downstream[l] and l != destination]
    if extra_dst:
        raise MultipleDestinations(f"links with no downstream ramp besides the destination: {extra_dst}")

    fwd = _reach(source, downstream)
    bwd = _reach(destination, upstream)
    dead = [l for l in link_ids if l not in fwd or l not in bwd]
    if dead:
        raise UnreachableLink(f"links not on any source-destination path: {dead}")

    ramps = tuple((l, m) for l in link_ids for m in downstream[l])
    nodes = []
    for l in order:
        for v in (tails[l], heads[l]):
            if v not in nodes:
                nodes.append(v)
    return TrafficNetwork(
        links=tuple(order),
        tails=MappingProxyType(tails),
        heads=MappingProxyType(heads),
        nodes=tuple(nodes),
        source=source,
        destination=destination,
        ramps=ramps,
        downstream=MappingProxyType(downstream),
        upstream=MappingProxyType(upstream),
        index=MappingProxyType({l: i for i, l in enumerate(order)}),
        ramp_index=MappingProxyType({r: k for k, r in enumerate(ramps)}),
    )


def _reach(start, adjacency) -> set:
    seen = {start}
    queue = deque([start])
    while queue:
        l = queue.popleft()
        for m in adjacency[l]:
            if m not in seen:
                seen.add(m)
                queue.append(m)
    return seen


@dataclass(frozen=True, eq=False)
class PathSet:
    """All simple source-destination paths and the link-path incidence matrix.

    ``incidence[i, p] == 1`` iff ``network.links[i]`` lies on ``paths[p]``.
    """

    paths: tuple
    incidence: np.ndarray
    links: tuple

    def __len__(self):
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)


def enumerate_paths(net: TrafficNetwork, cap: int = DEFAULT_PATH_CAP) -> PathSet:
    """Enumerate every source-destination path by depth-first search.

    Successors are visited in id order, so paths come out lexicographically
    sorted by their link id sequence.
    """
    paths = []
    stack = [(net.source, (net.source,))]
    while stack:
        l, prefix = stack.pop()
        if l == net.destination:
            paths.append(prefix)
            if len(paths) > cap:
                raise PathExplosion(f"more than {cap} paths; network too large for path-based analysis")
            continue
        for m in reversed(net.downstream[l]):
            stack.append((m, prefix + (m,)))
    E = np.zeros((net.n_links, len(paths)), dtype=np.int8)
    for p, path in enumerate(paths):
        for l in path:
            E[net.index[l], p] = 1
    E.setflags(write=False)
    return PathSet(paths=tuple(paths), incidence=E, links=net.links)


def _normalize_capacities(net: TrafficNetwork, capacities: Mapping) -> dict:
    missing = [l for l in net.links if l not in capacities]
    if missing:
        raise KeyError(f"capacities missing for links {missing}")
    caps = {}
    for l in net.links:
        c = capacities[l]
        if is_unbounded(c):
            caps[l] = math.inf
        else:
            c = float(c)
            if c < 0:
                raise ValueError(f"capacity of link {l!r} is negative")
            caps[l] = c
    return caps


def _max_flow(n_nodes: int, edges: list, s: int, t: int):
    """Edmonds-Karp on an edge list ``(u, v, cap)``; returns (value, flows).

    Infinite capacities are allowed as long as no source-sink path is made of
    infinite edges only (checked by the caller).
    """
    graph = [[] for _ in range(n_nodes)]
    to, cap = [], []
    for u, v, c in edges:
        graph[u].append(len(to))
        to.append(v)
        cap.append(c)
        graph[v].append(len(to))
        to.append(u)
        cap.append(0.0)
    value = 0.0
    while True:
        parent = [-1] * n_nodes
        parent[s] = -2
        queue = deque([s])
        while queue and parent[t] == -1:
            u = queue.popleft()
            for e in graph[u]:
                if cap[e] > 0 and parent[to[e]] == -1:
                    parent[to[e]] = e
                    queue.append(to[e])
        if parent[t] == -1:
            break
        push = math.inf
        v = t
        while v != s:
            e = parent[v]
            push = min(push, cap[e])
            v = to[e ^ 1]
        v = t
        while v != s:
            e = parent[v]
            cap[e] -= push
            cap[e ^ 1] += push
            v = to[e ^ 1]
        value += push
    flows = [cap[2 * k + 1] for k in range(len(edges))]
    return value, flows


def _flow_graph(net: TrafficNetwork, caps: dict):
    node_ix = {v: i for i, v in enumerate(net.nodes)}
    edges = [(node_ix[net.tails[l]], node_ix[net.heads[l]], caps[l]) for l in net.links]
    return node_ix, edges


def _unbounded_route_exists(net: TrafficNetwork, caps: dict) -> bool:
    seen = {net.source} if math.isinf(caps[net.source]) else set()
    queue = deque(seen)
    while queue:
        l = queue.popleft()
        if l == net.destination:
            return True
        for m in net.downstream[l]:
            if m not in seen and math.isinf(caps[m]):
                seen.add(m)
                queue.append(m)
    return False


def min_cut_capacity(net: TrafficNetwork, capacities: Mapping):
    """Min-cut capacity separating the source link's tail from the destination's head.

    Computed as a maximum flow with augmenting paths. Returns ``UNBOUNDED``
    when some source-destination path has unbounded capacity on every link.
    """
    caps = _normalize_capacities(net, capacities)
    if _unbounded_route_exists(net, caps):
        return UNBOUNDED
    node_ix, edges = _flow_graph(net, caps)
    value, _ = _max_flow(
        len(node_ix), edges, node_ix[net.tails[net.source]], node_ix[net.heads[net.destination]]
    )
    return value


def max_link_flows(net: TrafficNetwork, capacities: Mapping, inflow: float) -> dict:
    """A feasible link-flow assignment carrying ``inflow`` (or as much as fits)."""
    caps = _normalize_capacities(net, capacities)
    node_ix, edges = _flow_graph(net, caps)
    super_source = len(node_ix)
    edges = edges + [(super_source, node_ix[net.tails[net.source]], float(inflow))]
    _, flows = _max_flow(len(node_ix) + 1, edges, super_source, node_ix[net.heads[net.destination]])
    return {l: flows[i] for i, l in enumerate(net.links)}


class RoutingState(Mapping):
    """Routing ratios keyed by ramp ``(l, m)``.

    Values are stored in the network's ramp order, so ``values`` lines up
    with ``network.ramps``.
    """

    __slots__ = ("ramps", "values", "_index")

    def __init__(self, ramps: Sequence, values):
        self.ramps = tuple(ramps)
        vals = np.array(values, dtype=float)
        if vals.shape != (len(self.ramps),):
            raise ValueError(f"expected {len(self.ramps)} ratios, got shape {vals.shape}")
        vals.setflags(write=False)
        self.values = vals
        self._index = {r: k for k, r in enumerate(self.ramps)}

    @classmethod
    def uniform(cls, net: TrafficNetwork) -> "RoutingState":
        return cls(net.ramps, [1.0 / len(net.downstream[l]) for l, _ in net.ramps])

    @classmethod
    def from_mapping(cls, net: TrafficNetwork, ratios: Mapping) -> "RoutingState":
        """Fill a full routing state from a partial mapping.

        Ramps of junctions absent from ``ratios`` default to uniform (ratio 1
        for single-ramp junctions). A junction that is listed must be listed
        completely.
        """
        unknown = [k for k in ratios if k not in net.ramp_index]
        if unknown:
            raise KeyMismatch(f"not ramps of this network: {unknown}")
        given = {l for l, _ in ratios}
        vals = []
        for l, m in net.ramps:
            if l in given:
                if (l, m) not in ratios:
                    raise KeyMismatch(f"junction {l!r} is partially specified; missing ramp {(l, m)!r}")
                vals.append(float(ratios[(l, m)]))
            else:
                vals.append(1.0 / len(net.downstream[l]))
        return cls(net.ramps, vals)

    def __getitem__(self, ramp):
        return float(self.values[self._index[ramp]])

    def __iter__(self) -> Iterator:
        return iter(self.ramps)

    def __len__(self):
        return len(self.ramps)

    def __repr__(self):
        body = ", ".join(f"{l}->{m}: {v:.6g}" for (l, m), v in zip(self.ramps, self.values))
        return f"RoutingState({{{body}}})"

    def replace(self, updates: Mapping) -> "RoutingState":
        vals = self.values.copy()
        for r, v in updates.items():
            vals[self._index[r]] = v
        return RoutingState(self.ramps, vals)


def check_feasible_routing(net: TrafficNetwork, r: Mapping, tol: float = 1e-9):
    """Check membership of ``r`` in the feasible routing set.

    Returns ``(feasible, residuals)`` where ``residuals`` maps each junction
    (upstream link id) to ``|sum_m r_lm - 1|``.
    """
    keys = set(r.keys())
    expected = set(net.ramps)
    if keys != expected:
        raise KeyMismatch(
            f"routing keys differ from ramps: missing {sorted(expected - keys, key=str)}, "
            f"extra {sorted(keys - expected, key=str)}"
        )
    ok = all(-tol <= r[k] <= 1 + tol for k in net.ramps)
    residuals = {}
    for l in net.junctions:
        residuals[l] = abs(sum(r[(l, m)] for m in net.downstream[l]) - 1.0)
    ok = ok and all(res <= tol for res in residuals.values())
    return ok, residuals


def as_routing(net: TrafficNetwork, r) -> RoutingState:
    """Coerce a RoutingState, ramp mapping or ramp-ordered vector."""
    if isinstance(r, RoutingState):
        return r
    if isinstance(r, Mapping):
        return RoutingState.from_mapping(net, r)
    return RoutingState(net.ramps, r)
