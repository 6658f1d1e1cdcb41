"""Network topologies and node roles.

    linear   0 - 1 - ... - (n-1)          parameters handed downstream
    ring     linear plus the (n-1) - 0 edge
    star     every node linked to the center, which aggregates
    mesh     complete graph; every node aggregates
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import networkx as nx

from src.errors import TopologyError


class TopologyKind(str, Enum):
    LINEAR = "linear"
    RING = "ring"
    STAR = "star"
    MESH = "mesh"


class Strategy(str, Enum):
    CONTINUOUS = "continuous"
    AGGREGATE = "aggregate"


class NodeRole(str, Enum):
    TRAINER = "trainer"
    TRAINER_AGGREGATOR = "trainer_aggregator"
    # Reserved; the simulator never assigns these.
    PROXY = "proxy"
    IDLE = "idle"


@dataclass(frozen=True)
class TopologyGraph:
    kind: TopologyKind
    n: int
    edges: tuple[tuple[int, int], ...]
    center: int | None
    roles: tuple[NodeRole, ...]
    strategy: Strategy

    @property
    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_edges_from(self.edges)
        return g

    def neighbors(self, node: int) -> list[int]:
        return sorted(self.graph.neighbors(node))

    def successor(self, node: int) -> int | None:
        """Downstream node for sequential handoff (None at the end of a line)."""
        if self.kind is TopologyKind.LINEAR:
            return node + 1 if node + 1 < self.n else None
        if self.kind is TopologyKind.RING:
            return (node + 1) % self.n
        raise TopologyError(f"{self.kind.value} topology has no sequential successor")

    def to_adjacency(self) -> dict:
        return {
            "kind": self.kind.value,
            "strategy": self.strategy.value,
            "center": self.center,
            "roles": [r.value for r in self.roles],
            "adjacency": {str(node): self.neighbors(node) for node in range(self.n)},
        }


def _default_strategy(kind: TopologyKind) -> Strategy:
    if kind in (TopologyKind.LINEAR, TopologyKind.RING):
        return Strategy.CONTINUOUS
    return Strategy.AGGREGATE


def assign_roles(kind: TopologyKind, strategy: Strategy, n: int,
                 center: int | None = None) -> tuple[NodeRole, ...]:
    if kind is TopologyKind.STAR:
        return tuple(NodeRole.TRAINER_AGGREGATOR if node == center else NodeRole.TRAINER
                     for node in range(n))
    if strategy is Strategy.CONTINUOUS:
        return (NodeRole.TRAINER,) * n
    return (NodeRole.TRAINER_AGGREGATOR,) * n


def build_topology(kind: TopologyKind | str, n: int, center: int | None = None,
                   strategy: Strategy | str | None = None) -> TopologyGraph:
    kind = TopologyKind(kind)
    strategy = _default_strategy(kind) if strategy is None else Strategy(strategy)
    if n < 1:
        raise TopologyError(f"a topology needs at least one node, got {n}")
    if strategy is Strategy.CONTINUOUS and kind in (TopologyKind.STAR, TopologyKind.MESH):
        raise TopologyError(f"continuous training over a {kind.value} topology is not a valid deployment")

    if kind is TopologyKind.LINEAR:
        g = nx.path_graph(n)
    elif kind is TopologyKind.RING:
        if n < 3:
            raise TopologyError(f"a ring needs at least 3 nodes, got {n}")
        g = nx.cycle_graph(n)
    elif kind is TopologyKind.STAR:
        center = 0 if center is None else center
        if not 0 <= center < n:
            raise TopologyError(f"star center {center} out of range for {n} nodes")
        g = nx.Graph()
        g.add_nodes_from(range(n))
        g.add_edges_from((center, node) for node in range(n) if node != center)
    else:
        g = nx.complete_graph(n)

    if not nx.is_connected(g):
        raise TopologyError(f"{kind.value} graph over {n} nodes is disconnected")
    if kind is not TopologyKind.STAR:
        center = None
    edges = tuple(sorted(tuple(sorted(edge)) for edge in g.edges))
    return TopologyGraph(kind, n, edges, center, assign_roles(kind, strategy, n, center), strategy)
