import pytest

from src.errors import TopologyError
from src.topology import NodeRole, Strategy, TopologyKind, build_topology


def test_mesh_edge_count():
    assert len(build_topology("mesh", 5).edges) == 10


def test_ring_needs_three_nodes():
    with pytest.raises(TopologyError):
        build_topology("ring", 2)


def test_star_edges_and_roles():
    g = build_topology("star", 5, center=0)
    assert set(g.edges) == {(0, 1), (0, 2), (0, 3), (0, 4)}
    assert g.roles[0] is NodeRole.TRAINER_AGGREGATOR
    assert all(r is NodeRole.TRAINER for r in g.roles[1:])


def test_star_center_out_of_range():
    with pytest.raises(TopologyError):
        build_topology("star", 3, center=3)


@pytest.mark.parametrize("kind, strategy, role", [
    ("linear", "continuous", NodeRole.TRAINER),
    ("ring", "continuous", NodeRole.TRAINER),
    ("linear", "aggregate", NodeRole.TRAINER_AGGREGATOR),
    ("ring", "aggregate", NodeRole.TRAINER_AGGREGATOR),
    ("mesh", "aggregate", NodeRole.TRAINER_AGGREGATOR),
])
def test_roles(kind, strategy, role):
    g = build_topology(kind, 4, strategy=strategy)
    assert g.roles == (role,) * 4


@pytest.mark.parametrize("kind", ["star", "mesh"])
def test_continuous_star_and_mesh_are_rejected(kind):
    with pytest.raises(TopologyError):
        build_topology(kind, 4, strategy=Strategy.CONTINUOUS)


def test_linear_and_ring_edges():
    assert build_topology("linear", 4).edges == ((0, 1), (1, 2), (2, 3))
    assert build_topology("ring", 4).edges == ((0, 1), (0, 3), (1, 2), (2, 3))


def test_successors():
    line = build_topology(TopologyKind.LINEAR, 3)
    ring = build_topology(TopologyKind.RING, 3)
    assert [line.successor(k) for k in range(3)] == [1, 2, None]
    assert [ring.successor(k) for k in range(3)] == [1, 2, 0]
    with pytest.raises(TopologyError):
        build_topology("mesh", 3).successor(0)


def test_single_node_graphs():
    assert build_topology("linear", 1).edges == ()
    assert build_topology("mesh", 1).neighbors(0) == []


def test_adjacency_export():
    adjacency = build_topology("star", 3, center=1).to_adjacency()
    assert adjacency["center"] == 1
    assert adjacency["adjacency"] == {"0": [1], "1": [0, 2], "2": [1]}
    assert adjacency["roles"] == ["trainer", "trainer_aggregator", "trainer"]
