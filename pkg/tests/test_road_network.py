# tests/test_road_network.py
import logging
import math
import random

import pytest

from tiacs.core.errors import ParseError, PreconditionError, UnknownNodeError
from tiacs.services.road_network import (
    EARTH_RADIUS_M,
    NetworkValidationError,
    bounded_distance_search,
    great_circle,
    load_network,
    nearest_node,
    nearest_nodes,
    shortest_route,
    shortest_travel_time,
    write_network,
)
from tests.conftest import LAT0, LON0, make_network


def bellman_ford(net, source, weight="length", reverse=False):
    """Plain Bellman-Ford over the edge table (minimum over parallel edges)."""
    col = "length_m" if weight == "length" else "travel_time_s"
    dist = {int(n): math.inf for n in net.node_ids}
    dist[source] = 0.0
    edges = [
        (int(v), int(u), float(w)) if reverse else (int(u), int(v), float(w))
        for u, v, w in net.edges[["from", "to", col]].itertuples(index=False, name=None)
    ]
    for _ in range(len(dist) - 1):
        changed = False
        for u, v, w in edges:
            if dist[u] + w < dist[v]:
                dist[v] = dist[u] + w
                changed = True
        if not changed:
            break
    return dist


def random_network(seed, n=60, extra_edges=120):
    rng = random.Random(seed)
    nodes = [(i, LON0 + rng.uniform(0, 0.05), LAT0 + rng.uniform(0, 0.05)) for i in range(1, n + 1)]
    coords = {i: (lon, lat) for i, lon, lat in nodes}
    pairs = set()
    for i in range(2, n + 1):
        pairs.add((rng.randint(1, i - 1), i))
    while len(pairs) < n - 1 + extra_edges:
        a, b = rng.sample(range(1, n + 1), 2)
        pairs.add((a, b))
    edges = []
    for a, b in sorted(pairs):
        gc = great_circle(coords[a], coords[b])
        length = round(gc * rng.uniform(1.0, 1.6) + 1.0, 3)
        edges.append((a, b, length, round(length / rng.uniform(5, 20), 3)))
        if rng.random() < 0.7:
            edges.append((b, a, length, round(length / rng.uniform(5, 20), 3)))
    return make_network(nodes, edges)


class TestGreatCircle:
    """Haversine distance on the 6,371 km sphere."""

    def test_identical_points(self):
        assert great_circle((12.5, 41.9), (12.5, 41.9)) == 0.0

    def test_one_degree_of_latitude(self):
        expected = math.pi * EARTH_RADIUS_M / 180.0
        assert great_circle((0.0, 0.0), (0.0, 1.0)) == pytest.approx(111_195, abs=10)
        assert great_circle((0.0, 0.0), (0.0, 1.0)) == pytest.approx(expected, rel=1e-12)

    def test_symmetric(self):
        rng = random.Random(3)
        for _ in range(100):
            a = (rng.uniform(-180, 180), rng.uniform(-90, 90))
            b = (rng.uniform(-180, 180), rng.uniform(-90, 90))
            assert great_circle(a, b) == great_circle(b, a)

    def test_out_of_range(self):
        with pytest.raises(PreconditionError):
            great_circle((0.0, 91.0), (0.0, 0.0))


class TestLoadNetwork:
    """Loading and validating the node/edge CSV pair."""

    def test_square_grid(self, square_network):
        assert len(square_network) == 4
        assert square_network.graph.number_of_edges() == 8

    def test_missing_node_named(self, tmp_path):
        (tmp_path / "nodes.csv").write_text("node_id,lon,lat\n1,0,0\n2,0,0.01\n")
        (tmp_path / "edges.csv").write_text("from,to,length_m,travel_time_s\n1,2,1200,60\n2,99,500,30\n")
        with pytest.raises(NetworkValidationError) as exc:
            load_network(tmp_path / "nodes.csv", tmp_path / "edges.csv")
        assert "99" in str(exc.value)
        assert exc.value.exit_code == 2

    def test_self_loop_rejected(self):
        with pytest.raises(NetworkValidationError, match="self-loop"):
            make_network([(1, 0, 0), (2, 0, 0.01)], [(1, 1, 10.0, 1.0)])

    def test_non_positive_length_rejected(self):
        with pytest.raises(NetworkValidationError, match="length_m"):
            make_network([(1, 0, 0), (2, 0, 0.01)], [(1, 2, 0.0, 1.0)])

    def test_parse_error_has_line(self, tmp_path):
        (tmp_path / "nodes.csv").write_text("node_id,lon,lat\n1,0,0\n2,abc,0.01\n")
        (tmp_path / "edges.csv").write_text("from,to,length_m,travel_time_s\n")
        with pytest.raises(ParseError) as exc:
            load_network(tmp_path / "nodes.csv", tmp_path / "edges.csv")
        assert exc.value.line == 3
        assert "line 3" in str(exc.value)

    def test_parallel_edges_allowed(self):
        net = make_network(
            [(1, 0, 0), (2, 0, 0.01)],
            [(1, 2, 1500.0, 100.0), (1, 2, 1200.0, 140.0)],
        )
        data = net.graph[1][2]
        assert data["length"] == 1200.0
        assert data["travel_time"] == 100.0
        assert len(net.edges) == 2

    def test_short_edge_warns(self, caplog):
        with caplog.at_level(logging.WARNING):
            make_network([(1, 0, 0), (2, 0, 0.01)], [(1, 2, 500.0, 10.0)])
        assert any("shorter than the great-circle" in r.getMessage() for r in caplog.records)

    def test_round_trip(self, tmp_path):
        net = random_network(5)
        write_network(net, tmp_path / "n.csv", tmp_path / "e.csv")
        again = load_network(tmp_path / "n.csv", tmp_path / "e.csv")
        assert list(again.node_ids) == list(net.node_ids)
        assert sorted(again.graph.edges(data=True)) == sorted(net.graph.edges(data=True))


class TestNearestNode:
    """Snapping follows linear-scan semantics with smallest-id ties."""

    def test_exact_node(self, square_network):
        node, dist = nearest_node(square_network, LON0 + 0.009, LAT0)
        assert node == 2
        assert dist == 0.0

    def test_tie_goes_to_smaller_id(self):
        net = make_network([(7, 0.0, 0.01), (3, 0.0, -0.01)], [])
        node, _ = nearest_node(net, 0.0, 0.0)
        assert node == 3

    def test_empty_network(self):
        net = make_network([], [])
        with pytest.raises(PreconditionError):
            nearest_node(net, 0.0, 0.0)

    def test_matches_linear_scan(self):
        net = random_network(11, n=200, extra_edges=0)
        rng = random.Random(12)
        lons = [LON0 + rng.uniform(-0.01, 0.06) for _ in range(300)]
        lats = [LAT0 + rng.uniform(-0.01, 0.06) for _ in range(300)]
        ids, dists = nearest_nodes(net, lons, lats)
        for lon, lat, got, d in zip(lons, lats, ids, dists):
            best = min(
                ((great_circle((lon, lat), net.coord(int(n))), int(n)) for n in net.node_ids)
            )
            assert (int(got), d) == (best[1], best[0])
            assert nearest_node(net, lon, lat) == (best[1], best[0])


class TestBoundedDistanceSearch:
    """Bounded Dijkstra by edge length."""

    def test_cutoff_excludes_far_node(self, line_network):
        assert bounded_distance_search(line_network, 1, 1500) == {1: 0.0, 2: 1000.0}

    def test_cutoff_inclusive(self, line_network):
        assert bounded_distance_search(line_network, 1, 2000) == {1: 0.0, 2: 1000.0, 3: 2000.0}

    def test_unknown_source(self, line_network):
        with pytest.raises(UnknownNodeError):
            bounded_distance_search(line_network, 42, 1000)

    def test_non_positive_radius(self, line_network):
        with pytest.raises(PreconditionError):
            bounded_distance_search(line_network, 1, 0)

    @pytest.mark.parametrize("seed", [1, 2, 3])
    @pytest.mark.parametrize("reverse", [False, True])
    def test_matches_bellman_ford(self, seed, reverse):
        net = random_network(seed)
        for source in (1, 17, 42):
            oracle = bellman_ford(net, source, reverse=reverse)
            got = bounded_distance_search(net, source, 2500.0, reverse=reverse)
            expected = {n: d for n, d in oracle.items() if d <= 2500.0}
            assert set(got) == set(expected)
            for n, d in got.items():
                assert d == pytest.approx(expected[n], abs=1e-6)
                assert d >= great_circle(net.coord(source), net.coord(n)) - 1e-6

    def test_deterministic_order(self):
        net = random_network(4)
        first = list(bounded_distance_search(net, 1, 3000.0).items())
        assert first == list(bounded_distance_search(net, 1, 3000.0).items())
        assert first == sorted(first, key=lambda kv: (kv[1], kv[0]))


class TestShortestTravelTime:
    """Travel-time routing between stays."""

    def test_same_node(self, square_network):
        assert shortest_travel_time(square_network, 3, 3) == 0.0

    def test_disconnected(self):
        net = make_network([(1, 0, 0), (2, 0, 0.01), (3, 1, 1)], [(1, 2, 1200.0, 60.0)])
        assert shortest_travel_time(net, 1, 3) is None
        assert shortest_route(net, 1, 3) is None

    def test_unknown_node_is_error(self, square_network):
        with pytest.raises(UnknownNodeError):
            shortest_travel_time(square_network, 1, 99)

    def test_route_reports_length_of_fastest_path(self, square_network):
        seconds, length = shortest_route(square_network, 1, 3)
        assert seconds == 200.0
        assert length == 2000.0

    @pytest.mark.parametrize("seed", [8, 9])
    def test_matches_bellman_ford(self, seed):
        net = random_network(seed)
        rng = random.Random(seed)
        for _ in range(40):
            o, d = rng.randint(1, 60), rng.randint(1, 60)
            oracle = bellman_ford(net, o, weight="travel_time")[d]
            got = shortest_travel_time(net, o, d)
            if math.isinf(oracle):
                assert got is None
            else:
                assert got == pytest.approx(oracle, abs=1e-6)
