# tests/conftest.py
"""
Shared fixtures: small hand-built networks, the three-stop toy day used to
check the headline numbers, and a seeded synthetic scenario on disk.
"""

import sys  # noqa: E402
from datetime import date  # noqa: E402
from pathlib import Path  # noqa: E402

import pandas as pd  # noqa: E402
import pytest  # noqa: E402

# Add the project directory to Python path
sys.path.insert(0, str(Path(__file__).parent.parent))

from tiacs.schemas.inventory import ChargingStation  # noqa: E402
from tiacs.schemas.run import SyntheticScenario  # noqa: E402
from tiacs.schemas.trajectory import Stay, StayKind, Trajectory  # noqa: E402
from tiacs.services.charging_inventory import (  # noqa: E402
    build_proximity_table,
    build_snapshot,
    snap_stations,
)
from tiacs.services.road_network import RoadNetwork  # noqa: E402
from tiacs.services.synth import synth  # noqa: E402

LON0 = -118.0
LAT0 = 34.0
# ~100 m north / ~83 m east at this latitude
DLAT_100M = 0.0009
DLON_83M = 0.0009


def make_network(nodes, edges):
    """RoadNetwork from `(id, lon, lat)` and `(from, to, length_m, travel_time_s)` tuples."""
    return RoadNetwork(
        pd.DataFrame(nodes, columns=["node_id", "lon", "lat"]),
        pd.DataFrame(edges, columns=["from", "to", "length_m", "travel_time_s"]),
    )


def both_ways(edges):
    out = []
    for a, b, length, seconds in edges:
        out.append((a, b, length, seconds))
        out.append((b, a, length, seconds))
    return out


@pytest.fixture
def square_network():
    """4-node square of ~1 km sides, both directions on every side."""
    d = 0.009
    nodes = [(1, LON0, LAT0), (2, LON0 + d, LAT0), (3, LON0 + d, LAT0 + d), (4, LON0, LAT0 + d)]
    edges = both_ways([(1, 2, 900.0, 90.0), (2, 3, 1100.0, 110.0), (3, 4, 900.0, 90.0), (4, 1, 1100.0, 110.0)])
    return make_network(nodes, edges)


@pytest.fixture
def line_network():
    """A(1) - B(2) - C(3) with 1000 m edges, both directions."""
    d = 0.0085
    nodes = [(1, LON0, LAT0), (2, LON0, LAT0 + d), (3, LON0, LAT0 + 2 * d)]
    edges = both_ways([(1, 2, 1000.0, 60.0), (2, 3, 1000.0, 60.0)])
    return make_network(nodes, edges)


@pytest.fixture
def toy_network():
    """
    Three stops A(1), B(2), C(3) about 5.5 km apart. Stations sit on nodes
    11, 12, 13 (near A) and 31, 32 (near C); nothing is near B.
    """
    b_lon, c_lon = LON0 + 0.06, LON0 + 0.12
    nodes = [
        (1, LON0, LAT0),
        (2, b_lon, LAT0),
        (3, c_lon, LAT0),
        (11, LON0 + DLON_83M, LAT0),
        (12, LON0, LAT0 + DLAT_100M),
        (13, LON0 - DLON_83M, LAT0),
        (31, c_lon + DLON_83M, LAT0),
        (32, c_lon, LAT0 + DLAT_100M),
    ]
    edges = both_ways(
        [
            (1, 2, 5600.0, 400.0),
            (2, 3, 5600.0, 400.0),
            (1, 11, 150.0, 15.0),
            (1, 12, 150.0, 15.0),
            (1, 13, 150.0, 15.0),
            (3, 31, 200.0, 20.0),
            (3, 32, 200.0, 20.0),
        ]
    )
    return make_network(nodes, edges)


@pytest.fixture
def toy_stations(toy_network):
    """Five single-port L2 stations: three near A, two near C."""
    opened = date(2020, 1, 1)
    stations = [
        ChargingStation(station_id=f"S{nid}", lon=lon, lat=lat, open_date=opened, l2_ports=1)
        for nid, (lon, lat) in ((n, toy_network.coord(n)) for n in (11, 12, 13, 31, 32))
    ]
    return snap_stations(stations, toy_network)


@pytest.fixture
def toy_trajectory(toy_network):
    """3 h at A, 5 h at B, 2 h at C; travel ignored."""
    stops = [(0, 180, StayKind.HOME, 1), (180, 480, StayKind.WORK, 2), (480, 600, StayKind.OTHER, 3)]
    stays = [
        Stay(start=a, end=e, kind=k, node=n, lon=toy_network.coord(n)[0], lat=toy_network.coord(n)[1])
        for a, e, k, n in stops
    ]
    return Trajectory(person_id="toy", home=stays[0].location, stays=stays, travel=[0, 0])


@pytest.fixture
def toy_table(toy_network, toy_stations):
    return build_proximity_table(toy_network, [1, 2, 3], toy_stations, radius=3000.0)


@pytest.fixture
def toy_snapshot(toy_stations):
    return build_snapshot(toy_stations, date(2023, 12, 31))


@pytest.fixture
def small_scenario():
    return SyntheticScenario(
        seed=7,
        rows=6,
        cols=6,
        stations=12,
        persons=15,
        tract_rows=2,
        tract_cols=2,
        long_trip_fraction=0.3,
    )


@pytest.fixture
def synthetic_inputs(tmp_path, small_scenario):
    """Paths of a freshly synthesized input set."""
    return synth(small_scenario, tmp_path / "inputs")


@pytest.fixture
def run_env(tmp_path, synthetic_inputs):
    """A key=value run file pointing at the synthetic inputs."""
    out = tmp_path / "run"
    path = tmp_path / "run.env"
    path.write_text(
        "\n".join(
            [
                "# synthetic run",
                f"nodes={synthetic_inputs['nodes']}",
                f"edges={synthetic_inputs['edges']}",
                f"stations={synthetic_inputs['stations']}",
                f"trajectories={synthetic_inputs['trajectories']}",
                f"tracts={synthetic_inputs['tracts']}",
                f"output_dir={out}",
                "cutoffs=2019-12-31,2023-12-31",
                "thresholds=1000,2000",
                "port_types=L2,DCFC",
                "income_degrees=0,1",
                "workers=1",
            ]
        )
        + "\n",
        encoding="utf-8",
    )
    return path
