# tiacs/services/synth.py
"""
Seeded synthetic input set: grid road network, stations, raw stay records
and a tract grid with demographic fields. All randomness of the package
lives here; the same scenario always produces byte-identical files.
"""
from __future__ import annotations

import logging
import math
from datetime import date, timedelta
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from tiacs.schemas.inventory import ChargingStation
from tiacs.schemas.run import SyntheticScenario
from tiacs.schemas.spatial import TractRecord
from tiacs.schemas.trajectory import PersonRecord, RawStay, StayKind
from tiacs.services.charging_inventory import write_stations
from tiacs.services.road_network import EARTH_RADIUS_M, RoadNetwork, great_circle_many, write_network
from tiacs.services.spatial_stats import write_tracts
from tiacs.services.trajectory import write_raw

logger = logging.getLogger(__name__)

SLOTS_PER_DAY = 144
WORKDAYS = 5
COORD_DECIMALS = 7
GEOID_PREFIX = "06037"

Location = Tuple[float, float]

OUTPUT_FILES = {
    "nodes": "nodes.csv",
    "edges": "edges.csv",
    "stations": "stations.csv",
    "trajectories": "trajectories.csv",
    "tracts": "tracts.geojson",
}


class _Grid:
    """Node coordinates of a rows x cols grid; row 0 is the southernmost."""

    def __init__(self, scn: SyntheticScenario):
        self.scn = scn
        deg = math.pi / 180.0 * EARTH_RADIUS_M
        self.dlat = scn.edge_length_m / deg
        self.dlon = scn.edge_length_m / (deg * math.cos(math.radians(scn.lat0)))
        self.lon_max = scn.lon0 + (scn.cols - 1) * self.dlon
        self.lat_max = scn.lat0 + (scn.rows - 1) * self.dlat

    def node_id(self, r: int, c: int) -> int:
        return r * self.scn.cols + c + 1

    def coord(self, r: int, c: int) -> Location:
        return (
            round(self.scn.lon0 + c * self.dlon, COORD_DECIMALS),
            round(self.scn.lat0 + r * self.dlat, COORD_DECIMALS),
        )

    def random_point(self, rng: np.random.Generator) -> Location:
        return (
            round(float(rng.uniform(self.scn.lon0, self.lon_max)), COORD_DECIMALS),
            round(float(rng.uniform(self.scn.lat0, self.lat_max)), COORD_DECIMALS),
        )


def synth_network(scn: SyntheticScenario, rng: np.random.Generator) -> Tuple[RoadNetwork, List[Location]]:
    """
    Grid network with jittered (never shortened) lengths, a few one-way
    streets, and `island_nodes` unconnected nodes. Returns the network and
    the island locations.
    """
    grid = _Grid(scn)
    nodes = []
    for r in range(scn.rows):
        for c in range(scn.cols):
            lon, lat = grid.coord(r, c)
            nodes.append((grid.node_id(r, c), lon, lat))

    islands: List[Location] = []
    next_id = scn.rows * scn.cols + 1
    for k in range(scn.island_nodes):
        # beyond the north-east corner, far from every grid node
        lon = round(grid.lon_max + (3 + 2 * k) * grid.dlon, COORD_DECIMALS)
        lat = round(grid.lat_max + (3 + 2 * k) * grid.dlat, COORD_DECIMALS)
        nodes.append((next_id + k, lon, lat))
        islands.append((lon, lat))

    coords = {nid: (lon, lat) for nid, lon, lat in nodes}
    speed_mps = scn.speed_kmh / 3.6
    edges = []
    for r in range(scn.rows):
        for c in range(scn.cols):
            a = grid.node_id(r, c)
            for rr, cc in ((r, c + 1), (r + 1, c)):
                if rr >= scn.rows or cc >= scn.cols:
                    continue
                b = grid.node_id(rr, cc)
                gc = float(
                    great_circle_many(coords[a][0], coords[a][1], np.array([coords[b][0]]), np.array([coords[b][1]]))[0]
                )
                length = round(gc * (1.0 + float(rng.uniform(0.0, scn.length_jitter))), 3)
                seconds = round(length / speed_mps, 3)
                one_way = rng.random() < scn.one_way_fraction
                direction = rng.random() < 0.5
                if not one_way or direction:
                    edges.append((a, b, length, seconds))
                if not one_way or not direction:
                    edges.append((b, a, length, seconds))

    net = RoadNetwork(
        pd.DataFrame(nodes, columns=["node_id", "lon", "lat"]),
        pd.DataFrame(edges, columns=["from", "to", "length_m", "travel_time_s"]),
        source="<synthetic>",
    )
    return net, islands


def synth_stations(scn: SyntheticScenario, rng: np.random.Generator) -> List[ChargingStation]:
    grid = _Grid(scn)
    first = date(scn.open_year_min, 1, 1)
    span = (date(scn.open_year_max, 12, 31) - first).days
    stations = []
    for k in range(scn.stations):
        lon, lat = grid.random_point(rng)
        opened = first + timedelta(days=int(rng.integers(0, span + 1)))
        if rng.random() < scn.dcfc_fraction:
            l2, dcfc = int(rng.integers(0, 3)), int(rng.integers(1, 5))
        else:
            l2, dcfc = int(rng.integers(1, scn.max_l2_ports + 1)), 0
        stations.append(
            ChargingStation(
                station_id=f"S{k + 1:05d}", lon=lon, lat=lat, open_date=opened, l2_ports=l2, dcfc_ports=dcfc
            )
        )
    return stations


def _day_visits(
    scn: SyntheticScenario,
    rng: np.random.Generator,
    day: int,
    work: Optional[Location],
    others: List[Location],
) -> List[Tuple[int, int, StayKind, Location]]:
    """Non-overlapping (start_slot, end_slot, kind, location) away-from-home visits of one day."""
    base = day * SLOTS_PER_DAY + 1
    visits: List[Tuple[int, int, StayKind, Location]] = []
    if work is not None and day < WORKDAYS:
        start = base + 48 + int(rng.integers(-6, 7))
        end = base + 102 + int(rng.integers(-6, 7))
        visits.append((start, end, StayKind.WORK, work))
    for _ in range(int(rng.poisson(scn.other_visits_per_day))):
        start = base + int(rng.integers(42, 126))
        end = start + int(rng.integers(1, 13))
        clash = any(start <= e + 1 and s <= end + 1 for s, e, _, _ in visits)
        if clash or end > base + SLOTS_PER_DAY - 2:
            continue
        visits.append((start, end, StayKind.OTHER, others[int(rng.integers(0, len(others)))]))
    return sorted(visits, key=lambda v: v[0])


def synth_persons(
    scn: SyntheticScenario, rng: np.random.Generator, islands: List[Location]
) -> List[PersonRecord]:
    """
    One home per person, a workplace for commuters, and a small pool of
    other places. Persons on a long trip visit an island location once.
    """
    grid = _Grid(scn)
    persons = []
    for p in range(scn.persons):
        home = grid.random_point(rng)
        work = None if rng.random() < scn.non_commuter_fraction else grid.random_point(rng)
        others = [grid.random_point(rng) for _ in range(3)]
        long_trip = bool(islands) and rng.random() < scn.long_trip_fraction
        trip_day = int(rng.integers(0, 7))

        stays = [RawStay(slot=1, kind=StayKind.HOME, lon=home[0], lat=home[1])]
        for day in range(7):
            places = list(others)
            if long_trip and day == trip_day:
                places = [islands[int(rng.integers(0, len(islands)))]]
            for start, end, kind, loc in _day_visits(scn, rng, day, work, places):
                stays.append(RawStay(slot=start, kind=kind, lon=loc[0], lat=loc[1]))
                stays.append(RawStay(slot=end, kind=StayKind.HOME, lon=home[0], lat=home[1]))
        persons.append(PersonRecord(person_id=f"P{p + 1:06d}", stays=stays))
    return persons


def _shares(rng: np.random.Generator) -> Dict[str, float]:
    """Race/ethnicity percentages summing to at most 100, one group often dominant."""
    alpha = np.ones(5)
    alpha[int(rng.integers(0, 5))] = float(rng.choice([1.0, 4.0, 8.0]))
    raw = np.floor(rng.dirichlet(alpha) * 1000.0) / 10.0
    return {
        "pct_white": float(raw[0]),
        "pct_black": float(raw[1]),
        "pct_asian": float(raw[2]),
        "pct_hispanic": float(raw[3]),
    }


def synth_tracts(scn: SyntheticScenario, rng: np.random.Generator) -> List[TractRecord]:
    """Rectangular tracts tiling the grid's bounding box (padded by half a block)."""
    grid = _Grid(scn)
    lons = np.linspace(scn.lon0 - grid.dlon / 2, grid.lon_max + grid.dlon / 2, scn.tract_cols + 1)
    lats = np.linspace(scn.lat0 - grid.dlat / 2, grid.lat_max + grid.dlat / 2, scn.tract_rows + 1)
    lons = np.round(lons, COORD_DECIMALS)
    lats = np.round(lats, COORD_DECIMALS)
    tracts = []
    for i in range(scn.tract_rows):
        for j in range(scn.tract_cols):
            x0, x1, y0, y1 = float(lons[j]), float(lons[j + 1]), float(lats[i]), float(lats[i + 1])
            ring = [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]
            mud = round(float(rng.uniform(5.0, 95.0)), 1)
            mobile = round(float(rng.uniform(0.0, min(5.0, 100.0 - mud))), 1)
            owner = round(float(rng.uniform(20.0, 80.0)), 1)
            income = None
            if rng.random() >= scn.missing_income_fraction:
                income = round(float(rng.lognormal(mean=math.log(70000.0), sigma=0.45)), 0)
            population = int(rng.integers(1000, 7000))
            tracts.append(
                TractRecord(
                    geoid=f"{GEOID_PREFIX}{i * scn.tract_cols + j + 1:06d}",
                    polygons=[[ring]],
                    population=population,
                    median_income=income,
                    pct_mud=mud,
                    population_18plus=int(population * 0.78),
                    pct_1unit=round(max(0.0, 100.0 - mud - mobile), 1),
                    pct_mobile=mobile,
                    pct_owner=owner,
                    pct_renter=round(100.0 - owner, 1),
                    **_shares(rng),
                )
            )
    return tracts


def synth(scn: SyntheticScenario, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write the complete input set; returns name -> path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(scn.seed)

    net, islands = synth_network(scn, rng)
    stations = synth_stations(scn, rng)
    persons = synth_persons(scn, rng, islands)
    tracts = synth_tracts(scn, rng)

    paths = {name: out / fname for name, fname in OUTPUT_FILES.items()}
    write_network(net, paths["nodes"], paths["edges"])
    write_stations(stations, paths["stations"])
    write_raw(persons, paths["trajectories"])
    write_tracts(tracts, paths["tracts"])
    logger.info(
        "synthesized %d nodes, %d stations, %d persons, %d tracts",
        len(net),
        len(stations),
        len(persons),
        len(tracts),
        extra={"path": str(out)},
    )
    return paths
