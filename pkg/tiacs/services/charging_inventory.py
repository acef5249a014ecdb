# tiacs/services/charging_inventory.py
"""
Charging-station inventory, date snapshots, and the stay-node/charger proximity
table used to answer "how many ports lie within d meters of this stay".
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from tiacs.core.errors import ParseError, PreconditionError, ThresholdError
from tiacs.core.utils import RowErrorCollector, parallel_map
from tiacs.schemas.inventory import ChargingStation, PortType, Snapshot
from tiacs.services.road_network import (
    LENGTH_SLACK,
    RoadNetwork,
    bounded_distance_search,
    great_circle_many,
    nearest_nodes,
)

logger = logging.getLogger(__name__)

STATION_COLUMNS = ("station_id", "lon", "lat", "open_date", "l2_ports", "dcfc_ports")
TABLE_COLUMNS = ("stay_node", "station_id", "distance_m")
DEFAULT_RADIUS_M = 3000.0


class StationNotSnappedError(PreconditionError):
    """Raised when a station has no road-network node assigned."""


# ---------- stations ----------


def load_stations(path: Union[str, Path], net: Optional[RoadNetwork] = None) -> List[ChargingStation]:
    """
    Read the station CSV and snap every station to its nearest network node.

    Every bad row is reported in a single InputValidationError.
    """
    path = Path(path)
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as exc:
        raise ParseError(str(path), 1, "file is empty") from exc
    missing = [c for c in STATION_COLUMNS if c not in raw.columns]
    if missing:
        raise ParseError(str(path), 1, f"missing column(s): {', '.join(missing)}")

    errors = RowErrorCollector(str(path))
    stations: List[ChargingStation] = []
    seen: Set[str] = set()
    for idx, row in enumerate(raw[list(STATION_COLUMNS)].itertuples(index=False, name=None)):
        line = idx + 2
        record = {k: (v.strip() if isinstance(v, str) else v) for k, v in zip(STATION_COLUMNS, row)}
        try:
            station = ChargingStation(**record)
        except ValidationError as exc:
            errors.extend_from_pydantic(line, exc)
            continue
        if station.station_id in seen:
            errors.add_error(line, "station_id", f"duplicate station id {station.station_id}")
            continue
        seen.add(station.station_id)
        stations.append(station)
    errors.raise_if_invalid("station rows")

    if net is not None:
        stations = snap_stations(stations, net)
    logger.info("loaded %d stations", len(stations), extra={"path": str(path), "rows": len(stations)})
    return stations


def snap_stations(stations: Sequence[ChargingStation], net: RoadNetwork) -> List[ChargingStation]:
    """Assign each station its nearest node and record the snap distance."""
    if not stations:
        return []
    ids, dists = nearest_nodes(net, [s.lon for s in stations], [s.lat for s in stations])
    snapped = [
        s.model_copy(update={"node": int(n), "snap_distance_m": float(d)})
        for s, n, d in zip(stations, ids, dists)
    ]
    logger.info(
        "snapped stations to network: median %.1f m, max %.1f m",
        float(np.median(dists)),
        float(np.max(dists)),
        extra={"rows": len(snapped)},
    )
    return snapped


def write_stations(stations: Iterable[ChargingStation], path: Union[str, Path]) -> None:
    frame = pd.DataFrame(
        [
            {
                "station_id": s.station_id,
                "lon": s.lon,
                "lat": s.lat,
                "open_date": s.open_date.isoformat(),
                "l2_ports": s.l2_ports,
                "dcfc_ports": s.dcfc_ports,
            }
            for s in stations
        ],
        columns=list(STATION_COLUMNS),
    )
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")


# ---------- snapshots ----------


def build_snapshot(inventory: Sequence[ChargingStation], cutoff: date) -> Snapshot:
    """Stations with `open_date <= cutoff`."""
    return Snapshot(cutoff=cutoff, stations=tuple(s for s in inventory if s.open_date <= cutoff))


def build_annual_snapshots(
    inventory: Sequence[ChargingStation],
    years: Iterable[int],
    month: int = 12,
    day: int = 31,
    extra_cutoffs: Iterable[date] = (),
) -> List[Snapshot]:
    """One snapshot as of `month/day` of each year, plus any extra cutoffs, sorted."""
    cutoffs = {date(int(y), month, day) for y in years} | set(extra_cutoffs)
    return [build_snapshot(inventory, c) for c in sorted(cutoffs)]


def inventory_trend(snapshots: Sequence[Snapshot]) -> pd.DataFrame:
    """Station and port totals per snapshot."""
    return pd.DataFrame(
        [
            {
                "cutoff": s.cutoff.isoformat(),
                "stations": len(s),
                "l2_ports": s.total_ports(PortType.L2),
                "dcfc_ports": s.total_ports(PortType.DCFC),
            }
            for s in snapshots
        ],
        columns=["cutoff", "stations", "l2_ports", "dcfc_ports"],
    )


# ---------- proximity table ----------


@dataclass
class ProximityTable:
    """
    stay node -> [(station_id, network distance m)], each list sorted by
    (distance, station_id). Only pairs within `radius` are stored.
    """

    radius: float
    entries: Dict[int, List[Tuple[str, float]]]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ProximityTable):
            return NotImplemented
        return self.radius == other.radius and self.entries == other.entries

    def __len__(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def check_threshold(self, d: float) -> None:
        if d > self.radius:
            raise ThresholdError(f"threshold {d} m exceeds the table build radius {self.radius} m")
        if d < 0:
            raise ThresholdError(f"threshold must be non-negative, got {d}")

    def ports_at(self, node: int, snapshot: Snapshot, d: float, port_type: PortType) -> int:
        """Ports of `port_type` within `d` of one stay node; entries are sorted by distance."""
        total = 0
        for station_id, dist in self.entries.get(int(node), ()):
            if dist > d:
                break
            total += snapshot.ports_of(station_id, port_type)
        return total

    def port_counts(self, snapshot: Snapshot, d: float, port_type: PortType) -> Dict[int, int]:
        """Ports of `port_type` within `d` for every stay node having at least one."""
        self.check_threshold(d)
        counts: Dict[int, int] = {}
        for node in self.entries:
            total = self.ports_at(node, snapshot, d, port_type)
            if total:
                counts[node] = total
        return counts

    def to_frame(self) -> pd.DataFrame:
        rows = [
            (node, station_id, dist)
            for node in sorted(self.entries)
            for station_id, dist in self.entries[node]
        ]
        return pd.DataFrame(rows, columns=list(TABLE_COLUMNS))


def ports_within(
    table: ProximityTable,
    snapshot: Snapshot,
    stay_node: int,
    d: float,
    port_type: PortType,
) -> int:
    """Sum of snapshot port counts of `port_type` over stations within `d` of `stay_node`."""
    table.check_threshold(d)
    return table.ports_at(stay_node, snapshot, d, port_type)


# worker-process state for parallel table builds
_BUILD_NET: Optional[RoadNetwork] = None
_BUILD_STAY: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None
_BUILD_RADIUS: float = DEFAULT_RADIUS_M
_BUILD_PREFILTER: bool = True


def _init_build(net: RoadNetwork, stay_nodes: np.ndarray, radius: float, prefilter: bool) -> None:
    global _BUILD_NET, _BUILD_STAY, _BUILD_RADIUS, _BUILD_PREFILTER
    idx = np.array([net._index[int(n)] for n in stay_nodes], dtype=np.int64)
    _BUILD_NET = net
    _BUILD_STAY = (stay_nodes, net.lons[idx], net.lats[idx])
    _BUILD_RADIUS = radius
    _BUILD_PREFILTER = prefilter


def _search_from_charger(charger_node: int) -> List[Tuple[int, float]]:
    """Stay nodes reached from one charger node, as (stay_node, distance)."""
    assert _BUILD_NET is not None and _BUILD_STAY is not None
    net = _BUILD_NET
    nodes, lons, lats = _BUILD_STAY
    if _BUILD_PREFILTER:
        lon, lat = net.coord(charger_node)
        # network paths may undercut the crow-flies distance by the edge-length slack
        near = great_circle_many(lon, lat, lons, lats) <= _BUILD_RADIUS / (1.0 - LENGTH_SLACK)
        if not near.any():
            return []
        wanted = set(int(n) for n in nodes[near])
    else:
        wanted = set(int(n) for n in nodes)
    reached = bounded_distance_search(net, charger_node, _BUILD_RADIUS, reverse=True)
    return [(n, d) for n, d in reached.items() if n in wanted]


def build_proximity_table(
    net: RoadNetwork,
    stay_nodes: Iterable[int],
    stations: Sequence[ChargingStation],
    radius: float = DEFAULT_RADIUS_M,
    prefilter: bool = True,
    workers: int = 1,
) -> ProximityTable:
    """
    Network distances from stay nodes to stations within `radius`.

    One bounded Dijkstra runs per distinct charger node on the reversed graph,
    so stored distances are stay -> charger path lengths. The great-circle
    prefilter skips pairs farther apart than `radius` as the crow flies,
    padded by the edge-length slack tolerated when the network loads.
    """
    if not radius > 0:
        raise PreconditionError(f"radius must be > 0, got {radius}")
    by_node: Dict[int, List[str]] = defaultdict(list)
    for s in stations:
        if s.node is None:
            raise StationNotSnappedError(f"station {s.station_id} has no assigned node")
        by_node[int(net.require(s.node))].append(s.station_id)

    stay_arr = np.array(sorted({int(net.require(n)) for n in stay_nodes}), dtype=np.int64)
    charger_nodes = sorted(by_node)
    entries: Dict[int, List[Tuple[str, float]]] = defaultdict(list)
    if stay_arr.size and charger_nodes:
        reached_lists = parallel_map(
            _search_from_charger,
            charger_nodes,
            workers=workers,
            initializer=_init_build,
            initargs=(net, stay_arr, float(radius), prefilter),
        )
        for charger_node, reached in zip(charger_nodes, reached_lists):
            for stay_node, dist in reached:
                for station_id in by_node[charger_node]:
                    entries[stay_node].append((station_id, dist))

    table = ProximityTable(
        radius=float(radius),
        entries={n: sorted(lst, key=lambda e: (e[1], e[0])) for n, lst in sorted(entries.items())},
    )
    logger.info(
        "built proximity table: %d pairs over %d stay nodes from %d charger nodes",
        len(table),
        len(table.entries),
        len(charger_nodes),
        extra={"rows": len(table), "workers": workers},
    )
    return table


def save_proximity_table(table: ProximityTable, path: Union[str, Path]) -> None:
    table.to_frame().to_csv(path, index=False, encoding="utf-8", lineterminator="\n")


def load_proximity_table(path: Union[str, Path], radius: float = DEFAULT_RADIUS_M) -> ProximityTable:
    path = Path(path)
    frame = pd.read_csv(
        path,
        dtype={"stay_node": np.int64, "station_id": str, "distance_m": float},
        float_precision="round_trip",
    )
    missing = [c for c in TABLE_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError(str(path), 1, f"missing column(s): {', '.join(missing)}")
    if (frame["distance_m"] > radius).any():
        line = int(frame.index[frame["distance_m"] > radius][0]) + 2
        raise ParseError(str(path), line, f"distance exceeds table radius {radius}")
    entries: Dict[int, List[Tuple[str, float]]] = defaultdict(list)
    for node, station_id, dist in frame.itertuples(index=False, name=None):
        entries[int(node)].append((str(station_id), float(dist)))
    return ProximityTable(
        radius=float(radius),
        entries={n: sorted(lst, key=lambda e: (e[1], e[0])) for n, lst in sorted(entries.items())},
    )
