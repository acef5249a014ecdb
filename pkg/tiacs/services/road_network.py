# tiacs/services/road_network.py
"""
Routable road graph: loading, coordinate snapping, and bounded shortest paths.

Distances are edge-length weighted (meters); travel times are edge
travel_time weighted (seconds). The graph is directed. Parallel edges are
kept in the edge table for round-tripping; routing sees, for each (u, v), the
minimum length and the minimum travel time over the parallel edges.
"""
from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from tiacs.core.errors import InputValidationError, ParseError, PreconditionError, UnknownNodeError
from tiacs.core.utils import RowErrorCollector

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0
LENGTH_SLACK = 0.01

NODE_COLUMNS = ("node_id", "lon", "lat")
EDGE_COLUMNS = ("from", "to", "length_m", "travel_time_s")

Coord = Tuple[float, float]


class NetworkValidationError(InputValidationError):
    """Raised when nodes or edges violate the network invariants."""


def _check_coord(lon: float, lat: float) -> None:
    if not (-180.0 <= lon <= 180.0) or not (-90.0 <= lat <= 90.0):
        raise PreconditionError(f"coordinate out of range: lon={lon}, lat={lat}")


def great_circle(a: Coord, b: Coord) -> float:
    """Haversine distance in meters between two `(lon, lat)` points."""
    lon1, lat1 = float(a[0]), float(a[1])
    lon2, lat2 = float(b[0]), float(b[1])
    _check_coord(lon1, lat1)
    _check_coord(lon2, lat2)
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = phi2 - phi1
    dlmb = math.radians(lon2 - lon1)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def great_circle_many(lon: float, lat: float, lons: np.ndarray, lats: np.ndarray) -> np.ndarray:
    """Vectorised haversine from one point to many; used for prefiltering only."""
    phi1 = np.radians(lat)
    phi2 = np.radians(lats)
    dphi = phi2 - phi1
    dlmb = np.radians(lons - lon)
    h = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def _unit_vectors(lons: np.ndarray, lats: np.ndarray) -> np.ndarray:
    lam = np.radians(np.asarray(lons, dtype=float))
    phi = np.radians(np.asarray(lats, dtype=float))
    cos_phi = np.cos(phi)
    return np.column_stack((cos_phi * np.cos(lam), cos_phi * np.sin(lam), np.sin(phi)))


class RoadNetwork:
    """
    Immutable directed road graph.

    Nodes carry `(lon, lat)`; edges carry `length` (m) and `travel_time` (s).
    Safe for concurrent reads once constructed.
    """

    def __init__(
        self,
        nodes: pd.DataFrame,
        edges: pd.DataFrame,
        source: str = "<memory>",
    ):
        self.source = source
        self.nodes = nodes.reset_index(drop=True)[list(NODE_COLUMNS)].copy()
        self.edges = edges.reset_index(drop=True)[list(EDGE_COLUMNS)].copy()
        self.nodes["node_id"] = self.nodes["node_id"].astype(np.int64)
        self.edges["from"] = self.edges["from"].astype(np.int64)
        self.edges["to"] = self.edges["to"].astype(np.int64)

        self._validate()

        self.node_ids: np.ndarray = self.nodes["node_id"].to_numpy()
        self.lons: np.ndarray = self.nodes["lon"].to_numpy(dtype=float)
        self.lats: np.ndarray = self.nodes["lat"].to_numpy(dtype=float)
        self._index: Dict[int, int] = {int(n): i for i, n in enumerate(self.node_ids)}

        self.graph = self._build_graph()
        self._reversed: Optional[nx.DiGraph] = None
        self._tree: Optional[cKDTree] = None

    # ---------- construction ----------

    def _validate(self) -> None:
        errors = RowErrorCollector(self.source)
        ids = self.nodes["node_id"]
        dup = ids[ids.duplicated()].unique()
        for n in dup[:20]:
            errors.add_error(None, "node_id", f"duplicate node id {int(n)}")

        bad_coord = ~(self.nodes["lon"].between(-180, 180) & self.nodes["lat"].between(-90, 90))
        for idx in self.nodes.index[bad_coord][:20]:
            errors.add_error(int(idx) + 2, "lon/lat", "coordinate out of range")

        known = set(ids.tolist())
        for col in ("from", "to"):
            missing_mask = ~self.edges[col].isin(known)
            for idx in self.edges.index[missing_mask][:50]:
                errors.add_error(
                    int(idx) + 2,
                    col,
                    f"edge references missing node {int(self.edges.at[idx, col])}",
                )

        loops = self.edges["from"] == self.edges["to"]
        for idx in self.edges.index[loops][:20]:
            errors.add_error(int(idx) + 2, "from/to", f"self-loop at node {int(self.edges.at[idx, 'from'])}")

        for col in ("length_m", "travel_time_s"):
            nonpos = ~(self.edges[col] > 0)
            for idx in self.edges.index[nonpos][:20]:
                errors.add_error(int(idx) + 2, col, f"{col} must be > 0")

        if not errors.is_valid():
            raise NetworkValidationError(f"{self.source}: invalid road network", errors.errors)

        self._warn_short_edges()

    def _warn_short_edges(self) -> None:
        if self.edges.empty:
            return
        coords = self.nodes.set_index("node_id")[["lon", "lat"]]
        a = coords.loc[self.edges["from"]].to_numpy()
        b = coords.loc[self.edges["to"]].to_numpy()
        phi1, phi2 = np.radians(a[:, 1]), np.radians(b[:, 1])
        h = (
            np.sin((phi2 - phi1) / 2.0) ** 2
            + np.cos(phi1) * np.cos(phi2) * np.sin(np.radians(b[:, 0] - a[:, 0]) / 2.0) ** 2
        )
        gc = 2.0 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))
        short = self.edges["length_m"].to_numpy() < gc * (1.0 - LENGTH_SLACK)
        n_short = int(short.sum())
        if n_short:
            first = self.edges[short].iloc[0]
            logger.warning(
                "%d edge(s) shorter than the great-circle distance between endpoints "
                "(first: %d -> %d)",
                n_short,
                int(first["from"]),
                int(first["to"]),
                extra={"path": self.source, "rows": n_short},
            )

    def _build_graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(int(n) for n in self.node_ids)
        # sort so the fastest parallel edge wins deterministically
        ordered = self.edges.sort_values(
            ["from", "to", "travel_time_s", "length_m"], kind="mergesort"
        )
        for u, v, length, tt in ordered.itertuples(index=False, name=None):
            u, v = int(u), int(v)
            data = g.get_edge_data(u, v)
            if data is None:
                g.add_edge(u, v, length=float(length), travel_time=float(tt), fastest_length=float(length))
            else:
                data["length"] = min(data["length"], float(length))
        return g

    # ---------- accessors ----------

    def __len__(self) -> int:
        return len(self.node_ids)

    def __contains__(self, node_id: object) -> bool:
        try:
            return int(node_id) in self._index  # type: ignore[arg-type]
        except (TypeError, ValueError):
            return False

    @property
    def reversed_graph(self) -> nx.DiGraph:
        if self._reversed is None:
            self._reversed = self.graph.reverse(copy=False)
        return self._reversed

    def require(self, node_id: int) -> int:
        node_id = int(node_id)
        if node_id not in self._index:
            raise UnknownNodeError(node_id)
        return node_id

    def coord(self, node_id: int) -> Coord:
        i = self._index[self.require(node_id)]
        return (float(self.lons[i]), float(self.lats[i]))

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(_unit_vectors(self.lons, self.lats))
        return self._tree

    def __getstate__(self) -> dict:
        # the KD-tree is rebuilt lazily in worker processes
        state = self.__dict__.copy()
        state["_tree"] = None
        state["_reversed"] = None
        return state


# ---------- file I/O ----------


def _parse_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        return math.nan
    return value if math.isfinite(value) else math.nan


def _read_numeric_csv(path: Path, columns: Sequence[str], integer_columns: Sequence[str]) -> pd.DataFrame:
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.ParserError as exc:
        raise ParseError(str(path), 0, f"malformed CSV: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise ParseError(str(path), 1, "file is empty") from exc
    missing = [c for c in columns if c not in raw.columns]
    if missing:
        raise ParseError(str(path), 1, f"missing column(s): {', '.join(missing)}")
    out = pd.DataFrame(index=raw.index)
    for col in columns:
        values = raw[col].str.strip().map(_parse_float).astype(float)
        bad = values.isna()
        if bad.any():
            line = int(raw.index[bad][0]) + 2
            raise ParseError(str(path), line, f"column '{col}' is not numeric: {raw.at[raw.index[bad][0], col]!r}")
        if col in integer_columns:
            if not np.all(np.mod(values, 1) == 0):
                line = int(raw.index[np.mod(values, 1) != 0][0]) + 2
                raise ParseError(str(path), line, f"column '{col}' must be an integer")
            values = values.astype(np.int64)
        out[col] = values
    return out


def load_network(nodes_path: Union[str, Path], edges_path: Union[str, Path]) -> RoadNetwork:
    """
    Load a network from the node CSV (`node_id,lon,lat`) and edge CSV
    (`from,to,length_m,travel_time_s`).

    Raises:
        ParseError: malformed row (message carries the line number)
        NetworkValidationError: dangling endpoints, self-loops, bad values
    """
    nodes_path, edges_path = Path(nodes_path), Path(edges_path)
    nodes = _read_numeric_csv(nodes_path, NODE_COLUMNS, ("node_id",))
    edges = _read_numeric_csv(edges_path, EDGE_COLUMNS, ("from", "to"))
    net = RoadNetwork(nodes, edges, source=str(edges_path))
    logger.info(
        "loaded road network: %d nodes, %d edges",
        len(net.node_ids),
        len(net.edges),
        extra={"path": str(edges_path), "rows": len(net.edges)},
    )
    return net


def write_network(net: RoadNetwork, nodes_path: Union[str, Path], edges_path: Union[str, Path]) -> None:
    """Write both CSVs; re-reading them yields an identical network."""
    net.nodes.to_csv(nodes_path, index=False, encoding="utf-8", lineterminator="\n")
    net.edges.to_csv(edges_path, index=False, encoding="utf-8", lineterminator="\n")


# ---------- snapping ----------


def _nearest_index(net: RoadNetwork, lon: float, lat: float, chord: float, hint: int) -> int:
    """Exact linear-scan winner among the KD-tree candidates near `hint`."""
    radius = chord * (1.0 + 1e-9) + 1e-12
    candidates = net.tree.query_ball_point(_unit_vectors([lon], [lat])[0], r=radius)
    if not candidates:
        candidates = [hint]
    best = min(
        candidates,
        key=lambda i: (great_circle((lon, lat), (net.lons[i], net.lats[i])), int(net.node_ids[i])),
    )
    return int(best)


def nearest_node(net: RoadNetwork, lon: float, lat: float) -> Tuple[int, float]:
    """
    Node minimising great-circle distance to `(lon, lat)`; ties go to the
    smallest node id. Returns `(node_id, snap_distance_m)`.
    """
    if len(net) == 0:
        raise PreconditionError("cannot snap to an empty network")
    _check_coord(lon, lat)
    chord, hint = net.tree.query(_unit_vectors([lon], [lat])[0])
    i = _nearest_index(net, lon, lat, float(chord), int(hint))
    return int(net.node_ids[i]), great_circle((lon, lat), (net.lons[i], net.lats[i]))


def nearest_nodes(
    net: RoadNetwork, lons: Iterable[float], lats: Iterable[float]
) -> Tuple[np.ndarray, np.ndarray]:
    """Bulk form of `nearest_node`: arrays of node ids and snap distances."""
    if len(net) == 0:
        raise PreconditionError("cannot snap to an empty network")
    lons = np.asarray(list(lons), dtype=float)
    lats = np.asarray(list(lats), dtype=float)
    if lons.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=float)
    if np.any(np.abs(lons) > 180.0) or np.any(np.abs(lats) > 90.0):
        raise PreconditionError("coordinate out of range in snapping batch")
    chords, hints = net.tree.query(_unit_vectors(lons, lats))
    ids = np.empty(lons.size, dtype=np.int64)
    dists = np.empty(lons.size, dtype=float)
    for k in range(lons.size):
        i = _nearest_index(net, float(lons[k]), float(lats[k]), float(chords[k]), int(hints[k]))
        ids[k] = net.node_ids[i]
        dists[k] = great_circle((lons[k], lats[k]), (net.lons[i], net.lats[i]))
    return ids, dists


# ---------- routing ----------


def bounded_distance_search(
    net: RoadNetwork, source: int, max_dist: float, reverse: bool = False
) -> Dict[int, float]:
    """
    Shortest-path length (m) from `source` to every node within `max_dist`,
    inclusive. With `reverse=True` the lengths are measured toward `source`.

    The returned dict is ordered by (distance, node_id).
    """
    source = net.require(source)
    if not max_dist > 0:
        raise PreconditionError(f"max_dist must be > 0, got {max_dist}")
    graph = net.reversed_graph if reverse else net.graph
    lengths = nx.single_source_dijkstra_path_length(graph, source, cutoff=max_dist, weight="length")
    return dict(sorted(lengths.items(), key=lambda kv: (kv[1], kv[0])))


def shortest_route(net: RoadNetwork, origin: int, dest: int) -> Optional[Tuple[float, float]]:
    """
    Travel-time shortest path as `(seconds, length_m)`, or None when `dest`
    is unreachable. Unknown nodes raise UnknownNodeError.
    """
    origin, dest = net.require(origin), net.require(dest)
    if origin == dest:
        return (0.0, 0.0)
    try:
        seconds, path = nx.bidirectional_dijkstra(net.graph, origin, dest, weight="travel_time")
    except nx.NetworkXNoPath:
        return None
    g = net.graph
    length = sum(g[u][v]["fastest_length"] for u, v in zip(path, path[1:]))
    return float(seconds), float(length)


def shortest_travel_time(net: RoadNetwork, origin: int, dest: int) -> Optional[float]:
    """Minimal travel time in seconds, or None when no path exists."""
    route = shortest_route(net, origin, dest)
    return None if route is None else route[0]
