# tiacs/services/trajectory.py
"""
Raw slot-format stays -> routed, repaired minute-resolution trajectories.

Timeline convention: the start of a stay's slot is the moment the person
departs the previous stay; arrival is departure plus routed travel time
(plus a 6 minute parking buffer). The first stay starts at minute 0 and the
last one ends at the end of the week.
"""
from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from tiacs.core.config import get_settings
from tiacs.core.errors import DegenerateTrajectoryError, ParseError
from tiacs.core.utils import RowErrorCollector, parallel_map, round_half_up
from tiacs.schemas.trajectory import (
    MIN_STAY_MINUTES,
    TRAVEL_BUFFER_MINUTES,
    WEEK_MINUTES,
    PersonRecord,
    RawStay,
    RepairReport,
    Stay,
    StayKind,
    Trajectory,
)
from tiacs.services.road_network import RoadNetwork, great_circle, nearest_nodes, shortest_route

logger = logging.getLogger(__name__)

RAW_COLUMNS = ("person_id", "slot", "kind", "lon", "lat")
PROCESSED_COLUMNS = ("person_id", "start_min", "end_min", "kind", "node_id", "lon", "lat")
MAX_REPAIR_PASSES = 10


# ---------- raw ingestion ----------


def ingest_raw(path: Union[str, Path], net: Optional[RoadNetwork] = None) -> List[PersonRecord]:
    """
    Read the raw trajectory CSV (`person_id,slot,kind,lon,lat`), validate each
    row and each person's slot order, and snap stays to network nodes.

    Persons are returned sorted by person_id; stays keep file order.
    """
    path = Path(path)
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as exc:
        raise ParseError(str(path), 1, "file is empty") from exc
    missing = [c for c in RAW_COLUMNS if c not in raw.columns]
    if missing:
        raise ParseError(str(path), 1, f"missing column(s): {', '.join(missing)}")

    errors = RowErrorCollector(str(path))
    grouped: Dict[str, List[Tuple[int, RawStay]]] = OrderedDict()
    for idx, (pid, slot, kind, lon, lat) in enumerate(
        raw[list(RAW_COLUMNS)].itertuples(index=False, name=None)
    ):
        line = idx + 2
        pid = pid.strip()
        if not pid:
            errors.add_error(line, "person_id", "person_id cannot be empty")
            continue
        try:
            stay = RawStay(slot=slot.strip(), kind=kind.strip().lower(), lon=lon.strip(), lat=lat.strip())
        except ValidationError as exc:
            errors.extend_from_pydantic(line, exc)
            continue
        grouped.setdefault(pid, []).append((line, stay))

    records: List[PersonRecord] = []
    for pid, rows in grouped.items():
        for (_, prev), (line, cur) in zip(rows, rows[1:]):
            if cur.slot <= prev.slot:
                errors.add_error(
                    line, "slot", f"person {pid}: slot {cur.slot} does not follow slot {prev.slot}"
                )
                break
        else:
            records.append(PersonRecord(person_id=pid, stays=[s for _, s in rows]))
    errors.raise_if_invalid("trajectory rows")

    if net is not None:
        records = snap_records(records, net)
    records.sort(key=lambda r: r.person_id)
    logger.info("ingested %d persons", len(records), extra={"path": str(path), "rows": len(raw)})
    return records


def snap_records(records: Sequence[PersonRecord], net: RoadNetwork) -> List[PersonRecord]:
    flat = [s for r in records for s in r.stays]
    if not flat:
        return list(records)
    ids, dists = nearest_nodes(net, [s.lon for s in flat], [s.lat for s in flat])
    out: List[PersonRecord] = []
    k = 0
    for r in records:
        stays = []
        for s in r.stays:
            stays.append(s.model_copy(update={"node": int(ids[k]), "snap_distance_m": float(dists[k])}))
            k += 1
        out.append(PersonRecord(person_id=r.person_id, stays=stays))
    logger.info(
        "snapped %d stays: median %.1f m, max %.1f m",
        len(flat),
        float(np.median(dists)),
        float(np.max(dists)),
        extra={"rows": len(flat)},
    )
    return out


def write_raw(records: Iterable[PersonRecord], path: Union[str, Path]) -> None:
    rows = [
        (r.person_id, s.slot, s.kind.value, s.lon, s.lat) for r in records for s in r.stays
    ]
    pd.DataFrame(rows, columns=list(RAW_COLUMNS)).to_csv(
        path, index=False, encoding="utf-8", lineterminator="\n"
    )


# ---------- routing ----------


@dataclass(frozen=True)
class Leg:
    """One routed (or unroutable) trip between consecutive stays."""

    seconds: Optional[float]
    length_m: Optional[float]
    gc_m: float

    @property
    def routed(self) -> bool:
        return self.seconds is not None


@dataclass(frozen=True)
class FallbackStats:
    """Run-level statistics used to time trips the network cannot route."""

    speed_mps: float
    detour: float

    @classmethod
    def from_legs(cls, legs: Iterable[Optional[Leg]]) -> "FallbackStats":
        """Medians of speed and of network/great-circle ratio over routed, non-zero trips."""
        speeds: List[float] = []
        detours: List[float] = []
        for leg in legs:
            if leg is None or not leg.routed or not leg.length_m:
                continue
            if leg.seconds and leg.seconds > 0:
                speeds.append(leg.length_m / leg.seconds)
            if leg.gc_m > 0:
                detours.append(leg.length_m / leg.gc_m)
        cfg = get_settings()
        speed = np.median(speeds) if speeds else cfg.fallback_speed_kmh / 3.6
        detour = np.median(detours) if detours else cfg.fallback_detour
        if not speeds:
            logger.warning("no routed trips to derive fallback speed; using %.1f km/h", speed * 3.6)
        return cls(speed_mps=float(speed), detour=float(detour))

    def minutes(self, gc_m: float) -> int:
        return round_half_up(gc_m * self.detour / self.speed_mps / 60.0)


def route_legs(net: RoadNetwork, record: PersonRecord) -> List[Leg]:
    """Route every consecutive pair of a person's snapped stays."""
    cache: Dict[Tuple[int, int], Optional[Tuple[float, float]]] = {}
    legs: List[Leg] = []
    for a, b in zip(record.stays, record.stays[1:]):
        if a.node is None or b.node is None:
            raise ValueError(f"person {record.person_id}: stays must be snapped before routing")
        key = (a.node, b.node)
        if key not in cache:
            cache[key] = shortest_route(net, a.node, b.node)
        route = cache[key]
        gc = great_circle(net.coord(a.node), net.coord(b.node))
        if route is None:
            legs.append(Leg(seconds=None, length_m=None, gc_m=gc))
        else:
            legs.append(Leg(seconds=route[0], length_m=route[1], gc_m=gc))
    return legs


def leg_minutes(leg: Leg, stats: FallbackStats) -> int:
    """Whole-minute travel time including the parking buffer."""
    if leg.routed:
        return round_half_up(leg.seconds / 60.0) + TRAVEL_BUFFER_MINUTES  # type: ignore[operator]
    return stats.minutes(leg.gc_m) + TRAVEL_BUFFER_MINUTES


def build_trajectory(record: PersonRecord, legs: Sequence[Leg], stats: FallbackStats) -> Trajectory:
    """Lay out the pre-repair timeline from slot departures and leg times."""
    stays = record.stays
    travel = [leg_minutes(leg, stats) for leg in legs]
    starts = [0]
    ends: List[int] = []
    for k in range(len(stays) - 1):
        departure = stays[k + 1].departure_minute
        ends.append(departure)
        starts.append(departure + travel[k])
    ends.append(WEEK_MINUTES)
    return Trajectory(
        person_id=record.person_id,
        home=record.home,
        stays=[
            Stay(start=a, end=e, kind=s.kind, node=int(s.node), lon=s.lon, lat=s.lat)  # type: ignore[arg-type]
            for a, e, s in zip(starts, ends, stays)
        ],
        travel=travel,
    )


def route_travel(
    net: RoadNetwork, record: PersonRecord, stats: Optional[FallbackStats] = None
) -> Trajectory:
    """
    Route one person. Without run-level `stats` the fallback statistics come
    from this person's own routed trips (or the configured defaults).
    """
    legs = route_legs(net, record)
    if stats is None:
        stats = FallbackStats.from_legs(legs)
    return build_trajectory(record, legs, stats)


# ---------- repair ----------


def _step(deficit: int) -> int:
    """Shift applied for a deficit: whole 5-minute moves covering it."""
    return MIN_STAY_MINUTES * math.ceil(deficit / MIN_STAY_MINUTES)


def repair_with_report(
    traj: Trajectory, max_passes: int = MAX_REPAIR_PASSES
) -> Tuple[Trajectory, RepairReport]:
    """
    Make every stay last at least 5 minutes.

    Passes (chronological, at most `max_passes`) move a deficient stay's
    arrival earlier by taking time from the previous stay, or its departure
    later by taking time from the next stay, whichever donor keeps >= 5
    minutes (previous first). Leftovers shorten adjacent travel, then a final
    sweep compacts travel to zero where still needed.
    """
    stays = traj.stays
    n = len(stays)
    a = [s.start for s in stays]
    e = [s.end for s in stays]
    report = RepairReport(trajectories=1)

    if n * MIN_STAY_MINUTES > e[-1] - a[0]:
        raise DegenerateTrajectoryError(
            f"person {traj.person_id}: {n} stays cannot each last {MIN_STAY_MINUTES} min "
            f"within [{a[0]}, {e[-1]}]"
        )

    def deficient() -> List[int]:
        return [k for k in range(n) if e[k] - a[k] < MIN_STAY_MINUTES]

    initial = deficient()
    report.deficient_stays = len(initial)
    if not initial:
        return traj, report

    for p in range(max_passes):
        changed = False
        for k in range(n):
            dur = e[k] - a[k]
            if dur >= MIN_STAY_MINUTES:
                continue
            step = _step(MIN_STAY_MINUTES - dur)
            if k > 0 and (e[k - 1] - step) - a[k - 1] >= MIN_STAY_MINUTES:
                a[k] -= step
                e[k - 1] -= step
                report.advanced_arrival += 1
                changed = True
            elif k < n - 1 and e[k + 1] - (a[k + 1] + step) >= MIN_STAY_MINUTES:
                e[k] += step
                a[k + 1] += step
                report.delayed_departure += 1
                changed = True
        report.passes_used = p + 1
        if not changed or not deficient():
            break

    for k in deficient():
        need = MIN_STAY_MINUTES - (e[k] - a[k])
        if k > 0:
            take = min(need, a[k] - e[k - 1])
            a[k] -= take
            need -= take
        if need > 0 and k < n - 1:
            take = min(need, a[k + 1] - e[k])
            e[k] += take
            need -= take
        if need <= 0:
            report.shortened_travel += 1

    leftover = deficient()
    if leftover:
        report.forced += len(leftover)
        _compact(a, e)

    repaired = traj.model_copy(
        update={
            "stays": [
                s.model_copy(update={"start": a[k], "end": e[k]}) for k, s in enumerate(stays)
            ],
            "travel": [a[k + 1] - e[k] for k in range(n - 1)],
        }
    )
    return repaired, report


def _compact(a: List[int], e: List[int]) -> None:
    """Forward then backward sweep enforcing the minimum stay with zero-travel squeezing."""
    n = len(a)
    for k in range(n - 1):
        if e[k] < a[k] + MIN_STAY_MINUTES:
            e[k] = a[k] + MIN_STAY_MINUTES
        if a[k + 1] < e[k]:
            a[k + 1] = e[k]
    for k in range(n - 1, 0, -1):
        if a[k] > e[k] - MIN_STAY_MINUTES:
            a[k] = e[k] - MIN_STAY_MINUTES
        if e[k - 1] > a[k]:
            e[k - 1] = a[k]


def repair_stays(traj: Trajectory, max_passes: int = MAX_REPAIR_PASSES) -> Trajectory:
    return repair_with_report(traj, max_passes)[0]


# ---------- batch ----------

_ROUTE_NET: Optional[RoadNetwork] = None


def _init_routing(net: RoadNetwork) -> None:
    global _ROUTE_NET
    _ROUTE_NET = net


def _route_worker(record: PersonRecord) -> List[Leg]:
    assert _ROUTE_NET is not None
    return route_legs(_ROUTE_NET, record)


def route_and_repair(
    net: RoadNetwork, records: Sequence[PersonRecord], workers: int = 1
) -> Tuple[List[Trajectory], RepairReport]:
    """
    Route all persons in parallel, derive run-level fallback statistics from
    every routed trip, then lay out and repair each trajectory.
    """
    records = sorted(records, key=lambda r: r.person_id)
    all_legs = parallel_map(
        _route_worker, records, workers=workers, initializer=_init_routing, initargs=(net,)
    )
    flat = [leg for legs in all_legs for leg in legs]
    stats = FallbackStats.from_legs(flat)
    report = RepairReport()
    report.routed_legs = sum(1 for leg in flat if leg.routed)
    report.unrouted_legs = len(flat) - report.routed_legs
    if report.unrouted_legs:
        logger.info(
            "%d of %d trips had no network path; timed with %.1f km/h and detour %.2f",
            report.unrouted_legs,
            len(flat),
            stats.speed_mps * 3.6,
            stats.detour,
            extra={"rows": report.unrouted_legs},
        )

    trajectories: List[Trajectory] = []
    for record, legs in zip(records, all_legs):
        repaired, r = repair_with_report(build_trajectory(record, legs, stats))
        report = report.merge(r)
        trajectories.append(repaired)
    logger.info(
        "repaired %d trajectories: %d deficient stays, %.2f%% resolved by donation",
        len(trajectories),
        report.deficient_stays,
        100.0 * report.donation_share,
        extra={"rows": len(trajectories)},
    )
    return trajectories, report


# ---------- processed I/O ----------


def write_trajectories(trajectories: Iterable[Trajectory], path: Union[str, Path]) -> None:
    rows = [
        (t.person_id, s.start, s.end, s.kind.value, s.node, s.lon, s.lat)
        for t in trajectories
        for s in t.stays
    ]
    pd.DataFrame(rows, columns=list(PROCESSED_COLUMNS)).to_csv(
        path, index=False, encoding="utf-8", lineterminator="\n"
    )


def read_trajectories(path: Union[str, Path]) -> List[Trajectory]:
    """Read the processed CSV back; travel is recomputed from the gaps."""
    path = Path(path)
    frame = pd.read_csv(
        path,
        dtype={"person_id": str, "start_min": np.int64, "end_min": np.int64, "kind": str,
               "node_id": np.int64, "lon": float, "lat": float},
        keep_default_na=False,
        float_precision="round_trip",
    )
    missing = [c for c in PROCESSED_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError(str(path), 1, f"missing column(s): {', '.join(missing)}")
    grouped: Dict[str, List[Stay]] = OrderedDict()
    for pid, start, end, kind, node, lon, lat in frame[list(PROCESSED_COLUMNS)].itertuples(
        index=False, name=None
    ):
        grouped.setdefault(str(pid), []).append(
            Stay(start=int(start), end=int(end), kind=StayKind(kind), node=int(node), lon=lon, lat=lat)
        )
    out = []
    for pid, stays in grouped.items():
        home = next(((s.lon, s.lat) for s in stays if s.kind is StayKind.HOME), stays[0].location)
        out.append(
            Trajectory(
                person_id=pid,
                home=home,
                stays=stays,
                travel=[b.start - a.end for a, b in zip(stays, stays[1:])],
            )
        )
    out.sort(key=lambda t: t.person_id)
    return out
