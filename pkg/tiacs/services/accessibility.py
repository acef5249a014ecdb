# tiacs/services/accessibility.py
"""
Time-integrated accessibility (TI-acs) per person.

hours: time spent at stays with at least one port of the requested type
within d meters. ports: the time-average of that port count over the
segment horizon. Travel time contributes nothing to either.
"""
from __future__ import annotations

import logging
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from tiacs.core.errors import PreconditionError
from tiacs.core.utils import chunk_list, parallel_map
from tiacs.schemas.accessibility import DAY_MINUTES, AccessResult, SegmentSpec, TouSchedule
from tiacs.schemas.inventory import PortType, Snapshot
from tiacs.schemas.trajectory import WEEK_MINUTES, Stay, StayKind, Trajectory
from tiacs.services.charging_inventory import ProximityTable, ports_within

logger = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "person_id",
    "port_type",
    "d_m",
    "cutoff",
    "kind_filter",
    "tou_filter",
    "hours_per_day",
    "ports_avg",
]
DEBUG_COLUMNS = RESULT_COLUMNS + ["hours_total"]

NORMALIZATIONS = ("horizon", "stay_time")
DAYS_PER_WEEK = WEEK_MINUTES // DAY_MINUTES


class TouFragment(NamedTuple):
    start: int
    end: int
    period: str

    @property
    def duration(self) -> int:
        return self.end - self.start


def split_stay_by_tou(stay: Stay, schedule: TouSchedule) -> List[TouFragment]:
    """Cut `[start, end)` at every TOU window boundary, across midnights and days."""
    out: List[TouFragment] = []
    t = stay.start
    while t < stay.end:
        day = t - t % DAY_MINUTES
        _, window_end, name = schedule.window_at(t % DAY_MINUTES)
        cut = min(stay.end, day + window_end)
        out.append(TouFragment(t, cut, name))
        t = cut
    return out


def segments_default(schedule: Optional[TouSchedule] = None) -> List[SegmentSpec]:
    """all, each stay kind, and each TOU period."""
    schedule = schedule or TouSchedule()
    return (
        [SegmentSpec()]
        + [SegmentSpec(kinds=frozenset({k})) for k in StayKind]
        + [SegmentSpec(periods=frozenset({p})) for p in schedule.names]
    )


def _check_normalization(normalization: str) -> None:
    if normalization not in NORMALIZATIONS:
        raise PreconditionError(
            f"normalization must be one of {', '.join(NORMALIZATIONS)}, got {normalization!r}"
        )


def segment_horizon(
    segment: SegmentSpec, schedule: TouSchedule, matched_minutes: int, normalization: str = "horizon"
) -> int:
    """
    Denominator of ports_avg in minutes. Time-only segments use the weekly
    duration of their TOU windows; kind segments use the person's own time
    at those kinds inside the windows. The toy mode always uses matched stay time.
    """
    if normalization == "stay_time" or segment.kinds is not None:
        return matched_minutes
    return DAYS_PER_WEEK * schedule.daily_minutes(segment.periods)


def finalize(
    minutes: int, port_minutes: int, horizon: int
) -> Tuple[float, float, float]:
    """(hours_per_day, ports_avg, hours_total) from integer minute sums."""
    hours_total = minutes / 60.0
    ports_avg = port_minutes / horizon if horizon > 0 else 0.0
    return hours_total / DAYS_PER_WEEK, ports_avg, hours_total


def _result(
    traj: Trajectory,
    snapshot: Snapshot,
    port_type: PortType,
    d: float,
    segment: SegmentSpec,
    sums: Tuple[int, int, int],
    schedule: TouSchedule,
    normalization: str,
) -> AccessResult:
    minutes, port_minutes, matched = sums
    per_day, ports_avg, total = finalize(
        minutes, port_minutes, segment_horizon(segment, schedule, matched, normalization)
    )
    return AccessResult(
        person_id=traj.person_id,
        port_type=port_type,
        d_m=float(d),
        cutoff=snapshot.cutoff,
        segment=segment,
        hours_per_day=per_day,
        ports_avg=ports_avg,
        hours_total=total,
    )


def ti_acs(
    traj: Trajectory,
    table: ProximityTable,
    snapshot: Snapshot,
    port_type: PortType,
    d: float,
    segment: Optional[SegmentSpec] = None,
    schedule: Optional[TouSchedule] = None,
    normalization: str = "horizon",
) -> AccessResult:
    """TI-acs for one trajectory, evaluated stay by stay."""
    _check_normalization(normalization)
    segment = segment or SegmentSpec()
    schedule = schedule or TouSchedule()
    segment.validate_against(schedule)
    table.check_threshold(d)

    minutes = port_minutes = matched = 0
    for stay in traj.stays:
        if stay.duration <= 0:
            continue
        ports = ports_within(table, snapshot, stay.node, d, port_type)
        for frag in split_stay_by_tou(stay, schedule):
            if not segment.matches(stay.kind, frag.period):
                continue
            matched += frag.duration
            port_minutes += frag.duration * ports
            if ports >= 1:
                minutes += frag.duration
    return _result(
        traj, snapshot, port_type, d, segment, (minutes, port_minutes, matched), schedule, normalization
    )


def ti_acs_oracle(
    traj: Trajectory,
    table: ProximityTable,
    snapshot: Snapshot,
    port_type: PortType,
    d: float,
    segment: Optional[SegmentSpec] = None,
    schedule: Optional[TouSchedule] = None,
    normalization: str = "horizon",
) -> AccessResult:
    """
    Minute-by-minute reference for `ti_acs`. O(week) per trajectory; for
    tests and `verify` only.
    """
    _check_normalization(normalization)
    segment = segment or SegmentSpec()
    schedule = schedule or TouSchedule()
    segment.validate_against(schedule)
    table.check_threshold(d)

    stays = sorted(traj.stays, key=lambda s: s.start)
    minutes = port_minutes = matched = 0
    k = 0
    for t in range(WEEK_MINUTES):
        while k < len(stays) and stays[k].end <= t:
            k += 1
        if k == len(stays) or not (stays[k].start <= t < stays[k].end):
            continue
        stay = stays[k]
        if not segment.matches(stay.kind, schedule.label_at(t)):
            continue
        ports = ports_within(table, snapshot, stay.node, d, port_type)
        matched += 1
        port_minutes += ports
        if ports >= 1:
            minutes += 1
    return _result(
        traj, snapshot, port_type, d, segment, (minutes, port_minutes, matched), schedule, normalization
    )


# ---------- batch ----------


class _Fragments(NamedTuple):
    person: np.ndarray  # index into the chunk's trajectories
    node: np.ndarray
    kind: np.ndarray  # StayKind values
    period: np.ndarray
    minutes: np.ndarray


def _fragment_frame(trajs: Sequence[Trajectory], schedule: TouSchedule) -> _Fragments:
    person, node, kind, period, minutes = [], [], [], [], []
    for i, traj in enumerate(trajs):
        for stay in traj.stays:
            for frag in split_stay_by_tou(stay, schedule):
                person.append(i)
                node.append(stay.node)
                kind.append(stay.kind.value)
                period.append(frag.period)
                minutes.append(frag.duration)
    return _Fragments(
        person=np.asarray(person, dtype=np.int64),
        node=np.asarray(node, dtype=np.int64),
        kind=np.asarray(kind, dtype=object),
        period=np.asarray(period, dtype=object),
        minutes=np.asarray(minutes, dtype=np.int64),
    )


def _segment_mask(frags: _Fragments, segment: SegmentSpec) -> np.ndarray:
    mask = np.ones(len(frags.minutes), dtype=bool)
    if segment.kinds is not None:
        mask &= np.isin(frags.kind, [k.value for k in segment.kinds])
    if segment.periods is not None:
        mask &= np.isin(frags.period, sorted(segment.periods))
    return mask


def _isum(person: np.ndarray, weights: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(person, weights=weights, minlength=n).round().astype(np.int64)


_BATCH_ARGS: Dict[str, object] = {}


def _init_batch(args: Dict[str, object]) -> None:
    _BATCH_ARGS.clear()
    _BATCH_ARGS.update(args)


def _batch_chunk(trajs: List[Trajectory]) -> pd.DataFrame:
    args = _BATCH_ARGS
    return _compute_chunk(
        trajs,
        args["table"],  # type: ignore[arg-type]
        args["snapshots"],  # type: ignore[arg-type]
        args["port_types"],  # type: ignore[arg-type]
        args["thresholds"],  # type: ignore[arg-type]
        args["segments"],  # type: ignore[arg-type]
        args["schedule"],  # type: ignore[arg-type]
        args["normalization"],  # type: ignore[arg-type]
    )


def _compute_chunk(
    trajs: Sequence[Trajectory],
    table: ProximityTable,
    snapshots: Sequence[Snapshot],
    port_types: Sequence[PortType],
    thresholds: Sequence[float],
    segments: Sequence[SegmentSpec],
    schedule: TouSchedule,
    normalization: str,
) -> pd.DataFrame:
    n = len(trajs)
    frags = _fragment_frame(trajs, schedule)
    masks = [_segment_mask(frags, seg) for seg in segments]
    matched = [_isum(frags.person, np.where(m, frags.minutes, 0), n) for m in masks]
    horizons = [
        np.full(n, segment_horizon(seg, schedule, 0, normalization), dtype=np.int64)
        if seg.kinds is None and normalization == "horizon"
        else matched[j]
        for j, seg in enumerate(segments)
    ]
    nodes, inverse = np.unique(frags.node, return_inverse=True)
    person_ids = [t.person_id for t in trajs]

    blocks: List[pd.DataFrame] = []
    for snapshot in snapshots:
        for pt in port_types:
            for d in thresholds:
                counts = table.port_counts(snapshot, d, pt)
                node_ports = np.fromiter((counts.get(int(v), 0) for v in nodes), dtype=np.int64, count=len(nodes))
                ports = node_ports[inverse] if len(nodes) else np.zeros(0, dtype=np.int64)
                covered = np.where(ports >= 1, frags.minutes, 0)
                weighted = frags.minutes * ports
                for j, seg in enumerate(segments):
                    m = masks[j]
                    minutes = _isum(frags.person, np.where(m, covered, 0), n)
                    port_minutes = _isum(frags.person, np.where(m, weighted, 0), n)
                    rows = [finalize(int(a), int(b), int(h)) for a, b, h in zip(minutes, port_minutes, horizons[j])]
                    blocks.append(
                        pd.DataFrame(
                            {
                                "person_id": person_ids,
                                "port_type": pt.value,
                                "d_m": float(d),
                                "cutoff": snapshot.cutoff.isoformat(),
                                "kind_filter": seg.kind_label,
                                "tou_filter": seg.tou_label,
                                "hours_per_day": [r[0] for r in rows],
                                "ports_avg": [r[1] for r in rows],
                                "hours_total": [r[2] for r in rows],
                                "_segment": j,
                            }
                        )
                    )
    if not blocks:
        return pd.DataFrame(columns=DEBUG_COLUMNS + ["_segment"])
    return pd.concat(blocks, ignore_index=True)


def batch_compute(
    trajs: Sequence[Trajectory],
    table: ProximityTable,
    snapshots: Sequence[Snapshot],
    port_types: Iterable[PortType],
    thresholds: Iterable[float],
    segments: Optional[Sequence[SegmentSpec]] = None,
    schedule: Optional[TouSchedule] = None,
    normalization: str = "horizon",
    workers: int = 1,
    chunk_size: int = 2000,
) -> pd.DataFrame:
    """
    Full cartesian evaluation as a frame with the results-CSV columns plus
    `hours_total`, sorted by person_id, port type, threshold, cutoff, then
    segment order. Values equal a loop over `ti_acs` exactly.
    """
    _check_normalization(normalization)
    schedule = schedule or TouSchedule()
    segments = list(segments) if segments is not None else segments_default(schedule)
    port_types = list(port_types)
    thresholds = sorted(float(d) for d in thresholds)
    for seg in segments:
        seg.validate_against(schedule)
    for d in thresholds:
        table.check_threshold(d)

    ordered = sorted(trajs, key=lambda t: t.person_id)
    chunks = chunk_list(ordered, chunk_size) if ordered else []
    frames = parallel_map(
        _batch_chunk,
        chunks,
        workers=workers,
        initializer=_init_batch,
        initargs=(
            dict(
                table=table,
                snapshots=list(snapshots),
                port_types=port_types,
                thresholds=thresholds,
                segments=segments,
                schedule=schedule,
                normalization=normalization,
            ),
        ),
    )
    if not frames:
        return pd.DataFrame(columns=DEBUG_COLUMNS)
    out = pd.concat(frames, ignore_index=True)
    pt_rank = {pt.value: i for i, pt in enumerate(port_types)}
    out["_pt"] = out["port_type"].map(pt_rank)
    out = out.sort_values(
        ["person_id", "_pt", "d_m", "cutoff", "_segment"], kind="mergesort"
    ).reset_index(drop=True)
    logger.info(
        "computed %d TI-acs results for %d persons",
        len(out),
        len(ordered),
        extra={"rows": len(out), "workers": workers},
    )
    return out[DEBUG_COLUMNS]


def results_from_frame(frame: pd.DataFrame) -> List[AccessResult]:
    """AccessResult models for each row of a `batch_compute` frame."""
    out = []
    for row in frame.itertuples(index=False):
        out.append(
            AccessResult(
                person_id=row.person_id,
                port_type=PortType(row.port_type),
                d_m=row.d_m,
                cutoff=row.cutoff,
                segment=SegmentSpec.parse(row.kind_filter, row.tou_filter),
                hours_per_day=row.hours_per_day,
                ports_avg=row.ports_avg,
                hours_total=getattr(row, "hours_total", 0.0),
            )
        )
    return out
