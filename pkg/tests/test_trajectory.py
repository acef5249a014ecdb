# tests/test_trajectory.py
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiacs.core.errors import DegenerateTrajectoryError, InputValidationError
from tiacs.schemas.trajectory import (
    TRAVEL_BUFFER_MINUTES,
    WEEK_MINUTES,
    PersonRecord,
    RawStay,
    RepairReport,
    Stay,
    StayKind,
    Trajectory,
)
from tiacs.services.road_network import load_network
from tiacs.services.trajectory import (
    FallbackStats,
    Leg,
    ingest_raw,
    leg_minutes,
    read_trajectories,
    repair_stays,
    repair_with_report,
    route_and_repair,
    route_travel,
    snap_records,
    write_raw,
    write_trajectories,
)
from tests.conftest import LAT0, LON0, make_network


def timeline(*spans, travel=None):
    """Trajectory from (start, end) spans; gaps become travel unless given."""
    stays = [
        Stay(start=a, end=e, kind=StayKind.HOME if k == 0 else StayKind.OTHER, node=k + 1, lon=LON0, lat=LAT0)
        for k, (a, e) in enumerate(spans)
    ]
    if travel is None:
        travel = [b[0] - a[1] for a, b in zip(spans, spans[1:])]
    return Trajectory(person_id="p", home=(LON0, LAT0), stays=stays, travel=travel)


def spans(traj):
    return [(s.start, s.end) for s in traj.stays]


@pytest.fixture
def one_way_pair():
    """Nodes 1 -> 2 connected one way: 1000 m in 240 s; ~945 m apart."""
    return make_network([(1, LON0, LAT0), (2, LON0, LAT0 + 0.0085)], [(1, 2, 1000.0, 240.0)])


def record(net, *stops):
    """PersonRecord from (slot, kind, node) triples snapped to `net`."""
    raw = [RawStay(slot=slot, kind=kind, lon=net.coord(n)[0], lat=net.coord(n)[1]) for slot, kind, n in stops]
    return snap_records([PersonRecord(person_id="p", stays=raw)], net)[0]


class TestRouting:
    """Slot departures plus routed travel give the pre-repair timeline."""

    def test_travel_rounds_then_adds_buffer(self, one_way_pair):
        rec = record(one_way_pair, (1, StayKind.HOME, 1), (7, StayKind.WORK, 2))
        traj = route_travel(one_way_pair, rec)
        assert traj.travel == [10]
        assert spans(traj) == [(0, 60), (70, WEEK_MINUTES)]
        assert traj.check_invariants() == []

    def test_unroutable_leg_uses_derived_fallback(self, one_way_pair):
        rec = record(
            one_way_pair,
            (1, StayKind.HOME, 1),
            (7, StayKind.WORK, 2),
            (50, StayKind.HOME, 1),
        )
        traj = route_travel(one_way_pair, rec)
        # 2 -> 1 has no path; fallback speed and detour come from the 1 -> 2 trip
        assert traj.travel == [10, 10]
        assert spans(traj)[2] == (500, WEEK_MINUTES)

    def test_same_node_trip_is_buffer_only(self, one_way_pair):
        rec = record(one_way_pair, (1, StayKind.HOME, 1), (10, StayKind.OTHER, 1))
        assert route_travel(one_way_pair, rec).travel == [6]

    def test_unsnapped_record_rejected(self, one_way_pair):
        rec = PersonRecord(
            person_id="p",
            stays=[
                RawStay(slot=1, kind=StayKind.HOME, lon=LON0, lat=LAT0),
                RawStay(slot=3, kind=StayKind.WORK, lon=LON0, lat=LAT0),
            ],
        )
        with pytest.raises(ValueError):
            route_travel(one_way_pair, rec)


class TestFallbackStats:
    """Medians over routed trips, settings defaults otherwise."""

    def test_medians(self):
        legs = [
            Leg(seconds=100.0, length_m=1000.0, gc_m=800.0),
            Leg(seconds=200.0, length_m=1000.0, gc_m=500.0),
            Leg(seconds=100.0, length_m=2000.0, gc_m=1000.0),
            Leg(seconds=None, length_m=None, gc_m=3000.0),
            Leg(seconds=0.0, length_m=0.0, gc_m=0.0),
        ]
        stats = FallbackStats.from_legs(legs)
        assert stats.speed_mps == pytest.approx(10.0)
        assert stats.detour == pytest.approx(2.0)

    def test_defaults_without_routed_trips(self, monkeypatch):
        monkeypatch.setenv("TIACS_FALLBACK_SPEED_KMH", "36")
        monkeypatch.setenv("TIACS_FALLBACK_DETOUR", "1.5")
        stats = FallbackStats.from_legs([Leg(seconds=None, length_m=None, gc_m=100.0)])
        assert stats.speed_mps == pytest.approx(10.0)
        assert stats.detour == pytest.approx(1.5)
        # 2000 m * 1.5 / 10 m/s = 300 s
        unrouted = Leg(seconds=None, length_m=None, gc_m=2000.0)
        assert leg_minutes(unrouted, stats) == 5 + 6

    def test_default_fallback_for_one_km(self, monkeypatch, tmp_path):
        monkeypatch.delenv("TIACS_FALLBACK_SPEED_KMH", raising=False)
        monkeypatch.delenv("TIACS_FALLBACK_DETOUR", raising=False)
        monkeypatch.chdir(tmp_path)
        stats = FallbackStats.from_legs([])
        assert stats.speed_mps == pytest.approx(30.0 / 3.6)
        assert stats.detour == pytest.approx(1.3)
        # 1000 m * 1.3 at 30 km/h is 2.6 min, rounded to 3, plus the parking buffer
        assert stats.minutes(1000.0) == 3
        assert leg_minutes(Leg(seconds=None, length_m=None, gc_m=1000.0), stats) == 9
        assert TRAVEL_BUFFER_MINUTES == 6

    def test_half_minute_rounds_up(self):
        stats = FallbackStats(speed_mps=10.0, detour=1.0)
        assert leg_minutes(Leg(seconds=90.0, length_m=900.0, gc_m=800.0), stats) == 2 + 6
        assert leg_minutes(Leg(seconds=89.0, length_m=900.0, gc_m=800.0), stats) == 1 + 6


class TestRepair:
    """Minimum stay repair."""

    def test_previous_stay_donates(self):
        traj = timeline((0, 600), (606, 603), (609, WEEK_MINUTES))
        fixed, report = repair_with_report(traj)
        assert spans(fixed) == [(0, 590), (596, 603), (609, WEEK_MINUTES)]
        assert fixed.travel == [6, 6]
        assert report.deficient_stays == 1
        assert report.advanced_arrival == 1
        assert report.donation_share == 1.0
        assert fixed.check_invariants() == []

    def test_next_stay_donates_for_first_stay(self):
        traj = timeline((0, 2), (8, 100), (106, WEEK_MINUTES))
        fixed, report = repair_with_report(traj)
        assert spans(fixed)[:2] == [(0, 7), (13, 100)]
        assert report.delayed_departure == 1

    def test_donation_resolves_injected_long_trips(self):
        rng = np.random.default_rng(17)
        total = RepairReport()
        for _ in range(300):
            deps = []
            t = int(rng.integers(40, 80)) * 10
            while t < WEEK_MINUTES - 200:
                deps.append(t)
                t += int(rng.integers(18, 60)) * 10
            gaps = [b - a for a, b in zip(deps, deps[1:] + [WEEK_MINUTES])]
            travel = [int(rng.integers(5, 31)) for _ in deps]
            for k in range(0, len(deps) - 1, 3):
                if rng.random() < 0.5:
                    # overrun the next departure so the following stay goes negative
                    travel[k] = gaps[k] + int(rng.integers(1, 121))
            starts = [0] + [d + tr for d, tr in zip(deps, travel)]
            ends = deps + [WEEK_MINUTES]
            fixed, report = repair_with_report(timeline(*zip(starts, ends), travel=travel))
            assert fixed.check_invariants() == []
            total = total.merge(report)
        assert total.deficient_stays > 100
        assert total.donation_share >= 0.95
        assert total.forced == 0

    def test_shortened_travel(self):
        traj = timeline((0, 5), (15, 17), (27, 32))
        fixed, report = repair_with_report(traj)
        assert spans(fixed) == [(0, 5), (12, 17), (27, 32)]
        assert fixed.travel == [7, 10]
        assert report.shortened_travel == 1
        assert report.forced == 0

    def test_forced_compaction(self):
        traj = timeline((0, 5), (5, 7), (7, 15))
        fixed, report = repair_with_report(traj)
        assert spans(fixed) == [(0, 5), (5, 10), (10, 15)]
        assert fixed.travel == [0, 0]
        assert report.forced == 1
        assert report.resolved_by_donation == 0

    def test_degenerate(self):
        with pytest.raises(DegenerateTrajectoryError):
            repair_stays(timeline((0, 3), (3, 6), (6, 10)))

    def test_clean_trajectory_untouched(self):
        traj = timeline((0, 100), (110, WEEK_MINUTES))
        fixed, report = repair_with_report(traj)
        assert fixed == traj
        assert report.deficient_stays == 0
        assert report.passes_used == 0

    @settings(max_examples=200, deadline=None)
    @given(
        departures=st.lists(st.integers(min_value=2, max_value=1008), min_size=0, max_size=25, unique=True),
        travel=st.lists(st.integers(min_value=0, max_value=240), min_size=25, max_size=25),
    )
    def test_repair_always_valid_and_idempotent(self, departures, travel):
        deps = sorted(10 * (s - 1) for s in departures)
        starts = [0] + [d + t for d, t in zip(deps, travel)]
        ends = deps + [WEEK_MINUTES]
        traj = timeline(*zip(starts, ends), travel=travel[: len(deps)])
        fixed = repair_stays(traj)
        assert fixed.check_invariants() == []
        assert fixed.stays[-1].end == WEEK_MINUTES
        assert repair_stays(fixed) == fixed


class TestIngest:
    """Raw slot CSV parsing."""

    def test_errors_collected(self, tmp_path):
        path = tmp_path / "raw.csv"
        path.write_text(
            "person_id,slot,kind,lon,lat\n"
            "a,1,home,-118.0,34.0\n"
            "a,0,work,-118.0,34.0\n"
            "b,1,car,-118.0,34.0\n"
            "c,5,home,-118.0,34.0\n"
            "c,5,work,-118.0,34.0\n"
        )
        with pytest.raises(InputValidationError) as exc:
            ingest_raw(path)
        lines = sorted(e.line for e in exc.value.errors)
        assert lines == [3, 4, 6]
        assert "person c" in str(exc.value)

    def test_raw_round_trip_sorted_by_person(self, tmp_path):
        recs = [
            PersonRecord(person_id="z", stays=[RawStay(slot=1, kind=StayKind.HOME, lon=-118.25, lat=34.05)]),
            PersonRecord(
                person_id="a",
                stays=[
                    RawStay(slot=1, kind=StayKind.HOME, lon=-118.5, lat=34.5),
                    RawStay(slot=60, kind=StayKind.WORK, lon=-118.25, lat=34.25),
                ],
            ),
        ]
        path = tmp_path / "raw.csv"
        write_raw(recs, path)
        again = ingest_raw(path)
        assert [r.person_id for r in again] == ["a", "z"]
        assert again[0] == recs[1]
        assert again[1] == recs[0]

    def test_home_defaults_to_first_stay(self):
        rec = PersonRecord(person_id="p", stays=[RawStay(slot=1, kind=StayKind.OTHER, lon=1.0, lat=2.0)])
        assert rec.home == (1.0, 2.0)


class TestRouteAndRepair:
    """Whole-run routing on the synthetic inputs."""

    def test_all_valid_and_round_trip(self, tmp_path, synthetic_inputs):
        net = load_network(synthetic_inputs["nodes"], synthetic_inputs["edges"])
        records = ingest_raw(synthetic_inputs["trajectories"], net)
        trajs, report = route_and_repair(net, records)

        assert [t.person_id for t in trajs] == sorted(r.person_id for r in records)
        assert all(t.check_invariants() == [] for t in trajs)
        assert report.trajectories == len(records)
        assert report.routed_legs + report.unrouted_legs == sum(len(r.stays) - 1 for r in records)

        path = tmp_path / "processed.csv"
        write_trajectories(trajs, path)
        again = read_trajectories(path)
        assert [spans(t) for t in again] == [spans(t) for t in trajs]
        assert [t.travel for t in again] == [t.travel for t in trajs]
        assert [[s.node for s in t.stays] for t in again] == [[s.node for s in t.stays] for t in trajs]
