# tiacs/schemas/trajectory.py
from __future__ import annotations

from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

SLOTS_PER_WEEK = 1008
SLOT_MINUTES = 10
WEEK_MINUTES = SLOTS_PER_WEEK * SLOT_MINUTES  # 10080
MIN_STAY_MINUTES = 5
TRAVEL_BUFFER_MINUTES = 6


class StayKind(str, Enum):
    HOME = "home"
    WORK = "work"
    OTHER = "other"


class RawStay(BaseModel):
    """One slot-format stay record: the person departs to this stay at the slot start."""

    model_config = ConfigDict(frozen=True)

    slot: int = Field(..., ge=1, le=SLOTS_PER_WEEK, description="10-minute slot index in the week")
    kind: StayKind
    lon: float = Field(..., ge=-180.0, le=180.0)
    lat: float = Field(..., ge=-90.0, le=90.0)
    node: Optional[int] = None
    snap_distance_m: Optional[float] = None

    @property
    def departure_minute(self) -> int:
        """Minute at which the person leaves the previous stay heading here."""
        return SLOT_MINUTES * (self.slot - 1)


class PersonRecord(BaseModel):
    """A person's raw week of stays, ordered by slot."""

    person_id: str = Field(..., min_length=1)
    stays: List[RawStay] = Field(..., min_length=1)

    @field_validator("stays")
    @classmethod
    def _slots_increasing(cls, v: List[RawStay]) -> List[RawStay]:
        for prev, cur in zip(v, v[1:]):
            if cur.slot <= prev.slot:
                raise ValueError(
                    f"slots must be strictly increasing (slot {cur.slot} after {prev.slot})"
                )
        return v

    @property
    def home(self) -> Tuple[float, float]:
        """Location of the first home stay, or the first stay when none is typed home."""
        for s in self.stays:
            if s.kind is StayKind.HOME:
                return (s.lon, s.lat)
        return (self.stays[0].lon, self.stays[0].lat)


class Stay(BaseModel):
    """
    A timed stay in minutes of the week. Durations may be short or negative
    before repair; `Trajectory.check_invariants` states the repaired contract.
    """

    model_config = ConfigDict(frozen=True)

    start: int
    end: int
    kind: StayKind
    node: int
    lon: float
    lat: float

    @property
    def duration(self) -> int:
        return self.end - self.start

    @property
    def location(self) -> Tuple[float, float]:
        return (self.lon, self.lat)


class Trajectory(BaseModel):
    person_id: str
    home: Tuple[float, float]
    stays: List[Stay] = Field(..., min_length=1)
    travel: List[int] = Field(default_factory=list, description="Minutes between consecutive stays")

    @field_validator("travel")
    @classmethod
    def _travel_ints(cls, v: List[int]) -> List[int]:
        return [int(x) for x in v]

    def check_invariants(self, min_stay: int = MIN_STAY_MINUTES) -> List[str]:
        """
        Violations of the repaired-trajectory contract; empty when it holds.
        """
        problems: List[str] = []
        stays = self.stays
        if stays[0].start != 0:
            problems.append(f"first stay starts at {stays[0].start}, not 0")
        if stays[-1].end > WEEK_MINUTES:
            problems.append(f"last stay ends at {stays[-1].end} > {WEEK_MINUTES}")
        if len(self.travel) != len(stays) - 1:
            problems.append("travel list length does not match stay gaps")
        for k, s in enumerate(stays):
            if s.duration < min_stay:
                problems.append(f"stay {k} lasts {s.duration} min")
        for k, (a, b) in enumerate(zip(stays, stays[1:])):
            if k < len(self.travel) and b.start != a.end + self.travel[k]:
                problems.append(f"gap {k} does not equal recorded travel time")
            if b.start < a.end:
                problems.append(f"stays {k} and {k + 1} overlap")
        if any(t < 0 for t in self.travel):
            problems.append("negative travel time")
        return problems


class RepairReport(BaseModel):
    """Counts of each resolution mode used while repairing stay durations."""

    trajectories: int = 0
    deficient_stays: int = 0
    advanced_arrival: int = 0
    delayed_departure: int = 0
    shortened_travel: int = 0
    forced: int = 0
    passes_used: int = 0
    unrouted_legs: int = 0
    routed_legs: int = 0

    def merge(self, other: "RepairReport") -> "RepairReport":
        return RepairReport(
            trajectories=self.trajectories + other.trajectories,
            deficient_stays=self.deficient_stays + other.deficient_stays,
            advanced_arrival=self.advanced_arrival + other.advanced_arrival,
            delayed_departure=self.delayed_departure + other.delayed_departure,
            shortened_travel=self.shortened_travel + other.shortened_travel,
            forced=self.forced + other.forced,
            passes_used=max(self.passes_used, other.passes_used),
            unrouted_legs=self.unrouted_legs + other.unrouted_legs,
            routed_legs=self.routed_legs + other.routed_legs,
        )

    @property
    def resolved_by_donation(self) -> int:
        """Deficient stays fixed by neighbour donation alone."""
        return self.deficient_stays - self.shortened_travel - self.forced

    @property
    def donation_share(self) -> float:
        if self.deficient_stays == 0:
            return 1.0
        return self.resolved_by_donation / self.deficient_stays
