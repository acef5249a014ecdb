# tiacs/schemas/accessibility.py
from __future__ import annotations

from bisect import bisect_right
from datetime import date
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

from tiacs.schemas.inventory import PortType
from tiacs.schemas.trajectory import StayKind

DAY_MINUTES = 1440
ALL = "all"


def _hm(h: int, m: int = 0) -> int:
    return 60 * h + m


DEFAULT_TOU_PERIODS: Dict[str, List[Tuple[int, int]]] = {
    "super_off_peak": [(_hm(9), _hm(14))],
    "off_peak": [(_hm(21), _hm(24)), (_hm(0), _hm(9)), (_hm(14), _hm(16))],
    "peak": [(_hm(16), _hm(21))],
}


class TouSchedule(BaseModel):
    """
    Named time-of-use periods as daily clock windows `[start, end)` in minutes
    of day. The periods must partition the day exactly.
    """

    model_config = ConfigDict(frozen=True)

    periods: Dict[str, Tuple[Tuple[int, int], ...]] = Field(
        default_factory=lambda: {k: tuple(v) for k, v in DEFAULT_TOU_PERIODS.items()}
    )

    _starts: List[int] = PrivateAttr(default_factory=list)
    _windows: List[Tuple[int, int, str]] = PrivateAttr(default_factory=list)

    @field_validator("periods")
    @classmethod
    def _check_windows(cls, v: Dict[str, Tuple[Tuple[int, int], ...]]) -> Dict[str, Tuple[Tuple[int, int], ...]]:
        if not v:
            raise ValueError("schedule needs at least one period")
        for name, windows in v.items():
            if name == ALL:
                raise ValueError(f"'{ALL}' is reserved and cannot name a period")
            if not windows:
                raise ValueError(f"period '{name}' has no windows")
            for start, end in windows:
                if not (0 <= start < end <= DAY_MINUTES):
                    raise ValueError(f"period '{name}' window ({start}, {end}) outside the day")
        return v

    @model_validator(mode="after")
    def _partition_day(self) -> "TouSchedule":
        windows = sorted(
            (start, end, name) for name, ws in self.periods.items() for start, end in ws
        )
        cursor = 0
        for start, end, name in windows:
            if start < cursor:
                raise ValueError(f"period '{name}' overlaps another at minute {start}")
            if start > cursor:
                raise ValueError(f"minutes [{cursor}, {start}) belong to no period")
            cursor = end
        if cursor != DAY_MINUTES:
            raise ValueError(f"minutes [{cursor}, {DAY_MINUTES}) belong to no period")
        return self

    def model_post_init(self, __context: object) -> None:
        self._windows = sorted(
            (start, end, name) for name, ws in self.periods.items() for start, end in ws
        )
        self._starts = [w[0] for w in self._windows]

    @property
    def names(self) -> List[str]:
        return list(self.periods)

    def daily_minutes(self, names: Optional[Iterable[str]] = None) -> int:
        """Total minutes per day covered by the named periods (all when None)."""
        wanted = set(self.periods) if names is None else set(names)
        return sum(end - start for n in wanted for start, end in self.periods[n])

    def window_at(self, minute_of_day: int) -> Tuple[int, int, str]:
        """The `(start, end, period)` window containing `minute_of_day`."""
        return self._windows[bisect_right(self._starts, minute_of_day % DAY_MINUTES) - 1]

    def label_at(self, minute: int) -> str:
        return self.window_at(minute % DAY_MINUTES)[2]


class SegmentSpec(BaseModel):
    """Stay-kind and TOU-period filters defining a segment of the horizon; None means all."""

    model_config = ConfigDict(frozen=True)

    kinds: Optional[FrozenSet[StayKind]] = None
    periods: Optional[FrozenSet[str]] = None

    @field_validator("kinds", "periods")
    @classmethod
    def _non_empty(cls, v: Optional[FrozenSet]) -> Optional[FrozenSet]:
        if v is not None and len(v) == 0:
            raise ValueError("segment filters cannot be empty sets; use None for all")
        return v

    @property
    def kind_label(self) -> str:
        if self.kinds is None:
            return ALL
        return "+".join(sorted(k.value for k in self.kinds))

    @property
    def tou_label(self) -> str:
        if self.periods is None:
            return ALL
        return "+".join(sorted(self.periods))

    @property
    def label(self) -> str:
        return f"{self.kind_label}|{self.tou_label}"

    def matches(self, kind: StayKind, period: str) -> bool:
        return (self.kinds is None or kind in self.kinds) and (
            self.periods is None or period in self.periods
        )

    @classmethod
    def parse(cls, kind_filter: str = ALL, tou_filter: str = ALL) -> "SegmentSpec":
        """Build from the CSV labels, e.g. `("home+work", "peak")`."""
        kinds = None
        if kind_filter.strip() != ALL:
            kinds = frozenset(StayKind(k.strip()) for k in kind_filter.split("+") if k.strip())
        periods = None
        if tou_filter.strip() != ALL:
            periods = frozenset(p.strip() for p in tou_filter.split("+") if p.strip())
        return cls(kinds=kinds, periods=periods)

    def validate_against(self, schedule: TouSchedule) -> None:
        if self.periods is not None:
            unknown = sorted(set(self.periods) - set(schedule.periods))
            if unknown:
                raise ValueError(f"unknown TOU period(s): {', '.join(unknown)}")


class AccessResult(BaseModel):
    """TI-acs [hours] and [ports] for one person and one parameter combination."""

    person_id: str
    port_type: PortType
    d_m: float
    cutoff: date
    segment: SegmentSpec = Field(default_factory=SegmentSpec)
    hours_per_day: float = Field(..., ge=0.0)
    ports_avg: float = Field(..., ge=0.0)
    hours_total: float = Field(default=0.0, ge=0.0, description="Accessible hours over the whole horizon")

    def as_row(self) -> Dict[str, object]:
        return {
            "person_id": self.person_id,
            "port_type": self.port_type.value,
            "d_m": self.d_m,
            "cutoff": self.cutoff.isoformat(),
            "kind_filter": self.segment.kind_label,
            "tou_filter": self.segment.tou_label,
            "hours_per_day": self.hours_per_day,
            "ports_avg": self.ports_avg,
            "hours_total": self.hours_total,
        }
