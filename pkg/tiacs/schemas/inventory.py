# tiacs/schemas/inventory.py
from __future__ import annotations

from datetime import date
from enum import Enum
from typing import Dict, FrozenSet, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

MIN_OPEN_DATE = date(1990, 1, 1)
MAX_OPEN_DATE = date(2100, 1, 1)


class PortType(str, Enum):
    """Charging port classes: L2 (~6 kW AC) and DCFC (>= 50 kW DC)."""

    L2 = "L2"
    DCFC = "DCFC"


class ChargingStation(BaseModel):
    """A public charging station and its port counts by type."""

    model_config = ConfigDict(frozen=True)

    station_id: str = Field(..., min_length=1, description="Opaque station identifier")
    lon: float = Field(..., ge=-180.0, le=180.0)
    lat: float = Field(..., ge=-90.0, le=90.0)
    open_date: date = Field(..., description="Date the station became available")
    l2_ports: int = Field(default=0, ge=0)
    dcfc_ports: int = Field(default=0, ge=0)

    node: Optional[int] = Field(default=None, description="Snapped road-network node")
    snap_distance_m: Optional[float] = Field(default=None, ge=0.0)

    @field_validator("station_id")
    @classmethod
    def _strip_id(cls, v: str) -> str:
        v = v.strip()
        if not v:
            raise ValueError("station_id cannot be empty")
        return v

    @field_validator("open_date")
    @classmethod
    def _open_date_range(cls, v: date) -> date:
        if not (MIN_OPEN_DATE <= v <= MAX_OPEN_DATE):
            raise ValueError(f"open_date must be within [{MIN_OPEN_DATE}, {MAX_OPEN_DATE}]")
        return v

    @model_validator(mode="after")
    def _at_least_one_port(self) -> "ChargingStation":
        if self.l2_ports + self.dcfc_ports < 1:
            raise ValueError("station must have at least one L2 or DCFC port")
        return self

    def ports(self, port_type: PortType) -> int:
        return self.l2_ports if PortType(port_type) is PortType.L2 else self.dcfc_ports


class Snapshot(BaseModel):
    """The stations open on or before `cutoff`."""

    model_config = ConfigDict(frozen=True)

    cutoff: date
    stations: Tuple[ChargingStation, ...] = ()

    _ports: Dict[str, Tuple[int, int]] = PrivateAttr(default_factory=dict)

    def model_post_init(self, __context: object) -> None:
        self._ports = {s.station_id: (s.l2_ports, s.dcfc_ports) for s in self.stations}

    @property
    def station_ids(self) -> FrozenSet[str]:
        return frozenset(self._ports)

    def __contains__(self, station_id: object) -> bool:
        return station_id in self._ports

    def __len__(self) -> int:
        return len(self.stations)

    def ports_of(self, station_id: str, port_type: PortType) -> int:
        """Port count of a station in this snapshot; 0 when it is not open yet."""
        counts = self._ports.get(station_id)
        if counts is None:
            return 0
        return counts[0] if PortType(port_type) is PortType.L2 else counts[1]

    def total_ports(self, port_type: PortType) -> int:
        idx = 0 if PortType(port_type) is PortType.L2 else 1
        return sum(c[idx] for c in self._ports.values())
