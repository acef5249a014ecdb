# tiacs/schemas/run.py
from __future__ import annotations

import json
from datetime import date
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from dotenv import dotenv_values
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from tiacs.core.config import get_settings
from tiacs.core.errors import InputValidationError, RowError
from tiacs.schemas.accessibility import SegmentSpec, TouSchedule
from tiacs.schemas.inventory import PortType

STANDARD_THRESHOLDS_M = (500.0, 1000.0, 2000.0, 3000.0)
LIST_FIELDS = ("cutoffs", "thresholds", "port_types", "segments", "income_degrees")


def _split(v: Any) -> Any:
    if isinstance(v, str):
        return [p.strip() for p in v.split(",") if p.strip()]
    return v


def validate_thresholds(thresholds: List[float], radius_m: float, allow_custom: bool = False) -> None:
    """Raise ValueError unless every threshold is positive, within the radius, and standard (or allowed)."""
    for d in thresholds:
        if d <= 0:
            raise ValueError(f"threshold must be positive, got {d}")
        if d > radius_m:
            raise ValueError(f"threshold {d} m exceeds the proximity radius {radius_m} m")
        if not allow_custom and d not in STANDARD_THRESHOLDS_M:
            raise ValueError(
                f"threshold {d} m is not one of {', '.join(f'{t:g}' for t in STANDARD_THRESHOLDS_M)}; "
                "pass --allow-custom-threshold to use it"
            )


class RunConfig(BaseModel):
    """Everything one pipeline run needs; file values are overridden by CLI flags."""

    nodes: Path
    edges: Path
    stations: Path
    trajectories: Path
    tracts: Optional[Path] = None
    output_dir: Path = Path("out")

    cutoffs: List[date] = Field(default_factory=lambda: [date(2023, 12, 31)], min_length=1)
    thresholds: List[float] = Field(default_factory=lambda: [1000.0], min_length=1)
    port_types: List[PortType] = Field(default_factory=lambda: [PortType.L2, PortType.DCFC], min_length=1)
    tou_schedule: Optional[Path] = Field(default=None, description="JSON file of period -> [[start_min, end_min], ...]")
    segments: List[str] = Field(default_factory=list, description="'kinds|periods' labels; empty means defaults")
    income_degrees: List[int] = Field(default_factory=lambda: [0, 1])
    mud_only: bool = False

    radius_m: float = Field(default_factory=lambda: get_settings().proximity_radius_m, gt=0)
    allow_custom_threshold: bool = False
    workers: int = Field(default=1, ge=1)
    use_cache: bool = True
    debug_columns: bool = False
    normalization: Literal["horizon", "stay_time"] = "horizon"

    @field_validator(*LIST_FIELDS, mode="before")
    @classmethod
    def _comma_lists(cls, v: Any) -> Any:
        return _split(v)

    @field_validator("income_degrees")
    @classmethod
    def _degrees(cls, v: List[int]) -> List[int]:
        bad = [d for d in v if not 0 <= d <= 4]
        if bad:
            raise ValueError(f"income degrees must be in 0..4, got {bad}")
        return sorted(set(v))

    @field_validator("segments")
    @classmethod
    def _segments_parse(cls, v: List[str]) -> List[str]:
        for label in v:
            kinds, _, periods = label.partition("|")
            SegmentSpec.parse(kinds or "all", periods or "all")
        return v

    @model_validator(mode="after")
    def _thresholds_allowed(self) -> "RunConfig":
        validate_thresholds(self.thresholds, self.radius_m, self.allow_custom_threshold)
        self.cutoffs = sorted(set(self.cutoffs))
        self.thresholds = sorted(set(self.thresholds))
        return self

    def schedule(self) -> TouSchedule:
        if self.tou_schedule is None:
            return TouSchedule()
        with open(self.tou_schedule, encoding="utf-8") as fh:
            raw = json.load(fh)
        return TouSchedule(periods={k: tuple(tuple(w) for w in ws) for k, ws in raw.items()})

    def segment_specs(self) -> Optional[List[SegmentSpec]]:
        if not self.segments:
            return None
        out = []
        for label in self.segments:
            kinds, _, periods = label.partition("|")
            out.append(SegmentSpec.parse(kinds or "all", periods or "all"))
        return out


def load_run_config(
    path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """
    Build a RunConfig from a `key=value` file (comments and quoting as in a
    .env file) plus overrides; overrides that are None are ignored. Relative
    paths in the file resolve against the file's directory.
    """
    values: Dict[str, Any] = {}
    if path is not None:
        base = Path(path).resolve().parent
        for key, raw in dotenv_values(path).items():
            if raw is None or raw == "":
                continue
            key = key.strip().lower().replace("-", "_")
            if key in {"nodes", "edges", "stations", "trajectories", "tracts", "output_dir", "tou_schedule"}:
                p = Path(raw)
                raw = str(p if p.is_absolute() else base / p)
            values[key] = raw
    for key, val in (overrides or {}).items():
        if val is None or (isinstance(val, (list, tuple)) and not val):
            continue
        values[key] = val
    try:
        return RunConfig(**values)
    except ValidationError as exc:
        errors = [
            RowError(None, ".".join(str(p) for p in e.get("loc", ())) or "config", e.get("msg", "invalid"))
            for e in exc.errors()
        ]
        raise InputValidationError(f"invalid run configuration{f' in {path}' if path else ''}", errors) from exc


class SyntheticScenario(BaseModel):
    """Seeded parameters for the synthetic input set."""

    seed: int = 1

    # grid road network
    rows: int = Field(default=12, ge=2)
    cols: int = Field(default=12, ge=2)
    edge_length_m: float = Field(default=400.0, gt=0)
    speed_kmh: float = Field(default=40.0, gt=0)
    length_jitter: float = Field(default=0.1, ge=0.0, le=1.0)
    one_way_fraction: float = Field(default=0.05, ge=0.0, le=0.5)
    island_nodes: int = Field(default=2, ge=0, description="Nodes with no edges; trips there need the fallback")
    lon0: float = Field(default=-118.30, ge=-180.0, le=180.0)
    lat0: float = Field(default=34.00, ge=-85.0, le=85.0)

    # stations
    stations: int = Field(default=30, ge=0)
    open_year_min: int = Field(default=2015, ge=1990)
    open_year_max: int = Field(default=2023, le=2099)
    max_l2_ports: int = Field(default=6, ge=1)
    dcfc_fraction: float = Field(default=0.25, ge=0.0, le=1.0)

    # persons
    persons: int = Field(default=50, ge=1)
    non_commuter_fraction: float = Field(default=0.4, ge=0.0, le=1.0)
    other_visits_per_day: float = Field(default=0.8, ge=0.0, le=6.0)
    long_trip_fraction: float = Field(default=0.05, ge=0.0, le=1.0)

    # tracts
    tract_rows: int = Field(default=3, ge=1)
    tract_cols: int = Field(default=3, ge=1)
    missing_income_fraction: float = Field(default=0.0, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _feasible(self) -> "SyntheticScenario":
        if self.open_year_min > self.open_year_max:
            raise ValueError("open_year_min must not exceed open_year_max")
        if self.tract_rows > self.rows - 1 or self.tract_cols > self.cols - 1:
            raise ValueError("tract grid cannot be finer than the road grid")
        return self
