# tiacs/schemas/spatial.py
from __future__ import annotations

from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator
from shapely.geometry import MultiPolygon, Polygon
from shapely.geometry.base import BaseGeometry

Ring = List[Tuple[float, float]]


class DominantGroup(str, Enum):
    WHITE = "white"
    BLACK = "black"
    ASIAN = "asian"
    HISPANIC = "hispanic"


GROUP_FIELDS: Dict[DominantGroup, str] = {
    DominantGroup.WHITE: "pct_white",
    DominantGroup.BLACK: "pct_black",
    DominantGroup.ASIAN: "pct_asian",
    DominantGroup.HISPANIC: "pct_hispanic",
}
NO_DOMINANT = "none"


def _pct(**kwargs: Any) -> Any:
    return Field(ge=0.0, le=100.0, **kwargs)


class TractRecord(BaseModel):
    """
    A census tract: one or more polygons (first ring outer, the rest holes)
    and the demographic fields used by the disparity analysis.
    """

    model_config = ConfigDict(frozen=True)

    geoid: str = Field(..., min_length=1)
    polygons: List[List[Ring]] = Field(..., min_length=1)
    population: int = Field(..., ge=0)
    pct_hispanic: float = _pct()
    pct_white: float = _pct()
    pct_black: float = _pct()
    pct_asian: float = _pct()
    median_income: Optional[float] = Field(default=None, gt=0.0)
    pct_mud: float = _pct(description="Households in structures with 2+ units")

    # optional ACS extras
    population_18plus: Optional[int] = Field(default=None, ge=0)
    pct_1unit: Optional[float] = _pct(default=None)
    pct_mobile: Optional[float] = _pct(default=None)
    pct_owner: Optional[float] = _pct(default=None)
    pct_renter: Optional[float] = _pct(default=None)

    _geometry: Optional[BaseGeometry] = PrivateAttr(default=None)

    @field_validator("polygons")
    @classmethod
    def _rings_closed(cls, v: List[List[Ring]]) -> List[List[Ring]]:
        for p, rings in enumerate(v):
            if not rings:
                raise ValueError(f"polygon {p} has no rings")
            for r, ring in enumerate(rings):
                if len(ring) < 4:
                    raise ValueError(f"polygon {p} ring {r} needs at least 4 vertices")
                if tuple(ring[0]) != tuple(ring[-1]):
                    raise ValueError(f"polygon {p} ring {r} is not closed")
        return v

    @model_validator(mode="after")
    def _shares(self) -> "TractRecord":
        if self.pct_white + self.pct_black + self.pct_asian > 100.0 + 1e-6:
            raise ValueError("race shares exceed 100%")
        return self

    @property
    def geometry(self) -> BaseGeometry:
        if self._geometry is None:
            polys = [Polygon(rings[0], rings[1:]) for rings in self.polygons]
            self._geometry = polys[0] if len(polys) == 1 else MultiPolygon(polys)
        return self._geometry

    def share(self, group: DominantGroup) -> float:
        return float(getattr(self, GROUP_FIELDS[group]))


class DistributionStats(BaseModel):
    n: int = Field(..., ge=1)
    mean: float
    weighted_mean: float
    q25: float
    median: float
    q75: float
    cdf: List[Tuple[float, float]] = Field(default_factory=list)
    gini: Optional[float] = None


class CoefficientEstimate(BaseModel):
    term: str
    beta: float
    se: float
    ci_lo: float
    ci_hi: float
    p: float = Field(..., ge=0.0, le=1.0)

    @property
    def significant(self) -> bool:
        return self.p < 0.05


class RegressionResult(BaseModel):
    """Classic OLS estimates with Student-t 95% intervals."""

    coefficients: List[CoefficientEstimate]
    n: int
    r2: float
    rss: float
    dropped: Dict[str, int] = Field(default_factory=dict)
    ci_method: str = "classic_ols_t"

    def coef(self, term: str) -> CoefficientEstimate:
        for c in self.coefficients:
            if c.term == term:
                return c
        raise KeyError(term)

    @property
    def terms(self) -> List[str]:
        return [c.term for c in self.coefficients]
