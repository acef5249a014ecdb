# tiacs/services/spatial_stats.py
"""
Census-tract assignment, tract-level aggregation, inequality statistics and
the dominant-group disparity regression.
"""
from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import shapely
from pydantic import ValidationError
from scipy import linalg
from scipy.stats import t as student_t
from shapely.geometry import Point
from shapely.strtree import STRtree

from tiacs.core.errors import ParseError, PreconditionError, RankDeficiencyError
from tiacs.core.utils import RowErrorCollector
from tiacs.schemas.spatial import (
    GROUP_FIELDS,
    NO_DOMINANT,
    CoefficientEstimate,
    DistributionStats,
    DominantGroup,
    RegressionResult,
    TractRecord,
)

logger = logging.getLogger(__name__)

PARAM_COLUMNS = ["port_type", "d_m", "cutoff", "kind_filter", "tou_filter"]
TRACT_STATS_COLUMNS = ["geoid"] + PARAM_COLUMNS + [
    "n",
    "mean_hours",
    "mean_ports",
    "p10_hours",
    "median_hours",
]
DOMINANT_SHARE = 40.0
MUD_SHARE = 50.0
MAX_INCOME_DEGREE = 4
GROUP_TERMS = [g.value for g in DominantGroup]


# ---------- tracts ----------


def _rings(geometry: dict) -> List[List[list]]:
    kind = geometry.get("type")
    coords = geometry.get("coordinates")
    if kind == "Polygon":
        return [coords]
    if kind == "MultiPolygon":
        return list(coords)
    raise ValueError(f"unsupported geometry type {kind!r}")


def load_tracts(path: Union[str, Path]) -> List[TractRecord]:
    """
    Read a GeoJSON FeatureCollection of tracts (Polygon or MultiPolygon).
    Rings must be closed; every bad feature is reported together.
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(str(path), exc.lineno, f"invalid JSON: {exc.msg}") from exc
    if doc.get("type") != "FeatureCollection":
        raise ParseError(str(path), 1, "expected a GeoJSON FeatureCollection")

    errors = RowErrorCollector(str(path))
    tracts: List[TractRecord] = []
    seen = set()
    for i, feature in enumerate(doc.get("features", [])):
        props = dict(feature.get("properties") or {})
        try:
            polygons = [
                [[(float(x), float(y)) for x, y, *_ in ring] for ring in poly]
                for poly in _rings(feature.get("geometry") or {})
            ]
            tract = TractRecord(polygons=polygons, **{**props, "geoid": str(props.get("geoid", ""))})
        except ValidationError as exc:
            for err in exc.errors():
                loc = ".".join(str(p) for p in err.get("loc", ())) or "feature"
                errors.add_error(None, f"features[{i}].{loc}", err.get("msg", "invalid value"))
            continue
        except (TypeError, ValueError) as exc:
            errors.add_error(None, f"features[{i}].geometry", str(exc))
            continue
        if tract.geoid in seen:
            errors.add_error(None, f"features[{i}].geoid", f"duplicate geoid {tract.geoid}")
            continue
        seen.add(tract.geoid)
        tracts.append(tract)
    errors.raise_if_invalid("tract features")
    logger.info("loaded %d tracts", len(tracts), extra={"path": str(path), "rows": len(tracts)})
    return tracts


def write_tracts(tracts: Iterable[TractRecord], path: Union[str, Path]) -> None:
    features = []
    for tr in tracts:
        props = tr.model_dump(exclude={"polygons"}, exclude_none=True)
        if len(tr.polygons) == 1:
            geometry = {"type": "Polygon", "coordinates": [[list(p) for p in r] for r in tr.polygons[0]]}
        else:
            geometry = {
                "type": "MultiPolygon",
                "coordinates": [[[list(p) for p in r] for r in poly] for poly in tr.polygons],
            }
        features.append({"type": "Feature", "properties": props, "geometry": geometry})
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh, indent=1)


class TractIndex:
    """
    R-tree over tract geometries. A point on a shared edge (or vertex)
    belongs to the covering tract with the smallest geoid.
    """

    def __init__(self, tracts: Sequence[TractRecord]):
        self.tracts = sorted(tracts, key=lambda tr: tr.geoid)
        self.geoids = np.array([tr.geoid for tr in self.tracts], dtype=object)
        self.geoms = np.array([tr.geometry for tr in self.tracts], dtype=object)
        self.tree = STRtree(list(self.geoms))

    def assign(self, lon: float, lat: float) -> Optional[str]:
        pt = Point(lon, lat)
        for j in sorted(int(k) for k in self.tree.query(pt)):
            if self.geoms[j].covers(pt):
                return str(self.geoids[j])
        return None

    def assign_many(self, lons: Sequence[float], lats: Sequence[float]) -> List[Optional[str]]:
        points = shapely.points(np.asarray(lons, dtype=float), np.asarray(lats, dtype=float))
        out: List[Optional[str]] = [None] * len(points)
        if len(points) == 0 or len(self.tracts) == 0:
            return out
        src, cand = self.tree.query(points)
        hit = shapely.covers(self.geoms[cand].astype(object), points[src])
        # tracts are sorted by geoid, so the smallest candidate index wins
        for i, j in sorted(zip(src[hit].tolist(), cand[hit].tolist())):
            if out[i] is None:
                out[i] = str(self.geoids[j])
        return out


def assign_tract(point: Tuple[float, float], tracts: Union[Sequence[TractRecord], TractIndex]) -> Optional[str]:
    """Geoid of the tract containing `point` (lon, lat), or None."""
    index = tracts if isinstance(tracts, TractIndex) else TractIndex(tracts)
    return index.assign(point[0], point[1])


def assign_homes(
    homes: Dict[str, Tuple[float, float]], tracts: Union[Sequence[TractRecord], TractIndex]
) -> Dict[str, Optional[str]]:
    """person_id -> geoid (None when the home lies outside every tract)."""
    index = tracts if isinstance(tracts, TractIndex) else TractIndex(tracts)
    pids = sorted(homes)
    geoids = index.assign_many([homes[p][0] for p in pids], [homes[p][1] for p in pids])
    out = dict(zip(pids, geoids))
    missing = sum(1 for g in geoids if g is None)
    if missing:
        logger.warning("%d homes fall outside every tract", missing, extra={"rows": missing})
    return out


# ---------- aggregation ----------


def aggregate_by_tract(
    results: pd.DataFrame, homes: Dict[str, Optional[str]]
) -> Tuple[pd.DataFrame, int]:
    """
    Per-tract mean, 10th percentile and median of individual results for
    each parameter combination. Persons without a tract are excluded and
    counted in the second return value. Tracts without residents emit nothing.
    """
    if results.empty:
        return pd.DataFrame(columns=TRACT_STATS_COLUMNS), 0
    geoid = results["person_id"].map(homes)
    unassigned_persons = set(results.loc[geoid.isna(), "person_id"])
    frame = results.assign(geoid=geoid).dropna(subset=["geoid"])
    if frame.empty:
        return pd.DataFrame(columns=TRACT_STATS_COLUMNS), len(unassigned_persons)

    grouped = frame.groupby(["geoid"] + PARAM_COLUMNS, sort=True)
    out = grouped.agg(
        n=("person_id", "size"),
        mean_hours=("hours_per_day", "mean"),
        mean_ports=("ports_avg", "mean"),
        p10_hours=("hours_per_day", lambda s: float(np.quantile(s.to_numpy(), 0.1))),
        median_hours=("hours_per_day", lambda s: float(np.quantile(s.to_numpy(), 0.5))),
    ).reset_index()
    if unassigned_persons:
        logger.info(
            "%d persons have no tract and were left out of aggregation",
            len(unassigned_persons),
            extra={"rows": len(unassigned_persons)},
        )
    return out[TRACT_STATS_COLUMNS], len(unassigned_persons)


def select(
    frame: pd.DataFrame,
    port_type: str,
    d_m: float,
    cutoff: str,
    kind_filter: str = "all",
    tou_filter: str = "all",
) -> pd.DataFrame:
    """Rows of one parameter combination."""
    mask = (
        (frame["port_type"] == port_type)
        & (frame["d_m"].astype(float) == float(d_m))
        & (frame["cutoff"].astype(str) == str(cutoff))
        & (frame["kind_filter"] == kind_filter)
        & (frame["tou_filter"] == tou_filter)
    )
    return frame.loc[mask]


# ---------- inequality ----------


def _nonneg(values: Iterable[float]) -> np.ndarray:
    x = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
    if x.size == 0:
        raise PreconditionError("need at least one value")
    if np.any(x < 0):
        raise PreconditionError("values must be non-negative")
    return x


def gini(values: Iterable[float]) -> float:
    """Gini index of non-negative values; 0 when all are zero."""
    x = np.sort(_nonneg(values))
    total = x.sum()
    if total == 0:
        return 0.0
    n = x.size
    ranks = np.arange(1, n + 1, dtype=float)
    return float(np.sum((2.0 * ranks - n - 1.0) * x) / (n * total))


def lorenz_curve(values: Iterable[float]) -> Tuple[np.ndarray, np.ndarray]:
    """(population share, value share), both starting at 0 and ending at 1."""
    x = np.sort(_nonneg(values))
    pop = np.arange(0, x.size + 1, dtype=float) / x.size
    cum = np.concatenate([[0.0], np.cumsum(x)])
    share = cum / cum[-1] if cum[-1] > 0 else pop.copy()
    return pop, share


def distribution_stats(
    values: Iterable[float], weights: Optional[Iterable[float]] = None
) -> DistributionStats:
    """Quartiles (linear interpolation), mean, weighted mean and the empirical CDF."""
    x = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
    if x.size == 0:
        raise PreconditionError("need at least one value")
    if weights is None:
        w = np.ones_like(x)
    else:
        w = np.asarray(list(weights) if not isinstance(weights, np.ndarray) else weights, dtype=float)
        if w.shape != x.shape:
            raise PreconditionError(f"got {w.size} weights for {x.size} values")
        if np.any(w < 0) or w.sum() <= 0:
            raise PreconditionError("weights must be non-negative with a positive sum")
    q25, q50, q75 = np.quantile(x, [0.25, 0.5, 0.75])
    xs = np.sort(x)
    cdf = [(float(v), (i + 1) / x.size) for i, v in enumerate(xs)]
    return DistributionStats(
        n=int(x.size),
        mean=float(x.mean()),
        weighted_mean=float(np.sum(w * x) / np.sum(w)),
        q25=float(q25),
        median=float(q50),
        q75=float(q75),
        cdf=cdf,
        gini=gini(x) if np.all(x >= 0) else None,
    )


def distribution_table(tract_stats: pd.DataFrame, tracts: Sequence[TractRecord]) -> pd.DataFrame:
    """Per parameter combination and metric: tract-level quartiles, means and Gini."""
    population = {tr.geoid: tr.population for tr in tracts}
    rows = []
    if tract_stats.empty:
        return pd.DataFrame(
            columns=PARAM_COLUMNS + ["metric", "n_tracts", "mean", "weighted_mean", "q25", "median", "q75", "gini"]
        )
    for key, grp in tract_stats.groupby(PARAM_COLUMNS, sort=True):
        weights = grp["geoid"].map(population).fillna(0).to_numpy(dtype=float)
        if weights.sum() <= 0:
            weights = np.ones(len(grp))
        for metric, column in (("hours", "mean_hours"), ("ports", "mean_ports")):
            st = distribution_stats(grp[column].to_numpy(dtype=float), weights)
            rows.append(
                dict(
                    zip(PARAM_COLUMNS, key),
                    metric=metric,
                    n_tracts=st.n,
                    mean=st.mean,
                    weighted_mean=st.weighted_mean,
                    q25=st.q25,
                    median=st.median,
                    q75=st.q75,
                    gini=st.gini,
                )
            )
    return pd.DataFrame(rows)


# ---------- disparity ----------


def dominant_group(tract: TractRecord) -> Optional[DominantGroup]:
    """Group with the strictly largest share when that share is at least 40%."""
    shares = sorted(((tract.share(g), g) for g in GROUP_FIELDS), key=lambda s: -s[0])
    top, group = shares[0]
    if top < DOMINANT_SHARE or shares[1][0] == top:
        return None
    return group


def mud_filter(tracts: Iterable[TractRecord]) -> List[TractRecord]:
    """Tracts where more than half of households live in multi-unit structures."""
    return [tr for tr in tracts if tr.pct_mud > MUD_SHARE]


def _dependent_columns(X: np.ndarray, names: Sequence[str]) -> List[str]:
    dependent: List[str] = []
    kept: List[int] = []
    for j in range(X.shape[1]):
        trial = kept + [j]
        if np.linalg.matrix_rank(X[:, trial]) < len(trial):
            dependent.append(names[j])
        else:
            kept.append(j)
    return dependent


def ols_fit(
    y: Sequence[float], X: np.ndarray, names: Optional[Sequence[str]] = None, alpha: float = 0.05
) -> RegressionResult:
    """
    Ordinary least squares through a QR factorization, classic standard
    errors, Student-t confidence intervals and two-sided p-values.
    """
    yv = np.asarray(y, dtype=float)
    Xm = np.asarray(X, dtype=float)
    if Xm.ndim != 2 or Xm.shape[0] != yv.size:
        raise PreconditionError(f"design shape {Xm.shape} does not match {yv.size} observations")
    n, p = Xm.shape
    names = list(names) if names is not None else [f"x{j}" for j in range(p)]
    if n <= p:
        raise PreconditionError(f"need more observations than terms (n={n}, p={p})")
    if np.linalg.matrix_rank(Xm) < p:
        raise RankDeficiencyError(_dependent_columns(Xm, names))

    Q, R = np.linalg.qr(Xm)
    beta = linalg.solve_triangular(R, Q.T @ yv)
    resid = yv - Xm @ beta
    rss = float(resid @ resid)
    df = n - p
    s2 = rss / df
    r_inv = linalg.solve_triangular(R, np.eye(p))
    cov = s2 * (r_inv @ r_inv.T)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    tcrit = float(student_t.ppf(1.0 - alpha / 2.0, df))

    coefs = []
    for name, b, s in zip(names, beta, se):
        if s > 0:
            pval = float(2.0 * student_t.sf(abs(b / s), df))
        else:
            pval = 0.0 if b != 0 else 1.0
        coefs.append(
            CoefficientEstimate(
                term=name,
                beta=float(b),
                se=float(s),
                ci_lo=float(b - tcrit * s),
                ci_hi=float(b + tcrit * s),
                p=min(1.0, max(0.0, pval)),
            )
        )
    tss = float(np.sum((yv - yv.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else (1.0 if rss == 0 else 0.0)
    return RegressionResult(coefficients=coefs, n=n, r2=r2, rss=rss)


def disparity_design(
    tract_stats: pd.DataFrame,
    tracts: Sequence[TractRecord],
    income_degree: int = 1,
    metric: str = "mean_hours",
    drop_empty_groups: bool = False,
) -> Tuple[np.ndarray, np.ndarray, List[str], Dict[str, int]]:
    """
    Response vector, design matrix, term names and drop counts for one
    parameter combination of tract statistics.
    """
    if not 0 <= income_degree <= MAX_INCOME_DEGREE:
        raise PreconditionError(f"income_degree must be in 0..{MAX_INCOME_DEGREE}, got {income_degree}")
    by_geoid = {tr.geoid: tr for tr in tracts}
    values = dict(zip(tract_stats["geoid"].astype(str), tract_stats[metric].astype(float)))
    dropped = {"no_residents": 0, "missing_income": 0}

    ys: List[float] = []
    rows: List[List[float]] = []
    for geoid in sorted(by_geoid):
        tr = by_geoid[geoid]
        if geoid not in values:
            dropped["no_residents"] += 1
            continue
        if income_degree > 0 and tr.median_income is None:
            dropped["missing_income"] += 1
            continue
        group = dominant_group(tr)
        row = [1.0] + [1.0 if group is not None and group.value == g else 0.0 for g in GROUP_TERMS]
        if income_degree > 0:
            log_i = math.log(tr.median_income)  # type: ignore[arg-type]
            row += [log_i ** k for k in range(1, income_degree + 1)]
        ys.append(values[geoid])
        rows.append(row)

    names = ["const"] + GROUP_TERMS + [
        "log_income" if k == 1 else f"log_income^{k}" for k in range(1, income_degree + 1)
    ]
    X = np.asarray(rows, dtype=float).reshape(len(rows), len(names))
    if drop_empty_groups:
        keep = [j for j, name in enumerate(names) if name not in GROUP_TERMS or X[:, j].any()]
        for j, name in enumerate(names):
            if j not in keep:
                logger.info("no tract is dominated by %s; dropping the indicator", name)
        X = X[:, keep]
        names = [names[j] for j in keep]
    if any(dropped.values()):
        logger.warning("regression dropped tracts: %s", dropped)
    return np.asarray(ys, dtype=float), X, names, dropped


def disparity_regression(
    tract_stats: pd.DataFrame,
    tracts: Sequence[TractRecord],
    income_degree: int = 1,
    metric: str = "mean_hours",
    drop_empty_groups: bool = False,
) -> RegressionResult:
    """
    Regress a tract-level metric on dominant-group indicators (tracts without a
    dominant group are the reference) and powers of log median income.
    Callers apply `mud_filter` first when studying multi-unit tracts.
    """
    y, X, names, dropped = disparity_design(
        tract_stats, tracts, income_degree, metric, drop_empty_groups
    )
    result = ols_fit(y, X, names)
    return result.model_copy(update={"dropped": dropped})


def regression_frame(result: RegressionResult, **labels: object) -> pd.DataFrame:
    rows = [
        {
            **labels,
            "term": c.term,
            "beta": c.beta,
            "se": c.se,
            "ci_lo": c.ci_lo,
            "ci_hi": c.ci_hi,
            "p": c.p,
            "significant": c.significant,
            "ci_method": result.ci_method,
        }
        for c in result.coefficients
    ]
    return pd.DataFrame(rows)


def group_labels(tracts: Iterable[TractRecord]) -> Dict[str, str]:
    """geoid -> dominant group name, or 'none'."""
    out = {}
    for tr in tracts:
        g = dominant_group(tr)
        out[tr.geoid] = g.value if g is not None else NO_DOMINANT
    return out
