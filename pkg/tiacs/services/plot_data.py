# tiacs/services/plot_data.py
"""
Plot-ready CSV tables derived from a finished run. Data only; any plotting
tool can render them.

    choropleth.csv               geoid, params, mean_hours, mean_ports (all|all segment)
    breakdown.csv                params + segment: mean and quartiles of tract means
    gini_trend.csv               params + segment: tract-level Gini per cutoff
    cdf_by_group.csv             tract_set (all|mud), params + segment, group, value, cum_frac
    regression_coefficients.csv  copy of regression.csv with labels
    lorenz.csv                   params, pop_share, value_share
    sensitivity.csv              port_type, cutoff, d_m, mean hours/ports
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd

from tiacs.core.errors import PreconditionError
from tiacs.schemas.accessibility import ALL
from tiacs.schemas.spatial import NO_DOMINANT, TractRecord
from tiacs.services.spatial_stats import PARAM_COLUMNS, gini, group_labels, lorenz_curve, mud_filter

logger = logging.getLogger(__name__)

PLOT_DIR = "plot_data"
BASE_PARAMS = ["port_type", "d_m", "cutoff"]


class MissingArtifactError(PreconditionError):
    """An upstream artifact needed for plot data is absent."""


def _read(run_dir: Path, name: str, required: bool = True) -> Optional[pd.DataFrame]:
    path = run_dir / name
    if not path.exists():
        if required:
            raise MissingArtifactError(f"missing upstream artifact {name} in {run_dir}")
        return None
    return pd.read_csv(path, dtype={"geoid": str, "person_id": str, "cutoff": str})


def _overall(frame: pd.DataFrame) -> pd.DataFrame:
    return frame[(frame["kind_filter"] == ALL) & (frame["tou_filter"] == ALL)]


def choropleth_table(tract_stats: pd.DataFrame) -> pd.DataFrame:
    cols = ["geoid"] + BASE_PARAMS + ["mean_hours", "mean_ports"]
    return _overall(tract_stats)[cols].sort_values(BASE_PARAMS + ["geoid"]).reset_index(drop=True)


def breakdown_table(tract_stats: pd.DataFrame) -> pd.DataFrame:
    """Quartiles and means over tract-level means, per parameter combination and segment."""
    rows = []
    for key, grp in tract_stats.groupby(PARAM_COLUMNS, sort=True):
        hours = grp["mean_hours"].to_numpy(dtype=float)
        q25, q50, q75 = np.quantile(hours, [0.25, 0.5, 0.75])
        rows.append(
            dict(
                zip(PARAM_COLUMNS, key),
                n_tracts=len(grp),
                mean_hours=float(hours.mean()),
                q25_hours=float(q25),
                median_hours=float(q50),
                q75_hours=float(q75),
                mean_ports=float(grp["mean_ports"].mean()),
            )
        )
    return pd.DataFrame(
        rows,
        columns=PARAM_COLUMNS + ["n_tracts", "mean_hours", "q25_hours", "median_hours", "q75_hours", "mean_ports"],
    )


def gini_trend_table(tract_stats: pd.DataFrame) -> pd.DataFrame:
    rows = []
    for key, grp in tract_stats.groupby(PARAM_COLUMNS, sort=True):
        rows.append(
            dict(
                zip(PARAM_COLUMNS, key),
                n_tracts=len(grp),
                gini_hours=gini(grp["mean_hours"].to_numpy(dtype=float)),
                gini_ports=gini(grp["mean_ports"].to_numpy(dtype=float)),
            )
        )
    return pd.DataFrame(rows)


def cdf_by_group_table(tract_stats: pd.DataFrame, tracts: Sequence[TractRecord]) -> pd.DataFrame:
    """
    Empirical CDF of tract mean hours per dominant group and segment, once
    over every tract (`tract_set=all`) and once over multi-unit tracts only
    (`tract_set=mud`).
    """
    labels = group_labels(tracts)
    mud = {tr.geoid for tr in mud_filter(tracts)}
    frame = tract_stats.assign(group=lambda f: f["geoid"].map(labels).fillna(NO_DOMINANT))
    keys = PARAM_COLUMNS + ["group"]
    rows = []
    for tract_set, subset in (("all", frame), ("mud", frame[frame["geoid"].isin(mud)])):
        for key, grp in subset.groupby(keys, sort=True):
            values = np.sort(grp["mean_hours"].to_numpy(dtype=float))
            n = values.size
            for i, v in enumerate(values):
                rows.append(dict(zip(keys, key), tract_set=tract_set, value=float(v), cum_frac=(i + 1) / n))
    return pd.DataFrame(rows, columns=["tract_set"] + keys + ["value", "cum_frac"])


def lorenz_table(tract_stats: pd.DataFrame) -> pd.DataFrame:
    rows = []
    for key, grp in _overall(tract_stats).groupby(BASE_PARAMS, sort=True):
        pop, share = lorenz_curve(grp["mean_hours"].to_numpy(dtype=float))
        for p, s in zip(pop, share):
            rows.append(dict(zip(BASE_PARAMS, key), pop_share=float(p), value_share=float(s)))
    return pd.DataFrame(rows, columns=BASE_PARAMS + ["pop_share", "value_share"])


def sensitivity_table(results: pd.DataFrame) -> pd.DataFrame:
    frame = _overall(results)
    out = (
        frame.groupby(["port_type", "cutoff", "d_m"], sort=True)
        .agg(mean_hours=("hours_per_day", "mean"), mean_ports=("ports_avg", "mean"), n=("person_id", "size"))
        .reset_index()
    )
    return out


def emit_plot_data(
    run_dir: Union[str, Path],
    tracts: Sequence[TractRecord],
    out_dir: Optional[Union[str, Path]] = None,
) -> Dict[str, Path]:
    """
    Write every plot table from the run's `results.csv`, `tract_stats.csv`
    and (when present) `regression.csv`. Returns name -> path.
    """
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir / PLOT_DIR
    results = _read(run_dir, "results.csv")
    tract_stats = _read(run_dir, "tract_stats.csv")
    regression = _read(run_dir, "regression.csv", required=False)
    assert results is not None and tract_stats is not None

    tables = {
        "choropleth": choropleth_table(tract_stats),
        "breakdown": breakdown_table(tract_stats),
        "gini_trend": gini_trend_table(tract_stats),
        "cdf_by_group": cdf_by_group_table(tract_stats, tracts),
        "lorenz": lorenz_table(tract_stats),
        "sensitivity": sensitivity_table(results),
    }
    if regression is not None:
        tables["regression_coefficients"] = regression

    out.mkdir(parents=True, exist_ok=True)
    paths: Dict[str, Path] = {}
    for name, frame in tables.items():
        path = out / f"{name}.csv"
        frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
        paths[name] = path
    logger.info("wrote %d plot tables", len(paths), extra={"path": str(out)})
    return paths
