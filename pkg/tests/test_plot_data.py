# tests/test_plot_data.py
import numpy as np
import pandas as pd
import pytest

from tiacs.schemas.spatial import TractRecord
from tiacs.services.plot_data import breakdown_table, cdf_by_group_table
from tiacs.services.spatial_stats import aggregate_by_tract

SQUARE = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.0, 0.0)]


def tract(geoid, mud, **shares):
    values = {"pct_white": 20.0, "pct_black": 20.0, "pct_asian": 20.0, "pct_hispanic": 20.0}
    values.update(shares)
    return TractRecord(geoid=geoid, polygons=[[SQUARE]], population=1000, median_income=60000.0, pct_mud=mud, **values)


def results(rows, kind="all", tou="all"):
    """Results frame for one parameter combination from (person_id, hours) pairs."""
    return pd.DataFrame(
        [
            {
                "person_id": pid,
                "port_type": "L2",
                "d_m": 1000.0,
                "cutoff": "2023-12-31",
                "kind_filter": kind,
                "tou_filter": tou,
                "hours_per_day": hours,
                "ports_avg": 1.0,
            }
            for pid, hours in rows
        ]
    )


class TestBreakdown:
    """Breakdown quartiles summarize tract means, not individuals."""

    def test_quartiles_over_tract_means(self):
        # four zero-hour residents in A outweigh B and C at person level
        person_rows = [("a1", 0.0), ("a2", 0.0), ("a3", 0.0), ("a4", 0.0), ("b1", 4.0), ("c1", 8.0)]
        homes = {"a1": "A", "a2": "A", "a3": "A", "a4": "A", "b1": "B", "c1": "C"}
        stats, _ = aggregate_by_tract(results(person_rows), homes)

        table = breakdown_table(stats)
        assert len(table) == 1
        row = table.iloc[0]
        person_median = float(np.median([h for _, h in person_rows]))
        assert person_median == 0.0
        assert row["n_tracts"] == 3
        assert row["median_hours"] == pytest.approx(4.0)
        assert row["q25_hours"] == pytest.approx(2.0)
        assert row["q75_hours"] == pytest.approx(6.0)
        assert row["mean_hours"] == pytest.approx(4.0)
        assert row["median_hours"] != person_median

    def test_one_row_per_segment(self):
        frame = pd.concat(
            [results([("p1", 1.0)]), results([("p1", 0.5)], kind="home"), results([("p1", 0.25)], tou="peak")]
        )
        stats, _ = aggregate_by_tract(frame, {"p1": "A"})
        table = breakdown_table(stats)
        segments = set(zip(table["kind_filter"], table["tou_filter"]))
        assert segments == {("all", "all"), ("home", "all"), ("all", "peak")}


class TestCdfByGroup:
    """Dominant-group CDFs over all tracts and over multi-unit tracts."""

    @pytest.fixture
    def tracts(self):
        return [
            tract("A", mud=80.0, pct_white=60.0, pct_black=10.0),
            tract("B", mud=30.0, pct_white=60.0, pct_black=10.0),
            tract("C", mud=50.1, pct_hispanic=55.0, pct_white=10.0),
        ]

    @pytest.fixture
    def stats(self):
        homes = {"a": "A", "b": "B", "c": "C"}
        frame = pd.concat(
            [
                results([("a", 1.0), ("b", 3.0), ("c", 2.0)]),
                results([("a", 0.5), ("b", 1.5), ("c", 0.75)], kind="home"),
            ]
        )
        stats, _ = aggregate_by_tract(frame, homes)
        return stats

    def test_mud_set_excludes_single_unit_tracts(self, stats, tracts):
        table = cdf_by_group_table(stats, tracts)
        mud_white = table[(table["tract_set"] == "mud") & (table["group"] == "white")]
        all_white = table[(table["tract_set"] == "all") & (table["group"] == "white")]
        # B (30% multi-unit) shows up only in the unfiltered set
        assert sorted(all_white["value"]) == [0.5, 1.0, 1.5, 3.0]
        assert sorted(mud_white["value"]) == [0.5, 1.0]
        assert 3.0 not in set(mud_white["value"])
        assert set(table[(table["tract_set"] == "mud")]["group"]) == {"white", "hispanic"}

    def test_one_curve_per_segment(self, stats, tracts):
        table = cdf_by_group_table(stats, tracts)
        allset = table[(table["tract_set"] == "all") & (table["group"] == "white")]
        by_segment = allset.groupby(["kind_filter", "tou_filter"])
        assert set(by_segment.groups) == {("all", "all"), ("home", "all")}
        for _, grp in by_segment:
            assert grp["cum_frac"].tolist() == [0.5, 1.0]
        home = allset[allset["kind_filter"] == "home"]
        assert home["value"].tolist() == [0.5, 1.5]
