# tests/test_synth.py
import numpy as np
import pandas as pd
import pytest

from tiacs.core.utils import hash_file
from tiacs.schemas.run import SyntheticScenario
from tiacs.services.charging_inventory import load_stations
from tiacs.services.road_network import load_network
from tiacs.services.spatial_stats import assign_homes, load_tracts
from tiacs.services.synth import OUTPUT_FILES, WORKDAYS, synth, synth_persons
from tiacs.services.trajectory import ingest_raw


class TestSynth:
    """Seeded synthetic inputs."""

    def test_same_seed_same_bytes(self, tmp_path, small_scenario):
        first = synth(small_scenario, tmp_path / "a")
        second = synth(small_scenario, tmp_path / "b")
        for name in OUTPUT_FILES:
            assert hash_file(first[name]) == hash_file(second[name])

    def test_other_seed_differs(self, tmp_path, small_scenario):
        first = synth(small_scenario, tmp_path / "a")
        other = synth(small_scenario.model_copy(update={"seed": 8}), tmp_path / "b")
        assert hash_file(first["trajectories"]) != hash_file(other["trajectories"])

    def test_inputs_load_and_agree(self, synthetic_inputs, small_scenario):
        net = load_network(synthetic_inputs["nodes"], synthetic_inputs["edges"])
        assert len(net) == small_scenario.rows * small_scenario.cols + small_scenario.island_nodes
        stations = load_stations(synthetic_inputs["stations"], net)
        assert len(stations) == small_scenario.stations
        persons = ingest_raw(synthetic_inputs["trajectories"], net)
        assert len(persons) == small_scenario.persons
        assert all(p.stays[0].slot == 1 and p.stays[0].kind.value == "home" for p in persons)

        tracts = load_tracts(synthetic_inputs["tracts"])
        assert len(tracts) == small_scenario.tract_rows * small_scenario.tract_cols
        homes = assign_homes({p.person_id: p.home for p in persons}, tracts)
        assert all(g is not None for g in homes.values())

    def test_island_nodes_have_no_edges(self, synthetic_inputs, small_scenario):
        net = load_network(synthetic_inputs["nodes"], synthetic_inputs["edges"])
        grid_nodes = small_scenario.rows * small_scenario.cols
        for n in range(grid_nodes + 1, grid_nodes + small_scenario.island_nodes + 1):
            assert net.graph.degree(n) == 0

    def test_non_commuters_never_work(self, tmp_path, small_scenario):
        scn = small_scenario.model_copy(update={"non_commuter_fraction": 1.0})
        paths = synth(scn, tmp_path / "nc")
        raw = pd.read_csv(paths["trajectories"])
        assert "work" not in set(raw["kind"])

    def test_infeasible_scenario(self):
        with pytest.raises(ValueError):
            SyntheticScenario(rows=3, cols=3, tract_rows=3)
        with pytest.raises(ValueError):
            SyntheticScenario(open_year_min=2020, open_year_max=2018)


class TestStayCounts:
    """Shape of the synthetic weekly stay sequences."""

    @staticmethod
    def counts(**overrides):
        scn = SyntheticScenario(seed=13, persons=300, rows=4, cols=4, **overrides)
        persons = synth_persons(scn, np.random.default_rng(scn.seed), [])
        return np.array([len(p.stays) for p in persons])

    def test_every_visit_returns_home(self):
        counts = self.counts()
        assert (counts % 2 == 1).all()
        assert counts.min() >= 1

    def test_commuters_only(self):
        counts = self.counts(non_commuter_fraction=0.0, other_visits_per_day=0.0)
        assert (counts == 1 + 2 * WORKDAYS).all()

    def test_homebodies(self):
        counts = self.counts(non_commuter_fraction=1.0, other_visits_per_day=0.0)
        assert (counts == 1).all()

    def test_other_visit_rate(self):
        rate = 0.8
        counts = self.counts(non_commuter_fraction=1.0, other_visits_per_day=rate)
        visits_per_day = (counts - 1) / 2 / 7
        assert 0.6 * rate < visits_per_day.mean() < rate + 0.1
        assert counts.max() > counts.min()
