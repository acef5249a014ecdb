# tiacs/services/pipeline.py
"""
End-to-end run: load -> snapshots -> proximity table (cached) -> route and
repair -> batch TI-acs -> tract aggregation -> statistics -> regression ->
plot data, with a manifest of inputs, outputs, hashes and stage timings.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from tiacs import __version__
from tiacs.core.config import get_settings
from tiacs.core.errors import PreconditionError, RankDeficiencyError, StageError
from tiacs.core.utils import hash_file, hash_parts, resolve_workers
from tiacs.logging_setup import stage_timer
from tiacs.schemas.inventory import ChargingStation, Snapshot
from tiacs.schemas.run import RunConfig
from tiacs.schemas.spatial import TractRecord
from tiacs.schemas.trajectory import PersonRecord, RepairReport, Trajectory
from tiacs.services.accessibility import (
    DEBUG_COLUMNS,
    RESULT_COLUMNS,
    batch_compute,
    segments_default,
    ti_acs,
    ti_acs_oracle,
)
from tiacs.services.charging_inventory import (
    ProximityTable,
    build_proximity_table,
    build_snapshot,
    inventory_trend,
    load_proximity_table,
    load_stations,
    save_proximity_table,
)
from tiacs.services.plot_data import PLOT_DIR, emit_plot_data
from tiacs.services.road_network import RoadNetwork, load_network
from tiacs.services.spatial_stats import (
    aggregate_by_tract,
    assign_homes,
    disparity_regression,
    distribution_table,
    load_tracts,
    mud_filter,
    regression_frame,
    select,
)
from tiacs.services.trajectory import ingest_raw, route_and_repair, write_trajectories

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
REGRESSION_COLUMNS = [
    "port_type", "d_m", "cutoff", "segment", "income_degree", "n", "r2",
    "term", "beta", "se", "ci_lo", "ci_hi", "p", "significant", "ci_method",
]


def table_cache_key(
    cfg: RunConfig, stations: Sequence[ChargingStation], stay_nodes: Sequence[int]
) -> str:
    """Network file hashes, charger node set, stay node set and radius."""
    return hash_parts(
        hash_file(cfg.nodes),
        hash_file(cfg.edges),
        sorted((s.station_id, s.node) for s in stations),
        sorted(set(int(n) for n in stay_nodes)),
        float(cfg.radius_m),
    )


def write_json(data: Any, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def write_frame(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")


@dataclass
class PipelineRun:
    """State of one run; each stage fills in what the next one needs."""

    cfg: RunConfig
    workers: int = 1
    timings: Dict[str, float] = field(default_factory=dict)
    written: List[Path] = field(default_factory=list)
    counts: Dict[str, Any] = field(default_factory=dict)

    net: Optional[RoadNetwork] = None
    stations: List[ChargingStation] = field(default_factory=list)
    persons: List[PersonRecord] = field(default_factory=list)
    tracts: List[TractRecord] = field(default_factory=list)
    snapshots: List[Snapshot] = field(default_factory=list)
    table: Optional[ProximityTable] = None
    trajectories: List[Trajectory] = field(default_factory=list)
    report: Optional[RepairReport] = None
    results: Optional[pd.DataFrame] = None
    tract_stats: Optional[pd.DataFrame] = None

    @property
    def out(self) -> Path:
        return self.cfg.output_dir

    def _path(self, name: str) -> Path:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(path)
        return path

    # ---------- stages ----------

    def load(self) -> None:
        cfg = self.cfg
        self.net = load_network(cfg.nodes, cfg.edges)
        self.stations = load_stations(cfg.stations, self.net)
        self.persons = ingest_raw(cfg.trajectories, self.net)
        if cfg.tracts is not None:
            self.tracts = load_tracts(cfg.tracts)
        self.counts.update(
            nodes=len(self.net), stations=len(self.stations), persons=len(self.persons), tracts=len(self.tracts)
        )

    def snapshot(self) -> None:
        self.snapshots = [build_snapshot(self.stations, c) for c in self.cfg.cutoffs]
        write_frame(inventory_trend(self.snapshots), self._path("inventory_trend.csv"))

    def proximity(self) -> None:
        assert self.net is not None
        stay_nodes = [s.node for p in self.persons for s in p.stays if s.node is not None]
        key = table_cache_key(self.cfg, self.stations, stay_nodes)
        cache_dir = Path(get_settings().cache_dir or self.out / ".cache")
        cached = cache_dir / f"proximity_{key[:16]}.csv"
        if self.cfg.use_cache and cached.exists():
            logger.info("proximity table cache hit", extra={"path": str(cached)})
            self.table = load_proximity_table(cached, self.cfg.radius_m)
            self.counts["table_cache"] = "hit"
        else:
            self.table = build_proximity_table(
                self.net, stay_nodes, self.stations, radius=self.cfg.radius_m, workers=self.workers
            )
            if self.cfg.use_cache:
                cache_dir.mkdir(parents=True, exist_ok=True)
                save_proximity_table(self.table, cached)
            self.counts["table_cache"] = "miss"
        self.counts["table_pairs"] = len(self.table)
        save_proximity_table(self.table, self._path("proximity_table.csv"))

    def repair(self) -> None:
        assert self.net is not None
        self.trajectories, self.report = route_and_repair(self.net, self.persons, workers=self.workers)
        write_trajectories(self.trajectories, self._path("processed_trajectories.csv"))
        write_json(
            {**self.report.model_dump(), "donation_share": self.report.donation_share},
            self._path("repair_report.json"),
        )

    def compute(self) -> None:
        assert self.table is not None
        cfg = self.cfg
        self.results = batch_compute(
            self.trajectories,
            self.table,
            self.snapshots,
            cfg.port_types,
            cfg.thresholds,
            segments=cfg.segment_specs(),
            schedule=cfg.schedule(),
            normalization=cfg.normalization,
            workers=self.workers,
        )
        columns = DEBUG_COLUMNS if cfg.debug_columns else RESULT_COLUMNS
        write_frame(self.results[columns], self._path("results.csv"))
        self.counts["results"] = len(self.results)

    def aggregate(self) -> None:
        assert self.results is not None
        homes = assign_homes({t.person_id: t.home for t in self.trajectories}, self.tracts)
        self.tract_stats, unassigned = aggregate_by_tract(self.results, homes)
        self.counts["unassigned_persons"] = unassigned
        write_frame(self.tract_stats, self._path("tract_stats.csv"))

    def stats(self) -> None:
        assert self.tract_stats is not None
        write_frame(distribution_table(self.tract_stats, self.tracts), self._path("distribution_stats.csv"))

    def regress(self) -> None:
        """One regression per (port type, threshold, cutoff, segment, income degree)."""
        assert self.tract_stats is not None
        tracts = mud_filter(self.tracts) if self.cfg.mud_only else self.tracts
        segments = sorted(set(zip(self.tract_stats["kind_filter"], self.tract_stats["tou_filter"])))
        frames = []
        skipped = 0
        for pt in self.cfg.port_types:
            for d in self.cfg.thresholds:
                for cutoff in self.cfg.cutoffs:
                    for kind, tou in segments:
                        segment = f"{kind}|{tou}"
                        subset = select(self.tract_stats, pt.value, d, cutoff.isoformat(), kind, tou)
                        for degree in self.cfg.income_degrees:
                            try:
                                result = disparity_regression(
                                    subset, tracts, income_degree=degree, drop_empty_groups=True
                                )
                            except (RankDeficiencyError, PreconditionError) as exc:
                                skipped += 1
                                logger.warning(
                                    "regression skipped for %s d=%g %s %s degree %d: %s",
                                    pt.value, d, cutoff.isoformat(), segment, degree, exc,
                                )
                                continue
                            frames.append(
                                regression_frame(
                                    result,
                                    port_type=pt.value,
                                    d_m=d,
                                    cutoff=cutoff.isoformat(),
                                    segment=segment,
                                    income_degree=degree,
                                    n=result.n,
                                    r2=result.r2,
                                )
                            )
        self.counts["regressions_skipped"] = skipped
        frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=REGRESSION_COLUMNS)
        write_frame(frame[REGRESSION_COLUMNS], self._path("regression.csv"))

    def plots(self) -> None:
        paths = emit_plot_data(self.out, self.tracts, self.out / PLOT_DIR)
        self.written.extend(paths.values())

    # ---------- driver ----------

    def stages(self) -> List[tuple]:
        stages = [
            ("load", self.load),
            ("snapshot", self.snapshot),
            ("proximity_table", self.proximity),
            ("route_repair", self.repair),
            ("ti_acs", self.compute),
        ]
        if self.cfg.tracts is not None:
            stages += [
                ("aggregate", self.aggregate),
                ("statistics", self.stats),
                ("regression", self.regress),
                ("plot_data", self.plots),
            ]
        return stages

    def manifest(self) -> Dict[str, Any]:
        cfg = self.cfg
        inputs = {
            name: {"path": str(p), "sha256": hash_file(p)}
            for name, p in (
                ("nodes", cfg.nodes),
                ("edges", cfg.edges),
                ("stations", cfg.stations),
                ("trajectories", cfg.trajectories),
                ("tracts", cfg.tracts),
                ("tou_schedule", cfg.tou_schedule),
            )
            if p is not None
        }
        outputs = {
            str(p.relative_to(self.out)): hash_file(p) for p in sorted(set(self.written)) if p.exists()
        }
        return {
            "version": __version__,
            "created_at": datetime.now(timezone.utc).isoformat(),
            "config": json.loads(cfg.model_dump_json()),
            "workers": self.workers,
            "inputs": inputs,
            "outputs": outputs,
            "timings_s": self.timings,
            "counts": self.counts,
        }

    def run(self) -> Dict[str, Any]:
        self.out.mkdir(parents=True, exist_ok=True)
        stage = "setup"
        try:
            for stage, fn in self.stages():
                with stage_timer(stage, self.timings, logger):
                    fn()
        except Exception as exc:
            self.cleanup()
            raise StageError(stage, exc) from exc
        manifest = self.manifest()
        write_json(manifest, self.out / MANIFEST)
        logger.info("run complete", extra={"path": str(self.out), "workers": self.workers})
        return manifest

    def cleanup(self) -> None:
        """Remove every output this run wrote."""
        for path in self.written:
            if path.exists():
                path.unlink()
        plot_dir = self.out / PLOT_DIR
        if plot_dir.is_dir() and not any(plot_dir.iterdir()):
            plot_dir.rmdir()


def run_pipeline(cfg: RunConfig) -> Dict[str, Any]:
    """Execute all stages; returns the manifest. Raises StageError on failure."""
    run = PipelineRun(cfg=cfg, workers=resolve_workers(cfg.workers))
    return run.run()


def verify_sample(cfg: RunConfig, sample: int = 20) -> Dict[str, Any]:
    """
    Check batch results, stay-level TI-acs and the minute oracle against each
    other for an evenly spaced sample of persons on every parameter
    combination. Returns counts and the list of mismatches.
    """
    net = load_network(cfg.nodes, cfg.edges)
    stations = load_stations(cfg.stations, net)
    persons = ingest_raw(cfg.trajectories, net)
    if sample > 0 and len(persons) > sample:
        step = len(persons) / sample
        persons = [persons[int(i * step)] for i in range(sample)]
    trajectories, _ = route_and_repair(net, persons, workers=resolve_workers(cfg.workers))
    stay_nodes = [s.node for t in trajectories for s in t.stays]
    table = build_proximity_table(net, stay_nodes, stations, radius=cfg.radius_m)
    snapshots = [build_snapshot(stations, c) for c in cfg.cutoffs]
    schedule = cfg.schedule()
    segments = cfg.segment_specs() or segments_default(schedule)

    batch = batch_compute(
        trajectories, table, snapshots, cfg.port_types, cfg.thresholds,
        segments=segments, schedule=schedule, normalization=cfg.normalization,
    )
    batch_rows = {
        (r.person_id, r.port_type, float(r.d_m), r.cutoff, r.kind_filter, r.tou_filter): (r.hours_per_day, r.ports_avg)
        for r in batch.itertuples(index=False)
    }

    mismatches: List[str] = []
    checked = 0
    for traj in trajectories:
        for snap in snapshots:
            for pt in cfg.port_types:
                for d in cfg.thresholds:
                    for seg in segments:
                        args = (traj, table, snap, pt, d, seg, schedule, cfg.normalization)
                        fast = ti_acs(*args)
                        slow = ti_acs_oracle(*args)
                        key = (traj.person_id, pt.value, float(d), snap.cutoff.isoformat(), seg.kind_label, seg.tou_label)
                        checked += 1
                        got = (fast.hours_per_day, fast.ports_avg)
                        if got != (slow.hours_per_day, slow.ports_avg):
                            mismatches.append(f"{key}: ti_acs {got} != oracle {(slow.hours_per_day, slow.ports_avg)}")
                        elif batch_rows.get(key) != got:
                            mismatches.append(f"{key}: batch {batch_rows.get(key)} != ti_acs {got}")
    logger.info(
        "verified %d combinations for %d persons: %d mismatches",
        checked, len(trajectories), len(mismatches),
        extra={"rows": checked},
    )
    return {"persons": len(trajectories), "checked": checked, "mismatches": mismatches}
