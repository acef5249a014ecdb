#!/usr/bin/env python3
"""
TI-acs command-line interface.

Each pipeline stage can be run on its own from files, or all at once with
`run`. Exit codes: 0 success, 2 invalid input, 3 stage failure.

Usage:
    python cli_manager.py <command> [options]

Examples:
    python cli_manager.py synth --out data/ --seed 1
    python cli_manager.py run --config run.env
    python cli_manager.py run --config run.env --threshold 500 --threshold 2000
    python cli_manager.py verify --config run.env --sample 20
    python cli_manager.py --help
"""

import functools
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence

import click
import pandas as pd

# Add the project directory to Python path
sys.path.insert(0, str(Path(__file__).parent))

from tiacs.core.errors import EXIT_STAGE_FAILURE, EXIT_VALIDATION, InputValidationError, TiacsError
from tiacs.core.utils import resolve_workers
from tiacs.logging_setup import setup_logging
from tiacs.schemas.accessibility import SegmentSpec
from tiacs.schemas.inventory import PortType
from tiacs.schemas.run import STANDARD_THRESHOLDS_M, SyntheticScenario, load_run_config, validate_thresholds
from tiacs.schemas.spatial import TractRecord
from tiacs.services.accessibility import DEBUG_COLUMNS, RESULT_COLUMNS, batch_compute
from tiacs.services.charging_inventory import (
    DEFAULT_RADIUS_M,
    build_proximity_table,
    build_snapshot,
    load_proximity_table,
    load_stations,
    save_proximity_table,
)
from tiacs.services.pipeline import run_pipeline, verify_sample, write_json
from tiacs.services.road_network import load_network
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
from tiacs.services.synth import synth
from tiacs.services.trajectory import ingest_raw, read_trajectories, route_and_repair, write_trajectories

logger = logging.getLogger("tiacs.cli")

PORT_CHOICE = click.Choice([p.value for p in PortType])


def handle_errors(fn: Callable) -> Callable:
    """Map package errors to exit codes with a one-line message on stderr."""

    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return fn(*args, **kwargs)
        except TiacsError as e:
            click.echo(f"❌ {e}", err=True)
            sys.exit(e.exit_code)
        except (ValueError, FileNotFoundError) as e:
            click.echo(f"❌ {e}", err=True)
            sys.exit(EXIT_VALIDATION)

    return wrapper


def _write(frame: pd.DataFrame, path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")


def _segments(labels: Sequence[str]) -> Optional[list]:
    if not labels:
        return None
    out = []
    for label in labels:
        kinds, _, periods = label.partition("|")
        out.append(SegmentSpec.parse(kinds or "all", periods or "all"))
    return out


@click.group()
@click.option('--verbose', '-v', is_flag=True, help='Enable verbose logging')
@click.option('--log-format', type=click.Choice(['json', 'text']), default=None, help='Log line format')
@click.pass_context
def cli(ctx, verbose, log_format):
    """TI-acs: time-integrated EV charging accessibility."""
    setup_logging("DEBUG" if verbose else None, log_format)
    ctx.ensure_object(dict)
    ctx.obj['verbose'] = verbose


@cli.command('synth')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False), help='Output directory')
@click.option('--seed', default=1, show_default=True, help='Random seed')
@click.option('--persons', default=None, type=int, help='Number of persons')
@click.option('--stations', default=None, type=int, help='Number of stations')
@click.option('--rows', default=None, type=int, help='Grid rows')
@click.option('--cols', default=None, type=int, help='Grid columns')
@click.option('--tract-rows', default=None, type=int)
@click.option('--tract-cols', default=None, type=int)
@click.option('--non-commuter-fraction', default=None, type=float)
@click.option('--long-trip-fraction', default=None, type=float)
@handle_errors
def synth_cmd(out_dir, seed, **params):
    """Generate a synthetic, mutually consistent input set."""
    values: Dict[str, Any] = {k: v for k, v in params.items() if v is not None}
    try:
        scn = SyntheticScenario(seed=seed, **values)
    except ValueError as e:
        raise InputValidationError(f"infeasible scenario: {e}") from e
    paths = synth(scn, out_dir)
    for name, path in paths.items():
        click.echo(f"{name}: {path}")


@cli.command('build-table')
@click.option('--nodes', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--edges', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--stations', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--trajectories', required=True, type=click.Path(exists=True, dir_okay=False), help='Raw trajectory CSV')
@click.option('--radius', default=DEFAULT_RADIUS_M, show_default=True, type=float, help='Build radius (m)')
@click.option('--workers', default=None, type=int)
@click.option('--out', required=True, type=click.Path(dir_okay=False))
@handle_errors
def build_table(nodes, edges, stations, trajectories, radius, workers, out):
    """Precompute stay-node to station network distances."""
    net = load_network(nodes, edges)
    inventory = load_stations(stations, net)
    persons = ingest_raw(trajectories, net)
    stay_nodes = [s.node for p in persons for s in p.stays]
    table = build_proximity_table(net, stay_nodes, inventory, radius=radius, workers=resolve_workers(workers))
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_proximity_table(table, out)
    click.echo(f"✅ {len(table)} pairs written to {out}")


@cli.command()
@click.option('--nodes', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--edges', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--trajectories', required=True, type=click.Path(exists=True, dir_okay=False), help='Raw trajectory CSV')
@click.option('--workers', default=None, type=int)
@click.option('--out', required=True, type=click.Path(dir_okay=False), help='Processed trajectory CSV')
@click.option('--report', default=None, type=click.Path(dir_okay=False), help='Repair report JSON')
@handle_errors
def repair(nodes, edges, trajectories, workers, out, report):
    """Route trips and repair stay durations."""
    net = load_network(nodes, edges)
    persons = ingest_raw(trajectories, net)
    trajs, rep = route_and_repair(net, persons, workers=resolve_workers(workers))
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    write_trajectories(trajs, out)
    if report:
        write_json({**rep.model_dump(), "donation_share": rep.donation_share}, Path(report))
    click.echo(f"✅ {len(trajs)} trajectories, {rep.deficient_stays} deficient stays repaired")


@cli.command()
@click.option('--stations', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--table', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--trajectories', required=True, type=click.Path(exists=True, dir_okay=False), help='Processed trajectory CSV')
@click.option('--cutoff', 'cutoffs', multiple=True, required=True, type=click.DateTime(formats=['%Y-%m-%d']))
@click.option('--threshold', 'thresholds', multiple=True, type=float, help='Distance threshold (m)')
@click.option('--port-type', 'port_types', multiple=True, type=PORT_CHOICE)
@click.option('--segment', 'segments', multiple=True, help="Segment as 'kinds|periods', e.g. 'home|peak'")
@click.option('--radius', default=DEFAULT_RADIUS_M, show_default=True, type=float, help='Radius the table was built with')
@click.option('--allow-custom-threshold', is_flag=True)
@click.option('--normalization', type=click.Choice(['horizon', 'stay_time']), default='horizon', show_default=True)
@click.option('--debug-columns', is_flag=True, help='Add weekly hours_total')
@click.option('--workers', default=None, type=int)
@click.option('--out', required=True, type=click.Path(dir_okay=False))
@handle_errors
def compute(stations, table, trajectories, cutoffs, thresholds, port_types, segments, radius,
            allow_custom_threshold, normalization, debug_columns, workers, out):
    """Batch TI-acs for every parameter combination."""
    thresholds = list(thresholds) or [1000.0]
    validate_thresholds(thresholds, radius, allow_custom_threshold)
    inventory = load_stations(stations)
    prox = load_proximity_table(table, radius)
    trajs = read_trajectories(trajectories)
    snapshots = [build_snapshot(inventory, c.date()) for c in sorted(set(cutoffs))]
    results = batch_compute(
        trajs,
        prox,
        snapshots,
        [PortType(p) for p in port_types] or list(PortType),
        thresholds,
        segments=_segments(segments),
        normalization=normalization,
        workers=resolve_workers(workers),
    )
    _write(results[DEBUG_COLUMNS if debug_columns else RESULT_COLUMNS], out)
    click.echo(f"✅ {len(results)} results written to {out}")


@cli.command()
@click.option('--results', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--trajectories', required=True, type=click.Path(exists=True, dir_okay=False), help='Processed trajectory CSV')
@click.option('--tracts', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', required=True, type=click.Path(dir_okay=False))
@handle_errors
def aggregate(results, trajectories, tracts, out):
    """Tract-level means of individual results."""
    frame = pd.read_csv(results, dtype={"person_id": str, "cutoff": str})
    homes = assign_homes({t.person_id: t.home for t in read_trajectories(trajectories)}, load_tracts(tracts))
    stats, unassigned = aggregate_by_tract(frame, homes)
    _write(stats, out)
    click.echo(f"✅ {len(stats)} tract rows written to {out} ({unassigned} persons without a tract)")


@cli.command()
@click.option('--tract-stats', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--tracts', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', required=True, type=click.Path(dir_okay=False))
@handle_errors
def stats(tract_stats, tracts, out):
    """Quartiles, population-weighted means and Gini per parameter combination."""
    frame = pd.read_csv(tract_stats, dtype={"geoid": str, "cutoff": str})
    table = distribution_table(frame, load_tracts(tracts))
    _write(table, out)
    click.echo(f"✅ {len(table)} rows written to {out}")


@cli.command()
@click.option('--tract-stats', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--tracts', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--port-type', required=True, type=PORT_CHOICE)
@click.option('--threshold', required=True, type=float)
@click.option('--cutoff', required=True, type=click.DateTime(formats=['%Y-%m-%d']))
@click.option('--degree', 'degrees', multiple=True, type=click.IntRange(0, 4), help='Income polynomial degree')
@click.option('--metric', type=click.Choice(['mean_hours', 'mean_ports']), default='mean_hours', show_default=True)
@click.option('--segment', default='all|all', show_default=True, help="Segment as 'kinds|periods'")
@click.option('--mud-only', is_flag=True, help='Only tracts with >50% multi-unit households')
@click.option('--out', required=True, type=click.Path(dir_okay=False))
@handle_errors
def regress(tract_stats, tracts, port_type, threshold, cutoff, degrees, metric, segment, mud_only, out):
    """Dominant-group disparity regression with 95% confidence intervals."""
    kind, _, tou = segment.partition("|")
    frame = select(
        pd.read_csv(tract_stats, dtype={"geoid": str, "cutoff": str}),
        port_type, threshold, cutoff.date().isoformat(), kind or "all", tou or "all",
    )
    records: Sequence[TractRecord] = load_tracts(tracts)
    if mud_only:
        records = mud_filter(records)
    frames = []
    for degree in degrees or (1,):
        result = disparity_regression(frame, records, income_degree=degree, metric=metric, drop_empty_groups=True)
        frames.append(regression_frame(result, segment=segment, income_degree=degree, n=result.n, r2=result.r2))
        for c in result.coefficients:
            flag = "*" if c.significant else " "
            click.echo(f"deg {degree} {c.term:>14} {c.beta:10.4f} [{c.ci_lo:.4f}, {c.ci_hi:.4f}] p={c.p:.4f} {flag}")
    _write(pd.concat(frames, ignore_index=True), out)


def _run_options(fn: Callable) -> Callable:
    options = [
        click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), help='key=value run file'),
        click.option('--nodes', type=click.Path(exists=True, dir_okay=False)),
        click.option('--edges', type=click.Path(exists=True, dir_okay=False)),
        click.option('--stations', type=click.Path(exists=True, dir_okay=False)),
        click.option('--trajectories', type=click.Path(exists=True, dir_okay=False)),
        click.option('--tracts', type=click.Path(exists=True, dir_okay=False)),
        click.option('--output-dir', type=click.Path(file_okay=False)),
        click.option('--cutoff', 'cutoffs', multiple=True, type=click.DateTime(formats=['%Y-%m-%d'])),
        click.option('--threshold', 'thresholds', multiple=True, type=float),
        click.option('--port-type', 'port_types', multiple=True, type=PORT_CHOICE),
        click.option('--segment', 'segments', multiple=True),
        click.option('--allow-custom-threshold', is_flag=True, default=None),
        click.option('--normalization', type=click.Choice(['horizon', 'stay_time']), default=None),
        click.option('--workers', type=int, default=None),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _overrides(kwargs: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(kwargs)
    out['cutoffs'] = [c.date() for c in kwargs.get('cutoffs') or ()]
    out['thresholds'] = list(kwargs.get('thresholds') or ())
    out['port_types'] = list(kwargs.get('port_types') or ())
    out['segments'] = list(kwargs.get('segments') or ())
    for flag in ('allow_custom_threshold', 'debug_columns'):
        if not out.get(flag):
            out.pop(flag, None)
    return out


@cli.command()
@_run_options
@click.option('--no-cache', is_flag=True, help='Always rebuild the proximity table')
@click.option('--debug-columns', is_flag=True, default=None, help='Add weekly hours_total to results.csv')
@handle_errors
def run(config_path, no_cache, **kwargs):
    """Run every stage and write all artifacts plus manifest.json."""
    overrides = _overrides(kwargs)
    if no_cache:
        overrides['use_cache'] = False
    cfg = load_run_config(config_path, overrides)
    manifest = run_pipeline(cfg)
    click.echo(f"✅ {len(manifest['outputs'])} artifacts written to {cfg.output_dir}")
    for stage, seconds in manifest['timings_s'].items():
        click.echo(f"  {stage:<16} {seconds:8.3f} s")


@cli.command()
@_run_options
@click.option('--sample', default=20, show_default=True, help='Persons to check (0 = all)')
@handle_errors
def verify(config_path, sample, **kwargs):
    """Check batch TI-acs and the minute oracle agree on a sample of persons."""
    cfg = load_run_config(config_path, _overrides(kwargs))
    outcome = verify_sample(cfg, sample)
    for line in outcome['mismatches'][:20]:
        click.echo(f"  {line}", err=True)
    if outcome['mismatches']:
        click.echo(f"❌ {len(outcome['mismatches'])} of {outcome['checked']} combinations disagree", err=True)
        sys.exit(EXIT_STAGE_FAILURE)
    click.echo(f"✅ {outcome['checked']} combinations agree for {outcome['persons']} persons")


@cli.command('show-config')
@click.option('--config', 'config_path', required=True, type=click.Path(exists=True, dir_okay=False))
@handle_errors
def show_config(config_path):
    """Print the resolved run configuration."""
    cfg = load_run_config(config_path)
    click.echo(json.dumps(json.loads(cfg.model_dump_json()), indent=2))
    click.echo(f"standard thresholds: {', '.join(f'{t:g}' for t in STANDARD_THRESHOLDS_M)}")


if __name__ == '__main__':
    cli()
