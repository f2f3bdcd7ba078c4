"""Command-line entry point.

Subcommands: ``parse``, ``simulate``, ``detect``, ``evaluate``,
``dump-mapping``.  Human-readable diagnostics go to stderr; machine
output goes to stdout or to files under the ``--out`` directory, and no
subcommand writes anywhere else.  Exit codes: 0 success, 1 usage error,
2 data/model error, 3 numerical error.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import sys
from pathlib import Path

import click

from . import __version__
from .detector import DEFAULT_THRESHOLD, MappingVariant, run_stream
from .errors import GridcalError, NumericalError
from .evaluation import sweep, write_sweep_outputs
from .mapping import BaselineContext, context_agnostic, injection_correct
from .netmodel import load_case
from .scengen import ScenarioConfig, generate_scenario, load_scenario, save_scenario

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

_EVALUATE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["scenario"],
    "properties": {
        "scenario": {"type": "object"},
        "variants": {"type": "array", "items": {"enum": ["naive", "ip", "iplc"]}},
        "sensor_fractions": {
            "type": "array",
            "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        },
        "seeds": {"type": "array", "items": {"type": "integer"}},
        "rho": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "threshold": {"type": "number"},
        "k": {"type": ["integer", "null"], "minimum": 1},
    },
}


@click.group(name="gridcal")
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose: bool):
    """Context-agnostic anomaly detection for power-grid measurement streams."""
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@cli.command("parse")
@click.argument("case_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
def parse_cmd(case_file: Path):
    """Parse a case file and print a one-line summary."""
    case = load_case(case_file)
    click.echo(f"buses={len(case.buses)} branches={len(case.branches)}")


def _scenario_config_options(fn):
    opts = [
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--n-periods", type=int, default=20, show_default=True),
        click.option("--n-tau", type=int, default=60, show_default=True, help="Ticks per period."),
        click.option("--n-anomalies", type=int, default=20, show_default=True),
        click.option("--load-variability", type=float, default=0.0, show_default=True),
        click.option("--n-shift-events", type=int, default=0, show_default=True),
        click.option("--shift-magnitude", type=float, default=0.2, show_default=True),
        click.option("--noise-stdev", type=float, default=0.0, show_default=True),
        click.option("--sensor-fraction", type=float, default=0.25, show_default=True),
        click.option(
            "--sensors",
            type=str,
            default=None,
            help="Comma-separated sensor bus ids (overrides --sensor-fraction).",
        ),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


@cli.command("simulate")
@click.option("--case", "case_ref", required=True, help="Builtin case name or case file path.")
@click.option(
    "--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path)
)
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None, help="Scenario config JSON (overrides the individual flags).")
@_scenario_config_options
def simulate_cmd(case_ref, out_dir, config_file, sensors, sensor_fraction, **kwargs):
    """Generate a synthetic scenario directory."""
    if config_file is not None:
        doc = json.loads(config_file.read_text())
        doc.setdefault("case", case_ref)
        config = ScenarioConfig.from_json_dict(doc)
    else:
        sensor_list = (
            tuple(int(b) for b in sensors.split(",")) if sensors else None
        )
        config = ScenarioConfig(
            case=case_ref,
            sensors=sensor_list,
            sensor_fraction=None if sensor_list else sensor_fraction,
            **kwargs,
        )
    scenario = generate_scenario(config)
    save_scenario(scenario, out_dir)
    click.echo(
        f"ticks={len(scenario.frames)} periods={config.n_periods} "
        f"anomalies={len(scenario.truth)} sensors={len(scenario.sensor_set.buses)}"
    )


@cli.command("detect")
@click.option(
    "--scenario",
    "scenario_dir",
    required=True,
    type=click.Path(exists=True, file_okay=False, path_type=Path),
)
@click.option("--variant", type=click.Choice([v.value for v in MappingVariant]), default="iplc", show_default=True)
@click.option("--threshold", type=float, default=DEFAULT_THRESHOLD, show_default=True)
@click.option("--rho", type=float, default=None, help="Variance weight for history weighting (default: mean tick distance).")
@click.option("--warmup", type=int, default=None, help="Ticks before feedback flagging starts (default: ticks per period).")
@click.option("--out", "out_file", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Write verdict JSON-lines here instead of stdout.")
@click.option("--dump-sensitivities", "dump_dir", type=click.Path(file_okay=False, path_type=Path), default=None, help="Dump per-period transfer factors and outage ratios as CSV.")
def detect_cmd(scenario_dir, variant, threshold, rho, warmup, out_file, dump_dir):
    """Stream a scenario through the detector; emit verdict JSON-lines."""
    scenario = load_scenario(scenario_dir)
    baseline = BaselineContext.build(scenario.case, scenario.sensor_set)
    verdicts, _ = run_stream(
        baseline,
        scenario.frames,
        scenario.topologies_by_period(),
        variant=MappingVariant.parse(variant),
        threshold=threshold,
        rho=rho,
        warmup=scenario.config.n_tau if warmup is None else warmup,
    )
    lines = [json.dumps(v.to_json_dict(), sort_keys=True) for v in verdicts]
    if out_file is not None:
        out_file.parent.mkdir(parents=True, exist_ok=True)
        out_file.write_text("\n".join(lines) + "\n")
        click.echo(f"wrote {len(lines)} verdicts to {out_file}", err=True)
    else:
        for line in lines:
            click.echo(line)
    if dump_dir is not None:
        _dump_sensitivities(scenario, baseline, Path(dump_dir))


def _dump_sensitivities(scenario, baseline, dump_dir: Path):
    dump_dir.mkdir(parents=True, exist_ok=True)
    for topo in scenario.period_topologies:
        ops = baseline.operators_for(topo)
        with (dump_dir / f"ptdf_period{topo.label}.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["branch"] + [b.id for b in scenario.case.buses])
            for eid, row in zip(ops.ptdf.edge_ids, ops.ptdf.values):
                writer.writerow([eid] + [repr(float(v)) for v in row])
        missing = [e for e in baseline.baseline_edge_ids if e not in topo.edge_set]
        with (dump_dir / f"lodf_period{topo.label}.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["branch"] + [f"outage_{k}" for k in missing])
            cols = {e: j for j, e in enumerate(baseline.baseline_edge_ids)}
            for i, eid in enumerate(ops.active_obs):
                writer.writerow([eid] + [repr(float(ops.matrix[i, cols[k]])) for k in missing])


@cli.command("dump-mapping")
@click.option(
    "--scenario",
    "scenario_dir",
    required=True,
    type=click.Path(exists=True, file_okay=False, path_type=Path),
)
@click.option("--edge", "branch_id", type=int, default=None, help="Branch to trace (default: first observed baseline branch).")
@click.option(
    "--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path)
)
def dump_mapping_cmd(scenario_dir, branch_id, out_dir):
    """Dump per-tick (raw, corrected, context-agnostic) flow triples
    for one branch, with the matching figure."""
    from .figures import render_mapping_traces

    scenario = load_scenario(scenario_dir)
    baseline = BaselineContext.build(scenario.case, scenario.sensor_set)
    if branch_id is None:
        branch_id = baseline.baseline_edge_ids[0]
    if branch_id not in baseline.baseline_edge_ids:
        raise GridcalError(
            f"branch {branch_id} is not an observed baseline branch; "
            f"choose from {baseline.baseline_edge_ids[:10]}..."
        )
    col = baseline.baseline_edge_ids.index(branch_id)
    base_mva = scenario.case.base_mva

    rows = []
    for frame in scenario.frames:
        topo = scenario.period_topologies[frame.period - 1]
        ops = baseline.operators_for(topo)
        corrected = injection_correct(frame, baseline, ops.ptdf)
        agnostic = context_agnostic(frame, baseline, topo)
        raw = corr = float("nan")
        if branch_id in frame.edge_ids:
            i = frame.edge_ids.index(branch_id)
            raw = float(frame.flows[i]) * base_mva
            corr = float(corrected.values[i]) * base_mva
        rows.append(
            {
                "tick": frame.tick,
                "raw_mw": raw,
                "corrected_mw": corr,
                "agnostic_mw": float(agnostic.values[col]) * base_mva,
            }
        )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"mapping_branch{branch_id}.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["tick", "raw_mw", "corrected_mw", "agnostic_mw"])
        writer.writeheader()
        writer.writerows(rows)
    fig_path = render_mapping_traces(
        rows,
        branch_id,
        out / f"mapping_branch{branch_id}.png",
        truth_ticks=sorted(scenario.truth_ticks),
        shift_ticks=scenario.shift_ticks,
    )
    click.echo(f"wrote {csv_path} and {fig_path}", err=True)


@cli.command("evaluate")
@click.option("--config", "config_file", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option(
    "--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path)
)
@click.option("--threads", type=int, default=None, help="Worker processes for sweep cells (default: machine parallelism).")
def evaluate_cmd(config_file, out_dir, threads):
    """Run the variant/sensor sweep described by a config JSON and
    write tables, figure data, and figures."""
    import jsonschema

    from .figures import render_metric_figure

    doc = json.loads(config_file.read_text())
    try:
        jsonschema.validate(doc, _EVALUATE_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise GridcalError(f"invalid evaluate config: {exc.message}") from None
    base_config = ScenarioConfig.from_json_dict(doc["scenario"])
    workers = threads if threads is not None else (os.cpu_count() or 1)
    results = sweep(
        base_config,
        variants=doc.get("variants", ["naive", "ip", "iplc"]),
        sensor_fractions=doc.get("sensor_fractions", [0.05, 0.1, 0.25, 0.5]),
        seeds=doc.get("seeds", [0]),
        rho=doc.get("rho"),
        threshold=doc.get("threshold", DEFAULT_THRESHOLD),
        k=doc.get("k"),
        workers=max(1, workers),
    )
    out = Path(out_dir)
    paths = write_sweep_outputs(results, out)
    fig_dir = out / "figures"
    fig_dir.mkdir(exist_ok=True)
    for metric in ("auc", "f_measure"):
        render_metric_figure(results, metric, fig_dir / f"{metric}_vs_sensors.png")
    n_done = sum(1 for r in results if r is not None)
    click.echo(f"completed {n_done}/{len(results)} runs; outputs in {out}", err=True)
    click.echo(str(paths["results"]))


def main(argv=None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except NumericalError as exc:
        click.echo(f"numerical error: {exc}", err=True)
        return EXIT_NUMERICAL
    except (GridcalError, FileNotFoundError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
