"""Evaluation harness: ranking metrics and variant/sensor sweeps.

Detector quality is judged from the per-tick anomaly scores alone,
exactly as the detector ranks them: AUC is the probability that a
random anomalous tick outscores a random normal tick (ties count half,
the rank-sum formulation), and the F-measure is precision/recall
harmonic mean over the top-k scored ticks.

A sweep runs each mapping variant over freshly generated scenarios for
every (sensor fraction, seed) cell and writes one results row per run,
plus ROC points and per-figure series for plotting.  Cells are
independent; failed cells are recorded as missing rather than aborting
the sweep.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .detector import DEFAULT_THRESHOLD, MappingVariant, run_stream
from .errors import GridcalError, ModelError
from .mapping import BaselineContext, MeasurementFrame
from .netmodel import observed_edges
from .scengen import Scenario, ScenarioConfig, generate_scenario, resolve_case

__all__ = ["RunResult", "auc", "f_measure_topk", "run_variant", "sweep", "write_sweep_outputs"]

log = logging.getLogger(__name__)

# An anomaly whose branch moves no observed flow more than this (per
# unit of its own pre-outage flow) cannot be seen from the sensors at
# all; such truth ticks are reported separately, not as misses.
_UNDETECTABLE_COUPLING = 1e-9


@dataclass(frozen=True, eq=False)
class RunResult:
    variant: MappingVariant
    sensor_count: int
    seed: int
    scores: np.ndarray  # entry τ-1 is the score of tick τ
    truth: frozenset[int]
    auc: float
    f_measure: float
    undetectable_ticks: tuple[int, ...] = ()


def auc(scores, truth_ticks) -> float:
    """Rank-sum AUC of the scores against the truth tick set."""
    s = np.asarray(scores, dtype=float)
    truth = {int(t) for t in truth_ticks}
    labels = np.array([tick in truth for tick in range(1, s.size + 1)])
    n_pos = int(labels.sum())
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ModelError("AUC needs at least one anomalous and one normal tick")
    ranks = rankdata(s)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def f_measure_topk(scores, truth_ticks, k: int = 20) -> float:
    """F-measure of the k top-scored ticks against the truth set.

    Ties at the cutoff are broken toward the earlier tick.  F is zero
    when no truth tick makes the cutoff.
    """
    s = np.asarray(scores, dtype=float)
    truth = {int(t) for t in truth_ticks}
    if not truth:
        raise ModelError("F-measure is undefined for an empty truth set")
    if k > s.size:
        raise ModelError(f"top-{k} requested from only {s.size} ticks")
    ticks = np.arange(1, s.size + 1)
    order = np.lexsort((ticks, -s))
    top = set(ticks[order[:k]].tolist())
    hits = len(top & truth)
    precision = hits / k
    recall = hits / len(truth)
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _restrict_frames(scenario: Scenario, sensor_buses) -> tuple:
    """Project the scenario's frames onto a sensor subset."""
    subset = observed_edges(scenario.case, sensor_buses)
    extra = subset.buses - scenario.sensor_set.buses
    if extra:
        raise ModelError(
            f"sensor restriction includes buses without generated data: {sorted(extra)[:5]}"
        )
    keep = subset.observed_set
    frames = []
    for frame in scenario.frames:
        mask = np.array([eid in keep for eid in frame.edge_ids], dtype=bool)
        frames.append(
            MeasurementFrame(
                tick=frame.tick,
                period=frame.period,
                flows=frame.flows[mask],
                injections=frame.injections,
                edge_ids=tuple(e for e, m in zip(frame.edge_ids, mask) if m),
            )
        )
    return subset, tuple(frames)


def _undetectable_truth(scenario: Scenario, sensor_set) -> tuple[int, ...]:
    from .sensitivity import LinearGridModel

    out = []
    models: dict[frozenset[int], LinearGridModel] = {}
    for tick, branch in sorted(scenario.truth):
        topo = scenario.period_topologies[(tick - 1) // scenario.config.n_tau]
        if topo.edge_set not in models:
            models[topo.edge_set] = LinearGridModel(scenario.case, topo)
        observed_active = tuple(e for e in sensor_set.observed_edges if e in topo.edge_set)
        if not observed_active:
            out.append(tick)
            continue
        ratios = models[topo.edge_set].outage_ratios(branch, observed_active)
        if np.abs(ratios).max(initial=0.0) < _UNDETECTABLE_COUPLING:
            out.append(tick)
    return tuple(out)


def run_variant(
    scenario: Scenario,
    variant,
    sensors=None,
    rho: float | None = None,
    threshold: float = DEFAULT_THRESHOLD,
    k: int | None = None,
) -> RunResult:
    """Stream one scenario through the detector under one variant.

    ``sensors`` optionally restricts detection to a subset of the
    scenario's sensor buses (the generated data covers them).
    """
    variant = variant if isinstance(variant, MappingVariant) else MappingVariant.parse(variant)
    if sensors is None:
        sensor_set, frames = scenario.sensor_set, scenario.frames
    else:
        sensor_set, frames = _restrict_frames(scenario, sensors)
    baseline = BaselineContext.build(scenario.case, sensor_set)
    verdicts, _ = run_stream(
        baseline,
        frames,
        scenario.topologies_by_period(),
        variant=variant,
        threshold=threshold,
        rho=rho,
        warmup=scenario.config.n_tau,
    )
    scores = np.array(
        [v.score if np.isfinite(v.score) else 1e18 for v in verdicts]
    )
    truth_ticks = scenario.truth_ticks
    k_eff = len(truth_ticks) if k is None else k
    return RunResult(
        variant=variant,
        sensor_count=len(sensor_set.buses),
        seed=scenario.config.seed,
        scores=scores,
        truth=truth_ticks,
        auc=auc(scores, truth_ticks) if truth_ticks else float("nan"),
        f_measure=f_measure_topk(scores, truth_ticks, k_eff) if truth_ticks else float("nan"),
        undetectable_ticks=_undetectable_truth(scenario, sensor_set),
    )


def _sweep_cell(args) -> list:
    config_doc, variants, rho, threshold, k = args
    config = ScenarioConfig.from_json_dict(config_doc)
    scenario = generate_scenario(config)
    return [
        run_variant(scenario, variant, rho=rho, threshold=threshold, k=k)
        for variant in variants
    ]


def sweep(
    base_config: ScenarioConfig,
    variants=("naive", "ip", "iplc"),
    sensor_fractions=(0.05, 0.1, 0.25, 0.5),
    seeds=(0,),
    rho: float | None = None,
    threshold: float = DEFAULT_THRESHOLD,
    k: int | None = None,
    workers: int = 1,
) -> list[RunResult | None]:
    """Cartesian sweep over variants × sensor fractions × seeds.

    Every (fraction, seed) cell generates its own scenario (the same
    one for all variants, so per-cell comparisons are paired).  Failed
    cells contribute ``None`` rows and a warning.
    """
    variants = [MappingVariant.parse(v) if not isinstance(v, MappingVariant) else v for v in variants]
    cells = []
    for fraction in sensor_fractions:
        for seed in seeds:
            doc = dataclasses.replace(
                base_config, sensor_fraction=float(fraction), sensors=None, seed=int(seed)
            ).to_json_dict()
            cells.append((doc, variants, rho, threshold, k))

    results: list[RunResult | None] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep_cell, cell) for cell in cells]
            for cell, fut in zip(cells, futures):
                try:
                    results.extend(fut.result())
                except GridcalError as exc:
                    log.warning("sweep cell %s failed: %s", _cell_label(cell), exc)
                    results.extend(None for _ in variants)
    else:
        for cell in cells:
            try:
                results.extend(_sweep_cell(cell))
            except GridcalError as exc:
                log.warning("sweep cell %s failed: %s", _cell_label(cell), exc)
                results.extend(None for _ in variants)
    return results


def _cell_label(cell) -> str:
    doc = cell[0]
    return f"(sensor_fraction={doc['sensor_fraction']}, seed={doc['seed']})"


def write_sweep_outputs(results, out_dir) -> dict[str, Path]:
    """Write results.csv, roc_points.csv, and figure_data/*.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    results_path = out / "results.csv"
    with results_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["variant", "sensor_count", "seed", "auc", "f_measure", "n_truth", "n_undetectable"]
        )
        for res in results:
            if res is None:
                continue
            writer.writerow(
                [
                    res.variant.value,
                    res.sensor_count,
                    res.seed,
                    repr(res.auc),
                    repr(res.f_measure),
                    len(res.truth),
                    len(res.undetectable_ticks),
                ]
            )
    paths["results"] = results_path

    roc_path = out / "roc_points.csv"
    with roc_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "sensor_count", "seed", "fpr", "tpr"])
        for res in results:
            if res is None or not res.truth:
                continue
            for fpr, tpr in _roc_points(res.scores, res.truth):
                writer.writerow(
                    [res.variant.value, res.sensor_count, res.seed, repr(fpr), repr(tpr)]
                )
    paths["roc"] = roc_path

    fig_dir = out / "figure_data"
    fig_dir.mkdir(exist_ok=True)
    for metric in ("auc", "f_measure"):
        series: dict[tuple[str, int], list[float]] = {}
        for res in results:
            if res is None:
                continue
            series.setdefault((res.variant.value, res.sensor_count), []).append(
                getattr(res, metric)
            )
        path = fig_dir / f"{metric}_vs_sensors.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variant", "sensor_count", "median", "mean", "n_runs"])
            for (variant, count), vals in sorted(series.items()):
                arr = np.array(vals, dtype=float)
                writer.writerow(
                    [variant, count, repr(float(np.median(arr))), repr(float(arr.mean())), arr.size]
                )
        paths[metric] = path
    return paths


def _roc_points(scores, truth_ticks) -> list[tuple[float, float]]:
    s = np.asarray(scores, dtype=float)
    truth = {int(t) for t in truth_ticks}
    labels = np.array([tick in truth for tick in range(1, s.size + 1)])
    order = np.argsort(-s, kind="stable")
    n_pos = max(int(labels.sum()), 1)
    n_neg = max(int(s.size - labels.sum()), 1)
    points = [(0.0, 0.0)]
    tp = fp = 0
    last_score = None
    for i in order:
        if last_score is not None and s[i] != last_score:
            points.append((fp / n_neg, tp / n_pos))
        if labels[i]:
            tp += 1
        else:
            fp += 1
        last_score = s[i]
    points.append((1.0, 1.0))
    return points
