"""Report emission: a long-form runs CSV and an aggregated JSON summary.

Both formats are byte-stable for a given result: column order is fixed,
JSON keys are sorted, and floats are written with round-trip repr.  The
CSV carries one row per executed run; the JSON carries per-cell means
and standard deviations plus a full echo of the resolved configuration.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
from pathlib import Path
from typing import Any, Optional, Union

from ..simulation import (
    AdversaryModel,
    ConstantOffset,
    Hotspot,
    PhysicalField,
    RandomNoise,
    RunMetrics,
    StuckAt,
)
from .config import ConfigError, ScenarioConfig
from .experiment import RunResult, SweepResult

__all__ = ["RUNS_CSV_COLUMNS", "config_echo", "emit_report"]

# Scalar metric fields, in reporting order.  The per-node energy map and
# the compromised-node tuple are summarised rather than dumped per row.
_METRIC_FIELDS: tuple[str, ...] = (
    "node_count",
    "component_count",
    "alive_count",
    "messages_sent",
    "messages_received",
    "attempted_receptions",
    "drops_loss",
    "drops_buffer",
    "drops_dead",
    "drops_isolation",
    "polls_opened",
    "verdicts_malicious",
    "verdicts_benign",
    "tainted_broadcasts",
    "delivery_ratio",
    "rmse",
    "max_abs_error",
    "true_positives",
    "false_positives",
    "false_negatives",
    "detection_rate",
    "fp_rate",
    "fn_rate",
    "mean_time_to_detection",
    "converged_fraction",
    "total_tx_j",
    "total_rx_j",
    "total_sense_j",
    "total_spent_j",
)

RUNS_CSV_COLUMNS: tuple[str, ...] = (
    "axis",
    "value",
    "repetition",
    "security_enabled",
    "seed_topology",
    "seed_field",
    "seed_adversary",
    "seed_loss",
    "compromised_fraction",
    "compromised_count",
    *_METRIC_FIELDS,
    "energy_overhead_pct",
)


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "" if not math.isfinite(value) else repr(value)
    return str(value)


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _attack_echo(attack: Any) -> dict[str, Any]:
    if isinstance(attack, ConstantOffset):
        return {"kind": "constant_offset", "offset_c": attack.offset_c}
    if isinstance(attack, StuckAt):
        return {"kind": "stuck_at", "value_c": attack.value_c}
    if isinstance(attack, RandomNoise):
        return {"kind": "random_noise", "sigma_c": attack.sigma_c}
    raise ConfigError(f"cannot serialise attack model {type(attack).__name__}")


def _hotspot_echo(hotspot: Optional[Hotspot]) -> Optional[dict[str, Any]]:
    if hotspot is None:
        return None
    return {
        "offset_c": hotspot.offset_c,
        "start_s": hotspot.start_s,
        "end_s": _json_safe(hotspot.end_s),
        "node_ids": None if hotspot.node_ids is None else list(hotspot.node_ids),
        "region": None if hotspot.region is None else list(hotspot.region),
    }


def _field_echo(field: PhysicalField) -> dict[str, Any]:
    return {
        "base_mean_c": field.base_mean_c,
        "base_sigma_c": field.base_sigma_c,
        "hotspot": _hotspot_echo(field.hotspot),
    }


def _adversary_echo(adversary: AdversaryModel) -> dict[str, Any]:
    return {
        "compromised_fraction": adversary.compromised_fraction,
        "attack": _attack_echo(adversary.attack),
        "onset_s": adversary.onset_s,
        "selection_seed": adversary.selection_seed,
    }


def config_echo(config: ScenarioConfig) -> dict[str, Any]:
    """The resolved scenario as a JSON-ready dictionary."""
    return {
        "node_count": config.node_count,
        "area_m": list(config.area_m),
        "range_m": config.range_m,
        "simulation_time_s": config.simulation_time_s,
        "sampling_period_s": config.sampling_period_s,
        "initial_energy_j": config.initial_energy_j,
        "tx_power_w": config.tx_power_w,
        "rx_power_w": config.rx_power_w,
        "sense_power_w": config.sense_power_w,
        "sample_duration_s": config.sample_duration_s,
        "buffer_capacity": config.buffer_capacity,
        "broadcast_threshold_pct": config.broadcast_threshold_pct,
        "sigma_factor": config.sigma_factor,
        "sharp_fall_threshold_sigmas": config.sharp_fall_threshold_sigmas,
        "poll_timeout_s": config.poll_timeout_s,
        "sensor_noise_sigma": config.sensor_noise_sigma,
        "gate_mode": config.gate_mode,
        "quadrature_points": config.quadrature_points,
        "security_enabled": config.security_enabled,
        "out_dir": config.out_dir,
        "field": _field_echo(config.field),
        "adversary": _adversary_echo(config.adversary),
        "seeds": {
            "topology": config.seeds.topology,
            "field": config.seeds.field,
            "adversary": config.seeds.adversary,
            "loss": config.seeds.loss,
        },
        "radio": {
            "loss_probability": config.radio.loss_probability,
            "airtime_s": config.radio.airtime_s,
        },
    }


def _metrics_record(metrics: RunMetrics) -> dict[str, Any]:
    record = {name: _json_safe(getattr(metrics, name)) for name in _METRIC_FIELDS}
    record["compromised_nodes"] = sorted(metrics.compromised_nodes)
    record["compromised_count"] = len(metrics.compromised_nodes)
    return record


def _csv_row(
    axis: str,
    value: Any,
    repetition: Any,
    config: ScenarioConfig,
    metrics: RunMetrics,
    energy_overhead_pct: Optional[float],
) -> list[str]:
    cells = [
        _cell(axis),
        _cell(value),
        _cell(repetition),
        _cell(config.security_enabled),
        _cell(config.seeds.topology),
        _cell(config.seeds.field),
        _cell(config.seeds.adversary),
        _cell(config.seeds.loss),
        _cell(config.adversary.compromised_fraction),
        _cell(len(metrics.compromised_nodes)),
    ]
    cells.extend(_cell(getattr(metrics, name)) for name in _METRIC_FIELDS)
    cells.append(_cell(energy_overhead_pct))
    return cells


def _result_rows(result: Union[RunResult, SweepResult]) -> list[list[str]]:
    if isinstance(result, RunResult):
        return [
            _csv_row(
                "",
                "",
                0,
                result.config,
                result.metrics,
                result.energy_overhead_pct,
            )
        ]
    return [
        _csv_row(
            row.axis,
            row.value,
            row.repetition,
            row.config,
            row.metrics,
            row.energy_overhead_pct,
        )
        for row in result.rows
    ]


def _aggregate(samples: list[Optional[float]]) -> dict[str, Any]:
    present = [float(s) for s in samples if s is not None and math.isfinite(float(s))]
    if not present:
        return {"mean": None, "stddev": None, "n": 0}
    return {
        "mean": statistics.fmean(present),
        "stddev": statistics.pstdev(present),
        "n": len(present),
    }


def _sweep_summary(result: SweepResult) -> dict[str, Any]:
    cells: list[dict[str, Any]] = []
    for value in result.values:
        rows = [r for r in result.rows if r.value == value]
        cells.append(
            {
                "value": value,
                "repetitions": len(rows),
                "metrics": {
                    name: _aggregate([getattr(r.metrics, name) for r in rows])
                    for name in _METRIC_FIELDS
                },
                "energy_overhead_pct": _aggregate(
                    [r.energy_overhead_pct for r in rows]
                ),
            }
        )
    return {
        "kind": "sweep",
        "axis": result.axis,
        "values": list(result.values),
        "repetitions": result.repetitions,
        "config": config_echo(result.config),
        "cells": cells,
        "energy_overhead_pct": _aggregate(
            [r.energy_overhead_pct for r in result.rows]
        ),
    }


def _run_summary(result: RunResult) -> dict[str, Any]:
    summary: dict[str, Any] = {
        "kind": "run",
        "config": config_echo(result.config),
        "metrics": _metrics_record(result.metrics),
        "energy_overhead_pct": _json_safe(result.energy_overhead_pct),
    }
    if result.off_metrics is not None:
        summary["off_metrics"] = _metrics_record(result.off_metrics)
    return summary


def emit_report(
    result: Union[RunResult, SweepResult],
    format: str,
    path: Union[str, Path],
) -> Path:
    """Write the result to `path` as 'csv' rows or a 'json' summary."""
    if format not in ("csv", "json"):
        raise ConfigError(f"unknown report format {format!r}; use 'csv' or 'json'")
    if not isinstance(result, (RunResult, SweepResult)):
        raise ConfigError(
            f"emit_report needs a RunResult or SweepResult, got {type(result).__name__}"
        )
    target = Path(path)
    if target.parent != Path(""):
        target.parent.mkdir(parents=True, exist_ok=True)
    try:
        if format == "csv":
            with open(target, "w", newline="", encoding="utf-8") as handle:
                writer = csv.writer(handle, lineterminator="\n")
                writer.writerow(RUNS_CSV_COLUMNS)
                writer.writerows(_result_rows(result))
        else:
            if isinstance(result, SweepResult):
                payload = _sweep_summary(result)
            else:
                payload = _run_summary(result)
            text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=False)
            with open(target, "w", encoding="utf-8") as handle:
                handle.write(text + "\n")
    except OSError as exc:
        raise OSError(f"cannot write report to {target}: {exc}") from exc
    return target
