"""Experiment runners: single runs, seed-paired twins, and parameter sweeps.

A sweep executes `repetitions` runs at every axis value, ordered by
(axis value, repetition).  Repetition k shifts every stream seed by k,
so the same repetition index reuses identical topology and field across
axis values, and every row is paired with a security-disabled twin on
the same seeds for the energy-overhead comparison.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, TextIO

from ..simulation import RunMetrics, Seeds, run
from .config import ConfigError, ScenarioConfig

__all__ = [
    "RunResult",
    "SweepResult",
    "SweepRow",
    "run_experiment",
    "run_paired",
    "run_sweep",
    "sweep_axes",
]


@dataclass(frozen=True)
class RunResult:
    """One experiment plus the optional security-off twin it was paired with."""

    config: ScenarioConfig
    metrics: RunMetrics
    off_metrics: Optional[RunMetrics] = None
    energy_overhead_pct: Optional[float] = None


@dataclass(frozen=True)
class SweepRow:
    """One sweep cell repetition: configured run plus its unsecured twin."""

    axis: str
    value: float
    repetition: int
    config: ScenarioConfig
    metrics: RunMetrics
    off_metrics: RunMetrics
    energy_overhead_pct: float


@dataclass(frozen=True)
class SweepResult:
    """All rows of a sweep, ordered by (axis value, repetition)."""

    axis: str
    values: tuple[float, ...]
    repetitions: int
    config: ScenarioConfig
    rows: tuple[SweepRow, ...]


def run_experiment(
    config: ScenarioConfig, trace: Optional[TextIO] = None
) -> RunMetrics:
    """Execute one deterministic run for the given scenario."""
    return run(config, trace)


def _overhead_pct(on: RunMetrics, off: RunMetrics) -> float:
    return (on.total_spent_j - off.total_spent_j) / off.total_spent_j * 100.0


def run_paired(config: ScenarioConfig) -> RunResult:
    """Run the scenario with security on and off on identical seeds.

    The primary metrics follow the configuration's own security flag;
    the overhead is always secured-versus-unsecured on the same seeds,
    so it measures the detector's traffic and nothing else.
    """
    on = run(dataclasses.replace(config, security_enabled=True))
    off = run(dataclasses.replace(config, security_enabled=False))
    return RunResult(
        config=config,
        metrics=on if config.security_enabled else off,
        off_metrics=off,
        energy_overhead_pct=_overhead_pct(on, off),
    )


# --------------------------------------------------------------------------
# Sweep axes

Setter = Callable[[ScenarioConfig, float], ScenarioConfig]


def _float_field(name: str) -> Setter:
    def setter(config: ScenarioConfig, value: float) -> ScenarioConfig:
        return dataclasses.replace(config, **{name: float(value)})

    return setter


def _int_field(name: str) -> Setter:
    def setter(config: ScenarioConfig, value: float) -> ScenarioConfig:
        if float(value) != int(value):
            raise ConfigError(f"axis {name} takes integer values, got {value!r}")
        return dataclasses.replace(config, **{name: int(value)})

    return setter


def _set_compromised_fraction(config: ScenarioConfig, value: float) -> ScenarioConfig:
    adversary = dataclasses.replace(config.adversary, compromised_fraction=float(value))
    return dataclasses.replace(config, adversary=adversary)


def _set_onset(config: ScenarioConfig, value: float) -> ScenarioConfig:
    adversary = dataclasses.replace(config.adversary, onset_s=float(value))
    return dataclasses.replace(config, adversary=adversary)


def _set_loss_probability(config: ScenarioConfig, value: float) -> ScenarioConfig:
    radio = dataclasses.replace(config.radio, loss_probability=float(value))
    return dataclasses.replace(config, radio=radio)


def _set_airtime(config: ScenarioConfig, value: float) -> ScenarioConfig:
    radio = dataclasses.replace(config.radio, airtime_s=float(value))
    return dataclasses.replace(config, radio=radio)


_AXES: dict[str, Setter] = {
    "node_count": _int_field("node_count"),
    "range_m": _float_field("range_m"),
    "simulation_time_s": _float_field("simulation_time_s"),
    "sampling_period_s": _float_field("sampling_period_s"),
    "initial_energy_j": _float_field("initial_energy_j"),
    "tx_power_w": _float_field("tx_power_w"),
    "rx_power_w": _float_field("rx_power_w"),
    "sense_power_w": _float_field("sense_power_w"),
    "sample_duration_s": _float_field("sample_duration_s"),
    "buffer_capacity": _int_field("buffer_capacity"),
    "broadcast_threshold_pct": _float_field("broadcast_threshold_pct"),
    "sigma_factor": _float_field("sigma_factor"),
    "sharp_fall_threshold_sigmas": _float_field("sharp_fall_threshold_sigmas"),
    "poll_timeout_s": _float_field("poll_timeout_s"),
    "sensor_noise_sigma": _float_field("sensor_noise_sigma"),
    "quadrature_points": _int_field("quadrature_points"),
    "compromised_fraction": _set_compromised_fraction,
    "onset_s": _set_onset,
    "loss_probability": _set_loss_probability,
    "airtime_s": _set_airtime,
}


def sweep_axes() -> tuple[str, ...]:
    """Names accepted as a sweep axis, alphabetically."""
    return tuple(sorted(_AXES))


def _shifted_seeds(base: Seeds, repetition: int) -> Seeds:
    return Seeds(
        topology=base.topology + repetition,
        field=base.field + repetition,
        adversary=base.adversary + repetition,
        loss=base.loss + repetition,
    )


def run_sweep(
    base: ScenarioConfig,
    axis: str,
    values: Sequence[float],
    repetitions: int,
) -> SweepResult:
    """Run |values| x repetitions seed-paired experiments along one axis."""
    if axis not in _AXES:
        raise ConfigError(
            f"unknown sweep axis {axis!r}; valid axes: {', '.join(sweep_axes())}"
        )
    if not values:
        raise ConfigError("sweep needs at least one axis value")
    if repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    setter = _AXES[axis]
    rows: list[SweepRow] = []
    for value in values:
        cell_config = setter(base, value)
        for repetition in range(repetitions):
            config = dataclasses.replace(
                cell_config, seeds=_shifted_seeds(base.seeds, repetition)
            )
            on = run(dataclasses.replace(config, security_enabled=True))
            off = run(dataclasses.replace(config, security_enabled=False))
            rows.append(
                SweepRow(
                    axis=axis,
                    value=float(value),
                    repetition=repetition,
                    config=config,
                    metrics=on if config.security_enabled else off,
                    off_metrics=off,
                    energy_overhead_pct=_overhead_pct(on, off),
                )
            )
    return SweepResult(
        axis=axis,
        values=tuple(float(v) for v in values),
        repetitions=repetitions,
        config=base,
        rows=tuple(rows),
    )
