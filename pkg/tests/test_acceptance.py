"""End-to-end acceptance gate: eleven checks, one per shipped guarantee.

Each check computes its result, prints one ``[PASS]``/``[FAIL]`` line
(run ``pytest tests/test_acceptance.py -s`` to see them), and only then
asserts -- so a failing criterion still reports what it measured.
Timed criteria exclude the one-off JIT warmup, which a module fixture
performs before any clock starts.
"""

from __future__ import annotations

import dataclasses
import gc
import json
import random
import time
from pathlib import Path

import numpy as np
import pytest

from securagg.fusion import (
    GaussianEstimate,
    ci_fuse,
    combine_local,
    fuse_global,
    optimal_omega,
)
from securagg.protocol import (
    EstimateBroadcast,
    NodeState,
    ProtocolConfig,
    on_estimate,
    on_sample,
)
from securagg.scenario import RunResult, ScenarioConfig, emit_report
from securagg.scenario.experiment import run_experiment, run_paired
from securagg.simulation import run

from test_fusion import ci_oracle, grid_omega_oracle, mixture_oracle, random_spd_2x2


def _report(num: int, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}")


def _with_fraction(config: ScenarioConfig, fraction: float) -> ScenarioConfig:
    return dataclasses.replace(
        config, adversary=dataclasses.replace(config.adversary, compromised_fraction=fraction)
    )


@pytest.fixture(scope="module", autouse=True)
def _jit_warmup():
    """Compile the quadrature kernel before any timed criterion runs."""
    tiny = dataclasses.replace(
        ScenarioConfig().with_master_seed(1),
        node_count=12,
        area_m=(30.0, 30.0),
        simulation_time_s=2.0,
    )
    run_experiment(tiny)
    combine_local(GaussianEstimate(25.0, 1.0), GaussianEstimate(25.5, 1.2), None, 1.0)


# ------------------------------------------------------------------ 1


def test_scalar_fusion_selects_the_tighter_estimate_exactly():
    rng = random.Random(11)
    start = time.perf_counter()
    worst_gap = 0.0
    omegas_ok = True
    for _ in range(1000):
        a = GaussianEstimate(rng.uniform(-50.0, 50.0), rng.uniform(0.1, 9.0))
        b = GaussianEstimate(rng.uniform(-50.0, 50.0), rng.uniform(0.1, 9.0))
        fused = fuse_global(a, b)
        worst_gap = max(worst_gap, abs(fused.cov - min(a.cov, b.cov)))
        if optimal_omega(a, b) not in (0.0, 1.0):
            omegas_ok = False
    elapsed = time.perf_counter() - start
    ok = worst_gap <= 1e-12 and omegas_ok and elapsed < 1.0
    _report(
        1,
        ok,
        f"1000 scalar pairs: worst |cov - min| = {worst_gap:.2e}, "
        f"all omegas endpoint = {omegas_ok}, {elapsed:.3f} s",
    )
    assert ok


# ------------------------------------------------------------------ 2


def test_matrix_fusion_weight_minimizes_determinant_on_grid():
    rng = random.Random(22)
    start = time.perf_counter()
    worst_excess = -np.inf
    for _ in range(100):
        a = GaussianEstimate([rng.uniform(-5, 5), rng.uniform(-5, 5)], random_spd_2x2(rng))
        b = GaussianEstimate([rng.uniform(-5, 5), rng.uniform(-5, 5)], random_spd_2x2(rng))
        w_star = optimal_omega(a, b)
        fused = ci_fuse(a, b, w_star)
        _, det_best = grid_omega_oracle(a.cov, b.cov, n=1001)
        worst_excess = max(worst_excess, float(np.linalg.det(fused.cov)) - det_best)
    elapsed = time.perf_counter() - start
    ok = worst_excess <= 1e-9 and elapsed < 5.0
    _report(
        2,
        ok,
        f"100 SPD pairs vs 1001-point grid: worst det excess = {worst_excess:.2e}, "
        f"{elapsed:.2f} s",
    )
    assert ok


# ------------------------------------------------------------------ 3


def _max_abs_diff(x: GaussianEstimate, y: GaussianEstimate) -> float:
    mean_diff = np.max(np.abs(np.atleast_1d(x.mean) - np.atleast_1d(y.mean)))
    cov_diff = np.max(np.abs(np.atleast_2d(x.cov) - np.atleast_2d(y.cov)))
    return float(max(mean_diff, cov_diff))


def test_fusion_fixed_point_and_endpoint_selection():
    rng = random.Random(33)
    worst_fixed = 0.0
    for i in range(100):
        if i % 2 == 0:
            e = GaussianEstimate(rng.uniform(-10, 10), rng.uniform(0.1, 5.0))
        else:
            e = GaussianEstimate([rng.uniform(-5, 5), rng.uniform(-5, 5)], random_spd_2x2(rng))
        worst_fixed = max(worst_fixed, _max_abs_diff(ci_fuse(e, e, rng.uniform(0.0, 1.0)), e))
    worst_end = 0.0
    for i in range(100):
        if i % 2 == 0:
            a = GaussianEstimate(rng.uniform(-10, 10), rng.uniform(0.1, 5.0))
            b = GaussianEstimate(rng.uniform(-10, 10), rng.uniform(0.1, 5.0))
        else:
            a = GaussianEstimate([rng.uniform(-5, 5), rng.uniform(-5, 5)], random_spd_2x2(rng))
            b = GaussianEstimate([rng.uniform(-5, 5), rng.uniform(-5, 5)], random_spd_2x2(rng))
        worst_end = max(worst_end, _max_abs_diff(ci_fuse(a, b, 1.0), a))
        worst_end = max(worst_end, _max_abs_diff(ci_fuse(a, b, 0.0), b))
    ok = worst_fixed <= 1e-12 and worst_end <= 1e-12
    _report(
        3,
        ok,
        f"fixed point worst diff = {worst_fixed:.2e}, "
        f"endpoint worst diff = {worst_end:.2e} (100 cases each)",
    )
    assert ok


# ------------------------------------------------------------------ 4


def test_local_combination_matches_fine_quadrature():
    rng = random.Random(44)
    worst_rel = 0.0
    for i in range(100):
        mu_l = rng.uniform(15.0, 35.0)
        sig_l = rng.uniform(0.3, 3.0)
        sig_g = rng.uniform(0.3, 3.0)
        kind = i % 3
        if kind == 0:  # rising local reading
            mu_g = mu_l - rng.uniform(0.0, 8.0)
            prev = None
        elif kind == 1:  # falling local reading, no recent-history exception
            mu_g = mu_l + rng.uniform(0.1, 8.0)
            prev = rng.choice([None, mu_g + 5.0 * sig_g])
        else:  # sharp fall from a tracked value near the global mean
            mu_g = mu_l + rng.uniform(0.1, 8.0)
            prev = mu_g + rng.uniform(-0.9, 0.9) * sig_g
        combined = combine_local(
            GaussianEstimate(mu_l, sig_l**2),
            GaussianEstimate(mu_g, sig_g**2),
            prev_local_mean=prev,
            sharp_fall_threshold=1.0,
        )
        mean_o, var_o = mixture_oracle(mu_l, sig_l, mu_g, sig_g, prev=prev, n_points=16385)
        worst_rel = max(
            worst_rel,
            abs(combined.mean - mean_o) / max(abs(mean_o), 1e-12),
            abs(combined.cov - var_o) / max(abs(var_o), 1e-12),
        )

    # Disjoint supports with the local far above: the result tracks the local.
    worst_pull = 0.0
    for _ in range(20):
        sig_l = rng.uniform(0.3, 2.0)
        sig_g = rng.uniform(0.3, 2.0)
        mu_g = rng.uniform(0.0, 10.0)
        mu_l = mu_g + 6.0 * (sig_l + sig_g) + rng.uniform(1.0, 10.0)
        combined = combine_local(
            GaussianEstimate(mu_l, sig_l**2), GaussianEstimate(mu_g, sig_g**2)
        )
        worst_pull = max(worst_pull, abs(combined.mean - mu_l) / sig_l)

    ok = worst_rel <= 1e-4 and worst_pull <= 0.1
    _report(
        4,
        ok,
        f"100 mixture cases vs 8x-finer quadrature: worst rel err = {worst_rel:.2e}; "
        f"disjoint-support mean pull = {worst_pull:.3f} sigma",
    )
    assert ok


# ------------------------------------------------------------------ 5


def test_detection_quality_under_offset_attack():
    base = ScenarioConfig()
    gc.collect()  # drop earlier criteria's garbage before the timed block
    start = time.perf_counter()
    stats: dict[float, tuple[float, float, float]] = {}
    for fraction in (0.10, 0.20):
        det, fp, fn = [], [], []
        for seed in range(1, 21):
            metrics = run_experiment(_with_fraction(base.with_master_seed(seed), fraction))
            det.append(metrics.detection_rate)
            fp.append(metrics.fp_rate)
            fn.append(metrics.fn_rate)
        stats[fraction] = (sum(det) / len(det), sum(fp) / len(fp), sum(fn) / len(fn))
    elapsed = time.perf_counter() - start
    ok = elapsed < 60.0 and all(
        d >= 0.90 and f <= 0.05 and n <= 0.10 for d, f, n in stats.values()
    )
    detail = "; ".join(
        f"{frac:.0%}: det {d:.3f} fp {f:.3f} fn {n:.3f}"
        for frac, (d, f, n) in stats.items()
    )
    _report(5, ok, f"40 runs, {detail}; {elapsed:.1f} s")
    assert ok


# ------------------------------------------------------------------ 6


def test_security_energy_overhead_is_positive_and_reported(tmp_path: Path):
    base = ScenarioConfig()
    start = time.perf_counter()
    overheads = []
    last_result = None
    for seed in range(201, 206):
        result = run_paired(_with_fraction(base.with_master_seed(seed), 0.20))
        overheads.append(result.energy_overhead_pct)
        last_result = result
    elapsed = time.perf_counter() - start

    summary_path = tmp_path / "summary.json"
    emit_report(last_result, "json", summary_path)
    reported = json.loads(summary_path.read_text())["energy_overhead_pct"]

    mean_overhead = sum(overheads) / len(overheads)
    ok = (
        mean_overhead > 0.0
        and reported is not None
        and reported == overheads[-1]
        and elapsed < 30.0
    )
    _report(
        6,
        ok,
        f"5 seed-paired runs at 20%: mean overhead {mean_overhead:+.1f}% "
        f"(all {['%+.1f' % o for o in overheads]}), summary.json reports "
        f"{reported:+.1f}%; {elapsed:.1f} s",
    )
    assert ok


# ------------------------------------------------------------------ 7


def test_delivery_ratio_unaffected_by_security_layer():
    base = ScenarioConfig()
    deltas = []
    for seed in range(301, 311):
        result = run_paired(base.with_master_seed(seed))
        deltas.append(abs(result.metrics.delivery_ratio - result.off_metrics.delivery_ratio))
    ok = max(deltas) <= 0.02
    _report(
        7,
        ok,
        f"10 seed-paired runs: max |ratio_on - ratio_off| = {max(deltas):.4f} (<= 0.02)",
    )
    assert ok


# ------------------------------------------------------------------ 8


def _gate_state(neighborhoods: dict[int, frozenset[int]]) -> NodeState:
    config = ProtocolConfig(
        broadcast_threshold_pct=2.0,
        sigma_factor=3.0,
        sensor_noise_sigma=1.0,
        gate_mode="last_sent",
    )
    return NodeState(me=0, two_hop=neighborhoods, config=config)


def test_broadcast_gate_two_percent_boundary():
    state = _gate_state({1: frozenset(), 2: frozenset()})
    setup = on_sample(state, 100.0, 0.0)
    assert len(setup) == 1  # first estimate always announces itself

    # A neighbor's tighter-or-equal estimate is adopted outright, so the
    # node's belief lands exactly on the advertised mean.
    quiet = on_estimate(state, EstimateBroadcast(1, GaussianEstimate(101.9, 1.0), 0), 0.1)
    assert state.global_estimate.mean == 101.9
    loud = on_estimate(state, EstimateBroadcast(1, GaussianEstimate(102.1, 1.0), 1), 0.2)
    assert state.global_estimate.mean == 102.1

    ok = (
        quiet == []
        and len(loud) == 1
        and isinstance(loud[0], EstimateBroadcast)
        and loud[0].estimate.mean == 102.1
    )
    _report(
        8,
        ok,
        f"1.9% change emitted {len(quiet)} broadcasts, 2.1% change emitted {len(loud)}",
    )
    assert ok


# ------------------------------------------------------------------ 9


def test_two_hop_suppression_exact_counts():
    # Triangle: B(0) hears A(1); B's other neighbor C(2) is already in A's
    # neighborhood, so a relay could tell C nothing new.
    triangle = _gate_state({1: frozenset({0, 2}), 2: frozenset({0, 1})})
    on_sample(triangle, 25.0, 0.0)
    out_triangle = on_estimate(
        triangle, EstimateBroadcast(1, GaussianEstimate(26.5, 0.5), 0), 0.1
    )
    assert triangle.global_estimate.mean == 26.5  # estimate did change

    # Chain: C moves out of A's range, so B is C's only source.
    chain = _gate_state({1: frozenset({0}), 2: frozenset({0})})
    on_sample(chain, 25.0, 0.0)
    out_chain = on_estimate(chain, EstimateBroadcast(1, GaussianEstimate(26.5, 0.5), 0), 0.1)
    assert chain.global_estimate.mean == 26.5

    ok = (
        out_triangle == []
        and len(out_chain) == 1
        and isinstance(out_chain[0], EstimateBroadcast)
    )
    _report(
        9,
        ok,
        f"covered neighborhood relayed {len(out_triangle)} messages, "
        f"uncovered relayed {len(out_chain)}",
    )
    assert ok


# ------------------------------------------------------------------ 10


def _run_artifacts(config: ScenarioConfig, out_dir: Path) -> tuple[bytes, bytes, bytes]:
    out_dir.mkdir()
    trace_path = out_dir / "trace.ndjson"
    with open(trace_path, "w") as trace_file:
        metrics = run(config, trace=trace_file)
    result = RunResult(config=config, metrics=metrics)
    emit_report(result, "csv", out_dir / "runs.csv")
    emit_report(result, "json", out_dir / "summary.json")
    return (
        (out_dir / "runs.csv").read_bytes(),
        trace_path.read_bytes(),
        (out_dir / "summary.json").read_bytes(),
    )


def test_byte_identical_reruns(tmp_path: Path):
    config = dataclasses.replace(
        _with_fraction(ScenarioConfig().with_master_seed(7), 0.20),
        node_count=40,
        area_m=(60.0, 60.0),
        simulation_time_s=30.0,
    )
    first = _run_artifacts(config, tmp_path / "a")
    second = _run_artifacts(config, tmp_path / "b")
    same = [x == y for x, y in zip(first, second)]
    ok = all(same)
    _report(
        10,
        ok,
        f"two identical invocations: runs.csv identical = {same[0]}, "
        f"trace.ndjson identical = {same[1]}, summary.json identical = {same[2]}",
    )
    assert ok


# ------------------------------------------------------------------ 11


def test_honest_convergence_without_faults():
    metrics = run_experiment(ScenarioConfig())
    ok = metrics.converged_fraction >= 0.99
    _report(
        11,
        ok,
        f"no-fault run: converged_fraction = {metrics.converged_fraction:.4f} (>= 0.99), "
        f"rmse = {metrics.rmse:.3f}",
    )
    assert ok
