"""Tests for the deterministic discrete-event network simulator."""

import dataclasses
import io
import json
import math
import random

import pytest

from securagg.scenario import ScenarioConfig
from securagg.simulation import (
    AdversaryModel,
    ConstantOffset,
    FieldRealization,
    Hotspot,
    PhysicalField,
    Seeds,
    adjacency_from_positions,
    component_count,
    generate_topology,
    ground_truth_max,
    realize_field,
    run,
    select_compromised,
)


def small_config(**kwargs):
    """A scenario small enough for unit tests but with realistic physics."""
    defaults = dict(
        node_count=20,
        area_m=(40.0, 40.0),
        simulation_time_s=15.0,
        seeds=Seeds(topology=7, field=8, adversary=9, loss=10),
    )
    defaults.update(kwargs)
    return ScenarioConfig(**defaults)


# -------------------------------------------------------------- topology


def test_adjacency_pair_at_exact_range_is_connected():
    positions = {0: (0.0, 0.0), 1: (15.0, 0.0)}
    adjacency = adjacency_from_positions(positions, 15.0)
    assert adjacency[0] == frozenset({1})
    assert adjacency[1] == frozenset({0})


def test_adjacency_pair_beyond_range_is_disconnected():
    positions = {0: (0.0, 0.0), 1: (15.000001, 0.0)}
    adjacency = adjacency_from_positions(positions, 15.0)
    assert adjacency[0] == frozenset()
    assert adjacency[1] == frozenset()


def test_adjacency_matches_pairwise_distances_on_random_layouts():
    rng = random.Random(1234)
    for _ in range(20):
        positions = {
            n: (rng.uniform(0, 60), rng.uniform(0, 60)) for n in range(25)
        }
        adjacency = adjacency_from_positions(positions, 15.0)
        for a in positions:
            assert a not in adjacency[a]
            for b in positions:
                if a == b:
                    continue
                expected = math.dist(positions[a], positions[b]) <= 15.0
                assert (b in adjacency[a]) == expected
                assert (a in adjacency[b]) == (b in adjacency[a])


def test_generate_topology_is_deterministic_and_in_bounds():
    one = generate_topology(50, (120.0, 90.0), 15.0, seed=42)
    two = generate_topology(50, (120.0, 90.0), 15.0, seed=42)
    other = generate_topology(50, (120.0, 90.0), 15.0, seed=43)
    assert one.positions == two.positions
    assert one.adjacency == two.adjacency
    assert one.positions != other.positions
    for x, y in one.positions.values():
        assert 0.0 <= x <= 120.0
        assert 0.0 <= y <= 90.0


def test_generate_topology_two_hop_maps_mirror_adjacency():
    topology = generate_topology(30, (60.0, 60.0), 15.0, seed=5)
    for node, local_map in topology.two_hop_maps.items():
        assert set(local_map) == set(topology.adjacency[node])
        for neighbor, their_neighbors in local_map.items():
            assert their_neighbors == topology.adjacency[neighbor]


def test_component_count_examples():
    chain = {0: frozenset({1}), 1: frozenset({0, 2}), 2: frozenset({1})}
    assert component_count(chain) == 1
    split = {
        0: frozenset({1}),
        1: frozenset({0}),
        2: frozenset({3}),
        3: frozenset({2}),
        4: frozenset(),
    }
    assert component_count(split) == 3
    assert component_count({0: frozenset()}) == 1


# -------------------------------------------------------------- field model


def test_realize_field_uniform_when_sigma_is_zero():
    field = PhysicalField(base_mean_c=25.0, base_sigma_c=0.0)
    realization = realize_field(field, {0: (0, 0), 1: (3, 4)}, seed=99)
    assert realization.means == {0: 25.0, 1: 25.0}
    assert realization.affected == frozenset()


def test_realize_field_is_seed_deterministic():
    field = PhysicalField(base_mean_c=25.0, base_sigma_c=1.0)
    positions = {n: (float(n), 0.0) for n in range(10)}
    assert realize_field(field, positions, 7).means == realize_field(field, positions, 7).means
    assert realize_field(field, positions, 7).means != realize_field(field, positions, 8).means


def test_hotspot_offsets_members_only_while_active():
    hotspot = Hotspot(offset_c=5.0, start_s=5.0, end_s=10.0, region=(0.0, 0.0, 1.0))
    field = PhysicalField(base_mean_c=25.0, base_sigma_c=0.0, hotspot=hotspot)
    realization = realize_field(field, {0: (0.5, 0.0), 1: (30.0, 0.0)}, seed=1)
    assert realization.affected == frozenset({0})
    assert realization.mean_at(0, 4.999) == 25.0
    assert realization.mean_at(0, 5.0) == 30.0  # window start is inclusive
    assert realization.mean_at(0, 9.999) == 30.0
    assert realization.mean_at(0, 10.0) == 25.0  # window end is exclusive
    assert realization.mean_at(1, 7.0) == 25.0


def test_hotspot_requires_exactly_one_membership_rule():
    with pytest.raises(ValueError):
        Hotspot(offset_c=5.0)
    with pytest.raises(ValueError):
        Hotspot(offset_c=5.0, node_ids=(0,), region=(0.0, 0.0, 1.0))


def test_ground_truth_max_examples():
    hotspot = Hotspot(offset_c=5.0, start_s=5.0, end_s=10.0, node_ids=(0,))
    field = PhysicalField(base_mean_c=25.0, base_sigma_c=0.0, hotspot=hotspot)
    realization = realize_field(field, {0: (0, 0), 1: (1, 0)}, seed=1)
    assert ground_truth_max(realization, [0, 1], t=0.0) == 25.0
    assert ground_truth_max(realization, [0, 1], t=7.0) == 30.0
    assert ground_truth_max(realization, [1], t=7.0) == 25.0  # member excluded
    assert ground_truth_max(realization, [0, 1], t=12.0) == 25.0  # expired
    assert ground_truth_max(realization, [], t=0.0) == 25.0  # degenerate fallback


# -------------------------------------------------------------- adversary picks


def test_select_compromised_size_and_determinism():
    assert select_compromised(100, 0.0, seed=3) == frozenset()
    picked = select_compromised(10, 0.3, seed=3)
    assert len(picked) == 3
    assert picked <= frozenset(range(10))
    assert select_compromised(10, 0.3, seed=3) == picked
    assert select_compromised(160, 0.2, seed=5) != select_compromised(160, 0.2, seed=6)
    with pytest.raises(ValueError):
        select_compromised(10, 1.5, seed=0)


# -------------------------------------------------------------- single runs


def test_single_node_run_is_silent_and_spends_sense_energy_only():
    config = small_config(node_count=1, simulation_time_s=10.0)
    metrics = run(config)
    assert metrics.node_count == 1
    assert metrics.component_count == 1
    assert metrics.messages_sent == 0  # nobody within range, nothing to say
    assert metrics.messages_received == 0
    assert metrics.attempted_receptions == 0
    assert metrics.delivery_ratio == 1.0
    assert metrics.polls_opened == 0
    # Samples land at 0.0, 0.5, ..., 9.5: twenty sense charges and no radio.
    energy = metrics.energy[0]
    assert energy.spent_tx_j == 0.0
    assert energy.spent_rx_j == 0.0
    assert energy.spent_sense_j == pytest.approx(20 * 0.010 * 0.010, abs=1e-15)
    assert metrics.total_spent_j == pytest.approx(energy.spent_sense_j, abs=1e-15)
    assert metrics.converged_fraction == 1.0


def test_every_node_conserves_energy_exactly():
    config = small_config(
        node_count=30,
        simulation_time_s=20.0,
        adversary=AdversaryModel(compromised_fraction=0.1),
    )
    config = dataclasses.replace(
        config, radio=dataclasses.replace(config.radio, loss_probability=0.1)
    )
    metrics = run(config)
    for node_energy in metrics.energy.values():
        spent = (
            node_energy.spent_tx_j
            + node_energy.spent_rx_j
            + node_energy.spent_sense_j
        )
        assert spent + node_energy.remaining_j == pytest.approx(
            config.initial_energy_j, abs=1e-12
        )
    assert metrics.total_tx_j == pytest.approx(
        sum(e.spent_tx_j for e in metrics.energy.values()), abs=1e-12
    )
    assert metrics.total_spent_j == pytest.approx(
        metrics.total_tx_j + metrics.total_rx_j + metrics.total_sense_j, abs=1e-12
    )


def test_reception_outcomes_partition_attempts():
    config = small_config(
        node_count=30,
        simulation_time_s=20.0,
        adversary=AdversaryModel(compromised_fraction=0.2),
    )
    config = dataclasses.replace(
        config, radio=dataclasses.replace(config.radio, loss_probability=0.2)
    )
    metrics = run(config)
    accounted = (
        metrics.messages_received
        + metrics.drops_loss
        + metrics.drops_buffer
        + metrics.drops_dead
    )
    # Messages still in flight when the clock expires are the only gap.
    assert 0 <= metrics.attempted_receptions - accounted <= config.node_count
    assert metrics.drops_loss > 0
    assert metrics.delivery_ratio == pytest.approx(
        metrics.messages_received / metrics.attempted_receptions
    )


def test_identical_configs_reproduce_metrics_and_trace_bytes():
    config = small_config(
        node_count=25,
        simulation_time_s=15.0,
        adversary=AdversaryModel(compromised_fraction=0.2),
    )
    first_trace, second_trace = io.StringIO(), io.StringIO()
    first = run(config, trace=first_trace)
    second = run(config, trace=second_trace)
    assert first == second
    assert first_trace.getvalue() == second_trace.getvalue()


def test_loss_probability_suppresses_deliveries():
    lossless = small_config()
    lossy = dataclasses.replace(
        lossless, radio=dataclasses.replace(lossless.radio, loss_probability=0.4)
    )
    clean = run(lossless)
    noisy = run(lossy)
    assert clean.drops_loss == 0
    assert noisy.drops_loss > 0
    assert noisy.messages_received < clean.messages_received
    assert noisy.delivery_ratio < clean.delivery_ratio


def test_moderate_hotspot_step_is_tracked_without_suspicion():
    # A field-wide +4 degree step: every sensor sees it, estimates follow,
    # and the change stays inside the deviation screen, so no polls open
    # and nobody gets isolated for reporting a real event.
    hotspot = Hotspot(offset_c=4.0, start_s=5.0, region=(5.0, 5.0, 100.0))
    config = ScenarioConfig(
        node_count=12,
        area_m=(10.0, 10.0),  # everyone inside radio range: one component
        simulation_time_s=40.0,
        field=PhysicalField(base_mean_c=25.0, base_sigma_c=1.0, hotspot=hotspot),
    ).with_master_seed(33)
    metrics = run(config)
    assert metrics.component_count == 1
    assert metrics.polls_opened == 0
    assert metrics.false_positives == 0
    assert metrics.converged_fraction == 1.0


def test_exhausted_batteries_silence_the_network():
    config = small_config(node_count=10, simulation_time_s=10.0, initial_energy_j=5e-4)
    metrics = run(config)
    assert metrics.alive_count == 0
    assert metrics.converged_fraction == 0.0
    accounted = (
        metrics.messages_received
        + metrics.drops_loss
        + metrics.drops_buffer
        + metrics.drops_dead
    )
    assert 0 <= metrics.attempted_receptions - accounted <= config.node_count


def test_first_samples_are_staggered_across_the_period():
    config = small_config(node_count=4, simulation_time_s=2.0, sampling_period_s=0.5)
    trace = io.StringIO()
    run(config, trace=trace)
    first_sample = {}
    for line in trace.getvalue().splitlines():
        event = json.loads(line)
        if event["kind"] == "sample" and event["node"] not in first_sample:
            first_sample[event["node"]] = event["t"]
    assert first_sample == {0: 0.0, 1: 0.125, 2: 0.25, 3: 0.375}


def test_trace_is_valid_ndjson_with_known_event_kinds():
    config = small_config(
        node_count=25,
        simulation_time_s=15.0,
        adversary=AdversaryModel(compromised_fraction=0.2),
    )
    trace = io.StringIO()
    run(config, trace=trace)
    lines = trace.getvalue().splitlines()
    kinds = []
    for line in lines:
        event = json.loads(line)
        kinds.append(event["kind"])
        if event["kind"] == "deliver":
            assert event["msg"] in (
                "estimate",
                "poll_request",
                "poll_reply",
                "isolation_notice",
            )
    assert set(kinds) <= {"sample", "deliver", "drop", "poll_timeout", "end"}
    assert kinds[-1] == "end"
    assert kinds.count("sample") >= config.node_count


# -------------------------------------------------------------- security runs


def test_security_off_matches_traffic_when_nothing_is_wrong():
    base = small_config()
    secured = run(dataclasses.replace(base, security_enabled=True))
    unsecured = run(dataclasses.replace(base, security_enabled=False))
    assert secured.polls_opened == 0
    assert unsecured.polls_opened == 0
    assert secured.false_positives == 0
    assert secured.messages_sent == unsecured.messages_sent
    assert secured.total_spent_j == unsecured.total_spent_j


def test_rates_use_safe_denominators_without_an_adversary():
    metrics = run(small_config())
    assert metrics.compromised_nodes == ()
    assert metrics.detection_rate == 0.0
    assert metrics.fn_rate == 0.0
    assert metrics.fp_rate == 0.0
    assert metrics.mean_time_to_detection is None


def test_offset_attackers_are_detected_and_isolated():
    config = ScenarioConfig(
        node_count=40,
        area_m=(60.0, 60.0),
        simulation_time_s=30.0,
        adversary=AdversaryModel(
            compromised_fraction=0.2, attack=ConstantOffset(10.0)
        ),
    ).with_master_seed(7)
    metrics = run(config)
    assert len(metrics.compromised_nodes) == 8
    assert metrics.true_positives + metrics.false_negatives == 8
    assert metrics.detection_rate >= 0.5
    assert metrics.fp_rate <= 0.15
    assert metrics.polls_opened > 0
    assert metrics.verdicts_malicious > 0
    assert metrics.mean_time_to_detection is not None
    assert metrics.mean_time_to_detection >= config.adversary.onset_s
