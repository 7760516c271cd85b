"""Deterministic discrete-event simulation of the aggregation network.

Provides topology generation, an idealized broadcast radio with finite
receive buffers and optional i.i.d. loss, per-node energy accounting,
a spatially varying temperature field with an optional hotspot,
adversary injection, and the ground-truth oracle used for accuracy
metrics.

The field assigns each node a true temperature once per run (a Gaussian
spatial draw around the base mean); sensing then reads that value
deterministically, so estimate dynamics are driven by the network, not
by per-sample noise.  The event loop is strictly sequential; all
randomness flows through four seeded generators (topology, field,
adversary, loss), so a given configuration always reproduces the same
run bit for bit.
"""

from __future__ import annotations

import heapq
import json
import math
import random
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Mapping, Optional, TextIO, Union

from .fusion import FusionParams
from .protocol import (
    EstimateBroadcast,
    IsolationNotice,
    Message,
    NodeId,
    NodeState,
    PollReply,
    PollRequest,
    ProtocolConfig,
    finalize_polls,
    on_estimate,
    on_isolation_notice,
    on_poll_reply,
    on_poll_request,
    on_poll_timeout,
    on_sample,
)

if TYPE_CHECKING:  # typing only; the scenario package imports this module
    from .scenario.config import ScenarioConfig

__all__ = [
    "AdversaryModel",
    "Attack",
    "ConstantOffset",
    "EnergyLedger",
    "FieldRealization",
    "Hotspot",
    "NodeEnergy",
    "PhysicalField",
    "RadioModel",
    "RandomNoise",
    "RunMetrics",
    "Seeds",
    "StuckAt",
    "Topology",
    "adjacency_from_positions",
    "component_count",
    "generate_topology",
    "ground_truth_max",
    "realize_field",
    "run",
    "select_compromised",
]


# --------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True, slots=True)
class Hotspot:
    """A node set or disc whose true mean is offset while [start_s, end_s)."""

    offset_c: float
    start_s: float = 0.0
    end_s: float = math.inf
    node_ids: Optional[tuple[NodeId, ...]] = None
    region: Optional[tuple[float, float, float]] = None  # (x, y, radius)

    def __post_init__(self) -> None:
        if (self.node_ids is None) == (self.region is None):
            raise ValueError("hotspot requires exactly one of node_ids or region")
        if self.end_s < self.start_s:
            raise ValueError("hotspot end_s precedes start_s")
        if self.region is not None and self.region[2] < 0:
            raise ValueError("hotspot region radius must be nonnegative")

    def active(self, t: float) -> bool:
        return self.start_s <= t < self.end_s

    def affects(self, node: NodeId, position: tuple[float, float]) -> bool:
        if self.node_ids is not None:
            return node in self.node_ids
        x, y, radius = self.region
        return math.dist(position, (x, y)) <= radius


@dataclass(frozen=True, slots=True)
class PhysicalField:
    """Gaussian temperature field model.

    `base_sigma_c` is the spatial dispersion of per-node true
    temperatures around `base_mean_c` (zero yields a uniform field);
    the optional hotspot offsets a subset of nodes while active.  The
    per-run draw lives in a `FieldRealization`.
    """

    base_mean_c: float = 25.0
    base_sigma_c: float = 1.0
    hotspot: Optional[Hotspot] = None

    def __post_init__(self) -> None:
        if self.base_sigma_c < 0:
            raise ValueError("base_sigma_c must be nonnegative")


@dataclass(frozen=True)
class FieldRealization:
    """One run's frozen per-node true temperatures.

    `affected` caches which nodes the field's hotspot touches (by id
    list or by position), so per-sample reads stay cheap.
    """

    field: PhysicalField
    positions: dict[NodeId, tuple[float, float]]
    means: dict[NodeId, float]
    affected: frozenset[NodeId]

    def mean_at(self, node: NodeId, t: float) -> float:
        """The true temperature at `node` at time `t` (hotspot included)."""
        mean = self.means[node]
        hs = self.field.hotspot
        if hs is not None and node in self.affected and hs.active(t):
            mean += hs.offset_c
        return mean


def realize_field(
    field: PhysicalField,
    positions: Mapping[NodeId, tuple[float, float]],
    seed: int,
) -> FieldRealization:
    """Draw each node's true temperature from the field's spatial law.

    Draws are taken in ascending node order from a generator seeded
    with `seed`, so a realization depends only on (field, positions,
    seed) and never on adversary or traffic randomness.
    """
    rng = random.Random(seed)
    ids = sorted(positions)
    means = {n: field.base_mean_c + rng.gauss(0.0, field.base_sigma_c) for n in ids}
    hs = field.hotspot
    affected = frozenset(
        n for n in ids if hs is not None and hs.affects(n, positions[n])
    )
    return FieldRealization(
        field=field, positions=dict(positions), means=means, affected=affected
    )


@dataclass(frozen=True, slots=True)
class ConstantOffset:
    """Sensed values are shifted by a fixed offset."""

    offset_c: float


@dataclass(frozen=True, slots=True)
class StuckAt:
    """Sensed values are replaced by a constant."""

    value_c: float


@dataclass(frozen=True, slots=True)
class RandomNoise:
    """Sensed values gain extra zero-mean Gaussian noise."""

    sigma_c: float

    def __post_init__(self) -> None:
        if not self.sigma_c > 0:
            raise ValueError("sigma_c must be positive")


Attack = Union[ConstantOffset, StuckAt, RandomNoise]


@dataclass(frozen=True, slots=True)
class AdversaryModel:
    """Which nodes are compromised and how their sensing is corrupted.

    Compromised nodes run the unmodified protocol code; only the value
    they sense is corrupted, from `onset_s` onward.  The default onset
    sits past the initial consensus transient, so captured nodes begin
    as normal members and the detector faces estimates that were honest
    history a moment earlier.  When `selection_seed` is None the
    scenario's adversary seed is used.
    """

    compromised_fraction: float = 0.0
    attack: Attack = ConstantOffset(10.0)
    onset_s: float = 10.0
    selection_seed: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.compromised_fraction <= 1.0:
            raise ValueError("compromised_fraction must lie in [0, 1]")
        if self.onset_s < 0:
            raise ValueError("onset_s must be nonnegative")


@dataclass(frozen=True, slots=True)
class RadioModel:
    """Idealized collision-free broadcast radio."""

    range_m: float = 15.0
    loss_probability: float = 0.0
    per_message_airtime_s: float = 0.002
    buffer_capacity: int = 5

    def __post_init__(self) -> None:
        if not self.range_m > 0:
            raise ValueError("range_m must be positive")
        if not 0.0 <= self.loss_probability < 1.0:
            raise ValueError("loss_probability must lie in [0, 1)")
        if not self.per_message_airtime_s > 0:
            raise ValueError("per_message_airtime_s must be positive")
        if self.buffer_capacity < 1:
            raise ValueError("buffer_capacity must be >= 1")


@dataclass(frozen=True, slots=True)
class Seeds:
    """Independent seeds for the four random streams of a run."""

    topology: int = 42
    field: int = 43
    adversary: int = 44
    loss: int = 45


@dataclass(frozen=True)
class Topology:
    """Node positions with the derived adjacency and two-hop maps."""

    positions: dict[NodeId, tuple[float, float]]
    adjacency: dict[NodeId, frozenset[NodeId]]
    two_hop_maps: dict[NodeId, dict[NodeId, frozenset[NodeId]]]


def adjacency_from_positions(
    positions: Mapping[NodeId, tuple[float, float]], range_m: float
) -> dict[NodeId, frozenset[NodeId]]:
    """Symmetric adjacency at Euclidean distance <= range_m (no self-edges)."""
    ids = sorted(positions)
    neighbors: dict[NodeId, set[NodeId]] = {n: set() for n in ids}
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            if math.dist(positions[a], positions[b]) <= range_m:
                neighbors[a].add(b)
                neighbors[b].add(a)
    return {n: frozenset(neighbors[n]) for n in ids}


def generate_topology(
    n: int, area_m: tuple[float, float], range_m: float, seed: int
) -> Topology:
    """Place n nodes uniformly at random in a rectangle.

    Connectivity is not enforced; the resulting component count is
    reported in run metrics instead.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    width, height = area_m
    if width <= 0 or height <= 0:
        raise ValueError("area dimensions must be positive")
    if range_m <= 0:
        raise ValueError("range_m must be positive")
    rng = random.Random(seed)
    positions = {i: (rng.uniform(0.0, width), rng.uniform(0.0, height)) for i in range(n)}
    adjacency = adjacency_from_positions(positions, range_m)
    two_hop = {
        n_id: {m: adjacency[m] for m in sorted(adjacency[n_id])}
        for n_id in range(n)
    }
    return Topology(positions=positions, adjacency=adjacency, two_hop_maps=two_hop)


def component_count(adjacency: Mapping[NodeId, frozenset[NodeId]]) -> int:
    """Number of connected components in the adjacency graph."""
    seen: set[NodeId] = set()
    components = 0
    for start in sorted(adjacency):
        if start in seen:
            continue
        components += 1
        stack = [start]
        seen.add(start)
        while stack:
            node = stack.pop()
            for peer in adjacency[node]:
                if peer not in seen:
                    seen.add(peer)
                    stack.append(peer)
    return components


def select_compromised(node_count: int, fraction: float, seed: int) -> frozenset[NodeId]:
    """Choose round(fraction * node_count) distinct nodes uniformly by seed."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    k = round(fraction * node_count)
    if k == 0:
        return frozenset()
    return frozenset(random.Random(seed).sample(range(node_count), k))


def ground_truth_max(
    realization: FieldRealization, nodes: Iterable[NodeId], t: float
) -> float:
    """True maximum of the uncorrupted field means across `nodes` at time t.

    Callers pass the currently alive honest nodes; with none left the
    base mean is returned as a degenerate fallback.
    """
    best = None
    for n in nodes:
        mean = realization.mean_at(n, t)
        if best is None or mean > best:
            best = mean
    return realization.field.base_mean_c if best is None else best


class EnergyLedger:
    """Per-node energy accounting.

    Spending is recorded in separate tx/rx/sense buckets; the remaining
    budget is always derived from them, so conservation is exact.  A
    node whose remaining budget reaches zero is dead: the event that
    exhausted it completes, after which the node neither samples nor
    transmits nor receives.
    """

    __slots__ = ("initial_j", "spent_tx_j", "spent_rx_j", "spent_sense_j", "_alive")

    def __init__(self, node_ids: Iterable[NodeId], initial_j: float = 5.0) -> None:
        if not initial_j > 0:
            raise ValueError("initial_j must be positive")
        ids = list(node_ids)
        self.initial_j = initial_j
        self.spent_tx_j = {n: 0.0 for n in ids}
        self.spent_rx_j = {n: 0.0 for n in ids}
        self.spent_sense_j = {n: 0.0 for n in ids}
        self._alive = set(ids)

    def remaining_j(self, node: NodeId) -> float:
        return (
            self.initial_j
            - self.spent_tx_j[node]
            - self.spent_rx_j[node]
            - self.spent_sense_j[node]
        )

    def alive(self, node: NodeId) -> bool:
        return node in self._alive

    def alive_count(self) -> int:
        return len(self._alive)

    # The three charge methods are flattened copies of one another: they
    # run a third of a million times per run, so the shared-helper form
    # costs two extra frames per charge for no behavioral difference.

    def charge_tx(self, node: NodeId, joules: float) -> bool:
        """Add a charge; return True when this charge killed the node."""
        self.spent_tx_j[node] += joules
        if node in self._alive and (
            self.initial_j
            - self.spent_tx_j[node]
            - self.spent_rx_j[node]
            - self.spent_sense_j[node]
        ) <= 0.0:
            self._alive.discard(node)
            return True
        return False

    def charge_rx(self, node: NodeId, joules: float) -> bool:
        """Add a charge; return True when this charge killed the node."""
        self.spent_rx_j[node] += joules
        if node in self._alive and (
            self.initial_j
            - self.spent_tx_j[node]
            - self.spent_rx_j[node]
            - self.spent_sense_j[node]
        ) <= 0.0:
            self._alive.discard(node)
            return True
        return False

    def charge_sense(self, node: NodeId, joules: float) -> bool:
        """Add a charge; return True when this charge killed the node."""
        self.spent_sense_j[node] += joules
        if node in self._alive and (
            self.initial_j
            - self.spent_tx_j[node]
            - self.spent_rx_j[node]
            - self.spent_sense_j[node]
        ) <= 0.0:
            self._alive.discard(node)
            return True
        return False


# --------------------------------------------------------------------------
# Run metrics


@dataclass(frozen=True, slots=True)
class NodeEnergy:
    """Energy breakdown for one node at run end."""

    spent_tx_j: float
    spent_rx_j: float
    spent_sense_j: float
    remaining_j: float


@dataclass(frozen=True)
class RunMetrics:
    """Everything a single run reports.

    `delivery_ratio` is received / attempted in-range receptions (the
    radio-level bookkeeping; each attempted reception resolves as
    received or as exactly one of the loss/buffer/dead drop causes).
    `drops_isolation` counts messages discarded at the protocol layer
    because their source was isolated.  Accuracy (`rmse`,
    `max_abs_error`, `converged_fraction`) is measured over alive
    honest nodes against the ground-truth maximum.
    """

    node_count: int
    component_count: int
    compromised_nodes: tuple[NodeId, ...]
    alive_count: int
    messages_sent: int
    messages_received: int
    attempted_receptions: int
    drops_loss: int
    drops_buffer: int
    drops_dead: int
    drops_isolation: int
    polls_opened: int
    verdicts_malicious: int
    verdicts_benign: int
    tainted_broadcasts: int
    delivery_ratio: float
    rmse: float
    max_abs_error: float
    true_positives: int
    false_positives: int
    false_negatives: int
    detection_rate: float
    fp_rate: float
    fn_rate: float
    mean_time_to_detection: Optional[float]
    converged_fraction: float
    energy: dict[NodeId, NodeEnergy]
    total_tx_j: float
    total_rx_j: float
    total_sense_j: float
    total_spent_j: float


# --------------------------------------------------------------------------
# Engine

_RANK_SAMPLE = 0
_RANK_DELIVER = 1
_RANK_TIMEOUT = 2
_RANK_END = 3


def _corrupt(attack: Attack, true_value: float, rng: random.Random) -> float:
    if type(attack) is ConstantOffset:
        return true_value + attack.offset_c
    if type(attack) is StuckAt:
        return attack.value_c
    if type(attack) is RandomNoise:
        return true_value + rng.gauss(0.0, attack.sigma_c)
    raise TypeError(f"unknown attack model: {attack!r}")


def _validate_config(config: "ScenarioConfig") -> None:
    if config.node_count < 1:
        raise ValueError("node_count must be >= 1")
    if not config.simulation_time_s > 0:
        raise ValueError("simulation_time_s must be positive")
    if not config.sampling_period_s > 0:
        raise ValueError("sampling_period_s must be positive")
    if not config.initial_energy_j > 0:
        raise ValueError("initial_energy_j must be positive")
    for name in ("tx_power_w", "rx_power_w", "sense_power_w", "sample_duration_s"):
        if not getattr(config, name) > 0:
            raise ValueError(f"{name} must be positive")


class _Engine:
    """One run's mutable state: nodes, radio, queues, and counters."""

    def __init__(self, config: "ScenarioConfig", trace: Optional[TextIO]) -> None:
        _validate_config(config)
        self.cfg = config
        self.trace = trace
        self.radio = RadioModel(
            range_m=config.range_m,
            loss_probability=config.radio.loss_probability,
            per_message_airtime_s=config.radio.airtime_s,
            buffer_capacity=config.buffer_capacity,
        )
        self.topology = generate_topology(
            config.node_count, config.area_m, self.radio.range_m, config.seeds.topology
        )
        ids = range(config.node_count)
        self.sorted_adjacency = {
            n: tuple(sorted(self.topology.adjacency[n])) for n in ids
        }

        sigma_factor = config.sigma_factor if config.security_enabled else math.inf
        proto = ProtocolConfig(
            broadcast_threshold_pct=config.broadcast_threshold_pct,
            sigma_factor=sigma_factor,
            sharp_fall_threshold_sigmas=config.sharp_fall_threshold_sigmas,
            poll_timeout_s=config.poll_timeout_s,
            sensor_noise_sigma=config.sensor_noise_sigma,
            gate_mode=config.gate_mode,
            fusion=FusionParams(quadrature_points=config.quadrature_points),
        )
        self.states = {
            n: NodeState(me=n, two_hop=self.topology.two_hop_maps[n], config=proto)
            for n in ids
        }
        self.ledger = EnergyLedger(ids, config.initial_energy_j)

        adversary = config.adversary
        sel_seed = (
            adversary.selection_seed
            if adversary.selection_seed is not None
            else config.seeds.adversary
        )
        self.compromised = select_compromised(
            config.node_count, adversary.compromised_fraction, sel_seed
        )
        self.honest = frozenset(ids) - self.compromised
        self._attack = adversary.attack
        self._onset = adversary.onset_s
        self._noise_rng = random.Random(sel_seed + 1)
        self._loss_rng = random.Random(config.seeds.loss)

        self.realization = realize_field(
            config.field, self.topology.positions, config.seeds.field
        )
        # Ground truth changes only when the hotspot flips activity or an
        # honest node dies; cache it keyed on those two facts.
        self._gt_dirty = True
        self._gt_active = False
        self._gt_value = config.field.base_mean_c

        self._tx_j = config.tx_power_w * self.radio.per_message_airtime_s
        self._rx_j = config.rx_power_w * self.radio.per_message_airtime_s
        self._sense_j = config.sense_power_w * config.sample_duration_s
        self._loss_p = self.radio.loss_probability
        self._airtime = self.radio.per_message_airtime_s
        self._buffer_cap = self.radio.buffer_capacity
        self._period = config.sampling_period_s
        self._sim_time = config.simulation_time_s

        # Hot-path bindings: these run for every one of the hundreds of
        # thousands of events in a full-size run, where repeated attribute
        # chains are measurable interpreter overhead.  The ledger's alive
        # set is mutated in place and never reassigned, so holding a direct
        # reference keeps liveness checks to a set-membership test.
        self._alive_set = self.ledger._alive
        self._charge_tx = self.ledger.charge_tx
        self._charge_rx = self.ledger.charge_rx
        self._charge_sense = self.ledger.charge_sense
        self._loss_random = self._loss_rng.random
        self._means = self.realization.means
        self._hotspot = config.field.hotspot
        self._affected = self.realization.affected

        self._pending = {n: 0 for n in ids}
        self._heap: list[tuple] = []
        self._seq = 0
        self._first_notice: dict[NodeId, float] = {}
        self.messages_sent = 0
        self.messages_received = 0
        self.attempted = 0
        self.drops_loss = 0
        self.drops_buffer = 0
        self.drops_dead = 0
        self._sq_err_sum = 0.0
        self._err_count = 0
        self._max_abs = 0.0

    # -- plumbing

    def _push(self, time: float, rank: int, node: NodeId, payload) -> None:
        heapq.heappush(self._heap, (time, rank, node, self._seq, payload))
        self._seq += 1

    def _trace_line(self, record: dict) -> None:
        self.trace.write(json.dumps(record, sort_keys=True, separators=(",", ":")))
        self.trace.write("\n")

    def _on_death(self, node: NodeId) -> None:
        if node in self.honest:
            self._gt_dirty = True

    def _ground_truth(self, t: float) -> float:
        hs = self.cfg.field.hotspot
        active = hs is not None and hs.active(t)
        if self._gt_dirty or active != self._gt_active:
            alive = self.ledger.alive
            self._gt_value = ground_truth_max(
                self.realization, (n for n in self.honest if alive(n)), t
            )
            self._gt_active = active
            self._gt_dirty = False
        return self._gt_value

    # -- transmission

    def _transmit(self, src: NodeId, messages: list[Message], t: float) -> None:
        alive = self._alive_set
        pending = self._pending
        heap = self._heap
        push = heapq.heappush
        seq = self._seq
        loss_p = self._loss_p
        buffer_cap = self._buffer_cap
        deliver_at = t + self._airtime
        for msg in messages:
            if src not in alive:
                break
            if self._charge_tx(src, self._tx_j):
                self._on_death(src)
            self.messages_sent += 1
            kind = type(msg)
            if kind is PollRequest:
                push(heap, (t + self.cfg.poll_timeout_s, _RANK_TIMEOUT, src, seq, msg.poll_id))
                seq += 1
            elif kind is IsolationNotice and msg.suspect not in self._first_notice:
                self._first_notice[msg.suspect] = t
            for dst in self.sorted_adjacency[src]:
                self.attempted += 1
                if dst not in alive:
                    self.drops_dead += 1
                elif loss_p > 0.0 and self._loss_random() < loss_p:
                    self.drops_loss += 1
                elif pending[dst] >= buffer_cap:
                    self.drops_buffer += 1
                else:
                    pending[dst] += 1
                    push(heap, (deliver_at, _RANK_DELIVER, dst, seq, msg))
                    seq += 1
        self._seq = seq

    # -- event handlers

    def _process_sample(self, node: NodeId, t: float) -> None:
        if node not in self._alive_set:
            return
        if self._charge_sense(node, self._sense_j):
            self._on_death(node)
        # Inline of realization.mean_at: one read per sample event.
        sensed = self._means[node]
        hotspot = self._hotspot
        if hotspot is not None and node in self._affected and hotspot.active(t):
            sensed += hotspot.offset_c
        if node in self.compromised and t >= self._onset:
            sensed = _corrupt(self._attack, sensed, self._noise_rng)
        state = self.states[node]
        out = on_sample(state, sensed, t)
        if self.trace is not None:
            self._trace_line(
                {
                    "kind": "sample",
                    "node": node,
                    "t": t,
                    "sensed": sensed,
                    "mean": state.global_estimate.mean,
                    "var": state.global_estimate.cov,
                }
            )
        self._transmit(node, out, t)
        alive = self._alive_set
        if node in self.honest and node in alive:
            err = state.global_estimate.mean - self._ground_truth(t)
            self._sq_err_sum += err * err
            self._err_count += 1
            if abs(err) > self._max_abs:
                self._max_abs = abs(err)
        if node in alive:
            nxt = t + self._period
            if nxt < self._sim_time:
                self._push(nxt, _RANK_SAMPLE, node, None)

    def _process_deliver(self, dst: NodeId, msg: Message, t: float) -> None:
        self._pending[dst] -= 1
        if dst not in self._alive_set:
            self.drops_dead += 1
            if self.trace is not None:
                self._trace_line({"kind": "drop", "cause": "dead", "node": dst, "t": t})
            return
        if self._charge_rx(dst, self._rx_j):
            self._on_death(dst)
        self.messages_received += 1
        state = self.states[dst]
        kind = type(msg)
        if kind is EstimateBroadcast:
            out = on_estimate(state, msg, t)
        elif kind is PollRequest:
            out = on_poll_request(state, msg)
        elif kind is PollReply:
            out = on_poll_reply(state, msg, t)
        else:
            out = on_isolation_notice(state, msg)
        if self.trace is not None:
            if kind is EstimateBroadcast:
                record = {"msg": "estimate", "src": msg.src, "seq": msg.seq, "mean": msg.estimate.mean}
            elif kind is PollRequest:
                record = {"msg": "poll_request", "src": msg.src, "suspect": msg.suspect, "poll_id": msg.poll_id}
            elif kind is PollReply:
                record = {"msg": "poll_reply", "src": msg.src, "poll_id": msg.poll_id, "mean": msg.estimate.mean}
            else:
                record = {"msg": "isolation_notice", "accuser": msg.accuser, "suspect": msg.suspect}
            record.update({"kind": "deliver", "node": dst, "t": t})
            self._trace_line(record)
        self._transmit(dst, out, t)

    def _process_timeout(self, node: NodeId, poll_id: int, t: float) -> None:
        if node not in self._alive_set:
            return
        out = on_poll_timeout(self.states[node], poll_id, t)
        if self.trace is not None:
            self._trace_line({"kind": "poll_timeout", "node": node, "poll_id": poll_id, "t": t})
        self._transmit(node, out, t)

    # -- main loop and metrics

    def execute(self) -> RunMetrics:
        # Sampling phases are staggered across the period by node id.  With
        # every clock aligned, each period would begin with a burst of
        # simultaneous broadcasts that overflows the receive buffers; spread
        # phases keep the channel load uniform, the way unsynchronized
        # hardware clocks would.
        period = self.cfg.sampling_period_s
        count = self.cfg.node_count
        for n in range(count):
            self._push(period * (n / count), _RANK_SAMPLE, n, None)
        self._push(self._sim_time, _RANK_END, -1, None)
        heap = self._heap
        heappop = heapq.heappop
        process_sample = self._process_sample
        process_deliver = self._process_deliver
        process_timeout = self._process_timeout
        while heap:
            t, rank, node, _seq, payload = heappop(heap)
            if rank == _RANK_SAMPLE:
                process_sample(node, t)
            elif rank == _RANK_DELIVER:
                process_deliver(node, payload, t)
            elif rank == _RANK_TIMEOUT:
                process_timeout(node, payload, t)
            else:
                if self.trace is not None:
                    self._trace_line({"kind": "end", "t": t})
                break
        # Unresolved polls are judged on whatever replies arrived; the
        # radio is silent at this point so any notices are discarded.
        for n in range(self.cfg.node_count):
            if self.ledger.alive(n):
                finalize_polls(self.states[n])
        return self._collect()

    def _detected_by_majority(self, node: NodeId) -> bool:
        alive_neighbors = [
            m for m in self.sorted_adjacency[node] if self.ledger.alive(m)
        ]
        if not alive_neighbors:
            return False
        votes = sum(1 for m in alive_neighbors if node in self.states[m].isolated)
        return 2 * votes > len(alive_neighbors)

    def _collect(self) -> RunMetrics:
        cfg = self.cfg
        n_nodes = cfg.node_count
        compromised = sorted(self.compromised)
        tp = sum(1 for c in compromised if self._detected_by_majority(c))
        fp = sum(1 for h in sorted(self.honest) if self._detected_by_majority(h))
        fn = len(compromised) - tp
        ttd = [
            self._first_notice[c]
            for c in compromised
            if self._detected_by_majority(c) and c in self._first_notice
        ]

        gt_end = self._ground_truth(self._sim_time)
        tolerance = 3.0 * cfg.field.base_sigma_c
        alive_honest = [h for h in sorted(self.honest) if self.ledger.alive(h)]
        within = sum(
            1
            for h in alive_honest
            if self.states[h].global_estimate is not None
            and abs(self.states[h].global_estimate.mean - gt_end) <= tolerance
        )

        energy = {}
        for n in range(n_nodes):
            energy[n] = NodeEnergy(
                spent_tx_j=self.ledger.spent_tx_j[n],
                spent_rx_j=self.ledger.spent_rx_j[n],
                spent_sense_j=self.ledger.spent_sense_j[n],
                remaining_j=self.ledger.remaining_j(n),
            )
        total_tx = sum(e.spent_tx_j for e in energy.values())
        total_rx = sum(e.spent_rx_j for e in energy.values())
        total_sense = sum(e.spent_sense_j for e in energy.values())

        states = self.states.values()
        return RunMetrics(
            node_count=n_nodes,
            component_count=component_count(self.topology.adjacency),
            compromised_nodes=tuple(compromised),
            alive_count=self.ledger.alive_count(),
            messages_sent=self.messages_sent,
            messages_received=self.messages_received,
            attempted_receptions=self.attempted,
            drops_loss=self.drops_loss,
            drops_buffer=self.drops_buffer,
            drops_dead=self.drops_dead,
            drops_isolation=sum(s.drops_isolation for s in states),
            polls_opened=sum(s.polls_opened for s in states),
            verdicts_malicious=sum(s.verdicts_malicious for s in states),
            verdicts_benign=sum(s.verdicts_benign for s in states),
            tainted_broadcasts=sum(s.tainted_broadcasts for s in states),
            delivery_ratio=(
                self.messages_received / self.attempted if self.attempted else 1.0
            ),
            rmse=math.sqrt(self._sq_err_sum / self._err_count) if self._err_count else 0.0,
            max_abs_error=self._max_abs,
            true_positives=tp,
            false_positives=fp,
            false_negatives=fn,
            detection_rate=tp / max(1, len(compromised)),
            fp_rate=fp / max(1, len(self.honest)),
            fn_rate=fn / max(1, len(compromised)),
            mean_time_to_detection=(sum(ttd) / len(ttd)) if ttd else None,
            converged_fraction=within / max(1, len(alive_honest)),
            energy=energy,
            total_tx_j=total_tx,
            total_rx_j=total_rx,
            total_sense_j=total_sense,
            total_spent_j=total_tx + total_rx + total_sense,
        )


def run(config: "ScenarioConfig", trace: Optional[TextIO] = None) -> RunMetrics:
    """Execute one deterministic run; optionally stream an event trace.

    The trace is one JSON object per processed event, written in event
    order; identical configurations produce byte-identical streams.
    """
    return _Engine(config, trace).execute()
