"""Per-node protocol state machine for secure distributed max aggregation.

Each node combines local measurements into its global estimate, fuses
estimates received from neighbors, gates its own broadcasts on whether they
would change anyone's mind (with two-hop suppression of redundant relays),
and runs the deviation-poll-verdict security loop that isolates nodes whose
estimates a majority of neighbors contradict.

Handlers mutate the passed NodeState in place and return the messages to
transmit; they never touch the network themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .fusion import (
    DEFAULT_PARAMS,
    FusionParams,
    GaussianEstimate,
    combine_local_scalar,
    deviation_sigmas,
    fuse_global,
)

NodeId = int

_GATE_EPS = 1e-9
_POLL_ID_STRIDE = 1 << 32

GATE_MODES = ("per_neighbor", "last_sent")


@dataclass(frozen=True, slots=True)
class EstimateBroadcast:
    src: NodeId
    estimate: GaussianEstimate
    seq: int


@dataclass(frozen=True, slots=True)
class PollRequest:
    src: NodeId
    suspect: NodeId
    poll_id: int


@dataclass(frozen=True, slots=True)
class PollReply:
    src: NodeId
    poll_id: int
    estimate: GaussianEstimate


@dataclass(frozen=True, slots=True)
class IsolationNotice:
    accuser: NodeId
    suspect: NodeId


Message = Union[EstimateBroadcast, PollRequest, PollReply, IsolationNotice]


class Verdict(Enum):
    MALICIOUS = "malicious"
    BENIGN = "benign"


@dataclass(frozen=True, slots=True)
class ProtocolConfig:
    """Thresholds and timers governing a node's behavior.

    gate_mode selects what the relative-change broadcast gate compares
    against: each neighbor's stored estimate ("per_neighbor") or the node's
    own last transmitted value ("last_sent").
    """

    broadcast_threshold_pct: float = 2.0
    sigma_factor: float = 3.0
    sharp_fall_threshold_sigmas: float = 1.0
    poll_timeout_s: float = 1.0
    sensor_noise_sigma: float = 1.0
    gate_mode: str = "per_neighbor"
    fusion: FusionParams = DEFAULT_PARAMS

    def __post_init__(self):
        for name in ("broadcast_threshold_pct", "sigma_factor",
                     "sharp_fall_threshold_sigmas", "poll_timeout_s",
                     "sensor_noise_sigma"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.gate_mode not in GATE_MODES:
            raise ValueError(f"gate_mode must be one of {GATE_MODES}, got {self.gate_mode!r}")


@dataclass(slots=True)
class PollContext:
    """Bookkeeping for one open poll at its accuser."""

    suspect: NodeId
    suspect_estimate: GaussianEstimate
    replies: dict[NodeId, GaussianEstimate]
    deadline: float
    expected: frozenset[NodeId]


@dataclass(slots=True)
class NodeState:
    """Everything one node knows; owned by a single event-loop actor."""

    me: NodeId
    two_hop: dict[NodeId, frozenset[NodeId]]
    config: ProtocolConfig
    global_estimate: Optional[GaussianEstimate] = None
    last_local_mean: Optional[float] = None
    last_broadcast: Optional[GaussianEstimate] = None
    neighbor_table: dict[NodeId, tuple[GaussianEstimate, float]] = field(default_factory=dict)
    isolated: set[NodeId] = field(default_factory=set)
    pending_polls: dict[int, PollContext] = field(default_factory=dict)
    muted: bool = False
    next_seq: int = 0
    # Counters surfaced in run metrics.
    drops_isolation: int = 0
    drops_unknown: int = 0
    duplicate_broadcasts: int = 0
    duplicate_replies: int = 0
    polls_opened: int = 0
    verdicts_malicious: int = 0
    verdicts_benign: int = 0
    suspect_replies_excluded: int = 0
    tainted_broadcasts: int = 0
    _last_seen_seq: dict[NodeId, int] = field(default_factory=dict)
    _poll_counter: int = 0


def decide_broadcast(
    state: NodeState,
    new_estimate: GaussianEstimate,
    trigger_src: Optional[NodeId] = None,
) -> bool:
    """Would transmitting new_estimate significantly change any neighbor?

    A neighbor is eligible only if it is not isolated and, when the update
    was triggered by a received broadcast, it could not already have heard
    the same information from the original sender (it is neither the sender
    nor in the sender's neighborhood).  In per_neighbor mode the relative
    change is measured against each eligible neighbor's stored estimate
    (missing entries count as exceeding); in last_sent mode against this
    node's own last transmitted value.
    """
    cfg = state.config
    covered = state.two_hop.get(trigger_src) if trigger_src is not None else None
    per_neighbor = cfg.gate_mode == "per_neighbor"
    threshold = cfg.broadcast_threshold_pct
    new_mean = new_estimate.mean
    table = state.neighbor_table
    isolated = state.isolated
    any_eligible = False
    for n in state.two_hop:
        if n in isolated:
            continue
        if trigger_src is not None and (n == trigger_src or n in covered):
            continue
        any_eligible = True
        if not per_neighbor:
            break
        entry = table.get(n)
        if entry is None:
            return True
        stored = entry[0].mean
        if abs(new_mean - stored) / max(abs(stored), _GATE_EPS) * 100.0 > threshold:
            return True
    if not any_eligible or per_neighbor:
        return False
    last = state.last_broadcast
    if last is None:
        return True
    return abs(new_mean - last.mean) / max(abs(last.mean), _GATE_EPS) * 100.0 > threshold


def _maybe_broadcast(state: NodeState, trigger_src: Optional[NodeId]) -> list[Message]:
    if state.muted or state.global_estimate is None:
        return []
    estimate = state.global_estimate
    if not decide_broadcast(state, estimate, trigger_src):
        return []
    state.last_broadcast = estimate
    msg = EstimateBroadcast(state.me, estimate, state.next_seq)
    state.next_seq += 1
    if state.pending_polls:
        state.tainted_broadcasts += 1
    return [msg]


def on_sample(state: NodeState, measurement: float, now: float) -> list[Message]:
    """Fold a new local measurement into the global estimate.

    The first measurement initializes the estimate directly; afterwards the
    observation Gaussian is combined with the current global belief.
    """
    cfg = state.config
    noise_var = cfg.sensor_noise_sigma * cfg.sensor_noise_sigma
    current = state.global_estimate
    if current is None:
        state.global_estimate = GaussianEstimate(measurement, noise_var)
    else:
        mean, var = combine_local_scalar(
            measurement, noise_var, current.mean, current.cov,
            state.last_local_mean, cfg.sharp_fall_threshold_sigmas, cfg.fusion,
        )
        state.global_estimate = GaussianEstimate(mean, var)
    state.last_local_mean = measurement
    return _maybe_broadcast(state, None)


def on_estimate(state: NodeState, msg: EstimateBroadcast, now: float) -> list[Message]:
    """Handle a neighbor's estimate broadcast: record, screen, fuse, relay."""
    src = msg.src
    if src in state.isolated:
        state.drops_isolation += 1
        return []
    if src not in state.two_hop:
        state.drops_unknown += 1
        return []
    if msg.seq <= state._last_seen_seq.get(src, -1):
        state.duplicate_broadcasts += 1
        return []
    state._last_seen_seq[src] = msg.seq
    state.neighbor_table[src] = (msg.estimate, now)
    current = state.global_estimate
    if current is None:
        # Nothing sensed yet; adopt the neighbor's view as a starting point.
        state.global_estimate = msg.estimate
        return _maybe_broadcast(state, src)
    cfg = state.config
    dev = abs(msg.estimate.mean - current.mean) / math.sqrt(current.cov)
    if dev > cfg.sigma_factor:
        # Suspicious deviation: park the value behind a neighborhood poll
        # instead of fusing it now.  A benign verdict incorporates the parked
        # estimate; a malicious one isolates the sender.  Fusing eagerly
        # would let a poisoned value enter this node's belief -- and its next
        # scheduled broadcast -- while the neighborhood is still voting,
        # which turns every briefly-deceived node into a convincing decoy.
        if any(c.suspect == src for c in state.pending_polls.values()):
            return []  # one open poll per suspect; the verdict settles it
        poll_id = state.me * _POLL_ID_STRIDE + state._poll_counter
        state._poll_counter += 1
        expected = frozenset(n for n in state.two_hop if n not in state.isolated)
        state.pending_polls[poll_id] = PollContext(
            suspect=src,
            suspect_estimate=msg.estimate,
            replies={},
            deadline=now + cfg.poll_timeout_s,
            expected=expected,
        )
        state.polls_opened += 1
        return [PollRequest(state.me, src, poll_id)]
    state.global_estimate = fuse_global(current, msg.estimate)
    return _maybe_broadcast(state, src)


def on_poll_request(state: NodeState, msg: PollRequest) -> list[Message]:
    """Answer an accuser's request with this node's current global estimate."""
    if msg.src in state.isolated:
        state.drops_isolation += 1
        return []
    if state.global_estimate is None:
        return []
    return [PollReply(state.me, msg.poll_id, state.global_estimate)]


def on_poll_reply(state: NodeState, msg: PollReply, now: float) -> list[Message]:
    """Record a reply; close the poll once everyone answered or time ran out."""
    ctx = state.pending_polls.get(msg.poll_id)
    if ctx is None:
        return []
    if msg.src in state.isolated:
        state.drops_isolation += 1
        return []
    if msg.src in ctx.replies:
        state.duplicate_replies += 1
        return []
    ctx.replies[msg.src] = msg.estimate
    if len(ctx.replies) >= len(ctx.expected) or now >= ctx.deadline:
        return _close_poll(state, msg.poll_id)
    return []


def on_poll_timeout(state: NodeState, poll_id: int, now: float) -> list[Message]:
    """Deadline passed: judge the suspect on whatever replies arrived."""
    if poll_id not in state.pending_polls:
        return []
    return _close_poll(state, poll_id)


def _close_poll(state: NodeState, poll_id: int) -> list[Message]:
    ctx = state.pending_polls.pop(poll_id)
    if ctx.suspect in ctx.replies:
        state.suspect_replies_excluded += 1
    votes = [est for nid, est in ctx.replies.items() if nid != ctx.suspect]
    result = verdict(ctx.suspect_estimate, votes, state.config.sigma_factor)
    if result is Verdict.MALICIOUS:
        state.verdicts_malicious += 1
        isolate(state, ctx.suspect)
        return [IsolationNotice(state.me, ctx.suspect)]
    state.verdicts_benign += 1
    # Acquitted: the neighborhood agrees the value is plausible, so the
    # estimate parked when the poll opened is incorporated now (unless the
    # suspect was isolated meanwhile on another poll's notice).
    if ctx.suspect not in state.isolated:
        state.global_estimate = fuse_global(
            state.global_estimate, ctx.suspect_estimate
        )
    return []


def verdict(
    suspect_estimate: GaussianEstimate,
    replies: list[GaussianEstimate],
    sigma_factor: float,
) -> Verdict:
    """Majority decision: malicious iff more than half the replies disagree.

    Disagreement means the suspect's estimate deviates from a reply by
    strictly more than sigma_factor of that reply's own sigma.  Ties and
    empty reply sets are benign: isolation needs positive evidence.
    """
    if not replies:
        return Verdict.BENIGN
    deviating = sum(
        1 for r in replies if deviation_sigmas(suspect_estimate, r) > sigma_factor
    )
    return Verdict.MALICIOUS if 2 * deviating > len(replies) else Verdict.BENIGN


def isolate(state: NodeState, suspect: NodeId) -> None:
    """Stop trusting suspect and purge its influence from the estimate.

    The global estimate is rebuilt from this node's own last observation
    fused with the surviving neighbor-table entries in ascending node order,
    so the suspect's past contribution is forgotten.  Idempotent.
    """
    if suspect == state.me:
        raise ValueError("a node cannot isolate itself; self-notices mute instead")
    if suspect in state.isolated:
        return
    state.isolated.add(suspect)
    had_entry = state.neighbor_table.pop(suspect, None) is not None
    if had_entry and state.last_local_mean is not None:
        cfg = state.config
        noise_var = cfg.sensor_noise_sigma * cfg.sensor_noise_sigma
        rebuilt = GaussianEstimate(state.last_local_mean, noise_var)
        for nid in sorted(state.neighbor_table):
            rebuilt = fuse_global(rebuilt, state.neighbor_table[nid][0])
        state.global_estimate = rebuilt


def on_isolation_notice(state: NodeState, msg: IsolationNotice) -> list[Message]:
    """Apply a neighbor's isolation verdict; a notice naming us mutes us."""
    if msg.accuser in state.isolated:
        state.drops_isolation += 1
        return []
    if msg.suspect == state.me:
        state.muted = True
        return []
    if msg.suspect != msg.accuser:
        isolate(state, msg.suspect)
    return []


def finalize_polls(state: NodeState) -> None:
    """Resolve all still-pending polls at end of run without transmitting."""
    for poll_id in sorted(state.pending_polls):
        _close_poll(state, poll_id)
