"""Node-local synchronizer: two guarded actions that simulate one synchronous
step per phase on whatever edges survive a two-round ack/block handshake.

Each node keeps, per port, a one-bit ack it raises after reading a same-phase
neighbor, and a one-bit block register that either endpoint may set once it
has seen the other side's ack; the block register is the only remotely
writable bit. A node advances its phase (runs the wrapped algorithm's step)
exactly when every port it still waits on is blocked. Ports whose edge
vanished since the phase started are dropped from the wait set, but a port
that was blocked before vanishing still feeds the step.

All reads a node performs during a stage observe other nodes as they were at
the start of that stage; its own writes land at the end of the stage.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping


class ProtocolViolation(RuntimeError):
    """The engine fed the node something the model forbids (harness bug)."""


class ActionKind(Enum):
    HANDSHAKE = "handshake"
    EXECUTE = "execute"


@dataclass
class PortFlags:
    ack: int = 0
    block: int = 0


@dataclass(frozen=True)
class PulledView:
    """Snapshot of the neighbor behind a port, as of the start of the stage
    the pull happened in. Immutable once pulled except for ack refreshes,
    which replace only ``ack`` and keep the phase-start algorithm snapshot.

    ``detector`` is the neighbor's accumulated disconnection set at stage
    start, before any same-stage activation of the neighbor clears it.
    """

    phase: int
    synch: int
    remote_port: int
    ack: int
    valid_ports: frozenset[int]
    phase_drops: frozenset[int]
    detector: frozenset[int]
    algo_state: Any

    def with_ack(self, ack: int) -> "PulledView":
        return dataclasses.replace(self, ack=ack)


@dataclass
class NodeState:
    """Synchronizer variables of one anonymous node.

    valid_ports is fixed when a phase's first activation runs; invalid_ports
    holds the ports excluded at that moment. phase_drops accumulates ports
    whose edge vanished during the current phase. committed_ports is the edge
    set the last completed phase actually used.
    """

    delta: int
    synch: int = 0
    phase: int = 0
    ports: list[PortFlags] = field(default_factory=list)
    invalid_ports: frozenset[int] = frozenset()
    valid_ports: frozenset[int] = frozenset()
    phase_drops: frozenset[int] = frozenset()
    committed_ports: frozenset[int] = frozenset()
    pulled: dict[int, PulledView] = field(default_factory=dict)
    algo_state: Any = None

    @classmethod
    def fresh(cls, delta: int, algo_state: Any) -> "NodeState":
        return cls(delta=delta, ports=[PortFlags() for _ in range(delta)], algo_state=algo_state)

    def clone(self) -> "NodeState":
        return NodeState(
            delta=self.delta,
            synch=self.synch,
            phase=self.phase,
            ports=[PortFlags(p.ack, p.block) for p in self.ports],
            invalid_ports=self.invalid_ports,
            valid_ports=self.valid_ports,
            phase_drops=self.phase_drops,
            committed_ports=self.committed_ports,
            pulled=dict(self.pulled),
            algo_state=self.algo_state,
        )

    def waiting_ports(self) -> frozenset[int]:
        return self.valid_ports - self.phase_drops


def guard_handshake(state: NodeState) -> bool:
    return state.synch == 0 or any(
        state.ports[p].block == 0 for p in state.waiting_ports()
    )


def guard_execute(state: NodeState) -> bool:
    return state.synch == 1 and all(
        state.ports[p].block == 1 for p in state.waiting_ports()
    )


def enabled_action(state: NodeState, live_ports: frozenset[int] = frozenset()) -> ActionKind:
    """The single enabled action. Guards depend only on stored state, never on
    the current topology, which is why a node is enabled under arbitrary
    dynamics; ``live_ports`` is accepted for interface symmetry only."""
    hs, ex = guard_handshake(state), guard_execute(state)
    if hs == ex:
        raise ProtocolViolation(f"guards not complementary: handshake={hs} execute={ex}")
    return ActionKind.HANDSHAKE if hs else ActionKind.EXECUTE


def _is_stranger(view: PulledView, phase: int) -> bool:
    """A neighbor to be excluded for this phase: it is ahead, or it is mid
    handshake in the same phase and its own bookkeeping shows this edge was
    not there (or broke) since that handshake began."""
    if view.phase > phase:
        return True
    return (
        view.phase == phase
        and view.synch == 1
        and (
            view.remote_port not in view.valid_ports
            or view.remote_port in (view.phase_drops | view.detector)
        )
    )


def _ack_block_pass(
    state: NodeState, remote_writes: list[int], acks_set: list[int], blocks_set: list[int]
) -> None:
    # Second half of every handshake: raise acks toward same-phase partners,
    # and block (both sides) any port whose partner already acked us.
    for port in sorted(state.waiting_ports()):
        view = state.pulled.get(port)
        if view is None or view.phase != state.phase or state.ports[port].block != 0:
            continue
        if view.ack == 1:
            remote_writes.append(port)
            state.ports[port].block = 1
            blocks_set.append(port)
        else:
            state.ports[port].ack = 1
            acks_set.append(port)


def handshake(
    state: NodeState,
    reads: Mapping[int, PulledView],
    detector: frozenset[int],
) -> tuple[NodeState, tuple[int, ...], dict]:
    """Run the handshake action against stage-start snapshots.

    ``reads`` must cover exactly the currently occupied ports; ``detector``
    is this node's accumulated disconnection set at stage start. Returns the
    replacement state, the local ports through which a remote block write
    must be sent (their edges are necessarily live this stage), and a log
    payload for the trace.
    """
    new = state.clone()
    remote_writes: list[int] = []
    acks_set: list[int] = []
    blocks_set: list[int] = []
    log: dict = {}

    if state.synch == 0:
        # Phase start: pull everything in sight, fix the wait set for the
        # whole phase, and begin handshaking.
        new.pulled = dict(reads)
        new.phase_drops = frozenset()
        occupied = frozenset(reads)
        new.invalid_ports = frozenset(
            p for p, view in reads.items() if _is_stranger(view, state.phase)
        )
        new.valid_ports = occupied - new.invalid_ports
        new.synch = 1
        log["branch"] = "init"
    else:
        refreshed: list[int] = []
        repulled: list[int] = []
        for port in sorted(new.valid_ports - (new.phase_drops | detector)):
            if port not in reads:
                raise ProtocolViolation(
                    f"port {port} is waited on but unoccupied; engine must supply it"
                )
            stored = new.pulled[port]
            if stored.phase < new.phase:
                # Partner was behind at the last pull; take a full new view.
                new.pulled[port] = reads[port]
                repulled.append(port)
            else:
                new.pulled[port] = stored.with_ack(reads[port].ack)
                refreshed.append(port)
        new.phase_drops = new.phase_drops | detector
        log["branch"] = "continue"
        log["repulled"] = repulled
        log["ack_refreshed"] = refreshed
        log["drops_absorbed"] = sorted(detector)

    _ack_block_pass(new, remote_writes, acks_set, blocks_set)
    log["acks_set"] = acks_set
    log["blocks_set"] = blocks_set
    return new, tuple(remote_writes), log


def execute_synch(state: NodeState, algo) -> tuple[NodeState, dict]:
    """Commit the phase: feed the wrapped algorithm the views behind every
    blocked port of the wait-set origin (a blocked port that later dropped
    still counts), then advance and reset all per-port bits."""
    new = state.clone()
    committed = frozenset(p for p in sorted(new.valid_ports) if new.ports[p].block == 1)
    views = [new.pulled[p] for p in sorted(committed)]
    neighbor_states = algo.sort_states(v.algo_state for v in views)
    new.algo_state = algo.step(new.algo_state, neighbor_states)
    new.committed_ports = committed
    new.phase += 1
    new.synch = 0
    for flags in new.ports:
        flags.ack = 0
        flags.block = 0
    new.pulled = {}
    log = {
        "committed": sorted(committed),
        "valid": sorted(state.valid_ports),
        "phase_drops": sorted(state.phase_drops),
    }
    return new, log


def apply_remote_block(state: NodeState, port: int) -> None:
    """Land a remote block write: a one-way 0 -> 1 transition, applied after
    all local state replacements of the stage."""
    state.ports[port].block = 1


PHASE_BYTES = 8  # fixed-width pulled-phase record in the canonical encoding


def serialize_sync_state(state: NodeState) -> tuple[bytes, bytes]:
    """Canonical encoding of the synchronizer footprint, excluding algorithm
    states: (phase counter in minimal big-endian bytes, fixed-shape body).

    The body holds one 12-byte record per port plus four sets as sorted index
    lists, so its size is bounded by 16*delta + 6 for any reachable state.
    Pulled views contribute only the fields consulted after the pulling
    stage: presence, phase, ack.
    """
    phase = state.phase
    phase_bytes = phase.to_bytes(max(1, (phase.bit_length() + 7) // 8), "big")
    body = bytearray([state.synch & 1, state.delta])
    for port in range(state.delta):
        flags = state.ports[port]
        view = state.pulled.get(port)
        body.append(flags.ack)
        body.append(flags.block)
        body.append(0 if view is None else 1)
        body.append(0 if view is None else view.ack)
        body += (0 if view is None else view.phase).to_bytes(PHASE_BYTES, "big")
    for members in (
        state.invalid_ports,
        state.valid_ports,
        state.phase_drops,
        state.committed_ports,
    ):
        ordered = sorted(members)
        body.append(len(ordered))
        body += bytes(ordered)
    return phase_bytes, bytes(body)
