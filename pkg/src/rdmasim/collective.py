"""Ring AllReduce scheduling and per-step bookkeeping.

A round over N members is 2(N-1) chunked steps: N-1 reduce-scatter steps in
which received chunks are accumulated, then N-1 all-gather steps in which
they overwrite. Each node sends exactly one chunk per step to its ring
successor. Steps are finalized either on full delivery or, for deadline-run
transports, when the step deadline fires; packets for a finalized step are
discarded at this layer so transport statistics stay comparable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import timeoutctl
from .simkernel import Simulator
from .transport import QueuePair, TransportKind, WorkRequest

REDUCE_SCATTER = "REDUCE_SCATTER"
ALL_GATHER = "ALL_GATHER"

COMPLETE = "COMPLETE"
DEADLINE = "DEADLINE"


@dataclass
class CollectiveGroup:
    group_id: str
    members: list[int]
    payload_bytes: int
    granule: int = 1  # chunk boundaries snap to this many bytes

    def validate(self) -> None:
        if len(self.members) < 2:
            raise ValueError("a collective group needs at least 2 members")
        if len(set(self.members)) != len(self.members):
            raise ValueError("group members must be distinct")
        if self.payload_bytes < 0:
            raise ValueError("payload_bytes must be non-negative")
        if self.granule < 1 or self.payload_bytes % self.granule:
            raise ValueError("payload_bytes must be a multiple of granule")


@dataclass(frozen=True)
class StepPlan:
    step_id: int
    phase: str
    sends: tuple  # (src, dst, chunk_offset, chunk_length) per member


@dataclass
class StepResult:
    step_id: int
    node: int
    bytes_expected: int
    bytes_received: int
    start_ns: int
    finalize_ns: int
    finalized_by: str

    @property
    def duration_ns(self) -> int:
        return self.finalize_ns - self.start_ns

    @property
    def loss_fraction(self) -> float:
        if self.bytes_expected == 0:
            return 0.0
        return 1.0 - self.bytes_received / self.bytes_expected


def chunk_layout(payload_bytes: int, n: int, granule: int = 1) -> list[tuple[int, int]]:
    """(offset, length) per chunk; lengths differ by at most one granule."""
    units = payload_bytes // granule
    base, rem = divmod(units, n)
    layout = []
    offset = 0
    for c in range(n):
        length = (base + (1 if c < rem else 0)) * granule
        layout.append((offset, length))
        offset += length
    return layout


def plan_ring(group: CollectiveGroup) -> list[StepPlan]:
    """All 2(N-1) step plans for one round of ring AllReduce."""
    group.validate()
    members = group.members
    n = len(members)
    chunks = chunk_layout(group.payload_bytes, n, group.granule)
    plans: list[StepPlan] = []
    sid = 0
    for phase, steps in ((REDUCE_SCATTER, n - 1), (ALL_GATHER, n - 1)):
        for s in range(steps):
            sends = []
            for i, src in enumerate(members):
                dst = members[(i + 1) % n]
                if phase == REDUCE_SCATTER:
                    c = (i - s) % n
                else:
                    c = (i + 1 - s) % n
                off, length = chunks[c]
                sends.append((src, dst, off, length))
            plans.append(StepPlan(step_id=sid, phase=phase, sends=tuple(sends)))
            sid += 1
    return plans


class StepTracker:
    """Counts unique delivered bytes for one (node, step)."""

    __slots__ = ("expected", "received", "offsets")

    def __init__(self, expected: int):
        self.expected = expected
        self.received = 0
        self.offsets: set[int] = set()

    def credit(self, offset: int, length: int) -> bool:
        """True when this placement contributes new bytes."""
        if offset in self.offsets:
            return False
        self.offsets.add(offset)
        self.received += length
        return True

    @property
    def complete(self) -> bool:
        return self.received >= self.expected


@dataclass
class TimeoutPolicy:
    mode: str = "NONE"  # NONE | STATIC | ADAPTIVE
    timeout_ns: int = 0  # STATIC deadline
    ewma_beta: float = 0.2
    clamp_min_ns: int = 1_000
    clamp_max_ns: int = 1_000_000_000
    initial_timeout_ns: int = 0  # ADAPTIVE starting point (0: clamp_max)
    coordination_cost_ns: int = 0

    def validate(self) -> None:
        if self.mode not in ("NONE", "STATIC", "ADAPTIVE"):
            raise ValueError(f"unknown timeout mode {self.mode!r}")
        if self.mode == "STATIC" and self.timeout_ns <= 0:
            raise ValueError("STATIC timeout mode needs timeout_ns > 0")


class _NodeState:
    __slots__ = (
        "host", "index", "current_sid", "step_start_ns", "trackers",
        "deadline_handle", "finalized", "late_packets", "chunks_recv",
    )

    def __init__(self, host: int, index: int):
        self.host = host
        self.index = index
        self.current_sid = -1
        self.step_start_ns = 0
        self.trackers: dict[int, StepTracker] = {}
        self.deadline_handle = None
        self.finalized = -1  # highest finalized step id
        self.late_packets = 0
        self.chunks_recv: dict[int, tuple[int, int]] = {}


class RingRunner:
    """Drives one collective group over already-wired queue pairs.

    ``send_qps[i]`` is member i's QP toward its ring successor; the matching
    receive endpoints must call ``on_place`` with this runner. When ``data``
    holds per-member vectors, payload bytes move through the fabric and are
    reduced on arrival, which small-scale correctness tests rely on.
    """

    def __init__(
        self,
        sim: Simulator,
        group: CollectiveGroup,
        send_qps: list[QueuePair],
        rounds: int,
        timeout_policy: Optional[TimeoutPolicy] = None,
        data: Optional[list[np.ndarray]] = None,
        timeout_trace: Optional[list] = None,
    ):
        group.validate()
        self.sim = sim
        self.group = group
        self.send_qps = send_qps
        self.rounds = rounds
        self.policy = timeout_policy or TimeoutPolicy()
        self.policy.validate()
        self.plans = plan_ring(group)
        self.steps_per_round = len(self.plans)
        self.total_steps = self.steps_per_round * rounds
        self.results: list[StepResult] = []
        self.timeout_trace = timeout_trace
        n = len(group.members)
        self._index_of = {h: i for i, h in enumerate(group.members)}
        self._nodes = [_NodeState(h, i) for i, h in enumerate(group.members)]
        self._done_nodes = 0
        self._barrier_waiting: set[int] = set()
        self._round_waiting: set[int] = set()
        self.data = data
        self._profiles = None
        if self.policy.mode == "ADAPTIVE":
            init = self.policy.initial_timeout_ns or self.policy.clamp_max_ns
            self._profiles = [
                timeoutctl.TimeoutProfile(
                    group_id=group.group_id,
                    current_timeout_ns=init,
                    ewma_beta=self.policy.ewma_beta,
                    clamp_min_ns=self.policy.clamp_min_ns,
                    clamp_max_ns=self.policy.clamp_max_ns,
                )
                for _ in group.members
            ]
        if data is not None:
            if len(data) != n:
                raise ValueError("one data vector per member required")
            for i, qp in enumerate(send_qps):
                # Reads the live buffer at pull time so reduce-scatter sends
                # carry the accumulated values.
                qp.set_data_source(
                    lambda off, ln, b=data[i]: bytes(b.view(np.uint8)[off:off + ln])
                )

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> None:
        for node in self._nodes:
            self.issue_step(node.host, 0)

    @property
    def done(self) -> bool:
        return self._done_nodes == len(self._nodes)

    # -- step issue / finalize ------------------------------------------------

    def _plan_for(self, sid: int) -> StepPlan:
        return self.plans[sid % self.steps_per_round]

    def _expected_for(self, node: _NodeState, sid: int) -> tuple[int, int]:
        """(offset, length) of the chunk this node receives in step sid."""
        plan = self._plan_for(sid)
        pred = (node.index - 1) % len(self.group.members)
        _, _, off, length = plan.sends[pred]
        return off, length

    def issue_step(self, host: int, sid: int) -> None:
        """Post this node's send for step sid and arm its receive window."""
        node = self._nodes[self._index_of[host]]
        if sid != node.finalized + 1:
            raise ValueError(
                f"node {host} cannot issue step {sid}: previous step not finalized"
            )
        node.current_sid = sid
        node.step_start_ns = self.sim.now
        off, length = self._expected_for(node, sid)
        node.chunks_recv[sid] = (off, length)
        tracker = node.trackers.get(sid)
        if tracker is None:
            tracker = StepTracker(length)
            node.trackers[sid] = tracker
        else:
            tracker.expected = length
        plan = self._plan_for(sid)
        _, _, soff, slen = plan.sends[node.index]
        if slen > 0:
            self.send_qps[node.index].post_send(
                WorkRequest(qp=self.send_qps[node.index].qp_id, offset=soff,
                            length=slen, step_id=sid)
            )
        deadline = self._deadline_for(node)
        if deadline is not None:
            node.deadline_handle = self.sim.after(
                deadline, "step-deadline", self._deadline_fire, node.host, sid
            )
        if tracker.complete:
            self.finalize_step(node.host, sid, COMPLETE)

    def _deadline_for(self, node: _NodeState) -> Optional[int]:
        if self.policy.mode == "STATIC":
            return self.policy.timeout_ns
        if self.policy.mode == "ADAPTIVE":
            return self._profiles[node.index].current_timeout_ns
        return None

    def _deadline_fire(self, host: int, sid: int) -> None:
        node = self._nodes[self._index_of[host]]
        if node.current_sid == sid and node.finalized < sid:
            node.deadline_handle = None
            self.finalize_step(host, sid, DEADLINE)

    def on_place(self, host: int, step_id: int, offset: int, length: int,
                 data, now: int) -> None:
        """Placement report from a receive endpoint at ``host``."""
        node = self._nodes[self._index_of[host]]
        if step_id <= node.finalized or step_id >= self.total_steps:
            node.late_packets += 1
            return
        tracker = node.trackers.get(step_id)
        if tracker is None:
            # Sender is a step ahead of this receiver; data lands in memory
            # and is credited when the local step opens.
            tracker = StepTracker(0)
            node.trackers[step_id] = tracker
        if not tracker.credit(offset, length):
            return
        if self.data is not None and data is not None and length > 0:
            self._apply_data(node, step_id, offset, length, data)
        if step_id == node.current_sid and tracker.expected > 0 and tracker.complete:
            self.finalize_step(host, step_id, COMPLETE)

    def _apply_data(self, node: _NodeState, sid: int, offset: int, length: int,
                    data: bytes) -> None:
        buf = self.data[node.index]
        if self._plan_for(sid).phase == REDUCE_SCATTER:
            arr = np.frombuffer(data, dtype=buf.dtype)
            start = offset // buf.itemsize
            buf[start:start + len(arr)] += arr
        else:
            buf.view(np.uint8)[offset:offset + length] = np.frombuffer(data, dtype=np.uint8)

    def finalize_step(self, host: int, step_id: int, finalized_by: str) -> StepResult:
        """Record the step outcome and advance this node."""
        node = self._nodes[self._index_of[host]]
        if step_id != node.current_sid or node.finalized >= step_id:
            raise ValueError(f"node {host} cannot finalize step {step_id}")
        tracker = node.trackers.pop(step_id)
        result = StepResult(
            step_id=step_id,
            node=host,
            bytes_expected=tracker.expected,
            bytes_received=min(tracker.received, tracker.expected),
            start_ns=node.step_start_ns,
            finalize_ns=self.sim.now,
            finalized_by=finalized_by,
        )
        self.results.append(result)
        node.finalized = step_id
        if node.deadline_handle is not None:
            self.sim.cancel(node.deadline_handle)
            node.deadline_handle = None
        if finalized_by == DEADLINE:
            # Software-side cancellation of the step's unsent remainder.
            self.send_qps[node.index].cancel_pending(step_id)
        if self.policy.mode == "ADAPTIVE" and tracker.expected > 0:
            timeoutctl.update_timeout(self._profiles[node.index], result)
        if step_id == self.total_steps - 1:
            self._done_nodes += 1
            return result
        if self.policy.mode != "NONE":
            # Deadline-run groups coordinate at every step boundary (the
            # estimate exchange doubles as a barrier), so one blocked path
            # cannot desynchronize the ring and bleed chunks step after step.
            self._barrier_waiting.add(node.index)
            if len(self._barrier_waiting) == len(self._nodes):
                self._coordinate_and_advance(step_id)
        elif (step_id + 1) % self.steps_per_round == 0:
            # Round boundary: the compute between iterations resynchronizes
            # all members, which also bounds any drift.
            self._round_waiting.add(node.index)
            if len(self._round_waiting) == len(self._nodes):
                self._round_waiting.clear()
                for other in self._nodes:
                    self.issue_step(other.host, step_id + 1)
        else:
            self.issue_step(host, step_id + 1)
        return result

    def _coordinate_and_advance(self, step_id: int) -> None:
        if self._profiles is not None:
            locals_ = [p.current_timeout_ns for p in self._profiles]
            coordinated = timeoutctl.coordinate(locals_)
            if self.timeout_trace is not None:
                for node, local in zip(self._nodes, locals_):
                    self.timeout_trace.append(
                        {"step_id": step_id, "node": node.host,
                         "local_estimate_ns": local, "coordinated_timeout_ns": coordinated}
                    )
            for p in self._profiles:
                p.current_timeout_ns = coordinated
        self._barrier_waiting.clear()
        delay = self.policy.coordination_cost_ns
        for node in self._nodes:
            if delay > 0:
                self.sim.after(delay, "step-deadline", self.issue_step, node.host, step_id + 1)
            else:
                self.issue_step(node.host, step_id + 1)

    # -- reporting -------------------------------------------------------------

    @property
    def late_packets(self) -> int:
        return sum(n.late_packets for n in self._nodes)
