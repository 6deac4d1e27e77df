"""Per-QP transport state machines.

Four designs share one QueuePair class:

* CELERIS: best-effort push. Packets carry absolute buffer offsets, the
  sender keeps no per-packet state and the receiver never acknowledges.
* ROCE_GBN: go-back-N with cumulative ACKs and NACK-triggered rewind.
* IRN: selective repeat with exact SACK feedback and a BDP-bounded window.
* SRNIC: IRN-style sender, but loss recovery and out-of-order delivery pass
  through a software slow path with a fixed added latency.

All four run DCQCN rate control in the (modeled) NIC: ECN-marked arrivals
produce paced CNPs, CNPs cut the rate toward a halved target, and recovery
steps through fast-recovery / additive / hyper stages.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .fabric import CONTROL_PACKET_BYTES, Packet, PacketKind
from .simkernel import SEC, USEC, Simulator


class TransportKind(Enum):
    CELERIS = "CELERIS"
    ROCE_GBN = "ROCE_GBN"
    IRN = "IRN"
    SRNIC = "SRNIC"


# Modeled per-connection NIC context footprint in bytes. The CELERIS figure
# decomposes as 20 bytes of addressing (remote host 4, remote qp 3, local qp
# 3, buffer base 6, buffer length 4) plus 32 bytes of DCQCN rate state
# (current 4, target 4, alpha 4, byte counter 4, timer epoch 8, stage
# counters 8). SRNIC uses the synthesized 210 B figure.
CONTEXT_BYTES = {
    TransportKind.CELERIS: 52,
    TransportKind.ROCE_GBN: 407,
    TransportKind.IRN: 596,
    TransportKind.SRNIC: 210,
}

CELERIS_BASE_BYTES = 20
CELERIS_DCQCN_BYTES = 32


def context_bytes(kind: TransportKind) -> int:
    """Modeled NIC state per QP for the given transport design."""
    return CONTEXT_BYTES[kind]


@dataclass
class DcqcnParams:
    """Canonical constants; every value is configurable."""

    alpha_g: float = 1.0 / 256.0
    cnp_interval_ns: int = 50 * USEC
    rate_timer_ns: int = 55 * USEC
    byte_counter_bytes: int = 10_000_000
    fast_recovery_stages: int = 5
    rate_ai_bps: float = 40_000_000.0
    rate_hai_bps: float = 400_000_000.0
    min_rate_bps: float = 10_000_000.0


class DcqcnState:
    """Reaction-point state for one QP."""

    __slots__ = (
        "line_rate_bps", "current_rate_bps", "target_rate_bps", "alpha",
        "bytes_since_tick", "timer_ticks", "byte_ticks",
        "last_cnp_ns", "last_timer_tick_ns",
    )

    def __init__(self, line_rate_bps: float):
        self.line_rate_bps = float(line_rate_bps)
        self.current_rate_bps = float(line_rate_bps)
        self.target_rate_bps = float(line_rate_bps)
        self.alpha = 1.0
        self.bytes_since_tick = 0
        self.timer_ticks = 0
        self.byte_ticks = 0
        self.last_cnp_ns = -1
        self.last_timer_tick_ns = -1

    def on_cnp(self, params: DcqcnParams, now: int = 0) -> None:
        self.target_rate_bps = self.current_rate_bps
        self.current_rate_bps = max(
            params.min_rate_bps, self.current_rate_bps * (1.0 - self.alpha / 2.0)
        )
        self.alpha = (1.0 - params.alpha_g) * self.alpha + params.alpha_g
        self.timer_ticks = 0
        self.byte_ticks = 0
        self.bytes_since_tick = 0
        self.last_cnp_ns = now

    def add_bytes(self, params: DcqcnParams, nbytes: int) -> bool:
        """Account transmitted bytes; True when the byte counter fires."""
        self.bytes_since_tick += nbytes
        if self.bytes_since_tick >= params.byte_counter_bytes:
            self.bytes_since_tick -= params.byte_counter_bytes
            return True
        return False

    def increase_tick(self, params: DcqcnParams, source: str, now: int = 0) -> None:
        """One recovery step; ``source`` is "timer" or "bytes".

        The first F stages after a CNP run fast recovery (midpoint toward the
        target, target unchanged); once one counter passes F the target grows
        additively, and once both pass F it grows by the hyper increment.
        """
        if source == "timer":
            if self.last_cnp_ns <= self.last_timer_tick_ns:
                # Full timer period without congestion feedback.
                self.alpha *= 1.0 - params.alpha_g
            self.last_timer_tick_ns = now
            self.timer_ticks += 1
        else:
            self.byte_ticks += 1
        f = params.fast_recovery_stages
        line = self.line_rate_bps
        if self.timer_ticks <= f and self.byte_ticks <= f:
            pass  # fast recovery: target unchanged
        elif self.timer_ticks > f and self.byte_ticks > f:
            self.target_rate_bps = min(line, self.target_rate_bps + params.rate_hai_bps)
        else:
            self.target_rate_bps = min(line, self.target_rate_bps + params.rate_ai_bps)
        self.current_rate_bps = min(line, (self.current_rate_bps + self.target_rate_bps) / 2.0)


@dataclass(frozen=True)
class WorkRequest:
    qp: int
    offset: int
    length: int
    step_id: int = -1


@dataclass
class TransportOpts:
    window_bytes: int = 128_000  # reliability window (about one BDP at defaults)
    rto_min_ns: int = 100 * USEC
    rto_srtt_mult: int = 3
    slowpath_ns: int = 20 * USEC  # SRNIC software recovery penalty per event
    dup_threshold: int = 3  # SACK gap needed for fast retransmit


@dataclass
class QpStats:
    data_sent: int = 0
    data_received: int = 0
    retransmit_count: int = 0
    retransmitted_psns: set = field(default_factory=set)
    duplicates: int = 0
    protocol_errors: int = 0
    cnps_sent: int = 0
    cnps_received: int = 0
    acks_sent: int = 0
    out_of_order: int = 0


class _OutWr:
    __slots__ = ("wr", "cursor", "first_psn", "npkts", "remaining", "cancelled")

    def __init__(self, wr: WorkRequest, first_psn: int, npkts: int):
        self.wr = wr
        self.cursor = 0  # bytes already handed to the wire (first transmissions)
        self.first_psn = first_psn
        self.npkts = npkts
        self.remaining = npkts  # packets not yet acknowledged by the peer
        self.cancelled = False


class _PsnRec:
    __slots__ = ("offset", "length", "step_id", "out", "sent_ns", "retx", "delivered")

    def __init__(self, offset: int, length: int, step_id: int, out: _OutWr, sent_ns: int):
        self.offset = offset
        self.length = length
        self.step_id = step_id
        self.out = out
        self.sent_ns = sent_ns
        self.retx = 0
        self.delivered = False


def segment_count(length: int, mtu_payload: int) -> int:
    return -(-length // mtu_payload) if length > 0 else 0


class QueuePair:
    """One connection endpoint: send engine, receive engine and rate control.

    ``egress(pkt, control)`` hands a packet to the owning NIC (or to a test
    channel); ``on_place(qp, step_id, offset, length, data, now)`` reports
    each payload placement to the application layer.
    """

    def __init__(
        self,
        sim: Simulator,
        kind: TransportKind,
        qp_id: int,
        peer_qp_id: int,
        local_host: int,
        remote_host: int,
        buffer_len: int,
        mtu_payload: int,
        line_rate_bps: float,
        egress: Callable[[Packet, bool], None],
        dcqcn_params: Optional[DcqcnParams] = None,
        opts: Optional[TransportOpts] = None,
        on_place: Optional[Callable] = None,
        on_send_complete: Optional[Callable] = None,
        recv_buffer: Optional[bytearray] = None,
        auto_pace: bool = True,
        background: bool = False,
    ):
        self.sim = sim
        self.kind = kind
        self.qp_id = qp_id
        self.peer_qp_id = peer_qp_id
        self.local_host = local_host
        self.remote_host = remote_host
        self.buffer_len = buffer_len
        self.mtu_payload = mtu_payload
        self.egress = egress
        self.params = dcqcn_params or DcqcnParams()
        self.opts = opts or TransportOpts()
        self.on_place = on_place
        self.on_send_complete = on_send_complete
        self.recv_buffer = recv_buffer
        self.auto_pace = auto_pace
        self.background = background
        self.dcqcn = DcqcnState(line_rate_bps)
        self.stats = QpStats()
        self._data_source: Optional[Callable[[int, int], bytes]] = None

        # send side
        self._sendq: deque[_OutWr] = deque()
        self._next_psn = 0  # next never-assigned PSN
        self.snd_una = 0
        self.snd_next = 0  # next PSN to put on the wire (rewinds under GBN)
        self.snd_max = 0  # highest PSN ever sent + 1
        self._psn_map: dict[int, _PsnRec] = {}
        self._sacked: set[int] = set()
        self._retx_q: deque[int] = deque()
        self._fast_retxed: set[int] = set()
        self.next_eligible_ns = 0
        self._pacer_handle = None
        self._rate_timer_handle = None
        self._rto_handle = None
        self._rto_una = -1
        self.srtt_ns = 0
        self.bytes_pushed = 0
        self._last_sack_seq_seen = -1

        # receive side
        self.expected_psn = 0  # GBN cumulative expectation
        self._nak_armed = False
        self.rcv_cum = -1  # IRN/SRNIC: highest in-order PSN delivered
        self._rcv_set: set[int] = set()
        self._last_cnp_sent_ns = -(10 ** 18)
        self._ctrl_seq = 0

    def set_data_source(self, fn: Optional[Callable[[int, int], bytes]]) -> None:
        """Payload provider for content-carrying runs; None moves sizes only."""
        self._data_source = fn

    # ------------------------------------------------------------------
    # send path
    # ------------------------------------------------------------------

    def post_send(self, wr: WorkRequest) -> int:
        """Queue a work request; returns the number of packets it will take."""
        if wr.offset < 0 or wr.length < 0 or wr.offset + wr.length > self.buffer_len:
            raise ValueError(
                f"work request [{wr.offset}, {wr.offset + wr.length}) exceeds "
                f"registered buffer of {self.buffer_len} bytes"
            )
        npkts = segment_count(wr.length, self.mtu_payload)
        if npkts == 0:
            if self.on_send_complete is not None:
                self.on_send_complete(wr, self.sim.now)
            return 0
        out = _OutWr(wr, self._next_psn, npkts)
        if self.kind is not TransportKind.CELERIS:
            self._next_psn += npkts
        self._sendq.append(out)
        self._kick()
        return npkts

    def cancel_pending(self, step_id: int) -> int:
        """Stop transmitting queued data for a finalized step (software-side
        WQE cancellation used by the best-effort deadline path)."""
        cancelled = 0
        for out in self._sendq:
            if out.wr.step_id == step_id and not out.cancelled:
                out.cancelled = True
                cancelled += 1
        return cancelled

    def _complete(self, out: _OutWr) -> None:
        if self.on_send_complete is not None:
            self.on_send_complete(out.wr, self.sim.now)

    def _window_pkts(self) -> int:
        return max(1, self.opts.window_bytes // self.mtu_payload)

    def _celeris_head(self) -> Optional[_OutWr]:
        while self._sendq:
            out = self._sendq[0]
            if out.cancelled:
                self._sendq.popleft()
                continue
            return out
        return None

    def _new_data_head(self) -> Optional[_OutWr]:
        for out in self._sendq:
            if not out.cancelled and out.cursor < out.wr.length:
                return out
        return None

    def has_sendable(self) -> bool:
        """True when tx_pull could produce a packet were pacing satisfied."""
        if self.kind is TransportKind.CELERIS:
            return self._celeris_head() is not None
        in_window = self.snd_next - self.snd_una < self._window_pkts()
        if self._retx_q:
            return True
        if self.kind is TransportKind.ROCE_GBN and self.snd_next < self.snd_max:
            return in_window
        return in_window and self._new_data_head() is not None

    def _pace_gap_ns(self, size: int) -> int:
        return int(math.ceil(size * 8 * SEC / self.dcqcn.current_rate_bps))

    def tx_pull(self, now: int) -> Optional[Packet]:
        """Next packet permitted by rate pacing and the reliability window."""
        if now < self.next_eligible_ns:
            return None
        pkt = self._next_packet(now)
        if pkt is None:
            return None
        self.next_eligible_ns = now + self._pace_gap_ns(pkt.size)
        self.stats.data_sent += 1
        if self.dcqcn.add_bytes(self.params, pkt.size):
            self.dcqcn.increase_tick(self.params, "bytes", now)
        self._ensure_rate_timer()
        return pkt

    def _make_data(self, offset: int, length: int, step_id: int, psn: int, now: int) -> Packet:
        data = self._data_source(offset, length) if self._data_source is not None else None
        return Packet(
            src=self.local_host, dst=self.remote_host, qp=self.peer_qp_id,
            kind=PacketKind.DATA, size=max(length, CONTROL_PACKET_BYTES),
            offset=offset, psn=psn, step_id=step_id, payload_len=length,
            send_time=now, flow_key=self.qp_id, data=data, bg=self.background,
        )

    def _next_packet(self, now: int) -> Optional[Packet]:
        if self.kind is TransportKind.CELERIS:
            out = self._celeris_head()
            if out is None:
                return None
            offset = out.wr.offset + out.cursor
            length = min(self.mtu_payload, out.wr.length - out.cursor)
            out.cursor += length
            self.bytes_pushed += length
            pkt = self._make_data(offset, length, out.wr.step_id, -1, now)
            if out.cursor >= out.wr.length:
                self._sendq.popleft()
                self._complete(out)
            return pkt

        # Retransmissions take priority over new data.
        while self._retx_q:
            psn = self._retx_q.popleft()
            rec = self._psn_map.get(psn)
            if rec is None or rec.delivered:
                continue
            rec.retx += 1
            rec.sent_ns = now
            self.stats.retransmit_count += 1
            self.stats.retransmitted_psns.add(psn)
            self._arm_rto()
            return self._make_data(rec.offset, rec.length, rec.step_id, psn, now)

        # Go-back-N rewind: re-send every outstanding PSN from snd_una up.
        if self.kind is TransportKind.ROCE_GBN:
            while self.snd_next < self.snd_max:
                if self.snd_next - self.snd_una >= self._window_pkts():
                    return None
                psn = self.snd_next
                self.snd_next += 1
                rec = self._psn_map.get(psn)
                if rec is None:
                    continue  # acknowledged while rewound
                rec.retx += 1
                rec.sent_ns = now
                self.stats.retransmit_count += 1
                self.stats.retransmitted_psns.add(psn)
                self._arm_rto()
                return self._make_data(rec.offset, rec.length, rec.step_id, psn, now)

        out = self._new_data_head()
        if out is None:
            return None
        if self.snd_next - self.snd_una >= self._window_pkts():
            return None
        offset = out.wr.offset + out.cursor
        length = min(self.mtu_payload, out.wr.length - out.cursor)
        psn = self.snd_next
        self._psn_map[psn] = _PsnRec(offset, length, out.wr.step_id, out, now)
        out.cursor += length
        self.snd_next += 1
        self.snd_max = max(self.snd_max, self.snd_next)
        self.bytes_pushed += length
        self._arm_rto()
        return self._make_data(offset, length, out.wr.step_id, psn, now)

    # -- pacing -----------------------------------------------------------

    def _kick(self) -> None:
        if self._pacer_handle is not None or not self.auto_pace:
            return
        if not self.has_sendable():
            return
        at = max(self.sim.now, self.next_eligible_ns)
        self._pacer_handle = self.sim.at(at, "qp-pacer", self._pacer_fire)

    def _pacer_fire(self) -> None:
        self._pacer_handle = None
        pkt = self.tx_pull(self.sim.now)
        if pkt is not None:
            self.egress(pkt, False)
        self._kick()

    # -- rate timer ---------------------------------------------------------

    def _ensure_rate_timer(self) -> None:
        if self._rate_timer_handle is None:
            self._rate_timer_handle = self.sim.after(
                self.params.rate_timer_ns, "rate-increase-tick", self._rate_timer_fire
            )

    def _rate_timer_fire(self) -> None:
        self._rate_timer_handle = None
        self.dcqcn.increase_tick(self.params, "timer", self.sim.now)
        recovered = self.dcqcn.current_rate_bps >= self.dcqcn.line_rate_bps * 0.999
        if self.has_sendable() or self._psn_map or not recovered:
            self._ensure_rate_timer()
        self._kick()

    # -- loss timers ----------------------------------------------------------

    def _rto_ns(self) -> int:
        return max(self.opts.rto_srtt_mult * self.srtt_ns, self.opts.rto_min_ns)

    def _arm_rto(self) -> None:
        if self.kind is TransportKind.CELERIS:
            return
        if self._rto_handle is None and self._psn_map:
            self._rto_una = self.snd_una
            self._rto_handle = self.sim.after(self._rto_ns(), "timer-expiry", self._rto_fire)

    def _rto_fire(self) -> None:
        self._rto_handle = None
        if not self._psn_map:
            return
        if self.snd_una != self._rto_una:
            self._arm_rto()  # progress since armed; restart the timer
            return
        self.on_loss_timeout(self.sim.now)
        self._arm_rto()

    def on_loss_timeout(self, now: int) -> list[int]:
        """Loss recovery entry point; returns the PSNs queued for retransmit."""
        if self.kind is TransportKind.CELERIS:
            raise RuntimeError("best-effort QPs have no retransmission path")
        if self.kind is TransportKind.ROCE_GBN:
            psns = [p for p in range(self.snd_una, self.snd_max) if p in self._psn_map]
            self.snd_next = self.snd_una
            self._kick()
            return psns
        holes = [
            p for p in range(self.snd_una, self.snd_max)
            if p in self._psn_map and not self._psn_map[p].delivered and p not in self._retx_q
        ]
        self._fast_retxed.difference_update(holes)
        if self.kind is TransportKind.SRNIC and self.opts.slowpath_ns > 0:
            self.sim.after(self.opts.slowpath_ns, "timer-expiry", self._queue_retx, holes)
        else:
            self._queue_retx(holes)
        return holes

    def _queue_retx(self, psns: list[int]) -> None:
        for p in psns:
            rec = self._psn_map.get(p)
            if rec is not None and not rec.delivered and p not in self._retx_q:
                self._retx_q.append(p)
        self._kick()

    # ------------------------------------------------------------------
    # receive path and control handling
    # ------------------------------------------------------------------

    def on_packet(self, pkt: Packet, now: int) -> None:
        kind = pkt.kind
        if kind is PacketKind.DATA:
            self.rx_data(pkt, now)
        elif kind is PacketKind.ACK:
            self._on_ack(pkt, now)
        elif kind is PacketKind.NACK:
            self._on_nack(pkt, now)
        elif kind is PacketKind.SACK:
            self._on_sack(pkt, now)
        elif kind is PacketKind.CNP:
            self.stats.cnps_received += 1
            self.dcqcn.on_cnp(self.params, now)
            if self._rate_timer_handle is not None:
                self.sim.cancel(self._rate_timer_handle)
                self._rate_timer_handle = None
            self._ensure_rate_timer()

    def _control(self, kind: PacketKind, now: int, ack_psn: int = -1,
                 sack: Optional[frozenset] = None, psn: int = -1) -> Packet:
        # step_id doubles as an emission sequence number so the peer can
        # ignore feedback reordered by the software slow path.
        self._ctrl_seq += 1
        return Packet(
            src=self.local_host, dst=self.remote_host, qp=self.peer_qp_id,
            kind=kind, size=CONTROL_PACKET_BYTES, ack_psn=ack_psn, sack=sack,
            psn=psn, send_time=now, flow_key=self.qp_id, step_id=self._ctrl_seq,
        )

    def _maybe_cnp(self, now: int) -> None:
        if now - self._last_cnp_sent_ns >= self.params.cnp_interval_ns:
            self._last_cnp_sent_ns = now
            self.stats.cnps_sent += 1
            self.egress(self._control(PacketKind.CNP, now), True)

    def _place(self, pkt: Packet, now: int) -> None:
        if self.recv_buffer is not None and pkt.data is not None:
            self.recv_buffer[pkt.offset:pkt.offset + pkt.payload_len] = pkt.data
        if self.on_place is not None:
            self.on_place(self, pkt.step_id, pkt.offset, pkt.payload_len, pkt.data, now)

    def rx_data(self, pkt: Packet, now: int) -> None:
        """Receive-side handling per transport design."""
        if pkt.offset < 0 or pkt.offset + pkt.payload_len > self.buffer_len:
            self.stats.protocol_errors += 1
            return
        self.stats.data_received += 1
        if pkt.ecn_marked:
            self._maybe_cnp(now)
        kind = self.kind
        if kind is TransportKind.CELERIS:
            # Placement is idempotent; duplicates simply overwrite.
            self._place(pkt, now)
            return
        if kind is TransportKind.ROCE_GBN:
            if pkt.psn == self.expected_psn:
                self._place(pkt, now)
                self.expected_psn += 1
                self._nak_armed = False
                self.stats.acks_sent += 1
                self.egress(self._control(PacketKind.ACK, now, ack_psn=pkt.psn), True)
            elif pkt.psn < self.expected_psn:
                self.stats.duplicates += 1
                self.egress(self._control(PacketKind.ACK, now, ack_psn=self.expected_psn - 1), True)
            else:
                # Out-of-order: dropped, NAK once per gap event.
                self.stats.out_of_order += 1
                if not self._nak_armed:
                    self._nak_armed = True
                    self.egress(self._control(PacketKind.NACK, now, psn=self.expected_psn), True)
            return
        # IRN / SRNIC: out-of-order acceptance with exact SACK feedback.
        if pkt.psn <= self.rcv_cum or pkt.psn in self._rcv_set:
            self.stats.duplicates += 1
            self._send_sack(now)
            return
        in_order = pkt.psn == self.rcv_cum + 1
        if kind is TransportKind.SRNIC and not in_order:
            # Software reordering: delivery and feedback pay the slow path.
            self.stats.out_of_order += 1
            self.sim.after(self.opts.slowpath_ns, "timer-expiry", self._srnic_deliver, pkt)
            return
        if not in_order:
            self.stats.out_of_order += 1
        self._accept_ooo(pkt, now)

    def _srnic_deliver(self, pkt: Packet) -> None:
        if pkt.psn <= self.rcv_cum or pkt.psn in self._rcv_set:
            self.stats.duplicates += 1
            return
        self._accept_ooo(pkt, self.sim.now)

    def _accept_ooo(self, pkt: Packet, now: int) -> None:
        self._rcv_set.add(pkt.psn)
        self._place(pkt, now)
        while self.rcv_cum + 1 in self._rcv_set:
            self.rcv_cum += 1
            self._rcv_set.discard(self.rcv_cum)
        self._send_sack(now)

    def _send_sack(self, now: int) -> None:
        self.stats.acks_sent += 1
        self.egress(
            self._control(PacketKind.SACK, now, ack_psn=self.rcv_cum,
                          sack=frozenset(self._rcv_set)),
            True,
        )

    # -- sender-side control ------------------------------------------------

    def _advance_una(self, new_una: int, now: int) -> None:
        while self.snd_una < new_una:
            rec = self._psn_map.pop(self.snd_una, None)
            if rec is not None:
                if not rec.delivered:
                    rec.delivered = True
                    self._deliver_credit(rec)
                if rec.retx == 0:
                    sample = now - rec.sent_ns
                    self.srtt_ns = sample if self.srtt_ns == 0 else (7 * self.srtt_ns + sample) // 8
            self._sacked.discard(self.snd_una)
            self._fast_retxed.discard(self.snd_una)
            self.snd_una += 1
        if self.snd_next < self.snd_una:
            self.snd_next = self.snd_una

    def _deliver_credit(self, rec: _PsnRec) -> None:
        out = rec.out
        out.remaining -= 1
        if out.remaining == 0 and out.cursor >= out.wr.length:
            if out in self._sendq:
                self._sendq.remove(out)
            self._complete(out)

    def _on_ack(self, pkt: Packet, now: int) -> None:
        if pkt.ack_psn >= self.snd_una:
            self._advance_una(pkt.ack_psn + 1, now)
        self._kick()

    def _on_nack(self, pkt: Packet, now: int) -> None:
        if pkt.psn > self.snd_una:
            self._advance_una(pkt.psn, now)
        # Rewind to the first unacknowledged PSN (go-back-N).
        self.snd_next = self.snd_una
        self._kick()

    def _on_sack(self, pkt: Packet, now: int) -> None:
        if pkt.step_id <= self._last_sack_seq_seen:
            return  # stale feedback emitted before a newer one
        self._last_sack_seq_seen = pkt.step_id
        if pkt.ack_psn >= self.snd_una:
            self._advance_una(pkt.ack_psn + 1, now)
        sacked = pkt.sack or frozenset()
        for psn in sacked:
            if psn >= self.snd_una and psn not in self._sacked:
                self._sacked.add(psn)
                rec = self._psn_map.get(psn)
                if rec is not None and not rec.delivered:
                    rec.delivered = True
                    self._deliver_credit(rec)
        # Fast retransmit: a hole with enough delivered PSNs above it is lost.
        if sacked:
            hmax = max(sacked)
            for psn in range(self.snd_una, hmax):
                if psn in self._sacked or psn in self._fast_retxed or psn in self._retx_q:
                    continue
                if hmax - psn >= self.opts.dup_threshold:
                    self._fast_retxed.add(psn)
                    if self.kind is TransportKind.SRNIC and self.opts.slowpath_ns > 0:
                        self.sim.after(self.opts.slowpath_ns, "timer-expiry",
                                       self._queue_retx, [psn])
                    else:
                        self._queue_retx([psn])
        self._kick()
