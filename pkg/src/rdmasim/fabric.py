"""Two-tier Clos fabric model.

Hosts hang off leaf switches; every leaf connects to every spine. Each
unidirectional link is an output-queued FIFO port with tail drop, RED-style
ECN marking, and optional PFC pause with xoff/xon hysteresis. Routing is
ECMP by a deterministic hash of (src, dst, flow key).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .simkernel import Simulator, SEC

_M64 = (1 << 64) - 1


def ecmp_hash(a: int, b: int, c: int) -> int:
    """Deterministic 64-bit mix of (src, dst, flow key) for path selection."""
    x = (a * 0x9E3779B97F4A7C15 + b * 0xBF58476D1CE4E5B9 + c * 0x94D049BB133111EB) & _M64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _M64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _M64
    x ^= x >> 31
    return x


class PacketKind(Enum):
    DATA = "DATA"
    ACK = "ACK"
    NACK = "NACK"
    SACK = "SACK"
    CNP = "CNP"
    PFC_PAUSE = "PFC_PAUSE"
    PFC_RESUME = "PFC_RESUME"
    BACKGROUND = "BACKGROUND"


CONTROL_PACKET_BYTES = 64


@dataclass(slots=True)
class Packet:
    """Unit moved through the fabric.

    ``offset`` is an absolute byte offset into the target buffer for
    offset-addressed transports; ``psn`` is the sequence number used by the
    reliable ones. ``size`` is the wire size used for serialization and
    queue occupancy.
    """

    src: int
    dst: int
    qp: int
    kind: PacketKind
    size: int
    offset: int = 0
    psn: int = -1
    step_id: int = -1
    payload_len: int = 0
    ecn_marked: bool = False
    send_time: int = 0
    ack_psn: int = -1
    sack: Optional[frozenset] = None
    data: Optional[bytes] = None
    flow_key: int = 0
    bg: bool = False  # transported background traffic (tenant bursts)


@dataclass
class ClosConfig:
    """Topology and switch parameters. All sizes in bytes, rates in bits/s."""

    hosts: int = 16
    leaf_count: int = 2
    spine_count: int = 2
    hosts_per_leaf: int = 8
    link_bandwidth_bps: int = 100_000_000_000
    link_propagation_ns: int = 1_000
    queue_capacity_bytes: int = 2_000_000
    ecn_kmin_bytes: int = 100_000
    ecn_kmax_bytes: int = 400_000
    ecn_pmax: float = 0.2
    pfc_enabled: bool = False
    pfc_xoff_bytes: int = 1_500_000
    pfc_xon_bytes: int = 1_000_000
    mtu_bytes: int = 1_500
    # Host egress ports model NIC transmit queues: no ECN marking, and a
    # deep buffer so a node never drops its own traffic.
    host_queue_capacity_bytes: int = 64_000_000

    def validate(self) -> None:
        if self.hosts != self.leaf_count * self.hosts_per_leaf:
            raise ValueError(
                f"hosts ({self.hosts}) != leaf_count*hosts_per_leaf "
                f"({self.leaf_count}*{self.hosts_per_leaf})"
            )
        if self.leaf_count < 1 or self.spine_count < 1 or self.hosts_per_leaf < 1:
            raise ValueError("leaf_count, spine_count and hosts_per_leaf must be >= 1")
        if not (0 <= self.ecn_kmin_bytes <= self.ecn_kmax_bytes <= self.queue_capacity_bytes):
            raise ValueError("require 0 <= ecn_kmin <= ecn_kmax <= queue_capacity")
        if not (0.0 <= self.ecn_pmax <= 1.0):
            raise ValueError("ecn_pmax must lie in [0, 1]")
        if not (0 < self.pfc_xon_bytes < self.pfc_xoff_bytes <= self.queue_capacity_bytes):
            raise ValueError("require 0 < pfc_xon < pfc_xoff <= queue_capacity")
        if self.link_bandwidth_bps <= 0 or self.link_propagation_ns < 0:
            raise ValueError("bandwidth must be positive and propagation non-negative")
        if self.mtu_bytes < CONTROL_PACKET_BYTES:
            raise ValueError(f"mtu_bytes must be >= {CONTROL_PACKET_BYTES}")


class PortQueue:
    """Output port: FIFO with byte occupancy, ECN marking and PFC hysteresis.

    Switch ports are a single FIFO. Host ports model the NIC transmit
    scheduler: locally generated control packets (ACK/SACK/CNP) get strict
    priority, and transport data round-robins with background traffic so a
    co-located bulk flow cannot monopolize the uplink.
    """

    __slots__ = (
        "name", "src", "dst", "capacity", "bandwidth_bps", "propagation_ns",
        "ecn_kmin", "ecn_kmax", "ecn_pmax", "ecn_enabled",
        "pfc_enabled", "pfc_xoff", "pfc_xon", "pfc_flagged",
        "occupancy", "paused", "busy", "fifo", "ctrl", "bulk", "rr_bulk_next",
        "enqueued_pkts", "enqueued_bytes", "dequeued_pkts", "dequeued_bytes",
        "drop_count", "dropped_bytes", "ecn_mark_count",
        "pause_count", "paused_since", "paused_ns", "busy_ns",
    )

    def __init__(self, name: str, src: int, dst: int, capacity: int,
                 bandwidth_bps: int, propagation_ns: int,
                 ecn_kmin: int, ecn_kmax: int, ecn_pmax: float,
                 ecn_enabled: bool, pfc_enabled: bool, pfc_xoff: int, pfc_xon: int):
        self.name = name
        self.src = src
        self.dst = dst
        self.capacity = capacity
        self.bandwidth_bps = bandwidth_bps
        self.propagation_ns = propagation_ns
        self.ecn_kmin = ecn_kmin
        self.ecn_kmax = ecn_kmax
        self.ecn_pmax = ecn_pmax
        self.ecn_enabled = ecn_enabled
        self.pfc_enabled = pfc_enabled
        self.pfc_xoff = pfc_xoff
        self.pfc_xon = pfc_xon
        self.pfc_flagged = False
        self.occupancy = 0
        self.paused = False
        self.busy = False
        self.fifo: deque = deque()
        self.ctrl: deque = deque()
        self.bulk: deque = deque()
        self.rr_bulk_next = False
        self.enqueued_pkts = 0
        self.enqueued_bytes = 0
        self.dequeued_pkts = 0
        self.dequeued_bytes = 0
        self.drop_count = 0
        self.dropped_bytes = 0
        self.ecn_mark_count = 0
        self.pause_count = 0
        self.paused_since = 0
        self.paused_ns = 0
        self.busy_ns = 0

    def serialization_ns(self, size_bytes: int) -> int:
        bits = size_bytes * 8
        # Ceiling division keeps dequeued bytes <= bandwidth * elapsed.
        return -(-(bits * SEC) // self.bandwidth_bps)

    def mark_probability(self) -> float:
        """RED-style ramp on instantaneous occupancy (before the new packet)."""
        occ = self.occupancy
        if occ < self.ecn_kmin:
            return 0.0
        if occ > self.ecn_kmax:
            return 1.0
        if self.ecn_kmax == self.ecn_kmin:
            return self.ecn_pmax
        return self.ecn_pmax * (occ - self.ecn_kmin) / (self.ecn_kmax - self.ecn_kmin)

    def pfc_transition(self) -> Optional[PacketKind]:
        """Hysteresis state machine; one PAUSE per upward xoff crossing, one
        RESUME per downward xon crossing. None when pfc is disabled."""
        if not self.pfc_enabled:
            return None
        if not self.pfc_flagged and self.occupancy > self.pfc_xoff:
            self.pfc_flagged = True
            return PacketKind.PFC_PAUSE
        if self.pfc_flagged and self.occupancy <= self.pfc_xon:
            self.pfc_flagged = False
            return PacketKind.PFC_RESUME
        return None


@dataclass
class FabricCounters:
    injected: int = 0
    delivered: int = 0
    dropped: int = 0
    injected_data: int = 0
    delivered_data: int = 0
    dropped_data: int = 0
    injected_background: int = 0
    delivered_background: int = 0
    dropped_background: int = 0


class ClosFabric:
    """Builds the topology and moves packets between registered hosts."""

    def __init__(self, sim: Simulator, config: ClosConfig):
        config.validate()
        self.sim = sim
        self.config = config
        self.host_count = config.hosts
        self._leaf0 = config.hosts
        self._spine0 = config.hosts + config.leaf_count
        self.counters = FabricCounters()
        self._endpoints: dict[int, Callable[[Packet, int], None]] = {}
        self._ecn_rng = sim.rng("ecn-mark")
        self.ports: dict[tuple[int, int], PortQueue] = {}
        self._build_ports()
        # Per-device set of output ports currently above xoff; pause state of
        # upstream neighbours is driven by whether this set is empty.
        self._congested: dict[int, set] = {}

    # -- topology ---------------------------------------------------------

    def leaf_of(self, host: int) -> int:
        return self._leaf0 + host // self.config.hosts_per_leaf

    def is_host(self, node: int) -> bool:
        return node < self.host_count

    def node_name(self, node: int) -> str:
        if node < self._leaf0:
            return f"host{node}"
        if node < self._spine0:
            return f"leaf{node - self._leaf0}"
        return f"spine{node - self._spine0}"

    def _add_port(self, src: int, dst: int, is_host_port: bool) -> None:
        c = self.config
        q = PortQueue(
            name=f"{self.node_name(src)}->{self.node_name(dst)}",
            src=src,
            dst=dst,
            capacity=c.host_queue_capacity_bytes if is_host_port else c.queue_capacity_bytes,
            bandwidth_bps=c.link_bandwidth_bps,
            propagation_ns=c.link_propagation_ns,
            ecn_kmin=c.ecn_kmin_bytes,
            ecn_kmax=c.ecn_kmax_bytes,
            ecn_pmax=c.ecn_pmax,
            ecn_enabled=not is_host_port,
            pfc_enabled=c.pfc_enabled and not is_host_port,
            pfc_xoff=c.pfc_xoff_bytes,
            pfc_xon=c.pfc_xon_bytes,
        )
        self.ports[(src, dst)] = q

    def _build_ports(self) -> None:
        c = self.config
        for h in range(c.hosts):
            leaf = self.leaf_of(h)
            self._add_port(h, leaf, is_host_port=True)
            self._add_port(leaf, h, is_host_port=False)
        for li in range(c.leaf_count):
            leaf = self._leaf0 + li
            for si in range(c.spine_count):
                spine = self._spine0 + si
                self._add_port(leaf, spine, is_host_port=False)
                self._add_port(spine, leaf, is_host_port=False)

    def _upstream_neighbors(self, device: int) -> list[int]:
        """Devices that transmit into ``device`` (recipients of its PAUSE)."""
        c = self.config
        if device < self._leaf0:
            return []
        if device < self._spine0:
            li = device - self._leaf0
            hosts = list(range(li * c.hosts_per_leaf, (li + 1) * c.hosts_per_leaf))
            return hosts + [self._spine0 + s for s in range(c.spine_count)]
        return [self._leaf0 + l for l in range(c.leaf_count)]

    def route(self, src: int, dst: int, flow_key: int) -> list[int]:
        """Node path src..dst; hop count is len(path) - 1."""
        if src == dst:
            return [src]
        sl, dl = self.leaf_of(src), self.leaf_of(dst)
        if sl == dl:
            return [src, sl, dst]
        spine = self._spine0 + ecmp_hash(src, dst, flow_key) % self.config.spine_count
        return [src, sl, spine, dl, dst]

    # -- host attachment ---------------------------------------------------

    def register_host(self, host: int, on_packet: Callable[[Packet, int], None]) -> None:
        self._endpoints[host] = on_packet

    def inject(self, host: int, pkt: Packet, control: bool = False) -> None:
        """Entry point for host-originated traffic (transport and background)."""
        self.counters.injected += 1
        if pkt.kind is PacketKind.BACKGROUND or pkt.bg:
            self.counters.injected_background += 1
        elif pkt.kind is PacketKind.DATA:
            self.counters.injected_data += 1
        self.enqueue(self.ports[(host, self.leaf_of(host))], pkt, control=control,
                     bulk=pkt.kind is PacketKind.BACKGROUND or pkt.bg)

    # -- queueing ----------------------------------------------------------

    def enqueue(self, port: PortQueue, pkt: Packet, control: bool = False,
                bulk: bool = False) -> str:
        """Tail-drop admission plus ECN marking; returns "ENQUEUED" or "DROPPED"."""
        if port.occupancy + pkt.size > port.capacity:
            port.drop_count += 1
            port.dropped_bytes += pkt.size
            self._count_drop(pkt)
            return "DROPPED"
        if port.ecn_enabled and pkt.kind is PacketKind.DATA:
            p = port.mark_probability()
            if p >= 1.0 or (p > 0.0 and self._ecn_rng.random() < p):
                pkt.ecn_marked = True
                port.ecn_mark_count += 1
        port.occupancy += pkt.size
        port.enqueued_pkts += 1
        port.enqueued_bytes += pkt.size
        if control:
            port.ctrl.append(pkt)
        elif bulk:
            port.bulk.append(pkt)
        else:
            port.fifo.append(pkt)
        self._pfc_after_rise(port)
        if not port.busy and not port.paused:
            self._start_tx(port)
        return "ENQUEUED"

    def _count_drop(self, pkt: Packet) -> None:
        self.counters.dropped += 1
        if pkt.kind is PacketKind.BACKGROUND or pkt.bg:
            self.counters.dropped_background += 1
        elif pkt.kind is PacketKind.DATA:
            self.counters.dropped_data += 1

    def _start_tx(self, port: PortQueue) -> None:
        if port.ctrl:
            pkt = port.ctrl.popleft()
        elif port.fifo and port.bulk:
            pkt = port.bulk.popleft() if port.rr_bulk_next else port.fifo.popleft()
            port.rr_bulk_next = not port.rr_bulk_next
        elif port.fifo:
            pkt = port.fifo.popleft()
        elif port.bulk:
            pkt = port.bulk.popleft()
        else:
            return
        port.busy = True
        ser = port.serialization_ns(pkt.size)
        port.busy_ns += ser
        self.sim.after(ser, "tx-done", self._tx_done, port, pkt)

    def _tx_done(self, port: PortQueue, pkt: Packet) -> None:
        port.busy = False
        port.occupancy -= pkt.size
        port.dequeued_pkts += 1
        port.dequeued_bytes += pkt.size
        self.sim.after(port.propagation_ns, "packet-arrival", self._arrive, port.dst, pkt)
        self._pfc_after_fall(port)
        if not port.paused and (port.ctrl or port.fifo or port.bulk):
            self._start_tx(port)

    def _arrive(self, node: int, pkt: Packet) -> None:
        if self.is_host(node):
            self.counters.delivered += 1
            if pkt.kind is PacketKind.BACKGROUND or pkt.bg:
                self.counters.delivered_background += 1
            elif pkt.kind is PacketKind.DATA:
                self.counters.delivered_data += 1
            endpoint = self._endpoints.get(node)
            if endpoint is not None:
                endpoint(pkt, self.sim.now)
            return
        self.enqueue(self._route_port(node, pkt), pkt)

    def _route_port(self, node: int, pkt: Packet) -> PortQueue:
        if node < self._spine0:  # leaf
            dleaf = self.leaf_of(pkt.dst)
            if dleaf == node:
                return self.ports[(node, pkt.dst)]
            spine = self._spine0 + ecmp_hash(pkt.src, pkt.dst, pkt.flow_key) % self.config.spine_count
            return self.ports[(node, spine)]
        return self.ports[(node, self.leaf_of(pkt.dst))]  # spine

    # -- PFC ----------------------------------------------------------------

    def _pfc_after_rise(self, port: PortQueue) -> None:
        if port.pfc_transition() is PacketKind.PFC_PAUSE:
            flagged = self._congested.setdefault(port.src, set())
            if not flagged:
                self._signal_upstreams(port.src, PacketKind.PFC_PAUSE)
            flagged.add((port.src, port.dst))

    def _pfc_after_fall(self, port: PortQueue) -> None:
        if port.pfc_transition() is PacketKind.PFC_RESUME:
            flagged = self._congested.get(port.src)
            if flagged is not None:
                flagged.discard((port.src, port.dst))
                if not flagged:
                    self._signal_upstreams(port.src, PacketKind.PFC_RESUME)

    def _signal_upstreams(self, device: int, kind: PacketKind) -> None:
        # PFC frames are link-level control: they bypass data queues and only
        # pay propagation delay.
        delay = self.config.link_propagation_ns
        for up in self._upstream_neighbors(device):
            port = self.ports.get((up, device))
            if port is not None:
                self.sim.after(delay, "pfc-signal", self._apply_pfc, port, kind)

    def _apply_pfc(self, port: PortQueue, kind: PacketKind) -> None:
        if kind is PacketKind.PFC_PAUSE:
            if not port.paused:
                port.paused = True
                port.pause_count += 1
                port.paused_since = self.sim.now
        else:
            if port.paused:
                port.paused = False
                port.paused_ns += self.sim.now - port.paused_since
                if not port.busy and (port.ctrl or port.fifo or port.bulk):
                    self._start_tx(port)

    # -- accounting ----------------------------------------------------------

    def in_flight(self) -> int:
        return self.counters.injected - self.counters.delivered - self.counters.dropped

    def port_rows(self) -> list[dict]:
        rows = []
        for (src, dst), q in sorted(self.ports.items()):
            paused_ns = q.paused_ns + (self.sim.now - q.paused_since if q.paused else 0)
            rows.append({
                "port": q.name,
                "enqueued_pkts": q.enqueued_pkts,
                "enqueued_bytes": q.enqueued_bytes,
                "dequeued_pkts": q.dequeued_pkts,
                "dequeued_bytes": q.dequeued_bytes,
                "dropped_pkts": q.drop_count,
                "dropped_bytes": q.dropped_bytes,
                "ecn_marked_pkts": q.ecn_mark_count,
                "pause_count": q.pause_count,
                "paused_ns": paused_ns,
                "busy_ns": q.busy_ns,
            })
        return rows

    def total_data_drops(self) -> int:
        return self.counters.dropped_data


@dataclass
class BackgroundTrafficConfig:
    """Poisson flow arrivals; each flow sends one heavy-tailed burst.

    With ``congestion_controlled`` set (the default used by scenarios), each
    burst runs over an ephemeral best-effort QP governed by DCQCN, as cluster
    tenants would; otherwise packets are injected open-loop at line rate.
    """

    flow_rate_per_sec: float = 0.0
    burst_mean_bytes: int = 1_000_000
    burst_pareto_shape: float = 1.5  # <= 0 means fixed-size bursts
    burst_max_bytes: int = 0  # truncate the tail; 0 leaves it unbounded
    fan_in: int = 1  # sources per event, all bursting at one victim host
    congestion_controlled: bool = True
    on_mean_ns: int = 0  # 0 disables on/off gating
    off_mean_ns: int = 0

    def validate(self) -> None:
        if self.flow_rate_per_sec < 0:
            raise ValueError("flow_rate_per_sec must be >= 0")
        if self.flow_rate_per_sec > 0 and self.burst_mean_bytes < 64:
            raise ValueError("burst_mean_bytes must be at least one packet")
        if self.burst_max_bytes and self.burst_max_bytes < self.burst_mean_bytes:
            raise ValueError("burst_max_bytes must be zero or >= burst_mean_bytes")
        if self.fan_in < 1:
            raise ValueError("fan_in must be >= 1")
        if (self.on_mean_ns > 0) != (self.off_mean_ns > 0):
            raise ValueError("on_mean_ns and off_mean_ns must both be set or both be zero")


class BackgroundTraffic:
    """Injects seeded bursty cross traffic over uniform random host pairs.

    ``flow_sink(src, dst, size_bytes, flow_key)``, when provided, takes over
    burst emission (the scenario layer uses it to run bursts through
    DCQCN-governed queue pairs); the default is open-loop line-rate injection.
    """

    def __init__(self, sim: Simulator, fabric: ClosFabric, config: BackgroundTrafficConfig,
                 stream_id: str = "background-traffic",
                 flow_sink: Optional[Callable[[int, int, int, int], None]] = None):
        config.validate()
        self.sim = sim
        self.fabric = fabric
        self.config = config
        self.rng = sim.rng(stream_id)
        self.flow_sink = flow_sink
        self.flows = 0

    def arrival_times(self, horizon_ns: int) -> list[int]:
        """Flow arrival instants on [now, horizon); empty when rate is zero."""
        cfg = self.config
        if cfg.flow_rate_per_sec <= 0:
            return []
        mean_gap = SEC / cfg.flow_rate_per_sec
        times: list[int] = []
        if cfg.on_mean_ns > 0:
            t = self.sim.now
            on = True
            while t < horizon_ns:
                span = self.rng.exponential(cfg.on_mean_ns if on else cfg.off_mean_ns)
                end = min(horizon_ns, t + int(span))
                if on:
                    cursor = t + int(self.rng.exponential(mean_gap))
                    while cursor < end:
                        times.append(cursor)
                        cursor += max(1, int(self.rng.exponential(mean_gap)))
                t = end
                on = not on
            return times
        t = self.sim.now + int(self.rng.exponential(mean_gap))
        while t < horizon_ns:
            times.append(t)
            t += max(1, int(self.rng.exponential(mean_gap)))
        return times

    def schedule(self, horizon_ns: int) -> int:
        """Schedule all burst events up to the horizon; returns the flow count."""
        times = self.arrival_times(horizon_ns)
        for t in times:
            self.sim.at(t, "background-burst", self._burst)
        return len(times)

    def _burst(self) -> None:
        cfg = self.config
        hosts = self.fabric.host_count
        dst = self.rng.integers(0, hosts)
        sources = []
        want = min(cfg.fan_in, hosts - 1)
        while len(sources) < want:
            src = self.rng.integers(0, hosts - 1)
            if src >= dst:
                src += 1
            if src not in sources:
                sources.append(src)
        for src in sources:
            if cfg.burst_pareto_shape > 0:
                scale = cfg.burst_mean_bytes * (cfg.burst_pareto_shape - 1) / cfg.burst_pareto_shape
                size = int(self.rng.pareto(cfg.burst_pareto_shape, scale))
            else:
                size = cfg.burst_mean_bytes
            if cfg.burst_max_bytes:
                size = min(size, cfg.burst_max_bytes)
            size = max(size, self.fabric.config.mtu_bytes)
            self.flows += 1
            flow_key = 1_000_000 + self.flows
            if self.flow_sink is not None:
                self.flow_sink(src, dst, size, flow_key)
                continue
            mtu = self.fabric.config.mtu_bytes
            remaining = size
            while remaining > 0:
                chunk = min(mtu, remaining)
                remaining -= chunk
                self.fabric.inject(src, Packet(
                    src=src, dst=dst, qp=-1, kind=PacketKind.BACKGROUND,
                    size=max(chunk, CONTROL_PACKET_BYTES), flow_key=flow_key,
                    send_time=self.sim.now,
                ))
