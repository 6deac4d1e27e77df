"""Experiment assembly, execution and reporting.

A scenario wires the Clos fabric, per-host NICs, the ring collective and the
timeout policy from one validated config, runs it to completion (or a
duration cap) and emits per-step, per-port and per-QP CSVs plus a summary.
Everything downstream of (config, seed) is deterministic, so re-runs produce
byte-identical outputs.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__, timeoutctl
from .collective import CollectiveGroup, RingRunner, StepResult, TimeoutPolicy
from .fabric import BackgroundTraffic, BackgroundTrafficConfig, ClosConfig, ClosFabric, Packet, PacketKind
from .simkernel import SEC, Simulator
from .transport import DcqcnParams, QueuePair, TransportKind, TransportOpts, WorkRequest


class ConfigError(ValueError):
    """Invalid scenario configuration; ``field`` names the offending entry."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path


@dataclass
class CollectiveSpec:
    payload_bytes: int = 4_000_000
    rounds: int = 4
    members: Optional[list[int]] = None  # None: every host in the topology
    group_id: str = "allreduce0"
    granule: int = 1


@dataclass
class ScenarioConfig:
    topology: ClosConfig = field(default_factory=ClosConfig)
    transport: TransportKind = TransportKind.ROCE_GBN
    collective: CollectiveSpec = field(default_factory=CollectiveSpec)
    timeout: TimeoutPolicy = field(default_factory=TimeoutPolicy)
    background: BackgroundTrafficConfig = field(default_factory=BackgroundTrafficConfig)
    dcqcn: DcqcnParams = field(default_factory=DcqcnParams)
    transport_opts: TransportOpts = field(default_factory=TransportOpts)
    seed: int = 1
    duration_cap_ns: int = 5 * SEC
    run_id: str = ""

    def resolved_members(self) -> list[int]:
        if self.collective.members is not None:
            return list(self.collective.members)
        return list(range(self.topology.hosts))

    def label(self) -> str:
        return self.run_id or f"{self.transport.value.lower()}-seed{self.seed}"


_SECTION_TYPES = {
    "topology": ClosConfig,
    "collective": CollectiveSpec,
    "timeout": TimeoutPolicy,
    "background": BackgroundTrafficConfig,
    "dcqcn": DcqcnParams,
    "transport_opts": TransportOpts,
}
_SCALAR_KEYS = {"transport", "seed", "duration_cap_ns", "run_id"}


def _parse_section(cls, data: dict, path: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", "unknown key")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def parse_config(raw: dict) -> ScenarioConfig:
    """Strictly validate a config dict; unknown keys are rejected by name."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    unknown = sorted(set(raw) - set(_SECTION_TYPES) - _SCALAR_KEYS)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    kwargs = {}
    for key, cls in _SECTION_TYPES.items():
        section = raw.get(key)
        if section is None:
            continue
        if not isinstance(section, dict):
            raise ConfigError(key, "must be an object")
        section = dict(section)
        if key == "timeout" and "from_steps_csv" in section:
            path = section.pop("from_steps_csv")
            durations = read_step_durations(path)
            section["timeout_ns"] = timeoutctl.static_timeout_from_baseline(durations)
        kwargs[key] = _parse_section(cls, section, key)
    if "transport" in raw:
        try:
            kwargs["transport"] = TransportKind(raw["transport"])
        except ValueError:
            raise ConfigError("transport", f"unknown transport {raw['transport']!r}")
    for key in ("seed", "duration_cap_ns", "run_id"):
        if key in raw:
            kwargs[key] = raw[key]
    config = ScenarioConfig(**kwargs)
    # PFC defaults to on only for the go-back-N design, which requires it.
    if "topology" not in raw or "pfc_enabled" not in raw.get("topology", {}):
        config.topology.pfc_enabled = config.transport is TransportKind.ROCE_GBN
    try:
        config.topology.validate()
        config.timeout.validate()
        config.background.validate()
    except ValueError as exc:
        raise ConfigError("<config>", str(exc)) from exc
    members = config.resolved_members()
    if any(m < 0 or m >= config.topology.hosts for m in members):
        raise ConfigError("collective.members", "member outside host range")
    if len(members) < 2:
        raise ConfigError("collective.members", "need at least 2 members")
    return config


def load_config(path: str) -> ScenarioConfig:
    with open(path) as fh:
        return parse_config(json.load(fh))


def config_to_dict(config: ScenarioConfig) -> dict:
    out: dict = {}
    for key, cls in _SECTION_TYPES.items():
        out[key] = dataclasses.asdict(getattr(config, key))
    out["transport"] = config.transport.value
    out["seed"] = config.seed
    out["duration_cap_ns"] = config.duration_cap_ns
    out["run_id"] = config.run_id
    return out


# ---------------------------------------------------------------------------
# NIC wiring
# ---------------------------------------------------------------------------

class HostNic:
    """Demuxes arriving packets to this host's queue pairs."""

    def __init__(self, sim: Simulator, fabric: ClosFabric, host: int):
        self.sim = sim
        self.fabric = fabric
        self.host = host
        self.qps: dict[int, QueuePair] = {}
        self.background_rx = 0
        self.unknown_qp = 0
        fabric.register_host(host, self.on_packet)

    def egress(self, pkt: Packet, control: bool = False) -> None:
        self.fabric.inject(self.host, pkt, control)

    def add_qp(self, qp: QueuePair) -> None:
        self.qps[qp.qp_id] = qp

    def on_packet(self, pkt: Packet, now: int) -> None:
        if pkt.kind is PacketKind.BACKGROUND:
            self.background_rx += 1
            return
        qp = self.qps.get(pkt.qp)
        if qp is None:
            self.unknown_qp += 1
            return
        qp.on_packet(pkt, now)


@dataclass
class BuiltScenario:
    sim: Simulator
    fabric: ClosFabric
    nics: dict
    runner: RingRunner
    background: BackgroundTraffic
    send_qps: list
    recv_qps: list
    timeout_trace: list


class BackgroundFlowFactory:
    """Runs each background burst over an ephemeral best-effort QP so cross
    traffic obeys the same DCQCN control loop as everything else."""

    BG_QP_BASE = 1_000_000

    def __init__(self, sim: Simulator, nics: dict, line_rate_bps: float,
                 mtu: int, dcqcn_params: DcqcnParams):
        self.sim = sim
        self.nics = nics
        self.line_rate_bps = line_rate_bps
        self.mtu = mtu
        self.dcqcn_params = dcqcn_params
        self._next_id = self.BG_QP_BASE
        self.flows_started = 0

    def __call__(self, src: int, dst: int, size: int, flow_key: int) -> None:
        snd_id, rcv_id = self._next_id, self._next_id + 1
        self._next_id += 2
        snd = QueuePair(
            self.sim, TransportKind.CELERIS, snd_id, rcv_id, src, dst, size,
            self.mtu, self.line_rate_bps, self.nics[src].egress,
            dcqcn_params=self.dcqcn_params, background=True,
        )
        rcv = QueuePair(
            self.sim, TransportKind.CELERIS, rcv_id, snd_id, dst, src, size,
            self.mtu, self.line_rate_bps, self.nics[dst].egress,
            dcqcn_params=self.dcqcn_params, background=True,
        )
        self.nics[src].add_qp(snd)
        self.nics[dst].add_qp(rcv)
        snd.post_send(WorkRequest(qp=snd_id, offset=0, length=size))
        self.flows_started += 1


def estimate_bdp_bytes(topology: ClosConfig) -> int:
    """Bandwidth-delay product over the longest (4-hop) path, one MTU floor."""
    ser = -(-(topology.mtu_bytes * 8 * SEC) // topology.link_bandwidth_bps)
    one_way = 4 * (topology.link_propagation_ns + ser)
    rtt = 2 * one_way
    return max(topology.mtu_bytes, topology.link_bandwidth_bps * rtt // (8 * SEC))


def build_scenario(config: ScenarioConfig,
                   data: Optional[list[np.ndarray]] = None) -> BuiltScenario:
    sim = Simulator(config.seed)
    fabric = ClosFabric(sim, config.topology)
    members = config.resolved_members()
    n = len(members)
    nics = {h: HostNic(sim, fabric, h) for h in range(config.topology.hosts)}
    opts = config.transport_opts
    if opts.window_bytes <= 0:
        opts = dataclasses.replace(opts, window_bytes=estimate_bdp_bytes(config.topology))
    group = CollectiveGroup(
        group_id=config.collective.group_id,
        members=members,
        payload_bytes=config.collective.payload_bytes,
        granule=config.collective.granule,
    )
    send_qps: list[QueuePair] = []
    recv_qps: list[QueuePair] = []
    line_rate = config.topology.link_bandwidth_bps
    payload = config.collective.payload_bytes
    for i, host in enumerate(members):
        succ = members[(i + 1) % n]
        snd_id, rcv_id = 2 * i + 1, 2 * i + 2
        snd = QueuePair(
            sim, config.transport, snd_id, rcv_id, host, succ, payload,
            config.topology.mtu_bytes, line_rate, nics[host].egress,
            dcqcn_params=config.dcqcn, opts=opts,
        )
        rcv = QueuePair(
            sim, config.transport, rcv_id, snd_id, succ, host, payload,
            config.topology.mtu_bytes, line_rate, nics[succ].egress,
            dcqcn_params=config.dcqcn, opts=opts,
        )
        nics[host].add_qp(snd)
        nics[succ].add_qp(rcv)
        send_qps.append(snd)
        recv_qps.append(rcv)
    timeout_trace: list = []
    runner = RingRunner(
        sim, group, send_qps, config.collective.rounds,
        timeout_policy=config.timeout, data=data,
        timeout_trace=timeout_trace if config.timeout.mode == "ADAPTIVE" else None,
    )
    for i, rcv in enumerate(recv_qps):
        succ = members[(i + 1) % n]
        rcv.on_place = (
            lambda qp, sid, off, ln, dat, now, h=succ: runner.on_place(h, sid, off, ln, dat, now)
        )
    flow_sink = None
    if config.background.congestion_controlled:
        flow_sink = BackgroundFlowFactory(sim, nics, line_rate,
                                          config.topology.mtu_bytes, config.dcqcn)
    background = BackgroundTraffic(sim, fabric, config.background,
                                   flow_sink=flow_sink)
    return BuiltScenario(sim=sim, fabric=fabric, nics=nics, runner=runner,
                         background=background, send_qps=send_qps,
                         recv_qps=recv_qps, timeout_trace=timeout_trace)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def percentile_nearest_rank(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile; q in (0, 100]."""
    if not values:
        raise ValueError("percentile of empty sequence")
    ordered = sorted(values)
    idx = max(0, math.ceil(q / 100.0 * len(ordered)) - 1)
    return ordered[idx]


def summarize(results: Sequence[StepResult], late_packets: int = 0,
              truncated: bool = False, fabric: Optional[ClosFabric] = None,
              final_time_ns: int = 0) -> dict:
    durations = [r.duration_ns for r in results]
    if not durations:
        raise ValueError("no step results to summarize")
    median = percentile_nearest_rank(durations, 50)
    p95 = percentile_nearest_rank(durations, 95)
    p99 = percentile_nearest_rank(durations, 99)
    losses = [r.loss_fraction for r in results]
    summary = {
        "steps": len(results),
        "median_ns": int(median),
        "p95_ns": int(p95),
        "p99_ns": int(p99),
        "p99_over_median": round(p99 / median, 6) if median else 0.0,
        "mean_loss_fraction": round(float(np.mean(losses)), 9),
        "late_packets": int(late_packets),
        "truncated": bool(truncated),
        "final_time_ns": int(final_time_ns),
    }
    if fabric is not None:
        summary["data_drops"] = fabric.counters.dropped_data
        summary["background_drops"] = fabric.counters.dropped_background
        summary["total_ecn_marks"] = sum(q.ecn_mark_count for q in fabric.ports.values())
        summary["total_pause_ns"] = sum(q.paused_ns for q in fabric.ports.values())
    return summary


@dataclass
class RunReport:
    run_id: str
    summary: dict
    results: list[StepResult]
    out_dir: Optional[str] = None
    steps_csv: Optional[str] = None

    @property
    def durations_ns(self) -> list[int]:
        return [r.duration_ns for r in self.results]


# ---------------------------------------------------------------------------
# execution + reporting
# ---------------------------------------------------------------------------

def simulate(config: ScenarioConfig, out_dir: Optional[str] = None,
             data: Optional[list[np.ndarray]] = None,
             raw_config: Optional[dict] = None) -> RunReport:
    """Run one scenario to completion (or the duration cap)."""
    built = build_scenario(config, data=data)
    built.background.schedule(config.duration_cap_ns)
    built.runner.start()
    stats = built.sim.run_until(config.duration_cap_ns, stop=lambda: built.runner.done)
    truncated = not built.runner.done
    summary = summarize(built.runner.results, built.runner.late_packets,
                        truncated, built.fabric, stats.final_time_ns)
    summary["events"] = stats.events_processed
    report = RunReport(run_id=config.label(), summary=summary,
                       results=built.runner.results)
    if out_dir is not None:
        _write_outputs(report, built, config, out_dir, raw_config)
    return report


def _write_outputs(report: RunReport, built: BuiltScenario, config: ScenarioConfig,
                   out_dir: str, raw_config: Optional[dict]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    steps_path = os.path.join(out_dir, "steps.csv")
    write_steps_csv(steps_path, report.run_id, config.collective.group_id,
                    built.runner.results, built.runner.steps_per_round)
    report.steps_csv = steps_path
    report.out_dir = out_dir
    with open(os.path.join(out_dir, "ports.csv"), "w", newline="") as fh:
        rows = built.fabric.port_rows()
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    with open(os.path.join(out_dir, "qps.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["host", "qp", "role", "data_sent", "data_received",
                         "retransmits", "duplicates", "protocol_errors",
                         "cnps_sent", "cnps_received", "out_of_order"])
        for role, qps in (("send", built.send_qps), ("recv", built.recv_qps)):
            for qp in qps:
                s = qp.stats
                writer.writerow([qp.local_host, qp.qp_id, role, s.data_sent,
                                 s.data_received, s.retransmit_count, s.duplicates,
                                 s.protocol_errors, s.cnps_sent, s.cnps_received,
                                 s.out_of_order])
    if built.timeout_trace:
        with open(os.path.join(out_dir, "timeouts.csv"), "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["step_id", "node",
                                                    "local_estimate_ns",
                                                    "coordinated_timeout_ns"])
            writer.writeheader()
            writer.writerows(built.timeout_trace)
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(report.summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    cfg_dict = raw_config if raw_config is not None else config_to_dict(config)
    canonical = json.dumps(cfg_dict, sort_keys=True, separators=(",", ":"))
    meta = {
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": config.seed,
        "run_id": report.run_id,
        "tool": "rdmasim",
        "version": __version__,
    }
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(cfg_dict, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_steps_csv(path: str, run_id: str, group_id: str,
                    results: Sequence[StepResult], steps_per_round: int) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "group_id", "step_id", "round", "node",
                         "start_ns", "duration_ns", "bytes_expected",
                         "bytes_received", "finalized_by", "loss_fraction"])
        for r in results:
            writer.writerow([
                run_id, group_id, r.step_id, r.step_id // steps_per_round,
                r.node, r.start_ns, r.duration_ns, r.bytes_expected,
                r.bytes_received, r.finalized_by, f"{r.loss_fraction:.9f}",
            ])


def read_step_durations(path: str) -> list[int]:
    with open(path, newline="") as fh:
        return [int(row["duration_ns"]) for row in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# sweeps and derived tables
# ---------------------------------------------------------------------------

def apply_axis(raw: dict, axis: str, value) -> dict:
    """Return a copy of the raw config with the dotted axis set to value."""
    parts = axis.split(".")
    out = json.loads(json.dumps(raw))
    if len(parts) == 1:
        key = parts[0]
        if key in _SCALAR_KEYS:
            out[key] = value
            return out
        raise ConfigError(axis, "unknown sweep axis")
    if len(parts) == 2 and parts[0] in _SECTION_TYPES:
        cls = _SECTION_TYPES[parts[0]]
        if parts[1] not in {f.name for f in dataclasses.fields(cls)}:
            raise ConfigError(axis, "unknown sweep axis")
        out.setdefault(parts[0], {})[parts[1]] = value
        return out
    raise ConfigError(axis, "unknown sweep axis")


def sweep(raw_config: dict, axis: str, values: Sequence, out_dir: Optional[str] = None,
          seed_policy: str = "same") -> list[RunReport]:
    """One simulate() per axis value; merged CSV preserves input order."""
    if not values:
        raise ConfigError(axis, "empty sweep value list")
    if seed_policy not in ("same", "increment"):
        raise ConfigError("seed_policy", f"unknown policy {seed_policy!r}")
    reports = []
    for idx, value in enumerate(values):
        raw = apply_axis(raw_config, axis, value)
        if seed_policy == "increment":
            raw["seed"] = int(raw.get("seed", 1)) + idx
        config = parse_config(raw)
        if not config.run_id:
            config.run_id = f"{config.label()}-{axis.split('.')[-1]}-{value}"
        point_dir = os.path.join(out_dir, f"point{idx}") if out_dir else None
        reports.append(simulate(config, out_dir=point_dir, raw_config=raw))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["axis", "value", "run_id", "steps", "median_ns",
                             "p95_ns", "p99_ns", "p99_over_median",
                             "mean_loss_fraction", "late_packets"])
            for value, rep in zip(values, reports):
                s = rep.summary
                writer.writerow([axis, value, rep.run_id, s["steps"], s["median_ns"],
                                 s["p95_ns"], s["p99_ns"], s["p99_over_median"],
                                 s["mean_loss_fraction"], s["late_packets"]])
    return reports


def ecdf(values: Sequence[float]) -> list[tuple[float, float]]:
    """(value, cumulative fraction) rows; duplicates keep distinct ranks."""
    if not values:
        raise ValueError("ecdf of empty input")
    ordered = sorted(values)
    n = len(ordered)
    return [(v, (i + 1) / n) for i, v in enumerate(ordered)]


def write_ecdf_csv(path: str, values: Sequence[float]) -> None:
    rows = ecdf(values)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["duration_ns", "cumulative_fraction"])
        for v, f in rows:
            writer.writerow([int(v), f"{f:.9f}"])


def report_tables(out_path: str) -> list[dict]:
    """Design-comparison rows (context bytes, QP capacity, fitted MTBF)."""
    from . import resmodel

    rows = resmodel.design_table()
    with open(out_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    return rows
