import pytest

from rdmasim.fabric import (
    BackgroundTraffic,
    BackgroundTrafficConfig,
    ClosConfig,
    ClosFabric,
    Packet,
    PacketKind,
    PortQueue,
)
from rdmasim.simkernel import MSEC, SEC, USEC, Simulator


def small_config(**kw):
    base = dict(hosts=4, leaf_count=2, spine_count=2, hosts_per_leaf=2)
    base.update(kw)
    return ClosConfig(**base)


def make_fabric(config=None, seed=0):
    sim = Simulator(seed)
    fabric = ClosFabric(sim, config or small_config())
    return sim, fabric


def data_packet(src, dst, size=1500, qp=7):
    return Packet(src=src, dst=dst, qp=qp, kind=PacketKind.DATA, size=size,
                  payload_len=size, flow_key=qp)


# -- topology -----------------------------------------------------------------

def test_full_scale_clos_reachability_and_diameter():
    cfg = ClosConfig(hosts=128, leaf_count=8, spine_count=8, hosts_per_leaf=16)
    _, fabric = make_fabric(cfg)
    # every host reachable from host 0; cross-leaf diameter is 4 hops
    for dst in range(128):
        if dst == 0:
            continue
        path = fabric.route(0, dst, flow_key=1)
        assert path[0] == 0 and path[-1] == dst
        hops = len(path) - 1
        if fabric.leaf_of(dst) == fabric.leaf_of(0):
            assert hops == 2
        else:
            assert hops == 4


def test_intra_leaf_route_stays_on_leaf():
    _, fabric = make_fabric()
    path = fabric.route(0, 1, flow_key=3)
    assert len(path) - 1 == 2
    assert path[1] == fabric.leaf_of(0)


def test_routing_deterministic_across_builds():
    _, f1 = make_fabric(seed=0)
    _, f2 = make_fabric(seed=99)  # seed affects marking only, not routes
    for src in range(4):
        for dst in range(4):
            if src != dst:
                for key in range(20):
                    assert f1.route(src, dst, key) == f2.route(src, dst, key)


def test_invalid_configs_rejected():
    with pytest.raises(ValueError):
        ClosConfig(hosts=5, leaf_count=2, spine_count=2, hosts_per_leaf=2).validate()
    with pytest.raises(ValueError):
        small_config(ecn_kmin_bytes=500_000, ecn_kmax_bytes=100_000).validate()
    with pytest.raises(ValueError):
        small_config(pfc_xoff_bytes=100, pfc_xon_bytes=200).validate()
    with pytest.raises(ValueError):
        small_config(ecn_pmax=1.5).validate()


# -- queue admission / ECN ------------------------------------------------------

def test_enqueue_below_kmin_never_marks():
    _, fabric = make_fabric()
    port = fabric.ports[(fabric._leaf0, 0)]  # leaf -> host0
    pkt = data_packet(1, 0)
    assert fabric.enqueue(port, pkt) == "ENQUEUED"
    assert pkt.ecn_marked is False


def test_enqueue_at_capacity_drops():
    _, fabric = make_fabric()
    port = fabric.ports[(fabric._leaf0, 0)]
    port.occupancy = port.capacity
    pkt = data_packet(1, 0)
    assert fabric.enqueue(port, pkt) == "DROPPED"
    assert port.drop_count == 1
    assert fabric.counters.dropped_data == 1


def test_enqueue_above_kmax_always_marks():
    _, fabric = make_fabric()
    port = fabric.ports[(fabric._leaf0, 0)]
    port.occupancy = port.ecn_kmax + 1
    pkt = data_packet(1, 0)
    assert fabric.enqueue(port, pkt) == "ENQUEUED"
    assert pkt.ecn_marked is True


def test_mark_probability_monotone_in_occupancy():
    _, fabric = make_fabric()
    port = fabric.ports[(fabric._leaf0, 0)]
    last = -1.0
    for occ in range(0, port.capacity, port.capacity // 50):
        port.occupancy = occ
        p = port.mark_probability()
        assert p >= last
        last = p
    assert last == 1.0


def test_control_packets_never_marked():
    _, fabric = make_fabric()
    port = fabric.ports[(fabric._leaf0, 0)]
    port.occupancy = port.ecn_kmax * 2
    pkt = Packet(src=1, dst=0, qp=1, kind=PacketKind.ACK, size=64)
    fabric.enqueue(port, pkt)
    assert pkt.ecn_marked is False


# -- PFC hysteresis --------------------------------------------------------------

def pfc_port(enabled=True):
    return PortQueue("t", 0, 1, capacity=2_000_000, bandwidth_bps=100 * 10**9,
                     propagation_ns=1000, ecn_kmin=100_000, ecn_kmax=400_000,
                     ecn_pmax=0.2, ecn_enabled=True, pfc_enabled=enabled,
                     pfc_xoff=1_500_000, pfc_xon=1_000_000)


def test_pause_emitted_once_per_upward_crossing():
    port = pfc_port()
    port.occupancy = 1_600_000
    assert port.pfc_transition() is PacketKind.PFC_PAUSE
    port.occupancy = 1_700_000
    assert port.pfc_transition() is None  # still above, no repeat
    port.occupancy = 900_000
    assert port.pfc_transition() is PacketKind.PFC_RESUME
    assert port.pfc_transition() is None
    port.occupancy = 1_600_000
    assert port.pfc_transition() is PacketKind.PFC_PAUSE


def test_no_resume_until_xon():
    port = pfc_port()
    port.occupancy = 1_600_000
    assert port.pfc_transition() is PacketKind.PFC_PAUSE
    port.occupancy = 1_200_000  # between xon and xoff
    assert port.pfc_transition() is None


def test_pfc_disabled_never_emits():
    port = pfc_port(enabled=False)
    port.occupancy = 1_900_000
    assert port.pfc_transition() is None


def test_paused_port_transmits_nothing_until_resume():
    sim, fabric = make_fabric(small_config(pfc_enabled=True))
    port = fabric.ports[(0, fabric.leaf_of(0))]
    port.paused = True
    fabric.enqueue(port, data_packet(0, 1))
    sim.run_until(1 * MSEC)
    assert port.dequeued_pkts == 0
    fabric._apply_pfc(port, PacketKind.PFC_RESUME)
    sim.run_until(2 * MSEC)
    assert port.dequeued_pkts == 1


# -- background traffic ------------------------------------------------------------

def test_zero_rate_schedules_nothing():
    sim, fabric = make_fabric()
    bg = BackgroundTraffic(sim, fabric, BackgroundTrafficConfig(flow_rate_per_sec=0.0))
    assert bg.schedule(SEC) == 0


def test_poisson_flow_count_within_3_sigma():
    # 10 flows/s over 10 s: expect 100 +- 30
    sim, fabric = make_fabric()
    bg = BackgroundTraffic(
        sim, fabric,
        BackgroundTrafficConfig(flow_rate_per_sec=10.0, burst_mean_bytes=3000),
    )
    count = bg.schedule(10 * SEC)
    assert 70 <= count <= 130


def test_same_seed_identical_burst_schedule():
    def arrivals(seed):
        sim, fabric = make_fabric(seed=seed)
        bg = BackgroundTraffic(
            sim, fabric,
            BackgroundTrafficConfig(flow_rate_per_sec=100.0, burst_mean_bytes=3000),
        )
        return bg.arrival_times(SEC)

    assert arrivals(5) == arrivals(5)
    assert arrivals(5) != arrivals(6)


def test_burst_sizes_at_least_one_mtu():
    sim, fabric = make_fabric()
    cfg = BackgroundTrafficConfig(flow_rate_per_sec=2000.0, burst_mean_bytes=2000,
                                  burst_pareto_shape=1.5)
    bg = BackgroundTraffic(sim, fabric, cfg)
    bg.schedule(50 * MSEC)
    sim.run_until(60 * MSEC)
    assert fabric.counters.injected_background > 0


def test_on_off_gating_reduces_flow_count():
    def count(on_ns, off_ns):
        sim, fabric = make_fabric()
        cfg = BackgroundTrafficConfig(flow_rate_per_sec=1000.0, burst_mean_bytes=3000,
                                      on_mean_ns=on_ns, off_mean_ns=off_ns)
        bg = BackgroundTraffic(sim, fabric, cfg)
        return len(bg.arrival_times(SEC))

    always_on = count(0, 0)
    half_on = count(10 * MSEC, 10 * MSEC)
    assert 0 < half_on < always_on


# -- conservation and utilization ----------------------------------------------------

def run_background_run(seed=3, rate=3000.0, horizon=20 * MSEC):
    sim, fabric = make_fabric(seed=seed)
    cfg = BackgroundTrafficConfig(flow_rate_per_sec=rate, burst_mean_bytes=100_000,
                                  burst_pareto_shape=1.5)
    BackgroundTraffic(sim, fabric, cfg).schedule(horizon)
    sim.run_until(horizon + 50 * MSEC)  # drain
    return sim, fabric


def test_packet_conservation():
    sim, fabric = run_background_run()
    c = fabric.counters
    assert c.injected > 0
    assert c.injected == c.delivered + c.dropped
    assert fabric.in_flight() == 0
    for q in fabric.ports.values():
        assert q.occupancy == 0
        assert q.enqueued_pkts == q.dequeued_pkts + q.drop_count


def test_link_utilization_bounded():
    sim, fabric = run_background_run()
    elapsed = sim.now
    for row in fabric.port_rows():
        assert row["busy_ns"] <= elapsed
        # dequeued bytes never exceed bandwidth * busy time
        max_bytes = fabric.config.link_bandwidth_bps * row["busy_ns"] / (8 * SEC)
        assert row["dequeued_bytes"] <= max_bytes + fabric.config.mtu_bytes


def test_ecmp_spreads_over_spines():
    cfg = ClosConfig(hosts=8, leaf_count=2, spine_count=4, hosts_per_leaf=4)
    _, fabric = make_fabric(cfg)
    spines = set()
    for key in range(64):
        path = fabric.route(0, 7, key)
        spines.add(path[2])
    assert len(spines) >= 3  # hash actually spreads
