"""Canned scenario configs for the headline experiments.

The contention scenario pairs a 16-host, 2-leaf/2-spine Clos with heavy-tailed
background bursts tuned so the go-back-N baseline shows a long step-time tail;
the matching best-effort run reuses the same fabric and seed with a static
per-step deadline derived from the baseline distribution.
"""

from __future__ import annotations

from .simkernel import MSEC, SEC, USEC


def contention_scenario(transport: str = "ROCE_GBN", seed: int = 1,
                        rounds: int = 8, timeout_ns: int = 0) -> dict:
    """Raw config dict for the tail-latency experiment."""
    cfg = {
        "topology": {
            "hosts": 16,
            "leaf_count": 2,
            "spine_count": 2,
            "hosts_per_leaf": 8,
            "link_bandwidth_bps": 100_000_000_000,
            "link_propagation_ns": 1_000,
            "queue_capacity_bytes": 2_000_000,
            "ecn_kmin_bytes": 100_000,
            "ecn_kmax_bytes": 400_000,
            "ecn_pmax": 0.2,
            "pfc_xoff_bytes": 1_500_000,
            "pfc_xon_bytes": 1_000_000,
        },
        "transport": transport,
        "collective": {
            "payload_bytes": 4_096_000,  # 256 KB chunk per node per step
            "rounds": rounds,
        },
        # Open-loop storage/shuffle style fan-in bursts: four sources dump
        # truncated-Pareto bursts at one victim host, overwhelming its
        # downlink faster than any control loop reacts. This is the
        # contention source; the collective itself stays DCQCN-governed.
        "background": {
            "flow_rate_per_sec": 300.0,
            "burst_mean_bytes": 4_000_000,
            "burst_pareto_shape": 1.5,
            "burst_max_bytes": 12_000_000,
            "fan_in": 4,
            "congestion_controlled": False,
        },
        # Rate-increase steps scaled 10x for 100 Gb/s links.
        "dcqcn": {"rate_ai_bps": 400e6, "rate_hai_bps": 4e9},
        "timeout": {"mode": "NONE"},
        "seed": seed,
        "duration_cap_ns": 5 * SEC,
        "run_id": f"contention-{transport.lower()}",
    }
    if timeout_ns > 0:
        cfg["timeout"] = {"mode": "STATIC", "timeout_ns": int(timeout_ns)}
    return cfg


def uncontended_scenario(transport: str = "CELERIS", seed: int = 1) -> dict:
    """Small quiet fabric; any transport should run lossless and flat.

    Single leaf so every ring hop has the same path length and step times
    are uniform.
    """
    return {
        "topology": {
            "hosts": 8,
            "leaf_count": 1,
            "spine_count": 1,
            "hosts_per_leaf": 8,
        },
        "transport": transport,
        "collective": {"payload_bytes": 1_024_000, "rounds": 2},
        "background": {"flow_rate_per_sec": 0.0},
        "timeout": {"mode": "NONE"},
        "seed": seed,
        "duration_cap_ns": 2 * SEC,
        "run_id": f"uncontended-{transport.lower()}",
    }


def fairness_scenario(flows: int = 4, transport: str = "CELERIS", seed: int = 1) -> dict:
    """Incast onto one host: ``flows`` senders share a single bottleneck."""
    hosts_per_leaf = max(flows + 1, 2)
    return {
        "topology": {
            "hosts": hosts_per_leaf,
            "leaf_count": 1,
            "spine_count": 1,
            "hosts_per_leaf": hosts_per_leaf,
        },
        "transport": transport,
        "collective": {"payload_bytes": 1_024_000, "rounds": 1},
        "background": {"flow_rate_per_sec": 0.0},
        "timeout": {"mode": "NONE"},
        "seed": seed,
        "duration_cap_ns": SEC,
    }


PRESETS = {
    "tail-baseline": lambda: contention_scenario("ROCE_GBN"),
    "tail-irn": lambda: contention_scenario("IRN"),
    "tail-srnic": lambda: contention_scenario("SRNIC"),
    "tail-celeris": lambda: contention_scenario("CELERIS"),
    "uncontended": lambda: uncontended_scenario(),
}


def get_preset(name: str) -> dict:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        )
