import csv
import filecmp
import json
import os

import pytest

from rdmasim import presets, scenario
from rdmasim.scenario import ConfigError, ecdf, parse_config, percentile_nearest_rank
from rdmasim.simkernel import SEC


def small_raw(transport="CELERIS", **over):
    raw = {
        "topology": {"hosts": 4, "leaf_count": 1, "spine_count": 1,
                     "hosts_per_leaf": 4},
        "transport": transport,
        "collective": {"payload_bytes": 512_000, "rounds": 2},
        "background": {"flow_rate_per_sec": 0.0},
        "seed": 11,
        "duration_cap_ns": 2 * SEC,
    }
    raw.update(over)
    return raw


# -- config validation ----------------------------------------------------------

def test_unknown_top_level_key_rejected_by_name():
    with pytest.raises(ConfigError) as err:
        parse_config(small_raw(topologyy={"hosts": 4}))
    assert err.value.field == "topologyy"


def test_unknown_nested_key_rejected_by_name():
    raw = small_raw()
    raw["topology"]["hostss"] = 4
    with pytest.raises(ConfigError) as err:
        parse_config(raw)
    assert err.value.field == "topology.hostss"


def test_unknown_transport_rejected():
    with pytest.raises(ConfigError) as err:
        parse_config(small_raw(transport="TCP"))
    assert err.value.field == "transport"


def test_member_range_checked():
    raw = small_raw()
    raw["collective"]["members"] = [0, 9]
    with pytest.raises(ConfigError) as err:
        parse_config(raw)
    assert err.value.field == "collective.members"


def test_invalid_topology_reported():
    raw = small_raw()
    raw["topology"]["hosts"] = 5
    with pytest.raises(ConfigError):
        parse_config(raw)


def test_pfc_defaults_per_transport():
    assert parse_config(small_raw("ROCE_GBN")).topology.pfc_enabled is True
    assert parse_config(small_raw("IRN")).topology.pfc_enabled is False
    raw = small_raw("ROCE_GBN")
    raw["topology"]["pfc_enabled"] = False
    assert parse_config(raw).topology.pfc_enabled is False


def test_config_round_trip():
    cfg = parse_config(small_raw("IRN"))
    raw2 = scenario.config_to_dict(cfg)
    cfg2 = parse_config(raw2)
    assert scenario.config_to_dict(cfg2) == raw2


# -- statistics helpers -----------------------------------------------------------

def test_percentile_nearest_rank():
    vals = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100]
    assert percentile_nearest_rank(vals, 50) == 50
    assert percentile_nearest_rank(vals, 95) == 100
    assert percentile_nearest_rank(vals, 99) == 100
    assert percentile_nearest_rank([7], 99) == 7


def test_ecdf_examples():
    assert ecdf([1, 2, 3]) == [(1, 1 / 3), (2, 2 / 3), (3, 1.0)]
    assert ecdf([2, 2]) == [(2, 0.5), (2, 1.0)]
    assert ecdf([5, 1])[-1][1] == 1.0
    with pytest.raises(ValueError):
        ecdf([])


# -- simulate + outputs -------------------------------------------------------------

def test_uncontended_run_is_lossless_and_flat():
    raw = presets.uncontended_scenario("CELERIS")
    report = scenario.simulate(parse_config(raw))
    assert report.summary["mean_loss_fraction"] == 0.0
    assert report.summary["p99_over_median"] < 1.1
    assert report.summary["late_packets"] == 0


def test_pfc_fabric_never_drops_data_under_contention():
    # Short slice of the contention scenario: PFC pauses absorb the bursts,
    # so no DATA packet is ever tail-dropped fabric-wide.
    raw = presets.contention_scenario("ROCE_GBN", rounds=2)
    report = scenario.simulate(parse_config(raw))
    assert report.summary["data_drops"] == 0


def test_outputs_written_and_consistent(tmp_path):
    out = tmp_path / "run"
    report = scenario.simulate(parse_config(small_raw()), out_dir=str(out))
    for name in ("steps.csv", "ports.csv", "qps.csv", "summary.json",
                 "meta.json", "config.json"):
        assert (out / name).exists()
    with open(out / "steps.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == report.summary["steps"]
    # independent recomputation of the summary from the CSV
    durations = [int(r["duration_ns"]) for r in rows]
    assert int(percentile_nearest_rank(durations, 50)) == report.summary["median_ns"]
    assert int(percentile_nearest_rank(durations, 99)) == report.summary["p99_ns"]
    losses = [float(r["loss_fraction"]) for r in rows]
    assert abs(sum(losses) / len(losses) - report.summary["mean_loss_fraction"]) < 1e-6
    meta = json.loads((out / "meta.json").read_text())
    assert meta["seed"] == 11 and "config_sha256" in meta


def test_rerun_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    scenario.simulate(parse_config(small_raw("IRN")), out_dir=str(a))
    scenario.simulate(parse_config(small_raw("IRN")), out_dir=str(b))
    for name in ("steps.csv", "ports.csv", "qps.csv", "summary.json", "meta.json"):
        assert filecmp.cmp(a / name, b / name, shallow=False), name


def test_different_seed_changes_contended_run(tmp_path):
    raw1 = small_raw("CELERIS")
    raw1["background"] = {"flow_rate_per_sec": 5000.0, "burst_mean_bytes": 500_000}
    raw2 = json.loads(json.dumps(raw1))
    raw2["seed"] = 12
    r1 = scenario.simulate(parse_config(raw1))
    r2 = scenario.simulate(parse_config(raw2))
    assert r1.durations_ns != r2.durations_ns


def test_static_timeout_from_steps_csv(tmp_path):
    out = tmp_path / "base"
    scenario.simulate(parse_config(small_raw("ROCE_GBN")), out_dir=str(out))
    raw = small_raw("CELERIS")
    raw["timeout"] = {"mode": "STATIC", "from_steps_csv": str(out / "steps.csv")}
    cfg = parse_config(raw)
    assert cfg.timeout.mode == "STATIC"
    assert cfg.timeout.timeout_ns > 0


# -- sweep ---------------------------------------------------------------------------

def test_sweep_unknown_axis_rejected():
    with pytest.raises(ConfigError):
        scenario.sweep(small_raw(), "background.flows_per_parsec", [1])


def test_sweep_empty_values_rejected():
    with pytest.raises(ConfigError):
        scenario.sweep(small_raw(), "background.flow_rate_per_sec", [])


def test_sweep_over_transports(tmp_path):
    reports = scenario.sweep(small_raw(), "transport",
                             ["CELERIS", "ROCE_GBN", "IRN", "SRNIC"],
                             out_dir=str(tmp_path))
    assert len(reports) == 4
    assert (tmp_path / "sweep.csv").exists()
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["value"] for r in rows] == ["CELERIS", "ROCE_GBN", "IRN", "SRNIC"]
    for rep in reports:
        assert rep.summary["mean_loss_fraction"] == 0.0


def test_sweep_seed_policy_increment():
    reports = scenario.sweep(small_raw(), "seed", [100, 100],
                             seed_policy="same")
    assert reports[0].durations_ns == reports[1].durations_ns


# -- tables ----------------------------------------------------------------------------

def test_report_tables(tmp_path):
    path = tmp_path / "tables.csv"
    rows = scenario.report_tables(str(path))
    assert len(rows) == 4
    with open(path) as fh:
        lines = fh.read().strip().splitlines()
    assert lines[0] == "design,context_bytes,qp_capacity,mtbf_hours"
    assert len(lines) == 5
