import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otrange.deployer import compare_device_config, install_switch
from otrange.detection import (
    ALERTS_CSV_HEADER,
    DetectionAlert,
    DetectionError,
    audit_fleet_config,
    baseline_from_json,
    baseline_to_json,
    detect,
    diff_config,
    flow_key,
    learn_baseline,
    load_baseline,
    read_alerts_csv,
    save_baseline,
    write_alerts_csv,
)
from otrange.fleet import build_fleet
from otrange.netfabric import FlowRecord

from tests.conftest import PLC_PW, standard_plan
from tests.test_deployer import EXPECTED_PLC_ARTIFACTS


def flow(t, src="a", dst="b", fn="put_write", db=100, outcome="delivered"):
    return FlowRecord(t, src, dst, fn, db, outcome)


KEY_POOL = [
    ("a", "b", "put_write", 100),
    ("b", "a", "get_read", 100),
    ("a", "c", "ew_read", 100),
    ("c", "a", "put_write", 501),
    ("b", "c", "get_read", 500),
    ("ew", "a", "ew_write", 501),
]


def pool_flows(draws):
    out = []
    for t, idx in sorted(draws):
        src, dst, fn, db = KEY_POOL[idx]
        out.append(FlowRecord(t, src, dst, fn, db, "delivered"))
    return out


@st.composite
def flow_lists(draw):
    items = draw(st.lists(
        st.tuples(st.integers(0, 50_000), st.integers(0, len(KEY_POOL) - 1)),
        max_size=40))
    return pool_flows(items)


@given(clean=flow_lists(), capture=flow_lists())
@settings(max_examples=120, deadline=None)
def test_novel_flow_alerts_match_set_difference_oracle(clean, capture):
    # oracle: one alert per key absent from the clean window, at first sight
    baseline = learn_baseline(clean)
    known = {flow_key(rec) for rec in clean}
    expected = {}
    for rec in capture:
        key = flow_key(rec)
        if key not in known and key not in expected:
            expected[key] = rec.t_ms
    got = {a.subject: a.t_ms for a in detect(capture, baseline)
           if a.kind == "novel_flow"}
    assert got == expected


def test_period_anomaly_respects_strict_boundary():
    baseline = learn_baseline([flow(0), flow(1000), flow(2000)])  # max gap 1000
    # gap of exactly factor*max is tolerated; one ms more trips
    quiet = detect([flow(0), flow(3000)], baseline, factor=3.0, until_ms=3000)
    assert quiet == []
    noisy = detect([flow(0), flow(3001)], baseline, factor=3.0, until_ms=3001)
    assert [(a.t_ms, a.kind) for a in noisy] == [(3001, "period_anomaly")]
    assert noisy[0].detail == "gap=3001 allowed=3000"


def test_stopped_flow_needs_explicit_capture_end():
    baseline = learn_baseline([flow(0), flow(1000), flow(2000)])
    tail = [flow(0), flow(1000)]
    # the log ends when the flow ends: silence is invisible without until_ms
    assert detect(tail, baseline, factor=3.0) == []
    alerts = detect(tail, baseline, factor=3.0, until_ms=10_000)
    assert len(alerts) == 1
    assert alerts[0].t_ms == 10_000
    assert alerts[0].detail.startswith("stopped gap=9000")


def test_fleetwide_freeze_caught_for_every_baseline_key():
    clean = []
    for t in range(0, 5001, 1000):
        clean.append(flow(t, "a", "b", "put_write", 100))
        clean.append(flow(t, "b", "a", "get_read", 100))
    baseline = learn_baseline(clean)
    alerts = detect([], baseline, factor=3.0, until_ms=30_000)
    assert {a.subject for a in alerts} == {"a>b:put_write:100", "b>a:get_read:100"}
    assert all(a.kind == "period_anomaly" for a in alerts)


def test_burst_keys_have_no_cadence():
    # two observations at the same instant: max gap 0, so silence is not anomalous
    baseline = learn_baseline([flow(0, db=500), flow(0, db=500), flow(0, db=501)])
    assert detect([], baseline, factor=3.0, until_ms=600_000) == []
    # but they still suppress novel_flow for their own key
    assert detect([flow(99, db=500)], baseline, factor=3.0) == []


def test_learning_window_bounds_are_inclusive():
    rows = [flow(t) for t in (0, 1000, 2000, 3000)]
    baseline = learn_baseline(rows, window_start_ms=1000, window_end_ms=2000)
    stats = baseline.flows["a>b:put_write:100"]
    assert (stats.count, stats.first_ms, stats.last_ms) == (2, 1000, 2000)
    assert baseline.window_start_ms == 1000 and baseline.window_end_ms == 2000


def test_factor_must_exceed_one():
    baseline = learn_baseline([flow(0)])
    for bad in (1.0, 0.5, -2.0):
        with pytest.raises(DetectionError, match="factor"):
            detect([], baseline, factor=bad)


def test_baseline_json_roundtrip(tmp_path):
    clean = [flow(t) for t in (0, 700, 1400)] + [flow(30, "b", "a", "get_read", 500)]
    baseline = learn_baseline(clean, window_end_ms=5000)
    text = baseline_to_json(baseline)
    again = baseline_from_json(text)
    assert again.window_start_ms == baseline.window_start_ms
    assert again.window_end_ms == baseline.window_end_ms
    assert set(again.flows) == set(baseline.flows)
    for key, stats in baseline.flows.items():
        assert vars(again.flows[key]) == vars(stats)
    path = tmp_path / "baseline.json"
    save_baseline(baseline, str(path))
    assert vars(load_baseline(str(path)).flows["a>b:put_write:100"]) == \
        vars(baseline.flows["a>b:put_write:100"])


def test_baseline_json_rejects_unknown_version():
    import json

    text = baseline_to_json(learn_baseline([flow(0)]))
    doc = json.loads(text)
    doc["version"] = 99
    with pytest.raises(DetectionError, match="version"):
        baseline_from_json(json.dumps(doc))


def test_alerts_csv_roundtrip(tmp_path):
    alerts = [
        DetectionAlert(1000, "novel_flow", "x>y:put_write:500", "first_seen"),
        DetectionAlert(2500, "period_anomaly", "a>b:put_write:100", "gap=4000 allowed=3000"),
    ]
    path = tmp_path / "alerts.csv"
    write_alerts_csv(alerts, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == ALERTS_CSV_HEADER
    assert read_alerts_csv(str(path)) == alerts
    empty = tmp_path / "none.csv"
    write_alerts_csv([], str(empty))
    assert empty.read_text().splitlines() == [ALERTS_CSV_HEADER]
    assert read_alerts_csv(str(empty)) == []


# -- configuration diffing (the defender's independent walk) ------------------


def wire_for(fleet, target):
    import json

    from otrange.netfabric import NetMessage, ProtocolFunction

    res = fleet.fabric.deliver(NetMessage(
        "ew", target, ProtocolFunction.CONFIG_READ, 0,
        credential=fleet.device(target).config.config_password))
    return json.loads(res.response_payload.decode())


def test_diff_config_clean_fleet_is_empty(fleet3_project):
    fleet = build_fleet(fleet3_project, seed=0)
    for plc in ("plc1", "plc2", "plc3"):
        assert diff_config(fleet3_project.device(plc), wire_for(fleet, plc)) == []


def test_diff_config_finds_installed_watchdog(fleet3_project):
    fleet = build_fleet(fleet3_project, seed=0)
    install_switch(fleet, standard_plan())
    for plc in ("plc1", "plc2", "plc3"):
        wire = wire_for(fleet, plc)
        found = diff_config(fleet3_project.device(plc), wire)
        assert found == EXPECTED_PLC_ARTIFACTS
        # two independent walks, one vocabulary
        assert found == sorted(compare_device_config(fleet3_project.device(plc), wire))


@pytest.mark.parametrize("mutate,expected", [
    (lambda d: d.config.data_blocks.__setitem__(100, bytearray(64)),
     ["data_block:100:resized"]),
    (lambda d: d.config.data_blocks.pop(100),
     ["data_block:100:removed"]),
    (lambda d: d.config.data_blocks.__setitem__(77, bytearray(4)),
     ["data_block:77:added"]),
    (lambda d: setattr(d.config, "scan_interval_ms", 250),
     ["scan_interval:changed"]),
    (lambda d: d.config.output_cards.pop(),
     ["output_card:Q2.3:removed"]),
    (lambda d: d.config.core_blocks.clear(),
     ["core_block:tank_control:removed"]),
])
def test_diff_config_frozen_mutation_table(fleet3_project, mutate, expected):
    fleet = build_fleet(fleet3_project, seed=0)
    mutate(fleet.device("plc1"))
    wire = wire_for(fleet, "plc1")
    found = diff_config(fleet3_project.device("plc1"), wire)
    assert found == expected
    assert sorted(compare_device_config(fleet3_project.device("plc1"), wire)) == expected


def test_audit_fleet_config_end_to_end(fleet3_project):
    fleet = build_fleet(fleet3_project, seed=0)
    assert audit_fleet_config(fleet) == {"plc1": [], "plc2": [], "plc3": []}
    install_switch(fleet, standard_plan())
    audited = audit_fleet_config(fleet, credential=PLC_PW)
    assert audited == {p: EXPECTED_PLC_ARTIFACTS for p in ("plc1", "plc2", "plc3")}
    fleet.fabric.cut_link("ew", "plc3")
    fleet.fabric.cut_link("plc2", "plc3")
    assert audit_fleet_config(fleet, credential=PLC_PW)["plc3"] == ["config_unreadable"]
