import json
import time

import pytest
from fastapi.testclient import TestClient

from otrange.cli import resolve_input
from otrange.control import create_app
from otrange.scenario import load_scenario, run_scenario

from tests.conftest import PLC_PW, PROJECT_PW, RANSOM_KEY


@pytest.fixture
def client():
    with TestClient(create_app()) as c:
        yield c
        c.delete("/v1/session")


def make_session(client, **body):
    body.setdefault("scenario", "scenario1")
    body.setdefault("speed", 0)
    body = {k: v for k, v in body.items() if v is not None}
    res = client.post("/v1/session", json=body)
    assert res.status_code == 200, res.text
    return res.json()


def wait_finished(client, timeout=30.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        state = client.get("/v1/session").json()["state"]
        if state == "finished":
            return client.get("/v1/session").json()
        time.sleep(0.02)
    raise AssertionError("session did not finish in time")


def test_health(client):
    res = client.get("/v1/health")
    assert res.status_code == 200
    assert res.json() == {"ok": True}


def test_endpoints_require_a_session(client):
    assert client.get("/v1/session").status_code == 404
    assert client.get("/v1/snapshot").status_code == 404
    assert client.get("/v1/events").status_code == 404
    assert client.get("/v1/trace").status_code == 404
    assert client.post("/v1/commands", json={"command": "pause"}).status_code == 404
    assert client.delete("/v1/session").status_code == 404
    assert client.post("/v1/session/start").status_code == 404


def test_session_lifecycle_and_single_slot(client):
    created = make_session(client, autostart=False)
    assert created["state"] == "created"
    assert created["snapshot"]["t_ms"] == 0
    dup = client.post("/v1/session", json={"scenario": "scenario2"})
    assert dup.status_code == 409
    assert dup.json()["rejected"] is True
    deleted = client.delete("/v1/session")
    assert deleted.status_code == 200
    assert client.get("/v1/session").status_code == 404
    make_session(client, autostart=False)  # slot free again


@pytest.mark.parametrize("body,needle", [
    ({"scenario": "no-such-thing"}, "no such file"),
    ({}, "needs either a scenario or a project"),
    ({"scenario": "scenario1", "speed": -1}, "speed must be non-negative"),
    ({"scenario": "scenario1", "horizon_ms": 0}, "horizon_ms must be positive"),
])
def test_session_creation_rejections(client, body, needle):
    res = client.post("/v1/session", json=body)
    assert res.status_code == 400
    assert needle in res.json()["reason"]


def test_step_advances_exactly(client):
    make_session(client, autostart=False)
    res = client.post("/v1/commands", json={"command": "step", "params": {"ms": 500}})
    assert res.status_code == 200 and res.json()["accepted"] is True
    status = client.get("/v1/session").json()
    assert status["state"] == "paused"
    assert status["t_ms"] == 500
    client.post("/v1/commands", json={"command": "step", "params": {"ms": 250}})
    assert client.get("/v1/snapshot").json()["t_ms"] == 750


@pytest.mark.parametrize("body,needle", [
    ({"command": "explode"}, "unknown command"),
    ({"command": "cut_link", "params": {"a": "ew", "b": "nothere"}}, "unknown device"),
    ({"command": "pay_ransom", "params": {}}, "needs a key"),
    ({"command": "step", "params": {"ms": 0}}, "positive integer"),
    ({"command": "step", "params": {"ms": 5}, "at_ms": 100}, "cannot be scheduled"),
    ({"command": "pause"}, "cannot pause"),
    ({"command": "resume"}, "cannot resume"),
    ({"command": "arm", "params": {"deadline_ms": 5000}}, "arm needs key"),
    ({"command": "halt_device", "params": {"device": "plc1"}, "at_ms": -4},
     "non-negative"),
    ({}, "missing command"),
])
def test_command_rejections(client, body, needle):
    make_session(client, autostart=False)
    res = client.post("/v1/commands", json=body)
    assert res.status_code == 400, res.text
    assert needle in res.json()["reason"]


def test_past_schedule_rejected(client):
    make_session(client, autostart=False)
    client.post("/v1/commands", json={"command": "step", "params": {"ms": 1000}})
    res = client.post("/v1/commands", json={
        "command": "halt_device", "params": {"device": "plc1"}, "at_ms": 400})
    assert res.status_code == 400
    assert "already in the past" in res.json()["reason"]


def test_free_run_finishes_and_reports_checks(client):
    make_session(client)  # autostart, speed 0
    status = wait_finished(client)
    assert status["passed"] is True
    assert all(c["passed"] for c in status["checks"])
    assert status["t_ms"] == 30_000


def test_step_then_resume_completes(client):
    make_session(client, autostart=False)
    client.post("/v1/commands", json={"command": "step", "params": {"ms": 100}})
    res = client.post("/v1/commands", json={"command": "resume"})
    assert res.status_code == 200
    status = wait_finished(client)
    assert status["passed"] is True
    # no further control once finished
    res = client.post("/v1/commands", json={"command": "pause"})
    assert res.status_code == 400
    assert "finished" in res.json()["reason"]


def test_events_stream_is_contiguous_and_filterable(client):
    make_session(client)
    wait_finished(client)
    res = client.get("/v1/events", params={"since": -1})
    assert res.headers["content-type"].startswith("application/x-ndjson")
    events = [json.loads(line) for line in res.text.splitlines()]
    assert [e["pos"] for e in events] == list(range(len(events)))
    kinds = [e["kind"] for e in events if e["type"] == "session"]
    assert kinds[0] == "session_created"
    assert "session_started" in kinds
    assert kinds[-1] == "session_finished"
    finished = [e for e in events if e.get("kind") == "session_finished"][0]
    assert finished["passed"] is True
    assert any(e["type"] == "trace" for e in events)
    cut = len(events) // 2
    later = [json.loads(line) for line in
             client.get("/v1/events", params={"since": events[cut]["pos"]}).text.splitlines()]
    assert [e["pos"] for e in later] == [e["pos"] for e in events[cut + 1:]]


def test_project_session_install_arm_and_pay(client):
    make_session(client, scenario=None, project="fleet3", password=PROJECT_PW,
                 autostart=False, horizon_ms=20_000)
    res = client.post("/v1/commands", json={
        "command": "install",
        "params": {"deadline_ms": 600_000, "key": RANSOM_KEY, "plc_password": PLC_PW}})
    assert res.status_code == 200, res.text
    res = client.post("/v1/commands", json={
        "command": "arm", "params": {"deadline_ms": 600_000, "key": RANSOM_KEY}})
    assert res.status_code == 200, res.text
    snap = client.get("/v1/snapshot").json()
    assert snap["armed"] is True
    assert all(dev["enable"] for dev in snap["devices"].values())

    wrong = client.post("/v1/commands", json={
        "command": "pay_ransom", "params": {"key": "bad"}, "at_ms": 3000})
    right = client.post("/v1/commands", json={
        "command": "pay_ransom", "params": {"key": RANSOM_KEY}, "at_ms": 5000})
    assert wrong.status_code == 200 and right.status_code == 200
    wrong_handle, right_handle = wrong.json()["handle"], right.json()["handle"]
    assert client.get(f"/v1/commands/{wrong_handle}").json()["status"] == "pending"
    client.post("/v1/commands", json={"command": "step", "params": {"ms": 10_000}})
    assert client.get(f"/v1/commands/{wrong_handle}").json()["status"] == "done"
    assert client.get(f"/v1/commands/{right_handle}").json()["status"] == "done"
    snap = client.get("/v1/snapshot").json()
    assert snap["armed"] is False
    assert all(not dev["enable"] for dev in snap["devices"].values())
    trace = client.get("/v1/trace").text
    assert "disarm_failed attempts=1" in trace
    assert client.get(f"/v1/commands/cmd-999").status_code == 404


def test_interactive_commands_reproduce_batch_trace(client):
    script = load_scenario(resolve_input("scenario1"))
    batch = run_scenario(script)
    batch_trace = batch.fleet.trace.dumps()

    make_session(client, include_actions=False, autostart=False)
    for action in script.actions:
        res = client.post("/v1/commands", json={
            "command": action.action, "params": dict(action.params),
            "at_ms": action.at_ms})
        assert res.status_code == 200, res.text
    start = client.post("/v1/session/start")
    assert start.status_code == 200
    status = wait_finished(client)
    assert status["passed"] is True
    assert client.get("/v1/trace").text == batch_trace


def test_scripted_session_reproduces_batch_trace(client):
    script = load_scenario(resolve_input("scenario2"))
    batch_trace = run_scenario(script).fleet.trace.dumps()
    make_session(client, scenario="scenario2")
    wait_finished(client)
    res = client.get("/v1/trace")
    assert res.headers["content-type"].startswith("text/plain")
    assert res.text == batch_trace


def test_snapshot_reflects_detonation(client):
    make_session(client, scenario="scenario2", autostart=False)
    client.post("/v1/commands", json={"command": "step", "params": {"ms": 14_000}})
    snap = client.get("/v1/snapshot").json()
    assert all(not dev["alert"] for dev in snap["devices"].values())
    client.post("/v1/commands", json={"command": "step", "params": {"ms": 2_000}})
    snap = client.get("/v1/snapshot").json()
    plcs = {k: v for k, v in snap["devices"].items() if v["kind"] == "plc"}
    assert all(dev["alert"] for dev in plcs.values())
    assert all(all(dev["outputs"].values()) for dev in plcs.values())
    assert snap["devices"]["ew"]["alert"] is True  # workstation shut down
