"""Scripted exercise runs: load a scenario file, drive the fleet through it,
check the outcome assertions, and render replays and timelines.

A scenario file is YAML:

    name: link-cut
    project_path: fleet3.yaml          # relative to the scenario file
    project_password: plant-2024
    seed: 7
    horizon_ms: 30000
    dmplc:
      poll_interval_ms: 1000
      deadband_misses: 1
      deadline_ms: 90000
      key: UNLOCK-1
      auto_deploy: true
      auto_arm_at_ms: 0
    actions:
      - {at_ms: 24500, action: cut_link, params: {a: ew, b: plc3}}
    assertions:
      - {kind: alert_is, device: plc3, value: true, at_ms: 26100}

Exit status of the CLI run command is 0 exactly when every assertion passes.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .deployer import DeploymentPlan, install_switch
from .ew import RansomTerms
from .fleet import Fleet, build_fleet, plc_config_from_project
from .kernel import RunLimits, StopReason
from .plc import PlcDevice
from .project import load_project

ACTIONS = frozenset({
    "cut_link", "restore_link", "pay_ransom", "tamper_memory",
    "halt_device", "reflash_device", "safe_shutdown_signal",
})
ASSERTION_KINDS = frozenset({
    "alert_is", "outputs_all_on", "outputs_unchanged", "ew_shutdown",
    "trace_contains", "trace_absent",
})

_ACTION_REQUIRED = {
    "cut_link": ("a", "b"),
    "restore_link": ("a", "b"),
    "pay_ransom": ("key",),
    "tamper_memory": ("device", "db", "byte", "value"),
    "halt_device": ("device",),
    "reflash_device": ("device",),
    "safe_shutdown_signal": ("device",),
}


class ScenarioError(ValueError):
    pass


@dataclass
class ScenarioAction:
    at_ms: int
    action: str
    params: dict = field(default_factory=dict)


@dataclass
class Assertion:
    kind: str
    params: dict = field(default_factory=dict)

    def describe(self) -> str:
        bits = " ".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.kind} {bits}".strip()


@dataclass
class ScenarioScript:
    name: str
    project_path: str
    horizon_ms: int
    project_password: str | None = None
    seed: int = 0
    dmplc: dict = field(default_factory=dict)
    actions: list = field(default_factory=list)
    assertions: list = field(default_factory=list)


@dataclass
class CheckResult:
    description: str
    passed: bool
    detail: str = ""


@dataclass
class ScenarioResult:
    script: ScenarioScript
    fleet: Fleet
    checks: list = field(default_factory=list)
    stop: StopReason | None = None
    arm_failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


# -- loading ------------------------------------------------------------------

def load_scenario(path) -> ScenarioScript:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: expected a mapping at the top level")
    return parse_scenario(raw, base_dir=path.parent, source=str(path))


def parse_scenario(raw: dict, base_dir=".", source: str = "<memory>") -> ScenarioScript:
    for key in ("name", "project_path", "horizon_ms"):
        if key not in raw:
            raise ScenarioError(f"{source}: missing required field {key!r}")
    horizon = raw["horizon_ms"]
    if not isinstance(horizon, int) or horizon <= 0:
        raise ScenarioError(f"{source}: horizon_ms must be a positive integer")

    project_path = Path(raw["project_path"])
    if not project_path.is_absolute():
        project_path = Path(base_dir) / project_path

    dmplc = raw.get("dmplc") or {}
    if dmplc:
        for key in ("deadline_ms", "key"):
            if key not in dmplc:
                raise ScenarioError(f"{source}: dmplc section missing {key!r}")

    actions = []
    for i, entry in enumerate(raw.get("actions") or []):
        if not isinstance(entry, dict) or "action" not in entry or "at_ms" not in entry:
            raise ScenarioError(f"{source}: actions[{i}] needs at_ms and action")
        name = entry["action"]
        if name not in ACTIONS:
            raise ScenarioError(f"{source}: actions[{i}] unknown action {name!r}")
        at_ms = entry["at_ms"]
        if not isinstance(at_ms, int) or at_ms < 0:
            raise ScenarioError(f"{source}: actions[{i}] at_ms must be a non-negative integer")
        params = entry.get("params") or {}
        missing = [p for p in _ACTION_REQUIRED[name] if p not in params]
        if missing:
            raise ScenarioError(f"{source}: actions[{i}] {name} missing params {missing}")
        actions.append(ScenarioAction(at_ms, name, params))

    assertions = []
    for i, entry in enumerate(raw.get("assertions") or []):
        if not isinstance(entry, dict) or "kind" not in entry:
            raise ScenarioError(f"{source}: assertions[{i}] needs a kind")
        kind = entry["kind"]
        if kind not in ASSERTION_KINDS:
            raise ScenarioError(f"{source}: assertions[{i}] unknown kind {kind!r}")
        params = {k: v for k, v in entry.items() if k != "kind"}
        if kind in ("alert_is", "outputs_all_on", "outputs_unchanged") and "device" not in params:
            raise ScenarioError(f"{source}: assertions[{i}] {kind} needs a device")
        if kind == "alert_is" and "value" not in params:
            raise ScenarioError(f"{source}: assertions[{i}] alert_is needs a value")
        if kind in ("trace_contains", "trace_absent") and "record" not in params:
            raise ScenarioError(f"{source}: assertions[{i}] {kind} needs a record kind")
        assertions.append(Assertion(kind, params))

    return ScenarioScript(
        name=str(raw["name"]),
        project_path=str(project_path),
        horizon_ms=horizon,
        project_password=raw.get("project_password"),
        seed=int(raw.get("seed", 0)),
        dmplc=dmplc,
        actions=actions,
        assertions=assertions,
    )


# -- shared action vocabulary (also driven by the control API) -----------------

def apply_action(fleet: Fleet, action: str, params: dict) -> None:
    now = fleet.kernel.now()
    if action == "cut_link":
        fleet.fabric.cut_link(params["a"], params["b"])
        fleet.trace.emit(now, "net", "link_cut", a=params["a"], b=params["b"])
    elif action == "restore_link":
        fleet.fabric.restore_link(params["a"], params["b"])
        fleet.trace.emit(now, "net", "link_restored", a=params["a"], b=params["b"])
    elif action == "pay_ransom":
        fleet.ew.accept_key(str(params["key"]))
    elif action == "tamper_memory":
        device = fleet.device(params["device"])
        bit = params.get("bit")
        device.poke(int(params["db"]), int(params["byte"]),
                    None if bit is None else int(bit), int(params["value"]))
        fleet.trace.emit(now, params["device"], "tamper",
                         db=params["db"], byte=params["byte"],
                         bit="-" if bit is None else bit, value=params["value"])
    elif action == "halt_device":
        fleet.device(params["device"]).halt()
        fleet.trace.emit(now, params["device"], "halted")
    elif action == "reflash_device":
        device = fleet.device(params["device"])
        if not isinstance(device, PlcDevice):
            raise ScenarioError("only controllers can be reflashed")
        project_dev = fleet.project.device(params["device"])
        device._replace_config(plc_config_from_project(project_dev))
    elif action == "safe_shutdown_signal":
        fleet.device(params["device"]).signal_safe_shutdown()
        fleet.trace.emit(now, params["device"], "safe_shutdown_signal")
    else:
        raise ScenarioError(f"unknown action {action!r}")


# -- execution ----------------------------------------------------------------

def prepare_scenario(script: ScenarioScript, record_flows: bool = True) -> ScenarioResult:
    """Build the fleet and schedule the whole script without running it.

    Interactive drivers run the kernel themselves in slices; batch runs call
    run_scenario. Both produce identical traces because everything is already
    in the event queue before the first event fires.
    """
    project = load_project(script.project_path, password=script.project_password)
    fleet = build_fleet(project, seed=script.seed, record_flows=record_flows)
    result = ScenarioResult(script, fleet)

    dm = script.dmplc
    if dm and dm.get("auto_deploy", True):
        plan = DeploymentPlan(
            deadline_ms=int(dm["deadline_ms"]),
            ransom_key=str(dm["key"]),
            plc_password=str(dm.get("plc_password", "pw-" + script.name)),
            project_password=script.project_password or "unset",
            poll_interval_ms=int(dm.get("poll_interval_ms", 1000)),
            deadband_misses=int(dm.get("deadband_misses", 1)),
        )
        report = install_switch(fleet, plan)
        if report.aborted:
            raise ScenarioError(f"{script.name}: install failed: {report.reason}")
    if dm and dm.get("auto_arm_at_ms") is not None:
        terms = RansomTerms(int(dm["deadline_ms"]), str(dm["key"]))

        def arm() -> None:
            outcome = fleet.ew.arm_all(terms, fleet.devices)
            if not outcome.armed:
                result.arm_failures = outcome.failures

        fleet.kernel.schedule(int(dm["auto_arm_at_ms"]), arm, origin="scenario")

    for act in script.actions:
        fleet.kernel.schedule(
            act.at_ms,
            functools.partial(apply_action, fleet, act.action, act.params),
            origin="scenario",
        )
    return result


def run_scenario(script: ScenarioScript, record_flows: bool = True) -> ScenarioResult:
    result = prepare_scenario(script, record_flows=record_flows)
    result.stop = result.fleet.kernel.run_until(RunLimits(horizon_ms=script.horizon_ms))
    result.checks = [evaluate_assertion(a, result.fleet) for a in script.assertions]
    return result


# -- assertion evaluation ------------------------------------------------------

def _matches(rec, record_kind: str, device, fields: dict) -> bool:
    if rec.kind != record_kind:
        return False
    if device is not None and rec.device != device:
        return False
    for key, want in (fields or {}).items():
        if key not in rec.fields or str(rec.fields[key]) != str(want):
            return False
    return True


def _window(params: dict, scan_ms: int) -> tuple[int, int | None]:
    if "at_ms" in params:
        tol = int(params.get("tol_scans", 0)) * scan_ms
        return int(params["at_ms"]) - tol, int(params["at_ms"]) + tol
    return int(params.get("from_ms", 0)), params.get("to_ms")


def _state_at(records, device: str, t_ms: int, on_kinds, off_kinds) -> bool:
    state = False
    for rec in records:
        if rec.t_ms > t_ms:
            break
        if rec.device != device:
            continue
        if rec.kind in on_kinds:
            state = True
        elif rec.kind in off_kinds:
            state = False
    return state


def evaluate_assertion(assertion: Assertion, fleet: Fleet) -> CheckResult:
    p = assertion.params
    records = fleet.trace.records
    scan_ms = fleet.scan_interval_ms()
    desc = assertion.describe()

    if assertion.kind == "alert_is":
        want = bool(p["value"])
        device_id = p["device"]
        if "at_ms" in p:
            tol = int(p.get("tol_scans", 0)) * scan_ms
            probe = int(p["at_ms"]) + (tol if want else 0)
            got = _state_at(records, device_id, probe,
                            {"alert_raised"}, {"disarmed", "config_replaced"})
            return CheckResult(desc, got == want, f"state at {probe}ms is {got}")
        got = bool(getattr(fleet.device(device_id), "alert", False))
        return CheckResult(desc, got == want, f"final alert flag is {got}")

    if assertion.kind == "outputs_all_on":
        want = bool(p.get("value", True))
        device_id = p["device"]
        if "at_ms" in p:
            tol = int(p.get("tol_scans", 0)) * scan_ms
            probe = int(p["at_ms"]) + (tol if want else 0)
            got = _state_at(records, device_id, probe,
                            {"outputs_on"}, {"outputs_restored", "config_replaced"})
            return CheckResult(desc, got == want, f"state at {probe}ms is {got}")
        device = fleet.device(device_id)
        cards = device.config.output_cards
        got = bool(cards) and all(card.state for card in cards)
        return CheckResult(desc, got == want, f"final outputs {[c.state for c in cards]}")

    if assertion.kind == "outputs_unchanged":
        device_id = p["device"]
        lo, hi = _window(p, scan_ms)
        hits = [r.t_ms for r in records
                if r.device == device_id and r.kind == "outputs_on"
                and r.t_ms >= lo and (hi is None or r.t_ms <= hi)]
        return CheckResult(desc, not hits,
                           f"outputs forced on at {hits}" if hits else "never disrupted")

    if assertion.kind == "ew_shutdown":
        want = bool(p.get("value", True))
        lo, hi = _window(p, scan_ms)
        fields = {"reason": p["reason"]} if "reason" in p else {}
        hits = [r.t_ms for r in records
                if _matches(r, "ew_shutdown", None, fields)
                and r.t_ms >= lo and (hi is None or r.t_ms <= hi)]
        return CheckResult(desc, bool(hits) == want,
                           f"shutdown records at {hits}" if hits else "no shutdown record")

    if assertion.kind in ("trace_contains", "trace_absent"):
        lo, hi = _window(p, scan_ms)
        hits = [r for r in records
                if _matches(r, p["record"], p.get("device"), p.get("fields"))
                and r.t_ms >= lo and (hi is None or r.t_ms <= hi)]
        found = bool(hits)
        want = assertion.kind == "trace_contains"
        detail = (f"{len(hits)} match(es), first at {hits[0].t_ms}ms" if hits
                  else "no matching record")
        return CheckResult(desc, found == want, detail)

    return CheckResult(desc, False, f"unknown assertion kind {assertion.kind!r}")


# -- replay and timeline -------------------------------------------------------

def summarize_records(records) -> dict:
    """Counts and alert chronology for a parsed trace."""
    kinds: dict[str, int] = {}
    alerts = []
    devices = set()
    for rec in records:
        kinds[rec.kind] = kinds.get(rec.kind, 0) + 1
        devices.add(rec.device)
        if rec.kind == "alert_raised":
            alerts.append((rec.t_ms, rec.device, rec.fields.get("cause", "?")))
    return {
        "records": len(records),
        "duration_ms": records[-1].t_ms if records else 0,
        "devices": sorted(devices - {"net", "scenario"}),
        "kinds": dict(sorted(kinds.items())),
        "alerts": alerts,
    }


_ON_FLAGS = {
    "enabled": "E", "alert_raised": "A", "outputs_on": "D",
    "armed": "E", "ew_shutdown": "X", "halted": "h",
}
_OFF_FLAGS = {
    "disarmed": ("E", "A"), "outputs_restored": ("D",),
    "config_replaced": ("E", "A", "D"),
}


def emit_timeline(records, horizon_ms: int, step_ms: int = 1000) -> list[str]:
    """Render a per-interval status grid from a trace.

    Flags per cell: E enabled/armed, A alert latched, D outputs disrupted,
    X workstation shut down, h halted, - quiet.
    """
    devices = sorted({r.device for r in records} - {"net", "scenario"})
    flags: dict[str, set] = {d: set() for d in devices}
    width = max([len(d) for d in devices] + [6])
    header = "t_ms".rjust(8) + "".join(d.rjust(width + 2) for d in devices)
    lines = [header]
    idx = 0
    for t in range(0, horizon_ms + 1, step_ms):
        while idx < len(records) and records[idx].t_ms <= t:
            rec = records[idx]
            idx += 1
            if rec.device not in flags:
                continue
            if rec.kind in _ON_FLAGS:
                flags[rec.device].add(_ON_FLAGS[rec.kind])
            for cleared in _OFF_FLAGS.get(rec.kind, ()):
                flags[rec.device].discard(cleared)
        row = str(t).rjust(8)
        for d in devices:
            cell = "".join(sorted(flags[d])) or "-"
            row += cell.rjust(width + 2)
        lines.append(row)
    return lines
