"""Project files: the declarative fleet description an engineering team keeps.

YAML with top-level keys `devices`, `links`, `comm_functions`. Unknown keys
survive a load/save round trip untouched, both at the top level and per
device. A project can carry a `project_password`; loading or overwriting a
protected file without the password is an error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

DEVICE_KINDS = ("plc", "ew")
COMM_KINDS = ("put", "get")
_DEVICE_KEYS = {"id", "kind", "scan_interval_ms", "data_blocks", "core_blocks", "output_cards"}
_TOP_KEYS = {"devices", "links", "comm_functions", "project_password"}


class ProjectError(ValueError):
    pass


@dataclass
class ProjectDevice:
    id: str
    kind: str
    scan_interval_ms: int = 100
    data_blocks: dict = field(default_factory=dict)  # db number -> size in bytes
    core_blocks: list = field(default_factory=list)  # (name, behavior) pairs
    output_cards: list = field(default_factory=list)  # addresses
    extra: dict = field(default_factory=dict)


@dataclass
class ProjectModel:
    devices: list = field(default_factory=list)
    links: list = field(default_factory=list)  # (a, b) pairs
    comm_functions: list = field(default_factory=list)  # (src, dst, kind)
    password: str | None = None
    extra: dict = field(default_factory=dict)

    def device(self, device_id: str) -> ProjectDevice:
        for dev in self.devices:
            if dev.id == device_id:
                return dev
        raise ProjectError(f"no device {device_id!r} in project")

    def plcs(self) -> list[ProjectDevice]:
        return [d for d in self.devices if d.kind == "plc"]

    def ew(self) -> ProjectDevice:
        workstations = [d for d in self.devices if d.kind == "ew"]
        if len(workstations) != 1:
            raise ProjectError(f"project must declare exactly one workstation, found {len(workstations)}")
        return workstations[0]


def load_project(path, password: str | None = None) -> ProjectModel:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ProjectError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ProjectError(f"{path}: expected a mapping at the top level")
    stored = raw.get("project_password")
    if stored is not None and password != stored:
        raise ProjectError(f"{path}: project file is password protected")
    return parse_project(raw, source=str(path))


def parse_project(raw: dict, source: str = "<memory>") -> ProjectModel:
    devices = []
    seen_ids = set()
    for i, entry in enumerate(raw.get("devices") or []):
        if not isinstance(entry, dict):
            raise ProjectError(f"{source}: devices[{i}] must be a mapping")
        missing = {"id", "kind"} - entry.keys()
        if missing:
            raise ProjectError(f"{source}: devices[{i}] missing field(s) {sorted(missing)}")
        device_id = str(entry["id"])
        kind = entry["kind"]
        if kind not in DEVICE_KINDS:
            raise ProjectError(f"{source}: device {device_id!r} has unknown kind {kind!r}")
        if device_id in seen_ids:
            raise ProjectError(f"{source}: duplicate device id {device_id!r}")
        seen_ids.add(device_id)
        data_blocks = {}
        for num, size in (entry.get("data_blocks") or {}).items():
            data_blocks[int(num)] = int(size)
        core_blocks = []
        for blk in entry.get("core_blocks") or []:
            if isinstance(blk, str):
                core_blocks.append((blk, blk))
            else:
                core_blocks.append((blk["name"], blk.get("behavior", blk["name"])))
        cards = []
        for card in entry.get("output_cards") or []:
            cards.append(card if isinstance(card, str) else card["address"])
        extra = {k: v for k, v in entry.items() if k not in _DEVICE_KEYS}
        devices.append(ProjectDevice(
            id=device_id,
            kind=kind,
            scan_interval_ms=int(entry.get("scan_interval_ms", 100)),
            data_blocks=data_blocks,
            core_blocks=core_blocks,
            output_cards=cards,
            extra=extra,
        ))
    if not any(d.kind == "plc" for d in devices):
        raise ProjectError(f"{source}: project declares no PLCs")

    links = []
    seen_links = set()
    for i, pair in enumerate(raw.get("links") or []):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ProjectError(f"{source}: links[{i}] must be a [a, b] pair")
        a, b = str(pair[0]), str(pair[1])
        if a == b:
            raise ProjectError(f"{source}: links[{i}] joins {a!r} to itself")
        for end in (a, b):
            if end not in seen_ids:
                raise ProjectError(f"{source}: links[{i}] references unknown device {end!r}")
        key = frozenset((a, b))
        if key in seen_links:
            raise ProjectError(f"{source}: duplicate link {a}-{b}")
        seen_links.add(key)
        links.append((a, b))

    comms = []
    for i, row in enumerate(raw.get("comm_functions") or []):
        if not isinstance(row, (list, tuple)) or len(row) != 3:
            raise ProjectError(f"{source}: comm_functions[{i}] must be [src, dst, kind]")
        src, dst, kind = str(row[0]), str(row[1]), str(row[2])
        if kind not in COMM_KINDS:
            raise ProjectError(f"{source}: comm_functions[{i}] has unknown kind {kind!r}")
        for end in (src, dst):
            if end not in seen_ids:
                raise ProjectError(f"{source}: comm_functions[{i}] references unknown device {end!r}")
        comms.append((src, dst, kind))

    extra = {k: v for k, v in raw.items() if k not in _TOP_KEYS}
    return ProjectModel(
        devices=devices,
        links=links,
        comm_functions=comms,
        password=raw.get("project_password"),
        extra=extra,
    )


def project_to_raw(model: ProjectModel) -> dict:
    raw: dict = {}
    raw["devices"] = []
    for dev in model.devices:
        entry: dict = {"id": dev.id, "kind": dev.kind}
        if dev.kind == "plc":
            entry["scan_interval_ms"] = dev.scan_interval_ms
            entry["data_blocks"] = {num: size for num, size in dev.data_blocks.items()}
            entry["core_blocks"] = [
                {"name": name, "behavior": behavior} for name, behavior in dev.core_blocks
            ]
            entry["output_cards"] = [{"address": a} for a in dev.output_cards]
        entry.update(dev.extra)
        raw["devices"].append(entry)
    raw["links"] = [list(pair) for pair in model.links]
    raw["comm_functions"] = [list(row) for row in model.comm_functions]
    if model.password is not None:
        raw["project_password"] = model.password
    raw.update(model.extra)
    return raw


def save_project(model: ProjectModel, path, password: str | None = None,
                 unlock: str | None = None) -> None:
    """Write the project; refuses to overwrite a protected file without its password.

    Protection is sticky: an unlock-only re-save keeps the existing password
    rather than silently stripping it. Pass password= to change it.
    """
    path = Path(path)
    stored = None
    if path.exists():
        existing = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        stored = existing.get("project_password") if isinstance(existing, dict) else None
        if stored is not None and unlock != stored:
            raise ProjectError(f"{path}: existing project is password protected; wrong password on re-save")
    if password is not None:
        model.password = password
    elif model.password is None:
        model.password = stored
    path.write_text(yaml.safe_dump(project_to_raw(model), sort_keys=False), encoding="utf-8")
