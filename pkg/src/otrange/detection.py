"""Defender-side analytics: traffic baselining, anomaly scanning, and
configuration audit against the engineering project.

The config diff here deliberately does not share code with the installer's
own validation pass. Both sides describe deviations in the same artifact
vocabulary, so one can be checked against the other; sharing the walk would
let a single bug hide the same artifact from both.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

from .netfabric import FlowRecord

ALERTS_CSV_HEADER = "t_ms,kind,subject,detail"
BASELINE_VERSION = 1


class DetectionError(RuntimeError):
    pass


def flow_key(rec: FlowRecord) -> str:
    return f"{rec.src}>{rec.dst}:{rec.function}:{rec.db}"


@dataclass
class FlowStats:
    count: int = 0
    first_ms: int = 0
    last_ms: int = 0
    min_gap_ms: int | None = None
    max_gap_ms: int | None = None

    def observe(self, t_ms: int) -> None:
        if self.count:
            gap = t_ms - self.last_ms
            self.min_gap_ms = gap if self.min_gap_ms is None else min(self.min_gap_ms, gap)
            self.max_gap_ms = gap if self.max_gap_ms is None else max(self.max_gap_ms, gap)
        else:
            self.first_ms = t_ms
        self.count += 1
        self.last_ms = t_ms


@dataclass
class Baseline:
    window_start_ms: int = 0
    window_end_ms: int = 0
    flows: dict = field(default_factory=dict)  # key -> FlowStats

    def knows(self, key: str) -> bool:
        return key in self.flows


@dataclass
class DetectionAlert:
    t_ms: int
    kind: str  # novel_flow | period_anomaly
    subject: str
    detail: str


def learn_baseline(flows: list, window_start_ms: int = 0,
                   window_end_ms: int | None = None) -> Baseline:
    """Build per-flow timing statistics from a known-clean capture."""
    if window_end_ms is None:
        window_end_ms = flows[-1].t_ms if flows else 0
    baseline = Baseline(window_start_ms, window_end_ms)
    for rec in flows:
        if rec.t_ms < window_start_ms or rec.t_ms > window_end_ms:
            continue
        baseline.flows.setdefault(flow_key(rec), FlowStats()).observe(rec.t_ms)
    return baseline


def detect(flows: list, baseline: Baseline, factor: float = 3.0,
           until_ms: int | None = None) -> list:
    """Scan a capture against a baseline.

    novel_flow: a (src, dst, function, db) tuple the baseline never saw,
    alerted once per tuple at first occurrence. period_anomaly: a known flow
    whose inter-arrival gap exceeds factor times its baseline maximum,
    including the gap from the last record to the end of the capture, which
    is how a flow that simply stops gets caught. until_ms sets the capture
    end explicitly; without it the last record stands in, which cannot see a
    stoppage that silences every flow at once.
    """
    if factor <= 1.0:
        raise DetectionError("factor must exceed 1.0")
    alerts: list[DetectionAlert] = []
    seen_novel: set[str] = set()
    last_seen: dict[str, int] = {}
    log_start = flows[0].t_ms if flows else 0
    log_end = until_ms if until_ms is not None else (flows[-1].t_ms if flows else 0)
    for rec in flows:
        key = flow_key(rec)
        if not baseline.knows(key):
            if key not in seen_novel:
                seen_novel.add(key)
                alerts.append(DetectionAlert(rec.t_ms, "novel_flow", key, "first_seen"))
            continue
        allowed = _allowed_gap(baseline.flows[key], factor)
        prev = last_seen.get(key)
        if prev is not None and allowed is not None and rec.t_ms - prev > allowed:
            alerts.append(DetectionAlert(
                rec.t_ms, "period_anomaly", key,
                f"gap={rec.t_ms - prev} allowed={allowed}"))
        last_seen[key] = rec.t_ms
    for key, stats in baseline.flows.items():
        allowed = _allowed_gap(stats, factor)
        if allowed is None:
            continue
        tail_from = last_seen.get(key, log_start)
        if log_end - tail_from > allowed:
            alerts.append(DetectionAlert(
                log_end, "period_anomaly", key,
                f"stopped gap={log_end - tail_from} allowed={allowed}"))
    alerts.sort(key=lambda a: (a.t_ms, a.kind, a.subject))
    return alerts


def _allowed_gap(stats: FlowStats, factor: float) -> int | None:
    if stats.max_gap_ms is None or stats.max_gap_ms <= 0:
        return None  # one observation or one burst: no cadence to hold it to
    return int(stats.max_gap_ms * factor)


# -- persistence --------------------------------------------------------------

def baseline_to_json(baseline: Baseline) -> str:
    return json.dumps({
        "version": BASELINE_VERSION,
        "window_ms": [baseline.window_start_ms, baseline.window_end_ms],
        "flows": {
            key: {"count": s.count, "first_ms": s.first_ms, "last_ms": s.last_ms,
                  "min_gap_ms": s.min_gap_ms, "max_gap_ms": s.max_gap_ms}
            for key, s in sorted(baseline.flows.items())
        },
    }, indent=2, sort_keys=True)


def baseline_from_json(text: str) -> Baseline:
    raw = json.loads(text)
    if raw.get("version") != BASELINE_VERSION:
        raise DetectionError(f"unsupported baseline version {raw.get('version')!r}")
    baseline = Baseline(raw["window_ms"][0], raw["window_ms"][1])
    for key, s in raw["flows"].items():
        baseline.flows[key] = FlowStats(
            count=s["count"], first_ms=s["first_ms"], last_ms=s["last_ms"],
            min_gap_ms=s["min_gap_ms"], max_gap_ms=s["max_gap_ms"])
    return baseline


def save_baseline(baseline: Baseline, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(baseline_to_json(baseline) + "\n")


def load_baseline(path: str) -> Baseline:
    with open(path, encoding="utf-8") as fh:
        return baseline_from_json(fh.read())


def write_alerts_csv(alerts: list, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ALERTS_CSV_HEADER.split(","))
        for a in alerts:
            writer.writerow([a.t_ms, a.kind, a.subject, a.detail])


def read_alerts_csv(path: str) -> list:
    alerts = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ALERTS_CSV_HEADER.split(","):
            raise DetectionError(f"bad alerts header in {path}: {header}")
        for row in reader:
            alerts.append(DetectionAlert(int(row[0]), row[1], row[2], row[3]))
    return alerts


# -- configuration audit ------------------------------------------------------

def _wire_atoms(wire: dict) -> dict:
    """Reduce a live config snapshot to comparable atoms."""
    return {
        "scan": wire.get("scan_interval_ms"),
        "data_blocks": {int(n): spec["size"] for n, spec in wire.get("data_blocks", {}).items()},
        "core": {blk["name"] for blk in wire.get("core_blocks", [])},
        "gated": {blk["name"] for blk in wire.get("core_blocks", []) if blk.get("gated_by_alert")},
        "code": set(wire.get("code_blocks", [])),
        "cards": set(wire.get("output_cards", [])),
        "password": bool(wire.get("password_set")),
    }


def _project_atoms(dev) -> dict:
    return {
        "scan": dev.scan_interval_ms,
        "data_blocks": dict(dev.data_blocks),
        "core": {name for name, _ in dev.core_blocks},
        "gated": set(),
        "code": set(),
        "cards": set(dev.output_cards),
        "password": False,
    }


def diff_config(project_dev, wire: dict) -> list[str]:
    """Set-difference audit of a live device against the project.

    Returns sorted artifact identifiers; an untouched device yields [].
    """
    want = _project_atoms(project_dev)
    have = _wire_atoms(wire)
    out = []
    if have["scan"] != want["scan"]:
        out.append("scan_interval:changed")
    for num in set(want["data_blocks"]) | set(have["data_blocks"]):
        in_want, in_have = num in want["data_blocks"], num in have["data_blocks"]
        if in_want and not in_have:
            out.append(f"data_block:{num}:removed")
        elif in_have and not in_want:
            out.append(f"data_block:{num}:added")
        elif want["data_blocks"][num] != have["data_blocks"][num]:
            out.append(f"data_block:{num}:resized")
    for name in want["core"] - have["core"]:
        out.append(f"core_block:{name}:removed")
    for name in have["core"] - want["core"]:
        out.append(f"core_block:{name}:added")
    for name in have["gated"] & want["core"]:
        out.append(f"core_block:{name}:gated")
    for name in have["code"] - want["code"]:
        out.append(f"code_block:{name}:added")
    for addr in want["cards"] - have["cards"]:
        out.append(f"output_card:{addr}:removed")
    for addr in have["cards"] - want["cards"]:
        out.append(f"output_card:{addr}:added")
    if have["password"] and not want["password"]:
        out.append("config_password:set")
    return sorted(out)


def audit_fleet_config(fleet, credential: str | None = None) -> dict:
    """config_read every PLC and diff against the project.

    Returns {device_id: [artifacts]}; unreachable devices map to
    ["config_unreadable"] so silence is never mistaken for a clean bill.
    """
    import json as _json

    from .netfabric import DeliveryOutcome, NetMessage, ProtocolFunction

    results = {}
    src = fleet.ew.id
    for dev in fleet.project.plcs():
        res = fleet.fabric.deliver(NetMessage(
            src, dev.id, ProtocolFunction.CONFIG_READ, 0, credential=credential))
        if res is None or res.outcome is not DeliveryOutcome.DELIVERED:
            results[dev.id] = ["config_unreadable"]
            continue
        results[dev.id] = diff_config(dev, _json.loads(res.response_payload.decode()))
    return results
