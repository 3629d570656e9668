"""Trace auditor: protocol invariants every run must satisfy, checked from the
trace alone so recorded exercises can be validated long after the run.

Rules enforced per device, between an alert_raised and the episode's clear
(disarmed or config_replaced):

  - the latch holds: no re-enable, no own polling, no process execution
  - disruption is prompt, caused, and single: outputs_on appears within one
    scan of the alert, never without an alert, and at most once per episode
  - the coordinator stays silent after ew_shutdown
  - a halted device emits nothing further
  - every alert names a known cause
"""

from __future__ import annotations

from dataclasses import dataclass

KNOWN_CAUSES = frozenset({
    "deadline", "safe_shutdown", "stale_poll", "neighbor_unreachable",
    "neighbor_alert", "poll_send_failed", "external_set",
})

_CLEAR_KINDS = frozenset({"disarmed", "config_replaced"})


@dataclass
class AuditFinding:
    t_ms: int
    device: str
    rule: str
    detail: str

    def __str__(self) -> str:
        return f"[{self.t_ms}ms] {self.device}: {self.rule}: {self.detail}"


def audit_trace(records, scan_ms: int = 100) -> list:
    """Return every invariant violation found; an empty list means clean.

    scan_ms sets the grace window for in-flight sends confirmed just after an
    alert and the deadline by which disruption must follow one.
    """
    findings: list[AuditFinding] = []
    alert_since: dict[str, int] = {}
    alert_cleared_ok: dict[str, bool] = {}
    detonated_in_episode: dict[str, int] = {}
    enabled: dict[str, bool] = {}
    ew_shutdown_at: dict[str, int] = {}
    halted_at: dict[str, int] = {}

    for rec in records:
        device = rec.device
        t = rec.t_ms
        if device in halted_at:
            findings.append(AuditFinding(
                t, device, "halt_silence",
                f"{rec.kind} after halt at {halted_at[device]}ms"))
            continue
        if device in ew_shutdown_at and rec.kind in ("poll_sent", "poll_failed"):
            findings.append(AuditFinding(
                t, device, "coordinator_silence",
                f"{rec.kind} after ew_shutdown at {ew_shutdown_at[device]}ms"))

        in_alert = device in alert_since
        if rec.kind == "alert_raised":
            if in_alert:
                findings.append(AuditFinding(
                    t, device, "latch_single_alert",
                    f"second alert_raised while latched since {alert_since[device]}ms"))
            alert_since[device] = t
            cause = rec.fields.get("cause")
            if str(cause) not in KNOWN_CAUSES:
                findings.append(AuditFinding(
                    t, device, "known_cause", f"unknown alert cause {cause!r}"))
        elif rec.kind in _CLEAR_KINDS:
            alert_since.pop(device, None)
            detonated_in_episode.pop(device, None)
            enabled[device] = False
        elif rec.kind == "enabled":
            if enabled.get(device):
                findings.append(AuditFinding(
                    t, device, "latch_no_reenable",
                    "enabled again without an intervening disarm"))
            enabled[device] = True
        elif rec.kind == "armed":
            enabled[device] = True
        elif rec.kind == "ew_shutdown":
            ew_shutdown_at[device] = t
        elif rec.kind == "halted":
            halted_at[device] = t
        elif rec.kind == "poll_sent" and in_alert:
            if t > alert_since[device] + scan_ms:
                findings.append(AuditFinding(
                    t, device, "latch_no_polling",
                    f"poll_sent while alert latched since {alert_since[device]}ms"))
        elif rec.kind == "process" and in_alert:
            findings.append(AuditFinding(
                t, device, "latch_no_process",
                f"process ran while alert latched since {alert_since[device]}ms"))
        elif rec.kind == "outputs_on":
            if not in_alert:
                findings.append(AuditFinding(
                    t, device, "disruption_requires_alert",
                    "outputs forced on with no alert latched"))
            else:
                if t > alert_since[device] + scan_ms:
                    findings.append(AuditFinding(
                        t, device, "disruption_prompt",
                        f"outputs_on {t - alert_since[device]}ms after the alert"))
                if device in detonated_in_episode:
                    findings.append(AuditFinding(
                        t, device, "disruption_once",
                        f"second outputs_on in the episode since {alert_since[device]}ms"))
                detonated_in_episode[device] = t
    return findings


def audit_clean(records, scan_ms: int = 100) -> bool:
    return not audit_trace(records, scan_ms=scan_ms)
