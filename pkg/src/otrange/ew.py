"""Coordinator workstation: the second-by-second fleet heartbeat, arm and
disarm broadcasts, ransom-key verification, and fail-stop shutdown.

The workstation is deliberately brittle: any failed poll write, any observed
alert bit, or its own deadline makes it cease all polling and shut down for
good. Quietly ceasing is itself the signal the fleet is watching for.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .netfabric import (
    DeliveryOutcome,
    DeliveryResult,
    NetMessage,
    ProtocolFunction,
)
from .plc import ALERT_DB, COORDINATOR_SLOT, DEADLINE_OFFSET, ENABLE_BIT, POLL_DB, PROCESS_DB

DELIVERED = DeliveryOutcome.DELIVERED


@dataclass(frozen=True)
class RansomTerms:
    deadline_ms: int
    key: str

    def __post_init__(self):
        if self.deadline_ms <= 0:
            raise ValueError("deadline_ms must be positive")
        if not self.key:
            raise ValueError("key must be non-empty")


@dataclass
class ArmReport:
    armed: bool
    failures: list = field(default_factory=list)  # (device, reason)


@dataclass
class DisarmOutcome:
    disarmed: bool
    reason: str = ""
    unreachable: list = field(default_factory=list)


class EwDevice:
    """Engineering workstation driving the covert protocol."""

    def __init__(self, device_id: str, kernel, fabric, trace, poll_interval_ms: int = 1000,
                 supervision_interval_ms: int | None = 1000):
        self._id = device_id
        self.kernel = kernel
        self.fabric = fabric
        self.trace = trace
        self.poll_interval_ms = poll_interval_ms
        self.supervision_interval_ms = supervision_interval_ms
        self.alive = True
        self.polling = False
        self.poll_value = False
        self.encrypted = False
        self.shutdown = False
        self.armed = False
        self.ransom_key: str | None = None
        self.deadline_ms: int | None = None
        self.targets: list[str] = []
        self.failed_key_attempts = 0
        self._poll_handle = None
        self._supervised: list[str] = []

    @property
    def id(self) -> str:
        return self._id

    @property
    def device_id(self) -> str:
        return self._id

    def is_alive(self) -> bool:
        return self.alive and not self.shutdown

    def handle_message(self, msg: NetMessage) -> DeliveryResult:
        # the workstation exposes no data blocks to the fleet
        return DeliveryResult(DeliveryOutcome.ADDRESS_MISSING)

    def start(self) -> None:
        """Begin ordinary supervision traffic (pre-attack legitimate reads)."""
        if self.supervision_interval_ms:
            self.kernel.schedule(self.kernel.now(), self._supervision_cycle, origin=self._id)

    def _supervision_cycle(self) -> None:
        if not self.alive or self.shutdown:
            return
        now = self.kernel.now()
        for target in self._supervised:
            self.fabric.deliver(
                NetMessage(self._id, target, ProtocolFunction.EW_READ, PROCESS_DB, 0)
            )
        self.kernel.schedule(now + self.supervision_interval_ms, self._supervision_cycle,
                             origin=self._id)

    def set_supervised(self, plc_ids: list[str]) -> None:
        self._supervised = list(plc_ids)

    # -- covert protocol ------------------------------------------------------

    def arm_all(self, terms: RansomTerms, fleet_devices: dict) -> ArmReport:
        """Stage-check every target, then commit enable writes atomically.

        Nothing is enabled unless every target is reachable, alive and has the
        watchdog installed; a partial-arm report lists each failure.
        """
        if self.armed:
            return ArmReport(False, [(self._id, "already armed")])
        if self.shutdown or not self.alive:
            return ArmReport(False, [(self._id, "workstation is down")])
        if not self.targets:
            return ArmReport(False, [(self._id, "no installed targets")])
        failures = []
        for target in self.targets:
            device = fleet_devices.get(target)
            if device is None:
                failures.append((target, "unknown device"))
            elif not device.is_alive():
                failures.append((target, "device down"))
            elif not self.fabric.reachable(self._id, target):
                failures.append((target, "unreachable"))
            elif getattr(device.config, "deadman", None) is None:
                failures.append((target, "watchdog not installed"))
        if failures:
            return ArmReport(False, failures)

        now = self.kernel.now()
        self.ransom_key = terms.key
        self.deadline_ms = terms.deadline_ms
        deadline_bytes = terms.deadline_ms.to_bytes(8, "little")
        enabled: list[str] = []
        for target in self.targets:
            res_deadline = self.fabric.deliver(NetMessage(
                self._id, target, ProtocolFunction.EW_WRITE,
                ALERT_DB, DEADLINE_OFFSET, None, deadline_bytes,
            ))
            res_enable = self.fabric.deliver(NetMessage(
                self._id, target, ProtocolFunction.EW_WRITE,
                ENABLE_BIT[0], ENABLE_BIT[1], ENABLE_BIT[2], b"\x01",
            ))
            if (res_deadline is None or res_deadline.outcome is not DELIVERED
                    or res_enable is None or res_enable.outcome is not DELIVERED):
                # roll the already-enabled targets back; arming is all-or-nothing
                for done in enabled:
                    self.fabric.deliver(NetMessage(
                        self._id, done, ProtocolFunction.EW_WRITE,
                        ENABLE_BIT[0], ENABLE_BIT[1], ENABLE_BIT[2], b"\x00",
                    ))
                self.ransom_key = None
                self.deadline_ms = None
                return ArmReport(False, [(target, "enable write failed")])
            enabled.append(target)
        self.encrypted = True
        self.armed = True
        self.polling = True
        self.trace.emit(now, self._id, "armed",
                        deadline_ms=terms.deadline_ms, targets=",".join(self.targets))
        self.poll_cycle()
        return ArmReport(True, [])

    def poll_cycle(self) -> None:
        if self.shutdown or not self.polling or not self.alive:
            return
        now = self.kernel.now()
        if self.deadline_ms is not None and now >= self.deadline_ms:
            self._cease(now, "deadline")
            return
        self.poll_value = not self.poll_value
        payload = bytes([1 if self.poll_value else 0])
        for target in self.targets:
            res = self.fabric.deliver(NetMessage(
                self._id, target, ProtocolFunction.EW_WRITE,
                COORDINATOR_SLOT[0], COORDINATOR_SLOT[1], COORDINATOR_SLOT[2], payload,
            ))
            if res is None or res.outcome is not DELIVERED:
                outcome = "in_flight" if res is None else res.outcome.value
                self.trace.emit(now, self._id, "poll_failed",
                                target=target, op="ew_write", outcome=outcome)
                self._cease(now, "poll_failure", target=target)
                return
            self.trace.emit(now, self._id, "poll_sent", target=target, op="ew_write", db=POLL_DB)
        for target in self.targets:
            res = self.fabric.deliver(NetMessage(
                self._id, target, ProtocolFunction.EW_READ, ALERT_DB, 0,
            ))
            if res is None or res.outcome is not DELIVERED:
                outcome = "in_flight" if res is None else res.outcome.value
                self.trace.emit(now, self._id, "poll_failed",
                                target=target, op="ew_read", outcome=outcome)
                self._cease(now, "poll_failure", target=target)
                return
            if res.response_payload[0] & 1:
                self._cease(now, "observed_alert", target=target)
                return
        self._poll_handle = self.kernel.schedule(now + self.poll_interval_ms, self.poll_cycle,
                                                 origin=self._id)

    def _cease(self, now: int, reason: str, **extra) -> None:
        """Cease all polling for every target, then shut down permanently."""
        self.polling = False
        self.shutdown = True
        if self._poll_handle is not None:
            self.kernel.cancel(self._poll_handle)
            self._poll_handle = None
        self.trace.emit(now, self._id, "ew_shutdown", reason=reason, **extra)

    def accept_key(self, key: str) -> DisarmOutcome:
        if self.shutdown:
            return DisarmOutcome(False, "workstation has shut down; disarm impossible here")
        if not self.armed:
            return DisarmOutcome(False, "not armed")
        if key != self.ransom_key:
            self.failed_key_attempts += 1
            self.trace.emit(self.kernel.now(), self._id, "disarm_failed",
                            attempts=self.failed_key_attempts)
            return DisarmOutcome(False, "wrong key")
        now = self.kernel.now()
        unreachable = []
        for target in self.targets:
            res = self.fabric.deliver(NetMessage(
                self._id, target, ProtocolFunction.EW_WRITE,
                ENABLE_BIT[0], ENABLE_BIT[1], ENABLE_BIT[2], b"\x00",
            ))
            if res is None or res.outcome is not DELIVERED:
                unreachable.append(target)
        self.armed = False
        self.polling = False
        self.encrypted = False
        if self._poll_handle is not None:
            self.kernel.cancel(self._poll_handle)
            self._poll_handle = None
        self.trace.emit(now, self._id, "disarmed")
        return DisarmOutcome(True, unreachable=unreachable)

    def halt(self) -> None:
        self.alive = False
