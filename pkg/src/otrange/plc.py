"""PLC emulation: cyclic scans over data-block memory, the covert watchdog
(poll exchange, status checks, ransom timer), output disruption, and
password-gated configuration access.

Memory layout convention for the watchdog blocks:
  DB500 byte 0 bit 0  alert flag (latched)
  DB500 byte 0 bit 1  enable flag (armed)
  DB500 bytes 8..15   ransom deadline, uint64 little-endian, sim ms
  DB501 byte 0 bit 0  coordinator poll slot
  DB501 bits 1..n     one slot per neighbouring poller

The runtime keeps authoritative alert/enable flags; the DB bits are
projections re-asserted every scan (ladder seal-in analogue), so a direct
memory poke can set an alert but can never quietly clear one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .netfabric import DeliveryOutcome, DeliveryResult, NetMessage, ProtocolFunction

ALERT_DB = 500
POLL_DB = 501
PROCESS_DB = 100
ALERT_BIT = (ALERT_DB, 0, 0)
ENABLE_BIT = (ALERT_DB, 0, 1)
COORDINATOR_SLOT = (POLL_DB, 0, 0)
DEADLINE_OFFSET = 8
ALERT_DB_SIZE = 16
DEADMAN_BLOCKS = ("deadman_poll", "deadman_status", "deadman_timer", "deadman_disrupt")

DELIVERED = DeliveryOutcome.DELIVERED


@dataclass
class OutputCard:
    address: str
    state: bool = False


@dataclass
class CoreBlock:
    name: str
    behavior: str = "tank_control"
    gated_by_alert: bool = False


@dataclass(slots=True)
class PollAssignment:
    """One directed covert poll: poller toggles write_bit on target."""

    poller: str
    target: str
    write_bit: tuple
    watch_alert: bool = True


@dataclass
class DeadmanConfig:
    """Per-PLC watchdog settings installed by the deployer."""

    coordinator: str
    poll_interval_ms: int = 1000
    deadband_misses: int = 1
    assignments: list[PollAssignment] = field(default_factory=list)
    watch_slots: dict = field(default_factory=dict)  # (db, byte, bit) -> poller id
    watch_safe_shutdown: bool = False
    restore_outputs_on_disarm: bool = True


@dataclass
class PlcConfig:
    id: str
    scan_interval_ms: int = 100
    data_blocks: dict = field(default_factory=dict)  # db number -> bytearray
    core_blocks: list = field(default_factory=list)
    output_cards: list = field(default_factory=list)
    config_password: str | None = None
    deadman: DeadmanConfig | None = None
    extra: dict = field(default_factory=dict)


class TankControl:
    """Integer bang-bang tank model; drives the first output card as a pump.

    All-integer state keeps traces byte-identical across platforms. The level
    image is mirrored into DB100 so legitimate comm functions have real data
    to exchange.
    """

    __slots__ = ("level", "pump")

    LOW = 3000
    HIGH = 7000
    INFLOW = 150
    OUTFLOW = 80

    def __init__(self):
        self.level = 5000
        self.pump = False

    def step(self, plc: "PlcDevice") -> None:
        if self.pump:
            self.level += self.INFLOW
        self.level -= self.OUTFLOW
        if self.level < 0:
            self.level = 0
        elif self.level > 10000:
            self.level = 10000
        if self.level <= self.LOW:
            self.pump = True
        elif self.level >= self.HIGH:
            self.pump = False
        cards = plc.config.output_cards
        if cards and cards[0].state != self.pump:
            cards[0].state = self.pump
            plc.trace.emit(
                plc.kernel.now(), plc.id, "output_changed",
                address=cards[0].address, state=int(self.pump),
            )
        image = plc.config.data_blocks.get(PROCESS_DB)
        if image is not None and len(image) >= 2:
            image[0:2] = self.level.to_bytes(2, "little")


class IdleBlock:
    """Fallback behavior for core blocks without a registered model."""

    __slots__ = ("cycles",)

    def __init__(self):
        self.cycles = 0

    def step(self, plc):
        self.cycles += 1


BEHAVIORS = {"tank_control": TankControl}


def make_behavior(name: str):
    return BEHAVIORS.get(name, IdleBlock)()


class PlcDevice:
    """One simulated controller on the fabric."""

    def __init__(self, config: PlcConfig, kernel, fabric, trace):
        self.config = config
        self.kernel = kernel
        self.fabric = fabric
        self.trace = trace
        self.alive = True
        self.enabled = False
        self.alert = False
        self.detonated = False
        self.deadline_ms: int | None = None
        self.poll_value = False
        self.last_change: dict = {}
        self.next_poll_at: int | None = None
        self.comm_functions: list = []  # (dst, "put"|"get") legitimate exchanges
        self._behaviors = [(blk, make_behavior(blk.behavior)) for blk in config.core_blocks]
        self._next_process_at = 0
        self._next_comm_at = 0
        self._safe_shutdown = False

    @property
    def id(self) -> str:
        return self.config.id

    @property
    def device_id(self) -> str:
        return self.config.id

    def is_alive(self) -> bool:
        return self.alive

    def start(self) -> None:
        self.kernel.schedule(self.kernel.now(), self._scan, origin=self.id)

    # -- scan cycle ----------------------------------------------------------

    def _scan(self) -> None:
        if not self.alive:
            return
        now = self.kernel.now()
        if self.config.deadman is not None:
            self._sync_switch_bits(now)
            if self.enabled and not self.alert:
                self._armed_checks(now)
            if self.enabled and self.alert:
                self._disrupt_outputs(now)
        self._run_core(now)
        self.kernel.schedule(now + self.config.scan_interval_ms, self._scan, origin=self.id)

    def _sync_switch_bits(self, now: int) -> None:
        block = self.config.data_blocks.get(ALERT_DB)
        if block is None:
            return
        bits = block[0]
        if self.alert:
            if not bits & 1:
                block[0] = bits | 1  # seal-in: latched alert rewrites a cleared bit
        elif bits & 1:
            self._raise_alert(now, "external_set")
        expected = 2 if self.enabled else 0
        if (block[0] & 2) != expected:
            block[0] = (block[0] & ~2) | expected

    def _armed_checks(self, now: int) -> None:
        dm = self.config.deadman
        if self.deadline_ms is not None and now >= self.deadline_ms:
            self._raise_alert(now, "deadline")
            return
        if dm.watch_safe_shutdown and self._safe_shutdown:
            self._raise_alert(now, "safe_shutdown")
            return
        threshold = dm.deadband_misses * dm.poll_interval_ms
        for slot, last in self.last_change.items():
            if now - last > threshold:
                self._raise_alert(now, "stale_poll", poller=dm.watch_slots.get(slot, "?"))
                return
        if self.next_poll_at is None or now < self.next_poll_at:
            return
        while self.next_poll_at <= now:
            self.next_poll_at += dm.poll_interval_ms
        # status checks first: read each watched neighbour's alert bit
        for assignment in dm.assignments:
            if not assignment.watch_alert:
                continue
            msg = NetMessage(self.id, assignment.target, ProtocolFunction.GET_READ, ALERT_DB, 0)
            res = self.fabric.deliver(msg, on_result=self._make_check_callback(assignment.target))
            if res is None:
                continue  # latency path; callback will judge it
            if res.outcome is not DELIVERED:
                self.trace.emit(
                    now, self.id, "poll_failed",
                    target=assignment.target, op="get_read", outcome=res.outcome.value,
                )
                self._raise_alert(now, "neighbor_unreachable", target=assignment.target)
                return
            if res.response_payload[0] & 1:
                self._raise_alert(now, "neighbor_alert", target=assignment.target)
                return
        # then the due polls
        self.poll_value = not self.poll_value
        payload = bytes([1 if self.poll_value else 0])
        for assignment in dm.assignments:
            db, byte, bit = assignment.write_bit
            msg = NetMessage(
                self.id, assignment.target, ProtocolFunction.PUT_WRITE,
                db, byte, bit, payload,
            )
            res = self.fabric.deliver(msg, on_result=self._make_poll_callback(assignment.target, db))
            if res is None:
                continue
            if res.outcome is DELIVERED:
                self.trace.emit(now, self.id, "poll_sent", target=assignment.target, op="put_write", db=db)
            else:
                self.trace.emit(
                    now, self.id, "poll_failed",
                    target=assignment.target, op="put_write", outcome=res.outcome.value,
                )
                self._raise_alert(now, "poll_send_failed", target=assignment.target)
                return

    def _make_check_callback(self, target: str):
        def judge(res: DeliveryResult) -> None:
            if not (self.alive and self.enabled and not self.alert):
                return
            now = self.kernel.now()
            if res.outcome is not DELIVERED:
                self.trace.emit(now, self.id, "poll_failed", target=target, op="get_read",
                                outcome=res.outcome.value)
                self._raise_alert(now, "neighbor_unreachable", target=target)
            elif res.response_payload[0] & 1:
                self._raise_alert(now, "neighbor_alert", target=target)
        return judge

    def _make_poll_callback(self, target: str, db: int):
        def judge(res: DeliveryResult) -> None:
            if not self.alive:
                return
            now = self.kernel.now()
            if res.outcome is DELIVERED:
                self.trace.emit(now, self.id, "poll_sent", target=target, op="put_write", db=db)
            elif self.enabled and not self.alert:
                self.trace.emit(now, self.id, "poll_failed", target=target, op="put_write",
                                outcome=res.outcome.value)
                self._raise_alert(now, "poll_send_failed", target=target)
        return judge

    def _raise_alert(self, now: int, cause: str, **extra) -> None:
        if self.alert:
            return
        self.alert = True
        block = self.config.data_blocks.get(ALERT_DB)
        if block is not None:
            block[0] |= 1
        self.trace.emit(now, self.id, "alert_raised", cause=cause, **extra)
        if any(blk.gated_by_alert for blk in self.config.core_blocks):
            self.trace.emit(now, self.id, "core_disabled")

    def _disrupt_outputs(self, now: int) -> None:
        for card in self.config.output_cards:
            card.state = True
        if not self.detonated:
            self.detonated = True
            self.trace.emit(now, self.id, "outputs_on")

    def _run_core(self, now: int) -> None:
        alert = self.alert
        ran_process = False
        for block, behavior in self._behaviors:
            if block.gated_by_alert and alert:
                continue
            behavior.step(self)
            ran_process = True
        if alert:
            return
        if self.comm_functions and now >= self._next_comm_at:
            while self._next_comm_at <= now:
                self._next_comm_at += 1000
            image = self.config.data_blocks.get(PROCESS_DB)
            chunk = bytes(image[0:2]) if image is not None and len(image) >= 2 else b"\x00\x00"
            for dst, kind in self.comm_functions:
                if kind == "put":
                    msg = NetMessage(self.id, dst, ProtocolFunction.PUT_WRITE, PROCESS_DB, 2,
                                     None, chunk)
                else:
                    msg = NetMessage(self.id, dst, ProtocolFunction.GET_READ, PROCESS_DB, 0)
                self.fabric.deliver(msg)  # legitimate traffic; failures are not watchdog business
        if ran_process and now >= self._next_process_at:
            while self._next_process_at <= now:
                self._next_process_at += 1000
            for block, behavior in self._behaviors:
                if isinstance(behavior, TankControl):
                    self.trace.emit(now, self.id, "process", block=block.name,
                                    level=behavior.level, pump=int(behavior.pump))

    # -- network handler -----------------------------------------------------

    def handle_message(self, msg: NetMessage) -> DeliveryResult:
        fn = msg.protocol_function
        if fn is ProtocolFunction.PUT_WRITE or fn is ProtocolFunction.EW_WRITE:
            return self._data_write(msg)
        if fn is ProtocolFunction.GET_READ or fn is ProtocolFunction.EW_READ:
            return self._data_read(msg)
        if fn is ProtocolFunction.CONFIG_READ:
            return self._config_read(msg)
        if fn is ProtocolFunction.CONFIG_WRITE:
            return self._config_write(msg)
        return DeliveryResult(DeliveryOutcome.ADDRESS_MISSING)

    def _data_write(self, msg: NetMessage) -> DeliveryResult:
        block = self.config.data_blocks.get(msg.db)
        if block is None:
            return DeliveryResult(DeliveryOutcome.ADDRESS_MISSING)
        now = self.kernel.now()
        dm = self.config.deadman
        if msg.bit_offset is not None:
            if not 0 <= msg.byte_offset < len(block) or not 0 <= msg.bit_offset < 8:
                return DeliveryResult(DeliveryOutcome.ADDRESS_MISSING)
            target = (msg.db, msg.byte_offset, msg.bit_offset)
            value = bool(msg.payload and msg.payload[0])
            if dm is not None and target == ENABLE_BIT:
                # the enable contact only moves for the coordinator's own writes
                if msg.protocol_function is ProtocolFunction.EW_WRITE and msg.src == dm.coordinator:
                    self._apply_enable(value, now)
                    return DeliveryResult(DELIVERED)
                return DeliveryResult(DeliveryOutcome.ACCESS_DENIED)
            mask = 1 << msg.bit_offset
            old = bool(block[msg.byte_offset] & mask)
            if value:
                block[msg.byte_offset] |= mask
            else:
                block[msg.byte_offset] &= ~mask
            if dm is not None and old != value and target in dm.watch_slots:
                self.last_change[target] = now
            return DeliveryResult(DELIVERED)
        data = msg.payload or b""
        if msg.byte_offset < 0 or msg.byte_offset + len(data) > len(block):
            return DeliveryResult(DeliveryOutcome.ADDRESS_MISSING)
        block[msg.byte_offset:msg.byte_offset + len(data)] = data
        if (
            dm is not None
            and msg.db == ALERT_DB
            and msg.byte_offset == DEADLINE_OFFSET
            and len(data) == 8
            and msg.protocol_function is ProtocolFunction.EW_WRITE
            and msg.src == dm.coordinator
        ):
            self.deadline_ms = int.from_bytes(data, "little")
        return DeliveryResult(DELIVERED)

    def _data_read(self, msg: NetMessage) -> DeliveryResult:
        block = self.config.data_blocks.get(msg.db)
        if block is None or not 0 <= msg.byte_offset < len(block):
            return DeliveryResult(DeliveryOutcome.ADDRESS_MISSING)
        return DeliveryResult(DELIVERED, bytes([block[msg.byte_offset]]))

    def _config_read(self, msg: NetMessage) -> DeliveryResult:
        if self.config.config_password and msg.credential != self.config.config_password:
            self.trace.emit(self.kernel.now(), self.id, "config_access_denied",
                            op="config_read", src=msg.src)
            return DeliveryResult(DeliveryOutcome.ACCESS_DENIED)
        payload = json.dumps(config_to_wire(self.config), sort_keys=True).encode()
        return DeliveryResult(DELIVERED, payload)

    def _config_write(self, msg: NetMessage) -> DeliveryResult:
        if self.config.config_password and msg.credential != self.config.config_password:
            self.trace.emit(self.kernel.now(), self.id, "config_access_denied",
                            op="config_write", src=msg.src)
            return DeliveryResult(DeliveryOutcome.ACCESS_DENIED)
        try:
            wire = json.loads((msg.payload or b"{}").decode())
            new_config = config_from_wire(wire)
        except (ValueError, KeyError) as exc:
            raise ValueError(f"malformed config payload for {self.id}: {exc}") from exc
        self._replace_config(new_config)
        return DeliveryResult(DELIVERED)

    def _apply_enable(self, value: bool, now: int) -> None:
        dm = self.config.deadman
        block = self.config.data_blocks.get(ALERT_DB)
        if value and not self.enabled:
            self.enabled = True
            self.poll_value = False
            self.next_poll_at = now
            self.last_change = {slot: now for slot in dm.watch_slots}
            if block is not None:
                block[0] |= 2
            self.trace.emit(now, self.id, "enabled")
        elif not value and self.enabled:
            self.enabled = False
            self.deadline_ms = None
            self.alert = False
            self.next_poll_at = None
            self.last_change = {}
            self._safe_shutdown = False
            if block is not None:
                block[0] &= ~3
            if self.detonated and dm.restore_outputs_on_disarm:
                for card in self.config.output_cards:
                    card.state = False
                self.trace.emit(now, self.id, "outputs_restored")
            self.detonated = False
            self.config.config_password = None
            self.trace.emit(now, self.id, "disarmed")

    def _replace_config(self, new_config: PlcConfig) -> None:
        new_config.id = self.config.id  # identity is not reflashable
        self.config = new_config
        self.enabled = False
        self.alert = False
        self.detonated = False
        self.deadline_ms = None
        self.poll_value = False
        self.last_change = {}
        self.next_poll_at = None
        self._safe_shutdown = False
        self._behaviors = [(blk, make_behavior(blk.behavior)) for blk in new_config.core_blocks]
        self.trace.emit(self.kernel.now(), self.id, "config_replaced")

    # -- exercise hooks (local/physical access, not fabric traffic) ----------

    def poke(self, db: int, byte: int, bit: int | None, value: int) -> None:
        """Direct memory tamper; models local or HMI-level write access."""
        block = self.config.data_blocks.get(db)
        if block is None:
            raise ValueError(f"{self.id} has no DB{db}")
        if not 0 <= byte < len(block):
            raise ValueError(f"byte {byte} out of range for {self.id} DB{db}")
        if bit is None:
            block[byte] = value & 0xFF
        else:
            if not 0 <= bit < 8:
                raise ValueError(f"bit {bit} out of range")
            if value:
                block[byte] |= 1 << bit
            else:
                block[byte] &= ~(1 << bit)

    def halt(self) -> None:
        self.alive = False

    def signal_safe_shutdown(self) -> None:
        self._safe_shutdown = True

    def read_bit(self, db: int, byte: int, bit: int) -> int:
        block = self.config.data_blocks[db]
        return (block[byte] >> bit) & 1


# -- config wire form (config_read payload / config_write body) --------------

def config_to_wire(config: PlcConfig) -> dict:
    wire = {
        "id": config.id,
        "scan_interval_ms": config.scan_interval_ms,
        "data_blocks": {
            str(num): {"size": len(block), "data": bytes(block).hex()}
            for num, block in config.data_blocks.items()
        },
        "core_blocks": [
            {"name": blk.name, "behavior": blk.behavior, "gated_by_alert": blk.gated_by_alert}
            for blk in config.core_blocks
        ],
        "code_blocks": list(DEADMAN_BLOCKS) if config.deadman is not None else [],
        "output_cards": [card.address for card in config.output_cards],
        "password_set": bool(config.config_password),
        "extra": config.extra,
    }
    if config.deadman is not None:
        dm = config.deadman
        wire["deadman"] = {
            "coordinator": dm.coordinator,
            "poll_interval_ms": dm.poll_interval_ms,
            "deadband_misses": dm.deadband_misses,
            "assignments": [
                {"poller": a.poller, "target": a.target,
                 "write_bit": list(a.write_bit), "watch_alert": a.watch_alert}
                for a in dm.assignments
            ],
            "watch_slots": {f"{db}:{byte}:{bit}": who
                            for (db, byte, bit), who in dm.watch_slots.items()},
            "watch_safe_shutdown": dm.watch_safe_shutdown,
            "restore_outputs_on_disarm": dm.restore_outputs_on_disarm,
        }
    if config.config_password:
        wire["config_password"] = config.config_password
    return wire


def config_from_wire(wire: dict) -> PlcConfig:
    data_blocks = {}
    for num, spec in wire.get("data_blocks", {}).items():
        block = bytearray.fromhex(spec["data"]) if spec.get("data") else bytearray(spec["size"])
        if len(block) != spec["size"]:
            block = bytearray(spec["size"])
        data_blocks[int(num)] = block
    deadman = None
    if "deadman" in wire:
        dmw = wire["deadman"]
        watch_slots = {}
        for key, who in dmw.get("watch_slots", {}).items():
            db, byte, bit = key.split(":")
            watch_slots[(int(db), int(byte), int(bit))] = who
        deadman = DeadmanConfig(
            coordinator=dmw["coordinator"],
            poll_interval_ms=dmw["poll_interval_ms"],
            deadband_misses=dmw["deadband_misses"],
            assignments=[
                PollAssignment(a["poller"], a["target"], tuple(a["write_bit"]),
                               a.get("watch_alert", True))
                for a in dmw.get("assignments", [])
            ],
            watch_slots=watch_slots,
            watch_safe_shutdown=dmw.get("watch_safe_shutdown", False),
            restore_outputs_on_disarm=dmw.get("restore_outputs_on_disarm", True),
        )
    return PlcConfig(
        id=wire["id"],
        scan_interval_ms=wire.get("scan_interval_ms", 100),
        data_blocks=data_blocks,
        core_blocks=[
            CoreBlock(blk["name"], blk.get("behavior", blk["name"]),
                      blk.get("gated_by_alert", False))
            for blk in wire.get("core_blocks", [])
        ],
        output_cards=[OutputCard(addr) for addr in wire.get("output_cards", [])],
        config_password=wire.get("config_password"),
        deadman=deadman,
        extra=wire.get("extra", {}),
    )
