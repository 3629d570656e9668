"""Victim-environment assembly: kernel, fabric, devices and whole-run state."""

from __future__ import annotations

from .ew import EwDevice
from .kernel import SimKernel
from .netfabric import NetFabric, UnknownDeviceError
from .plc import CoreBlock, OutputCard, PlcConfig, PlcDevice
from .project import ProjectModel
from .trace import TraceLog


class Fleet:
    """Everything one simulated plant run owns."""

    def __init__(self, project: ProjectModel, kernel: SimKernel, fabric: NetFabric,
                 trace: TraceLog):
        self.project = project
        self.kernel = kernel
        self.fabric = fabric
        self.trace = trace
        self.devices: dict[str, object] = {}
        self.covert = None  # CovertTopology once installed
        self.plan = None  # DeploymentPlan once installed

    @property
    def ew(self) -> EwDevice:
        for device in self.devices.values():
            if isinstance(device, EwDevice):
                return device
        raise UnknownDeviceError("no workstation in fleet")

    def plcs(self) -> list[PlcDevice]:
        return [d for d in self.devices.values() if isinstance(d, PlcDevice)]

    def device(self, device_id: str):
        try:
            return self.devices[device_id]
        except KeyError:
            raise UnknownDeviceError(device_id) from None

    @property
    def armed(self) -> bool:
        return self.ew.armed

    def scan_interval_ms(self) -> int:
        plcs = self.plcs()
        return max(p.config.scan_interval_ms for p in plcs) if plcs else 100

    def snapshot(self, detection_alerts: int = 0) -> dict:
        """Point-in-time view; only valid between kernel events."""
        devices = {}
        for device_id, device in self.devices.items():
            if isinstance(device, PlcDevice):
                devices[device_id] = {
                    "kind": "plc",
                    "alive": device.alive,
                    "enable": device.enabled,
                    "alert": device.alert,
                    "outputs": {card.address: card.state for card in device.config.output_cards},
                    "polling": bool(device.enabled and not device.alert
                                    and device.config.deadman is not None),
                }
            else:
                # uniform keys: for the workstation enable:=armed, alert:=shutdown
                devices[device_id] = {
                    "kind": "ew",
                    "alive": device.alive,
                    "enable": device.armed,
                    "alert": device.shutdown,
                    "outputs": {},
                    "polling": device.polling,
                }
        ew = self.ew
        return {
            "t_ms": self.kernel.now(),
            "devices": devices,
            "links": [{"a": link.a, "b": link.b, "up": link.up}
                      for link in self.fabric.links()],
            "armed": ew.armed,
            "deadline_ms": ew.deadline_ms,
            "detection_alerts": detection_alerts,
        }


def plc_config_from_project(dev) -> PlcConfig:
    """Fresh runtime config exactly as the project declares the device.

    Also what a reflash restores, so it must not carry any watchdog state.
    """
    return PlcConfig(
        id=dev.id,
        scan_interval_ms=dev.scan_interval_ms,
        data_blocks={num: bytearray(size) for num, size in dev.data_blocks.items()},
        core_blocks=[CoreBlock(name, behavior) for name, behavior in dev.core_blocks],
        output_cards=[OutputCard(addr) for addr in dev.output_cards],
        extra=dict(dev.extra),
    )


def build_fleet(project: ProjectModel, seed: int = 0, record_flows: bool = True,
                supervision: bool = True) -> Fleet:
    """Instantiate devices and links; PLCs start scanning at t=0."""
    kernel = SimKernel(seed)
    trace = TraceLog()
    fabric = NetFabric(kernel, record_flows=record_flows)
    fleet = Fleet(project, kernel, fabric, trace)

    plc_ids = []
    for dev in project.devices:
        if dev.kind == "plc":
            device = PlcDevice(plc_config_from_project(dev), kernel, fabric, trace)
            plc_ids.append(dev.id)
        else:
            device = EwDevice(
                dev.id, kernel, fabric, trace,
                supervision_interval_ms=1000 if supervision else None,
            )
        fleet.devices[dev.id] = device
        fabric.add_device(device)

    for a, b in project.links:
        fabric.add_link(a, b)
    for src, dst, kind in project.comm_functions:
        source = fleet.devices[src]
        if isinstance(source, PlcDevice):
            source.comm_functions.append((dst, kind))

    for device_id in plc_ids:
        fleet.devices[device_id].start()
    try:
        ew = fleet.ew
    except UnknownDeviceError:
        ew = None
    if ew is not None:
        ew.set_supervised(plc_ids)
        ew.start()
    return fleet
