"""Simulated plant network: links, routing, delivery outcomes, flow log.

Routing is connectivity-based: a message goes through if any path of up links
joins src and dst and the destination is alive. Every delivery attempt leaves
exactly one flow record, successful or not, which is what the passive
detection side later learns from. Default link latency is 0 and deliveries
then complete synchronously inside the caller's event; latency is a knob for
transitory-network experiments, not default behavior.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Optional

FLOW_CSV_HEADER = ["t_ms", "src", "dst", "function", "db", "outcome"]


class ProtocolFunction(str, Enum):
    PUT_WRITE = "put_write"
    GET_READ = "get_read"
    EW_WRITE = "ew_write"
    EW_READ = "ew_read"
    CONFIG_READ = "config_read"
    CONFIG_WRITE = "config_write"


class DeliveryOutcome(str, Enum):
    DELIVERED = "delivered"
    NO_ROUTE = "no_route"
    DST_DOWN = "dst_down"
    ACCESS_DENIED = "access_denied"
    ADDRESS_MISSING = "address_missing"


class UnknownDeviceError(LookupError):
    pass


class UnknownLinkError(LookupError):
    pass


@dataclass(slots=True)
class NetMessage:
    src: str
    dst: str
    protocol_function: ProtocolFunction
    db: int
    byte_offset: int = 0
    bit_offset: int | None = None
    payload: bytes | None = None
    credential: str | None = None


@dataclass(slots=True)
class DeliveryResult:
    outcome: DeliveryOutcome
    response_payload: bytes | None = None


@dataclass(slots=True)
class FlowRecord:
    t_ms: int
    src: str
    dst: str
    function: str
    db: int
    outcome: str


@dataclass(slots=True)
class Link:
    a: str
    b: str
    up: bool = True
    latency_ms: int = 0


class NetFabric:
    """Message fabric over an undirected link graph.

    Devices registered here must expose device_id, is_alive() and
    handle_message(msg) -> DeliveryResult.
    """

    def __init__(self, kernel, record_flows: bool = True):
        self._kernel = kernel
        self._devices: dict[str, object] = {}
        self._links: dict[frozenset, Link] = {}
        self._adjacency: dict[str, set[str]] = {}
        self._components: dict[str, int] | None = None
        self._has_latency = False
        self.flows: list[FlowRecord] | None = [] if record_flows else None
        self.flow_listeners: list[Callable[[FlowRecord], None]] = []

    # -- topology -----------------------------------------------------------

    def add_device(self, device) -> None:
        device_id = device.device_id
        if device_id in self._devices:
            raise ValueError(f"duplicate device id {device_id!r}")
        self._devices[device_id] = device
        self._adjacency[device_id] = set()
        self._components = None

    def add_link(self, a: str, b: str, latency_ms: int = 0) -> None:
        if a == b:
            raise ValueError(f"self-link on {a!r}")
        self._require_device(a)
        self._require_device(b)
        key = frozenset((a, b))
        if key in self._links:
            raise ValueError(f"duplicate link {a}-{b}")
        self._links[key] = Link(a, b, True, latency_ms)
        self._adjacency[a].add(b)
        self._adjacency[b].add(a)
        if latency_ms:
            self._has_latency = True
        self._components = None

    def cut_link(self, a: str, b: str) -> None:
        """Take a link down. Idempotent; unknown pair raises."""
        link = self._require_link(a, b)
        if link.up:
            link.up = False
            self._adjacency[link.a].discard(link.b)
            self._adjacency[link.b].discard(link.a)
            self._components = None

    def restore_link(self, a: str, b: str) -> None:
        link = self._require_link(a, b)
        if not link.up:
            link.up = True
            self._adjacency[link.a].add(link.b)
            self._adjacency[link.b].add(link.a)
            self._components = None

    def link_up(self, a: str, b: str) -> bool:
        return self._require_link(a, b).up

    def links(self) -> list[Link]:
        return list(self._links.values())

    def reachable(self, a: str, b: str) -> bool:
        """True iff a path of up links connects a and b (reflexive)."""
        self._require_device(a)
        self._require_device(b)
        if a == b:
            return True
        comp = self._component_map()
        return comp[a] == comp[b]

    # -- delivery -----------------------------------------------------------

    def deliver(
        self,
        msg: NetMessage,
        on_result: Callable[[DeliveryResult], None] | None = None,
    ) -> Optional[DeliveryResult]:
        """Attempt delivery; returns the result for zero-latency paths.

        For paths with latency the handler runs in a scheduled event, the
        route is re-checked at fire time (so a cut made while in flight fails
        with no_route), and the outcome goes to on_result; the synchronous
        return is then None.
        """
        self._require_device(msg.src)
        dst = self._devices.get(msg.dst)
        if dst is None:
            raise UnknownDeviceError(msg.dst)
        failure = self._route_failure(msg.src, msg.dst, dst)
        if failure is not None:
            result = DeliveryResult(failure)
            self._record_flow(msg, result)
            if on_result is not None:
                on_result(result)
            return result
        latency = self._path_latency(msg.src, msg.dst) if self._has_latency else 0
        if latency == 0:
            result = dst.handle_message(msg)
            self._record_flow(msg, result)
            return result

        def complete():
            late_failure = self._route_failure(msg.src, msg.dst, dst)
            if late_failure is not None:
                result = DeliveryResult(late_failure)
            else:
                result = dst.handle_message(msg)
            self._record_flow(msg, result)
            if on_result is not None:
                on_result(result)

        self._kernel.schedule(self._kernel.now() + latency, complete, origin="netfabric")
        return None

    def write_flows(self, path) -> None:
        if self.flows is None:
            raise ValueError("flow recording is disabled for this fabric")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(FLOW_CSV_HEADER)
            for rec in self.flows:
                writer.writerow([rec.t_ms, rec.src, rec.dst, rec.function, rec.db, rec.outcome])

    # -- internals ----------------------------------------------------------

    def _route_failure(self, src: str, dst_id: str, dst) -> DeliveryOutcome | None:
        if not self.reachable(src, dst_id):
            return DeliveryOutcome.NO_ROUTE
        if not dst.is_alive():
            return DeliveryOutcome.DST_DOWN
        return None

    def _record_flow(self, msg: NetMessage, result: DeliveryResult) -> None:
        rec = FlowRecord(
            self._kernel.now(),
            msg.src,
            msg.dst,
            msg.protocol_function.value,
            msg.db,
            result.outcome.value,
        )
        if self.flows is not None:
            self.flows.append(rec)
        for listener in self.flow_listeners:
            listener(rec)

    def _component_map(self) -> dict[str, int]:
        if self._components is None:
            comp: dict[str, int] = {}
            label = 0
            for start in self._devices:
                if start in comp:
                    continue
                stack = [start]
                comp[start] = label
                while stack:
                    node = stack.pop()
                    for peer in self._adjacency[node]:
                        if peer not in comp:
                            comp[peer] = label
                            stack.append(peer)
                label += 1
            self._components = comp
        return self._components

    def _path_latency(self, src: str, dst: str) -> int:
        # BFS shortest path by hop count; latency is the sum along that path.
        if src == dst:
            return 0
        seen = {src: (None, 0)}
        frontier = [src]
        while frontier:
            nxt = []
            for node in frontier:
                for peer in self._adjacency[node]:
                    if peer in seen:
                        continue
                    latency = seen[node][1] + self._links[frozenset((node, peer))].latency_ms
                    seen[peer] = (node, latency)
                    if peer == dst:
                        return latency
                    nxt.append(peer)
            frontier = nxt
        return 0

    def _require_device(self, device_id: str) -> None:
        if device_id not in self._devices:
            raise UnknownDeviceError(device_id)

    def _require_link(self, a: str, b: str) -> Link:
        link = self._links.get(frozenset((a, b)))
        if link is None:
            raise UnknownLinkError(f"{a}-{b}")
        return link


def read_flows_csv(path) -> list[FlowRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != FLOW_CSV_HEADER:
            raise ValueError(f"unexpected flow log header: {header}")
        return [
            FlowRecord(int(t), src, dst, fn, int(db), outcome)
            for t, src, dst, fn, db, outcome in reader
        ]
