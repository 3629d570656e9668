from dataclasses import dataclass, field

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otrange.kernel import RunLimits, SimKernel
from otrange.netfabric import (
    FLOW_CSV_HEADER,
    DeliveryOutcome,
    DeliveryResult,
    NetFabric,
    NetMessage,
    ProtocolFunction,
    UnknownDeviceError,
    UnknownLinkError,
    read_flows_csv,
)


def bfs_reachable(nodes, up_links, a, b):
    """Independent oracle: breadth-first search over undirected up links."""
    if a == b:
        return True
    adjacency = {n: set() for n in nodes}
    for x, y in up_links:
        adjacency[x].add(y)
        adjacency[y].add(x)
    seen = {a}
    frontier = [a]
    while frontier:
        node = frontier.pop()
        for peer in adjacency[node]:
            if peer == b:
                return True
            if peer not in seen:
                seen.add(peer)
                frontier.append(peer)
    return False


@dataclass
class StubDevice:
    device_id: str
    alive: bool = True
    seen: list = field(default_factory=list)

    def is_alive(self):
        return self.alive

    def handle_message(self, msg):
        self.seen.append(msg)
        return DeliveryResult(DeliveryOutcome.DELIVERED, b"\x00")


def build_fabric(n, links, kernel=None, record_flows=True):
    fabric = NetFabric(kernel or SimKernel(), record_flows=record_flows)
    devices = [StubDevice(f"d{i}") for i in range(n)]
    for device in devices:
        fabric.add_device(device)
    for a, b in links:
        fabric.add_link(f"d{a}", f"d{b}")
    return fabric, devices


@given(st.integers(min_value=2, max_value=6), st.data())
@settings(max_examples=200, deadline=None)
def test_reachability_matches_bfs_oracle(n, data):
    all_pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    links = data.draw(st.sets(st.sampled_from(all_pairs)))
    cut = data.draw(st.sets(st.sampled_from(sorted(links)))) if links else set()
    fabric, _ = build_fabric(n, links)
    for a, b in cut:
        fabric.cut_link(f"d{a}", f"d{b}")
    nodes = [f"d{i}" for i in range(n)]
    up = [(f"d{a}", f"d{b}") for a, b in links - cut]
    for a in nodes:
        for b in nodes:
            assert fabric.reachable(a, b) == bfs_reachable(nodes, up, a, b)


@given(st.integers(min_value=2, max_value=5), st.data())
@settings(max_examples=100, deadline=None)
def test_restore_after_cut_recovers_original_graph(n, data):
    all_pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    links = data.draw(st.sets(st.sampled_from(all_pairs)))
    fabric, _ = build_fabric(n, links)
    nodes = [f"d{i}" for i in range(n)]
    before = {(a, b): fabric.reachable(a, b) for a in nodes for b in nodes}
    for a, b in links:
        fabric.cut_link(f"d{a}", f"d{b}")
        fabric.cut_link(f"d{a}", f"d{b}")  # idempotent
        fabric.restore_link(f"d{a}", f"d{b}")
    after = {(a, b): fabric.reachable(a, b) for a in nodes for b in nodes}
    assert before == after


def test_delivery_outcomes():
    fabric, devices = build_fabric(3, [(0, 1)])
    msg = lambda dst: NetMessage("d0", dst, ProtocolFunction.GET_READ, 100)
    assert fabric.deliver(msg("d1")).outcome is DeliveryOutcome.DELIVERED
    assert fabric.deliver(msg("d2")).outcome is DeliveryOutcome.NO_ROUTE
    devices[1].alive = False
    assert fabric.deliver(msg("d1")).outcome is DeliveryOutcome.DST_DOWN
    fabric.cut_link("d0", "d1")
    assert fabric.deliver(msg("d1")).outcome is DeliveryOutcome.NO_ROUTE
    with pytest.raises(UnknownDeviceError):
        fabric.deliver(msg("ghost"))
    with pytest.raises(UnknownLinkError):
        fabric.cut_link("d0", "d2")


def test_duplicate_and_self_links_rejected():
    fabric, _ = build_fabric(2, [(0, 1)])
    with pytest.raises(ValueError):
        fabric.add_link("d0", "d1")
    with pytest.raises(ValueError):
        fabric.add_link("d0", "d0")
    with pytest.raises(ValueError):
        fabric.add_device(StubDevice("d0"))


def test_every_attempt_leaves_one_flow_record():
    fabric, devices = build_fabric(3, [(0, 1)])
    fabric.deliver(NetMessage("d0", "d1", ProtocolFunction.PUT_WRITE, 501, 0, 0, b"\x01"))
    fabric.deliver(NetMessage("d0", "d2", ProtocolFunction.GET_READ, 500))
    devices[1].alive = False
    fabric.deliver(NetMessage("d0", "d1", ProtocolFunction.EW_READ, 500))
    outcomes = [f.outcome for f in fabric.flows]
    assert outcomes == ["delivered", "no_route", "dst_down"]
    assert [f.function for f in fabric.flows] == ["put_write", "get_read", "ew_read"]


def test_flow_csv_roundtrip(tmp_path):
    fabric, _ = build_fabric(2, [(0, 1)])
    fabric.deliver(NetMessage("d0", "d1", ProtocolFunction.CONFIG_READ, 0))
    path = tmp_path / "flows.csv"
    fabric.write_flows(path)
    first_line = path.read_text().splitlines()[0]
    assert first_line == ",".join(FLOW_CSV_HEADER)
    back = read_flows_csv(path)
    assert [(f.t_ms, f.src, f.dst, f.function, f.db, f.outcome) for f in back] == \
        [(f.t_ms, f.src, f.dst, f.function, f.db, f.outcome) for f in fabric.flows]


def test_flow_recording_disabled():
    fabric, _ = build_fabric(2, [(0, 1)], record_flows=False)
    fabric.deliver(NetMessage("d0", "d1", ProtocolFunction.GET_READ, 100))
    assert fabric.flows is None
    with pytest.raises(ValueError):
        fabric.write_flows("/tmp/never.csv")


def test_latency_defers_delivery_and_rechecks_route():
    kernel = SimKernel()
    fabric = NetFabric(kernel)
    a, b = StubDevice("a"), StubDevice("b")
    fabric.add_device(a)
    fabric.add_device(b)
    fabric.add_link("a", "b", latency_ms=50)
    results = []
    ret = fabric.deliver(NetMessage("a", "b", ProtocolFunction.GET_READ, 100),
                         on_result=results.append)
    assert ret is None
    assert not b.seen
    kernel.run_until(RunLimits(horizon_ms=49))
    assert not b.seen
    kernel.run_until(RunLimits(horizon_ms=50))
    assert len(b.seen) == 1
    assert results[0].outcome is DeliveryOutcome.DELIVERED

    # a cut made while the next message is in flight turns it into no_route
    results.clear()
    fabric.deliver(NetMessage("a", "b", ProtocolFunction.GET_READ, 100),
                   on_result=results.append)
    fabric.cut_link("a", "b")
    kernel.run_until(RunLimits(horizon_ms=200))
    assert results[0].outcome is DeliveryOutcome.NO_ROUTE
    assert len(b.seen) == 1
