import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otrange.kernel import RunLimits, ScheduleError, SimKernel, StopReason


def expected_order(times):
    """Independent oracle: stable sort by (fire time, scheduling order)."""
    return [i for i, _ in sorted(enumerate(times), key=lambda p: (p[1], p[0]))]


@given(st.lists(st.integers(min_value=0, max_value=500), min_size=1, max_size=60))
@settings(max_examples=200, deadline=None)
def test_execution_order_matches_stable_sort(times):
    kernel = SimKernel()
    fired = []
    for i, t in enumerate(times):
        kernel.schedule(t, lambda i=i: fired.append(i))
    kernel.run_until(RunLimits(horizon_ms=501))
    assert fired == expected_order(times)


@given(st.lists(st.integers(min_value=0, max_value=500), min_size=2, max_size=40),
       st.data())
@settings(max_examples=100, deadline=None)
def test_cancelled_events_never_fire(times, data):
    kernel = SimKernel()
    fired = []
    handles = [kernel.schedule(t, lambda i=i: fired.append(i)) for i, t in enumerate(times)]
    to_cancel = data.draw(st.sets(st.integers(min_value=0, max_value=len(times) - 1)))
    for i in to_cancel:
        kernel.cancel(handles[i])
    kernel.run_until(RunLimits(horizon_ms=501))
    assert fired == [i for i in expected_order(times) if i not in to_cancel]


def test_schedule_into_past_raises():
    kernel = SimKernel()
    kernel.schedule(100, lambda: None)
    kernel.run_until(RunLimits(horizon_ms=200))
    assert kernel.now() == 200
    with pytest.raises(ScheduleError):
        kernel.schedule(150, lambda: None)
    kernel.schedule(200, lambda: None)  # present-time scheduling stays legal


def test_horizon_stop_and_clock_advance():
    kernel = SimKernel()
    fired = []
    kernel.schedule(100, lambda: fired.append(100))
    kernel.schedule(900, lambda: fired.append(900))
    reason = kernel.run_until(RunLimits(horizon_ms=500))
    assert reason is StopReason.HORIZON_REACHED
    assert fired == [100]
    assert kernel.now() == 500
    reason = kernel.run_until(RunLimits(horizon_ms=2000))
    assert reason is StopReason.QUEUE_EMPTY
    assert fired == [100, 900]
    assert kernel.now() == 2000


def test_empty_queue_advances_to_horizon():
    kernel = SimKernel()
    assert kernel.run_until(RunLimits(horizon_ms=750)) is StopReason.QUEUE_EMPTY
    assert kernel.now() == 750


def test_event_budget_stop():
    kernel = SimKernel()
    fired = []
    for t in range(10):
        kernel.schedule(t, lambda t=t: fired.append(t))
    reason = kernel.run_until(RunLimits(horizon_ms=100, max_events=4))
    assert reason is StopReason.EVENT_BUDGET
    assert fired == [0, 1, 2, 3]


def test_event_at_horizon_fires():
    kernel = SimKernel()
    fired = []
    kernel.schedule(500, lambda: fired.append(500))
    kernel.run_until(RunLimits(horizon_ms=500))
    assert fired == [500]


def test_sliced_run_equals_single_run():
    def build():
        kernel = SimKernel()
        fired = []
        for i, t in enumerate([5, 3, 3, 8, 0, 8, 2]):
            kernel.schedule(t * 10, lambda i=i: fired.append(i))
        return kernel, fired

    kernel_a, fired_a = build()
    kernel_a.run_until(RunLimits(horizon_ms=100))
    kernel_b, fired_b = build()
    for horizon in (10, 20, 30, 100):
        kernel_b.run_until(RunLimits(horizon_ms=horizon))
    assert fired_a == fired_b
    assert kernel_a.now() == kernel_b.now() == 100


def test_injected_callables_run_between_events():
    kernel = SimKernel()
    order = []
    kernel.schedule(10, lambda: order.append("event"))
    kernel.inject(lambda: order.append("injected"))
    kernel.run_until(RunLimits(horizon_ms=20))
    assert order == ["injected", "event"]


def test_pause_request_stops_at_boundary():
    kernel = SimKernel()
    fired = []
    kernel.schedule(10, lambda: fired.append(1))
    kernel.schedule(20, lambda: fired.append(2))
    kernel.inject(kernel.pause)
    assert kernel.run_until(RunLimits(horizon_ms=100)) is StopReason.EXTERNALLY_PAUSED
    assert fired == []
    assert kernel.run_until(RunLimits(horizon_ms=100)) is StopReason.QUEUE_EMPTY
    assert fired == [1, 2]


def test_named_rng_streams_are_stable_and_independent():
    draws_a = [SimKernel(seed=42).rng("alpha").random() for _ in range(1)]
    draws_b = [SimKernel(seed=42).rng("alpha").random() for _ in range(1)]
    assert draws_a == draws_b
    kernel = SimKernel(seed=42)
    alpha = [kernel.rng("alpha").random() for _ in range(5)]
    beta = [kernel.rng("beta").random() for _ in range(5)]
    assert alpha != beta
    other_seed = [SimKernel(seed=43).rng("alpha").random() for _ in range(1)]
    assert other_seed != draws_a[:1]


def test_rng_consumer_isolation():
    # drawing from one stream must not perturb another
    kernel_a = SimKernel(seed=7)
    kernel_a.rng("noise").random()
    value_a = kernel_a.rng("signal").random()
    kernel_b = SimKernel(seed=7)
    value_b = kernel_b.rng("signal").random()
    assert value_a == value_b


def test_run_limits_validation():
    with pytest.raises(ValueError):
        RunLimits(horizon_ms=0)
    with pytest.raises(ValueError):
        RunLimits(horizon_ms=10, max_events=0)
