"""Target planning and pacing tests.  Real-socket probing is covered in
the simnet tests; here the clock is simulated so schedules are exact."""

import threading

import pytest

from aliaskit.probe import (
    EmptyInput,
    Pacer,
    ProbeConfig,
    TooManyTargets,
    plan_targets,
    run_scan,
)
from aliaskit.records import ProbeStatus, ProbeTarget


# ---------------------------------------------------------------------------
# planning


def test_plan_is_permutation_of_cross_product():
    addrs = ["192.0.2.1", "192.0.2.2", "192.0.2.3", "192.0.2.4"]
    targets = plan_targets(addrs, ["ssh", "bgp"], seed=7)
    assert len(targets) == 8
    assert {(t.address, t.protocol, t.port) for t in targets} == {
        (a, p, {"ssh": 22, "bgp": 179}[p]) for a in addrs for p in ("ssh", "bgp")
    }


def test_plan_deterministic_under_seed():
    addrs = ["192.0.2.%d" % i for i in range(1, 30)]
    assert plan_targets(addrs, ["ssh"], seed=3) == plan_targets(addrs, ["ssh"], seed=3)
    assert plan_targets(addrs, ["ssh"], seed=3) != plan_targets(addrs, ["ssh"], seed=4)


def test_plan_expands_prefixes_fully():
    targets = plan_targets(["192.0.2.0/30"], ["ssh", "bgp"], seed=1)
    assert len(targets) == 8
    assert {t.address for t in targets} == {
        "192.0.2.0", "192.0.2.1", "192.0.2.2", "192.0.2.3"
    }


def test_plan_deduplicates_and_validates():
    # /31 covers .0 and .1; the bare .1 repeats and must not double up
    targets = plan_targets(["192.0.2.1", "192.0.2.0/31", "192.0.2.1"], ["ssh"], seed=1)
    assert len(targets) == 2
    with pytest.raises(EmptyInput):
        plan_targets([], ["ssh"], seed=1)
    with pytest.raises(EmptyInput):
        plan_targets(["192.0.2.1"], [], seed=1)
    with pytest.raises(ValueError):
        plan_targets(["not-an-address"], ["ssh"], seed=1)


def test_plan_refuses_oversize_expansion():
    with pytest.raises(TooManyTargets):
        plan_targets(["10.0.0.0/8"], ["ssh"], seed=1)


# ---------------------------------------------------------------------------
# pacing against a simulated clock


class FakeTime:
    def __init__(self):
        self.now = 0.0

    def clock(self):
        return self.now

    def sleep(self, dt):
        assert dt >= 0
        self.now += dt


def make_pacer(rate, interval=1.0):
    ft = FakeTime()
    return Pacer(rate=rate, per_target_interval=interval, clock=ft.clock, sleeper=ft.sleep), ft


def test_token_bucket_schedule():
    pacer, _ = make_pacer(rate=50, interval=0.0)
    times = [pacer.acquire("10.0.0.%d" % i) for i in range(100)]
    assert times == sorted(times)
    assert times[-1] >= 2.0
    spacings = [b - a for a, b in zip(times, times[1:])]
    assert min(spacings) >= 1 / 50 - 1e-9


def test_per_address_interval_across_protocols():
    pacer, _ = make_pacer(rate=1000, interval=1.0)
    first = pacer.acquire("192.0.2.9")
    other = pacer.acquire("192.0.2.10")
    second = pacer.acquire("192.0.2.9")
    assert other - first < 1.0
    assert second - first >= 1.0 - 1e-9


def test_rate_zero_rejected():
    with pytest.raises(ValueError):
        Pacer(rate=0)


def test_pacer_is_thread_safe():
    pacer = Pacer(rate=5000, per_target_interval=0.0)
    errors = []

    def hammer(base):
        try:
            for i in range(50):
                pacer.acquire("10.%d.0.%d" % (base, i))
        except Exception as exc:  # pragma: no cover
            errors.append(exc)

    threads = [threading.Thread(target=hammer, args=(b,)) for b in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    times = sorted(at for at, _ in pacer.sends)
    assert len(times) == 200
    assert all(b - a >= 1 / 5000 - 1e-9 for a, b in zip(times, times[1:]))


# ---------------------------------------------------------------------------
# run_scan mechanics (probing stubbed through the resolver hook)


def _free_port():
    import socket

    s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


_DEAD_PORT = _free_port()


def dead_endpoint(_target):
    return ("127.0.0.1", _DEAD_PORT)


def test_run_scan_conservation_and_summary():
    targets = [ProbeTarget("10.1.0.%d" % i, 22, "ssh") for i in range(20)]
    records, summary = run_scan(
        targets,
        rate=10000,
        per_target_interval=0.0,
        concurrency=8,
        config=ProbeConfig(resolver=dead_endpoint, connect_timeout=0.5),
    )
    assert len(records) == 20
    assert summary.total == 20
    assert summary.by_status == {"no_connect": 20}
    assert {r.target.address for r in records} == {t.address for t in targets}


def test_run_scan_isolates_task_errors():
    def exploding_resolver(target):
        if target.address.endswith(".13"):
            raise RuntimeError("boom")
        return ("127.0.0.1", 9)

    targets = [ProbeTarget("10.2.0.%d" % i, 22, "ssh") for i in range(10, 16)]
    records, summary = run_scan(
        targets,
        rate=10000,
        per_target_interval=0.0,
        config=ProbeConfig(resolver=exploding_resolver, connect_timeout=0.5),
    )
    assert summary.total == 6
    failed = [r for r in records if r.error and r.error.startswith("task-error:")]
    assert len(failed) == 1
    assert failed[0].target.address == "10.2.0.13"
    assert failed[0].status is ProbeStatus.NO_CONNECT


def test_run_scan_retries_no_connect():
    targets = [ProbeTarget("10.3.0.1", 22, "ssh")]
    pacer = Pacer(rate=10000, per_target_interval=0.01)
    records, summary = run_scan(
        targets,
        rate=10000,
        per_target_interval=0.01,
        config=ProbeConfig(resolver=dead_endpoint, connect_timeout=0.5),
        retries=1,
        pacer=pacer,
    )
    assert summary.total == 1
    assert summary.retried == 1
    sends = [at for at, addr in pacer.sends if addr == "10.3.0.1"]
    assert len(sends) == 2
    assert sends[1] - sends[0] >= 0.01 - 1e-9


def test_run_scan_empty_input():
    records, summary = run_scan([], rate=10)
    assert records == []
    assert summary.total == 0
