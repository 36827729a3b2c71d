"""Fleet sizing analytics and the event-driven queue simulator."""
from __future__ import annotations

import pytest

from desktamp.fleet import (
    FleetConfig,
    min_fleet,
    simulate_events,
    throughput_bound,
)


def test_min_fleet_formula():
    # one operator keeps n robots busy once n-1 of them can plan while one
    # is being helped: n* = 1 + (R_H / R_T) * duty
    assert min_fleet(2.0, 1.0, 100.0) == 3
    assert min_fleet(1.0, 1.0, 100.0) == 2
    assert min_fleet(4.0, 1.0, 100.0) == 5
    assert min_fleet(4.0, 1.0, 50.0) == 3
    assert min_fleet(4.0, 2.0, 100.0) == 3


def test_throughput_bound_saturates_at_human_rate():
    assert throughput_bound(1, 60.0, 30.0) * 60 == pytest.approx(2 / 3)
    assert throughput_bound(2, 60.0, 30.0) * 60 == pytest.approx(4 / 3)
    assert throughput_bound(3, 60.0, 30.0) * 60 == pytest.approx(2.0)
    assert throughput_bound(6, 60.0, 30.0) * 60 == pytest.approx(2.0)


def _sweep(n):
    cfg = FleetConfig(
        n_robot=n, d_tamp=60.0, d_human=30.0, horizon=3600.0, warmup=300.0
    )
    return simulate_events(cfg)


def test_event_sim_sweep_regression():
    completed = [_sweep(n).completed for n in range(1, 7)]
    assert completed == [39, 78, 117, 117, 117, 117]


def test_event_sim_utilization_threshold():
    # the operator saturates exactly at the predicted fleet size
    n_star = min_fleet(2.0, 1.0, 100.0)
    for n in range(1, 7):
        util = _sweep(n).utilization
        if n >= n_star:
            assert util >= 0.98
        else:
            assert util < 0.98


def test_event_sim_matches_analytic_rate():
    for n in range(1, 7):
        got = _sweep(n).throughput_per_min
        expect = min(2.0, n * 60.0 / 90.0)
        assert got == pytest.approx(expect, rel=0.05)


def test_queue_grows_past_saturation():
    stats = {n: _sweep(n) for n in (3, 4, 5, 6)}
    assert stats[3].mean_queue < stats[4].mean_queue < stats[5].mean_queue
    # extra robots past saturation add queue, not throughput
    assert stats[3].completed == stats[6].completed


def test_duty_cycle_counts():
    # operator available 50% of the time in 10-minute blocks
    got = []
    for n in range(2, 6):
        cfg = FleetConfig(
            n_robot=n, d_tamp=60.0, d_human=15.0, horizon=7200.0,
            warmup=0.0, duty_on=600.0, duty_off=600.0,
        )
        got.append(simulate_events(cfg).completed)
    assert got == [95, 142, 189, 236]


def test_duty_cycle_halves_the_required_fleet():
    assert min_fleet(4.0, 1.0, 100.0) == 5
    assert min_fleet(4.0, 1.0, 50.0) == 3


def test_timeline_is_ordered_and_bounded():
    st = _sweep(4)
    times = [t for t, _ in st.queue_timeline]
    assert times == sorted(times)
    assert all(0 <= q <= 4 for _, q in st.queue_timeline)
    assert st.mean_queue >= 0.0


def test_full_loop_smoke(coffee, params):
    from desktamp.fleet import run_fleet

    task, world, db = coffee
    stats, episodes = run_fleet(
        world, task, db, params, n_robot=1, horizon_s=60.0, seed0=0
    )
    assert stats.completed >= 1
    assert stats.failed == 0
    assert stats.completed == sum(
        1 for e in episodes if e.outcome is not None and e.outcome.success
    )
    assert stats.throughput_per_min > 0.0
    assert 0.0 < stats.utilization <= 1.0
    assert stats.mean_tamp_ticks > stats.mean_human_ticks > 0.0
