import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mergesim.engine import NS_PER_S, veh
from mergesim.mobility import (
    CommandKind,
    FlowSpec,
    SpeedCommand,
    VehiclePrototype,
    VehicleState,
    advance_route,
    apply_command,
    braking_distance,
    safe_speed,
    spawn_schedule,
    step,
)
from mergesim.world import RouteLabel

PKW = VehiclePrototype()
DET = VehiclePrototype(sigma=0.0)


def car(n=0, s=0.0, speed=0.0, proto=DET, **kw):
    return VehicleState(veh(n), "1", RouteLabel.A, s, speed, proto, **kw)


def test_prototype_defaults():
    assert (PKW.accel, PKW.decel, PKW.length, PKW.max_speed, PKW.min_gap, PKW.sigma, PKW.tau) == (
        2.6, 4.5, 5.0, 20.0, 2.5, 0.5, 1.0,
    )


def test_prototype_validation():
    with pytest.raises(ValueError):
        VehiclePrototype(decel=0.0)
    with pytest.raises(ValueError):
        VehiclePrototype(sigma=1.5)


def test_free_acceleration_caps_at_max_speed():
    assert step(car(speed=10.0), None, 1.0).speed == pytest.approx(12.6)
    assert step(car(speed=19.0), None, 1.0).speed == 20.0


def test_safe_speed_hand_value():
    # leader at 5 m/s, gap 20 m: -4.5 + sqrt(20.25 + 25 + 157.5)
    assert safe_speed(20.0, 5.0, DET) == pytest.approx(9.7390308658981423, rel=1e-12)


def test_stopped_leader_at_min_gap_halts_follower():
    leader = car(1, s=100.0, speed=0.0)
    follower = car(0, s=100.0 - DET.length - DET.min_gap, speed=8.0)
    assert step(follower, leader, 1.0).speed == 0.0


def test_noise_only_slows():
    v = car(speed=10.0, proto=PKW)
    rng = random.Random(7)
    noisy = step(v, None, 1.0, rng)
    assert 12.6 - PKW.sigma * PKW.accel <= noisy.speed <= 12.6


def test_spawn_schedule_examples():
    f = FlowSpec("1", 5.0, 500, 100)
    assert spawn_schedule(f)[:3] == [5_000_000_000, 12_200_000_000, 19_400_000_000]
    slow = spawn_schedule(FlowSpec("2", 5.0, 120, 20))
    assert len(slow) == 20 and slow[-1] == 575 * NS_PER_S
    assert spawn_schedule(f, end_ns=20 * NS_PER_S) == [5_000_000_000, 12_200_000_000, 19_400_000_000]


def test_change_speed_with_interval_ramps_linearly():
    v = car(speed=13.888)
    v = apply_command(v, SpeedCommand(CommandKind.CHANGE_SPEED_WITH_INTERVAL, 6.944, 5_000_000_000), 0)
    assert v.ceiling_at(2_500_000_000) == pytest.approx(10.416)
    assert v.ceiling_at(5_000_000_000) == pytest.approx(6.944)


def test_minimum_ceiling_wins():
    v = car(speed=13.888)
    v = apply_command(v, SpeedCommand(CommandKind.SLOW_DOWN, 2.0, 80_000_000, source="sensor"), 0)
    v = apply_command(v, SpeedCommand(CommandKind.CHANGE_SPEED_WITH_INTERVAL, 6.944, 5_000_000_000, source="x"), 0)
    assert v.ceiling_at(80_000_000) == 2.0
    assert step(v, None, 1.0, now_ns=NS_PER_S).speed == 2.0


def test_ceiling_does_not_override_slower_leader():
    leader = car(1, s=30.0, speed=0.0)
    v = apply_command(car(0, s=20.0, speed=5.0), SpeedCommand(CommandKind.SLOW_DOWN, 10.0, 1), 0)
    assert step(v, leader, 1.0, now_ns=NS_PER_S).speed < 10.0


def test_stop_reaches_zero_within_decel_time():
    dt = 0.1
    v = apply_command(car(speed=13.9), SpeedCommand(CommandKind.STOP), 0)
    t = 0
    while v.speed > 0:
        t += round(dt * NS_PER_S)
        v = step(v, None, dt, now_ns=t)
    assert t / NS_PER_S <= 13.9 / 4.5 + dt


def test_reset_speed_by_source_keeps_other_slots():
    v = car(speed=10.0)
    v = apply_command(v, SpeedCommand(CommandKind.STOP, source="merge"), 0)
    v = apply_command(v, SpeedCommand(CommandKind.SLOW_DOWN, 2.0, 80_000_000, source="sensor"), 0)
    v = apply_command(v, SpeedCommand(CommandKind.RESET_SPEED, source="merge"), 0)
    assert set(v.ceilings) == {"sensor"}
    v = apply_command(v, SpeedCommand(CommandKind.RESET_SPEED), 0)
    assert not v.ceilings


def test_identical_command_is_idempotent():
    cmd = SpeedCommand(CommandKind.SLOW_DOWN, 2.0, 80_000_000, source="sensor")
    once = apply_command(car(speed=10.0), cmd, 0)
    twice = apply_command(once, cmd, 500_000_000)
    assert twice == once


def test_command_validation():
    with pytest.raises(ValueError):
        SpeedCommand(CommandKind.SLOW_DOWN, 2.0, 0)
    with pytest.raises(ValueError):
        SpeedCommand(CommandKind.CHANGE_SPEED_WITH_INTERVAL, -1.0, 5)


@settings(max_examples=100)
@given(
    st.floats(min_value=0.0, max_value=20.0),
    st.sampled_from([0.1, 0.5, 1.0]),
    st.integers(min_value=0, max_value=10**6),
)
def test_stop_stays_within_braking_envelope(v0, dt, seed):
    proto = PKW
    v = apply_command(car(speed=v0, proto=proto), SpeedCommand(CommandKind.STOP), 0)
    rng = random.Random(seed)
    t = 0
    for _ in range(int(10 / dt)):
        t += round(dt * NS_PER_S)
        v = step(v, None, dt, rng, now_ns=t)
    assert v.speed == 0.0
    assert v.s <= braking_distance(v0, proto.decel) + 1e-9


@settings(max_examples=50)
@given(st.floats(min_value=0.0, max_value=20.0), st.integers(min_value=1, max_value=40))
def test_deterministic_free_road_closed_form(v0, k):
    v = car(speed=v0)
    for _ in range(k):
        v = step(v, None, 1.0)
    assert v.speed == pytest.approx(min(20.0, v0 + 2.6 * k), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(min_value=0.0, max_value=20.0), min_size=2, max_size=8),
    st.integers(min_value=0, max_value=10**6),
)
def test_platoon_preserves_order_and_never_overlaps(speeds, seed):
    gap = PKW.length + PKW.min_gap
    cars = [car(i, s=200.0 - i * gap, speed=sp, proto=PKW) for i, sp in enumerate(speeds)]
    cars[0] = apply_command(cars[0], SpeedCommand(CommandKind.STOP), 0)
    rng = random.Random(seed)
    for k in range(1, 30):
        result = advance_route(cars, 1.0, rng, k * NS_PER_S)
        assert not result.collisions
        cars = sorted(result.vehicles, key=lambda c: c.id.index)
        for lead, follow in zip(cars, cars[1:]):
            assert follow.s <= lead.s - lead.prototype.length + 1e-9
