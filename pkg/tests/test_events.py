import pytest

from mergesim.engine import NS_PER_S
from mergesim.events import SensorEvent, SensorType, sensor_state
from mergesim.world import GeoPoint, GeoRectangle

RECT = GeoRectangle(GeoPoint(41.28105, 1.97384), GeoPoint(41.27961, 1.97701))
INSIDE = GeoPoint(41.2804, 1.9758)
SPEED = SensorEvent(SensorType.SPEED, RECT, 1, 0, 1220)


def test_inside_window():
    assert sensor_state([SPEED], INSIDE, 100 * NS_PER_S) == (SensorType.SPEED, 1)


def test_window_bounds_are_inclusive():
    assert sensor_state([SPEED], INSIDE, 1220 * NS_PER_S)[1] == 1
    assert sensor_state([SPEED], INSIDE, 1220 * NS_PER_S + 1) == (None, 0)
    assert sensor_state([SPEED], INSIDE, 1221 * NS_PER_S) == (None, 0)


def test_outside_rectangle():
    assert sensor_state([SPEED], GeoPoint(41.29, 1.97), 100 * NS_PER_S) == (None, 0)


def test_first_declared_event_wins():
    direction = SensorEvent("Direction", RECT, 3, 0, 10)
    assert sensor_state([direction, SPEED], INSIDE, 5 * NS_PER_S) == (SensorType.DIRECTION, 3)
    assert sensor_state([direction, SPEED], INSIDE, 11 * NS_PER_S) == (SensorType.SPEED, 1)


def test_event_validation():
    with pytest.raises(ValueError):
        SensorEvent("Speed", RECT, 0, 0, 1)
    with pytest.raises(ValueError):
        SensorEvent("Speed", RECT, 1, 5, 1)
    with pytest.raises(ValueError):
        SensorEvent("Smell", RECT, 1, 0, 1)
