import math

import numpy as np
import pytest

from wpt_intercept.switching import (EdgeSensor, PhaseLockedDriver, StaticSwitch, SwitchPattern,
                                     current_zero_estimate, current_zero_offset)


def test_pattern_closed_centered_on_peaks():
    f = 100e3
    pat = SwitchPattern()
    pat.configure(f, 2e-6)
    assert not pat.closed(1e-6)  # no anchor yet
    pat.anchor = 0.0
    # peaks at T/4 and 3T/4; closed for 1 us either side
    assert pat.closed(2.5e-6) and pat.closed(7.5e-6)
    assert pat.closed(1.6e-6) and not pat.closed(1.4e-6)
    assert not pat.closed(0.0) and not pat.closed(5e-6)
    pat.clear()
    assert pat.anchor is None


def test_pattern_limits_t_on():
    pat = SwitchPattern()
    pat.configure(100e3, 1.0)
    assert pat.t_on == pytest.approx(5e-6)
    pat.configure(100e3, -1.0)
    pat.anchor = 0.0
    assert pat.t_on == 0.0 and not pat.closed(2.5e-6)


def _feed(sensor, freq, t_end, dt=1e-8, phase=0.0):
    out = []
    for k in range(int(round(t_end / dt))):
        t = k * dt
        out += [(t, tz, v) for tz, v in sensor.update(t, math.sin(2 * math.pi * freq * t + phase))]
    return out


def test_edge_sensor_delay_and_valley():
    f = 65e3
    sensor = EdgeSensor(t_filter=0.75e-6)
    edges = _feed(sensor, f, 5 / f, phase=0.1)
    assert len(edges) >= 3
    for t_seen, tz, valley in edges[1:]:
        # visible t_filter after the comparator confirms (a few samples past zero)
        assert 0.75e-6 <= t_seen - tz < 0.75e-6 + 0.1e-6
        # the minimum sits a quarter period before the upward zero
        assert tz - valley == pytest.approx(0.25 / f, abs=2e-8)
    assert sensor.last_down is not None


def test_current_zero_estimate():
    f = 100e3
    assert current_zero_offset("load-voltage", f) == 0.0
    assert current_zero_offset("capacitor-voltage", f) == pytest.approx(2.5e-6)
    assert current_zero_estimate("load-voltage", 1e-5, None, f) == 1e-5
    assert current_zero_estimate("capacitor-voltage", 1e-5, 0.8e-5, f) == 0.8e-5
    assert current_zero_estimate("capacitor-voltage", 1e-5, None, f) == pytest.approx(0.75e-5)
    # a valley outside the preceding half period is ignored
    assert current_zero_estimate("capacitor-voltage", 1e-5, 0.1e-5, f) == pytest.approx(0.75e-5)


def test_phase_locked_driver_anchors_on_edges():
    drv = PhaseLockedDriver(100e3, 2e-6)
    drv.reset(1e-8, None)
    closed = [drv.step(k * 1e-8, math.sin(2 * math.pi * 100e3 * k * 1e-8), None) for k in range(3000)]
    assert not any(closed[:1000])  # no edge before the first upward crossing
    duty = np.mean(closed[1000:])
    assert duty == pytest.approx(2 * 2e-6 * 100e3, abs=0.01)
    drv.set_t_on(3e-6)
    assert drv.t_on == 3e-6
    with pytest.raises(ValueError):
        PhaseLockedDriver(100e3, 1e-6, sense_mode="magic")


def test_static_switch():
    assert StaticSwitch(True).step(0.0, 1.0, None)
    assert not StaticSwitch(False).step(0.0, 1.0, None)
    assert StaticSwitch(True).mode_tag == "CLOSED"
