"""Switch-timing pattern shared by the interceptor and the fixed-frequency drivers."""
from __future__ import annotations

from collections import deque

from .simcore import ZeroCrossDetector

SENSE_SIGNALS = {"capacitor-voltage": "v_c1", "load-voltage": "v_load", "current": "i_r"}


class SwitchPattern:
    """Closed for ``t_on`` centered on each current peak, open around each zero.

    ``anchor`` is the time of an upward zero crossing of the receiver
    current; the pattern repeats every half period from there.
    """

    def __init__(self):
        self.anchor = None
        self.freq = 0.0
        self.t_on = 0.0
        self._half = 0.0
        self._open_half = 0.0

    def configure(self, freq, t_on):
        self.freq = float(freq)
        self._half = 0.5 / self.freq
        self.t_on = min(max(float(t_on), 0.0), self._half)
        self._open_half = 0.5 * (self._half - self.t_on)

    def clear(self):
        self.anchor = None

    def closed(self, t):
        if self.anchor is None or self.t_on <= 0.0:
            return False
        ph = (t - self.anchor) % self._half
        return self._open_half <= ph < self._half - self._open_half


class EdgeSensor:
    """Comparator on the sensed signal followed by a fixed filter delay.

    Edges become visible ``t_filter`` after the comparator confirms them.
    ``update`` returns the upward edges made visible by this sample as
    ``(t_zero, t_valley)`` pairs: the undelayed zero-crossing time and the
    time of the signal minimum in the negative lobe before it (``None`` when
    no clean minimum was seen). Samples flagged ``valid=False`` (taken while
    the sensed waveform is being reshaped by the switch) are ignored for the
    minimum search.
    """

    def __init__(self, t_filter=0.0, rel_hysteresis=0.02):
        self.t_filter = t_filter
        self.detector = ZeroCrossDetector(rel_hysteresis=rel_hysteresis)
        self._pending = deque()
        self.reset()

    def reset(self):
        self.detector.reset()
        self._pending.clear()
        self.last_down = None
        self._clear_valley()

    def _clear_valley(self):
        self._y = deque(maxlen=3)
        self._best = None

    def update(self, t, x, valid=True):
        if valid:
            self._y.append((t, x))
            if len(self._y) == 3:
                (t0, y0), (t1, y1), (t2, y2) = self._y
                if y1 < 0.0 and y1 <= y0 and y1 < y2 and (self._best is None or y1 < self._best[1]):
                    curv = y0 - 2.0 * y1 + y2
                    shift = 0.5 * (y0 - y2) / curv * (t2 - t1) if curv > 0 else 0.0
                    self._best = (t1 + shift, y1)
        else:
            self._y.clear()
        ev = self.detector.update(t, x)
        if ev is not None:
            valley = None
            if ev.kind == "up":
                valley = self._best[0] if self._best is not None else None
            else:
                self._clear_valley()
            self._pending.append((t + self.t_filter, ev.kind, ev.t, valley))
        out = []
        while self._pending and self._pending[0][0] <= t:
            _, kind, tz, valley = self._pending.popleft()
            if kind == "up":
                out.append((tz, valley))
            else:
                self.last_down = tz
        return out


def current_zero_offset(sense_mode, freq):
    """Nominal delay of the sensed upward zero behind the current's upward zero."""
    return 0.25 / freq if sense_mode == "capacitor-voltage" else 0.0


def current_zero_estimate(sense_mode, t_up, t_valley, freq):
    """Upward current zero implied by a sensed upward edge.

    With the switch open around each current zero, the capacitor voltage
    bottoms out exactly where the current turns positive; that minimum is
    immune to charge left on the switched capacitor. Without a clean
    minimum the nominal quarter-period offset is used.
    """
    if sense_mode != "capacitor-voltage":
        return t_up
    period = 1.0 / freq
    if t_valley is not None and 0.0 < t_up - t_valley < 0.5 * period:
        return t_valley
    return t_up - 0.25 * period


class PhaseLockedDriver:
    """Fixed-frequency, fixed-duty switch driver anchored to sensed zero crossings.

    Used for calibration and duty sweeps, where the frequency is known.
    """

    mode_tag = "ENGAGE"
    uses_oracle = False

    def __init__(self, freq, t_on, sense_mode="load-voltage", t_filter=0.0):
        if sense_mode not in SENSE_SIGNALS:
            raise ValueError(f"sense_mode must be one of {tuple(SENSE_SIGNALS)}")
        self.sense_mode = sense_mode
        self.sense = SENSE_SIGNALS[sense_mode]
        self.f_estimate = float(freq)
        self.sensor = EdgeSensor(t_filter)
        self.pattern = SwitchPattern()
        self.pattern.configure(freq, t_on)
        self.events = []
        self._closed = False

    @property
    def t_on(self):
        return self.pattern.t_on

    def set_t_on(self, t_on):
        self.pattern.configure(self.f_estimate, t_on)

    def reset(self, dt, rng):
        self.sensor.reset()
        self.pattern.clear()

    def step(self, t, sensed, i_t):
        for tz, valley in self.sensor.update(t, sensed, not self._closed):
            self.pattern.anchor = current_zero_estimate(self.sense_mode, tz, valley, self.f_estimate)
        self._closed = self.pattern.closed(t)
        return self._closed


class StaticSwitch:
    """Switch held permanently open or closed (bypass and band-edge checks)."""

    sense = "i_r"
    uses_oracle = False
    f_estimate = 0.0
    t_on = 0.0

    def __init__(self, closed=False):
        self.closed = bool(closed)
        self.mode_tag = "CLOSED" if closed else "OPEN"
        self.events = []

    def reset(self, dt, rng):
        pass

    def step(self, t, sensed, i_t):
        return self.closed
