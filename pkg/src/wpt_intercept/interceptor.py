"""Sensorless frequency-tracking switch controller for the intruder receiver.

The controller only sees one receiver-side voltage. It times upward zero
crossings, estimates the transmitter frequency, looks up (or computes) the
matching duty, and drives the capacitor switch in step with the sensed
waveform. Distorted edge timing sends it back to listening.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .design import DutyTimes, FrequencyTable, FrequencyTableEntry, ton_toff
from .errors import ConfigurationError, InsufficientDataError, OutOfBandError
from .simcore import ZeroCrossDetector
from .switching import SENSE_SIGNALS, EdgeSensor, SwitchPattern, current_zero_estimate

SENSE = "SENSE"
ESTIMATE = "ESTIMATE"
ENGAGE = "ENGAGE"
REFINE_THRESHOLD_HZ = 200.0


@dataclass(frozen=True)
class ControllerConfig:
    sense_mode: str = "capacitor-voltage"
    t_filter: float = 0.75e-6
    estimation_window: float = 100e-6
    adopt_radius: float = 1000.0
    phase_tolerance: float = 2.0
    trim_gain: float = 0.1
    distortion_rel_tol: float = 0.3
    # looser timing check while estimating: ringing right after a hop jitters the edges
    estimate_rel_tol: float = 0.5
    distortion_count: int = 3
    regulation_enabled: bool = True
    # adopt a table entry after this many consistent intervals (0 = wait for the full window)
    fast_adopt_intervals: int = 4
    # relative radius for that early guess (the full-window decision uses adopt_radius)
    fast_adopt_radius: float = 0.03
    refine_threshold: float = REFINE_THRESHOLD_HZ
    memorize: bool = True
    # live trim against the transmitter-phase tap; only for lab calibration runs
    calibration_mode: bool = False
    regulation_interval: float = 100e-6
    # trim only once consecutive interval means agree this closely (deg)
    regulation_settle_deg: float = 0.5
    sense_noise: float = 0.0
    rel_hysteresis: float = 0.02

    def __post_init__(self):
        if self.sense_mode not in ("capacitor-voltage", "load-voltage"):
            raise ConfigurationError(f"unknown sense_mode {self.sense_mode!r}")
        for name in ("estimation_window", "adopt_radius", "phase_tolerance", "trim_gain",
                     "distortion_rel_tol", "estimate_rel_tol", "regulation_interval",
                     "regulation_settle_deg"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be > 0")
        if self.t_filter < 0 or self.sense_noise < 0 or self.refine_threshold < 0:
            raise ConfigurationError("t_filter, sense_noise and refine_threshold must be >= 0")
        if int(self.distortion_count) != self.distortion_count or self.distortion_count < 1:
            raise ConfigurationError("distortion_count must be a positive integer")
        if self.fast_adopt_intervals < 0 or self.fast_adopt_radius < 0:
            raise ConfigurationError("fast_adopt_intervals and fast_adopt_radius must be >= 0")

    def check_band(self, f_low):
        if self.estimation_window < 3.0 / f_low:
            raise ConfigurationError(
                f"estimation_window {self.estimation_window:g} s is shorter than 3 periods "
                f"of the lowest band frequency {f_low:g} Hz"
            )


@dataclass
class ControllerState:
    mode: str = SENSE
    edge_buffer: deque = field(default_factory=deque)
    freq_estimate: float = 0.0
    active_entry: FrequencyTableEntry | None = None
    phase_error: float = 0.0
    distortion_flags: int = 0
    # consecutive in-tolerance intervals since the last flag
    clean_streak: int = 0


# --------------------------------------------------------------------------
# building blocks


def filtered_comparator(samples, config, dt=None):
    """Upward/downward edges of a sampled signal, delayed by ``config.t_filter``.

    ``samples`` is an iterable of ``(t, x)``. Every confirmed crossing is
    reported; suppressing spurious ones is the distortion detector's job.
    """
    from .simcore import EdgeEvent
    det = ZeroCrossDetector(hysteresis=0.0)
    out = []
    for t, x in samples:
        ev = det.update(t, x)
        if ev is not None:
            out.append(EdgeEvent(ev.t + config.t_filter, ev.kind, ev.source))
    return out


def estimate_frequency(edge_buffer, window=None):
    """``(n - 1) / (t_last - t_first)`` over upward edges within ``window`` of the last one."""
    edges = list(edge_buffer)
    if window is not None and edges:
        edges = [t for t in edges if t >= edges[-1] - window]
    if len(edges) < 2 or edges[-1] <= edges[0]:
        raise InsufficientDataError("need at least two upward edges")
    return (len(edges) - 1) / (edges[-1] - edges[0])


def nearest_known(freq_estimate, table, adopt_radius):
    """Closest table entry within ``adopt_radius``; ties go to the lower frequency."""
    best = None
    best_d = math.inf
    for e in table:  # ascending, so a strict comparison keeps the lower on ties
        d = abs(e.freq - freq_estimate)
        if d < best_d:
            best, best_d = e, d
    if best is None or best_d > adopt_radius:
        return None
    return best


def regulate_phase(phase_diff_deg, duty, config):
    """Trim ``t_on`` toward a 90 deg lead of the receiver current over the transmitter current."""
    err = phase_diff_deg - 90.0
    if abs(err) <= config.phase_tolerance:
        return duty
    t_on_max = max(0.0, 0.5 * duty.period - 2.0 * config.t_filter)
    t_on = duty.t_on * (1.0 + config.trim_gain * err / 90.0)
    if duty.t_on == 0.0 and err > 0:
        t_on = config.trim_gain * err / 90.0 * t_on_max
    t_on = min(max(t_on, 0.0), t_on_max)
    return DutyTimes(t_on, 0.5 * duty.period - t_on, duty.period)


def detect_distortion(edge_buffer, freq_estimate, config):
    """True when any inter-edge interval strays from the expected period."""
    edges = list(edge_buffer)
    expected = 1.0 / freq_estimate
    for a, b in zip(edges[:-1], edges[1:]):
        if abs((b - a) - expected) > config.distortion_rel_tol * expected:
            return True
    return False


# --------------------------------------------------------------------------
# controller


class Interceptor:
    """SENSE -> ESTIMATE -> ENGAGE state machine driving the intruder's switch.

    ``table`` is the intruder's frequency memory; entries learned from the
    duty law are added to it when ``config.memorize`` is set.
    """

    def __init__(self, params, table=None, config=None):
        self.params = params
        self.config = config or ControllerConfig()
        self.table = table if table is not None else FrequencyTable()
        f_low, self.f_high = params.band
        self.f_low = f_low
        self.config.check_band(f_low)
        self.sense = SENSE_SIGNALS[self.config.sense_mode]
        self.uses_oracle = self.config.calibration_mode
        self.state = ControllerState()
        self.sensor = EdgeSensor(self.config.t_filter, self.config.rel_hysteresis)
        self.pattern = SwitchPattern()
        self.events = []
        self._rng = None
        self._reset_runtime()

    def _reset_runtime(self):
        self._last_accepted = None
        self._deadline = None
        self._estimate_start = None
        self._lockout_period = None
        self._last_edge = None
        self._it_detector = ZeroCrossDetector(rel_hysteresis=self.config.rel_hysteresis)
        self._it_zero = None
        self._phase_samples = []
        self._next_regulation = None
        self._last_phase = None
        self._closed = False
        self._valley = None
        self._drift_since = None
        self._recent = deque(maxlen=16)
        self._flag_run_start = None

    # exported per trace sample
    @property
    def mode_tag(self):
        return self.state.mode

    @property
    def f_estimate(self):
        return self.state.freq_estimate

    @property
    def t_on(self):
        return self.pattern.t_on if self.state.mode == ENGAGE else 0.0

    def reset(self, dt, rng):
        self._rng = rng
        self.state = ControllerState()
        self.sensor.reset()
        self.pattern.clear()
        self.events = []
        self._reset_runtime()

    # ---- main entry, once per simulation step
    def step(self, t, sensed, i_t=None):
        cfg = self.config
        if cfg.sense_noise and self._rng is not None:
            sensed += cfg.sense_noise * float(self._rng.standard_normal())
        if self.uses_oracle and i_t is not None:
            ev = self._it_detector.update(t, i_t)
            if ev is not None and ev.kind == "up":
                self._it_zero = ev.t
        for tz, valley in self.sensor.update(t, sensed, not self._closed):
            self._valley = valley
            self._on_edge(t, tz)
        st = self.state
        if st.mode == ENGAGE:
            while self._deadline is not None and t > self._deadline:
                self._flag(t, "missing edge")
                if st.mode != ENGAGE:
                    break
                self._deadline += 1.0 / st.freq_estimate
        elif st.mode == ESTIMATE and self._last_edge is not None:
            if t - self._last_edge > 2.0 / self.f_low:
                self._restart(t, "edges lost")
        self._closed = st.mode == ENGAGE and self.pattern.closed(t)
        return self._closed

    # ---- edge handling
    def _on_edge(self, t, tz):
        st = self.state
        prev = self._last_edge
        self._last_edge = tz
        if st.mode == SENSE:
            lock = self._lockout_period
            if lock is not None and prev is not None:
                if abs((tz - prev) - lock) <= self.config.distortion_rel_tol * lock:
                    return
                self._lockout_period = None
            st.mode = ESTIMATE
            st.edge_buffer = deque([tz])
            self._estimate_start = tz
            return
        if st.mode == ESTIMATE:
            self._estimate_edge(t, tz)
            return
        self._engaged_edge(t, tz, prev)

    def _estimate_edge(self, t, tz):
        st = self.state
        cfg = self.config
        buf = st.edge_buffer
        if len(buf) >= 2:
            mean_iv = (buf[-1] - buf[0]) / (len(buf) - 1)
            if abs((tz - buf[-1]) - mean_iv) > cfg.estimate_rel_tol * mean_iv:
                # inconsistent timing (e.g. a hop mid-estimate): start over from here
                st.edge_buffer = deque([tz])
                self._estimate_start = tz
                return
        buf.append(tz)
        n_iv = len(buf) - 1
        f = estimate_frequency(buf)
        st.freq_estimate = f
        entry = None
        k = cfg.fast_adopt_intervals
        if k and n_iv >= k:
            # the most recent k intervals alone may already identify a known frequency
            f_recent = k / (buf[-1] - buf[-1 - k])
            radius = max(cfg.adopt_radius, cfg.fast_adopt_radius * f_recent)
            entry = nearest_known(f_recent, self.table, radius)
        if entry is None and tz - self._estimate_start < cfg.estimation_window:
            return
        self._engage(t, tz, f, entry)

    def _lookup(self, f, entry=None):
        """(frequency used, duty) for an estimate, or None when unreachable."""
        cfg = self.config
        if entry is None:
            entry = nearest_known(f, self.table, cfg.adopt_radius)
        p = self.params
        if entry is not None:
            entry.hits += 1
            f_use = entry.freq
            duty = entry.duty
            if not cfg.regulation_enabled:
                duty = ton_toff(f_use, p.l_r, p.c_r1, p.c_r2)
        else:
            try:
                duty = ton_toff(f, p.l_r, p.c_r1, p.c_r2)
            except OutOfBandError:
                return None
            f_use = f
            if cfg.memorize:
                self.table.add(FrequencyTableEntry(f, duty, "computed", 1))
        return f_use, duty.clamped(cfg.t_filter), entry

    def _engage(self, t, tz, f, entry=None):
        st = self.state
        found = self._lookup(f, entry)
        if found is None:
            self.events.append(("unreachable", t, f))
            st.mode = SENSE
            st.edge_buffer = deque()
            self._lockout_period = 1.0 / f
            return
        f_use, duty, entry = found
        st.mode = ENGAGE
        st.freq_estimate = f_use
        st.edge_buffer = deque([tz])
        st.active_entry = entry or self.table.find(f_use) or FrequencyTableEntry(f_use, duty, "computed")
        st.distortion_flags = 0
        st.clean_streak = 0
        self._drift_since = None
        self._active_freq = f_use
        self.pattern.configure(f_use, duty.t_on)
        self._anchor(tz)
        self._phase_samples = []
        self._last_phase = None
        self._next_regulation = t + self.config.regulation_interval
        self.events.append(("engage", t, f_use))

    def _anchor(self, tz):
        st = self.state
        self._last_accepted = tz
        self.pattern.anchor = current_zero_estimate(self.config.sense_mode, tz, self._valley,
                                                    st.freq_estimate)
        self._deadline = tz + self.config.t_filter + (1.0 + self.config.distortion_rel_tol) / st.freq_estimate

    def _engaged_edge(self, t, tz, prev=None):
        st = self.state
        cfg = self.config
        self._recent.append(tz)
        expected = 1.0 / st.freq_estimate
        tol = cfg.distortion_rel_tol * expected
        if abs((tz - self._last_accepted) - expected) > tol:
            self._flag(t, "interval")
            return
        if prev is None or prev == self._last_accepted or abs((tz - prev) - expected) <= tol:
            st.clean_streak += 1
        # else: in step with the last accepted edge but not with the stray edge
        # seen since; keep it for timing, yet do not count it as clean
        # flags clear only after a run of clean intervals, so alternating
        # good and bad intervals (a hop to a near multiple) still restart
        if st.clean_streak >= cfg.distortion_count:
            st.distortion_flags = 0
        buf = st.edge_buffer
        buf.append(tz)
        while buf and buf[0] < tz - cfg.estimation_window:
            buf.popleft()
        try:
            st.freq_estimate = estimate_frequency(buf)
        except InsufficientDataError:
            pass
        self._anchor(tz)
        # refine only on a full window of engaged edges
        full = len(buf) > 1 and buf[-1] - buf[0] >= cfg.estimation_window - expected
        if full and abs(st.freq_estimate - self._active_freq) > cfg.refine_threshold:
            self._refine(t, st.freq_estimate)
        elif full:
            self._drift_since = None
        if self.uses_oracle:
            self._regulate(t, tz)

    def _refine(self, t, f):
        """Follow a drifting estimate without opening the switch.

        A known entry near the estimate is adopted directly. With none near,
        the duty is recomputed only while the drift stays within the adoption
        radius. A larger unexplained drift that persists for a whole
        estimation window restarts the search.
        """
        st = self.state
        cfg = self.config
        # the settling receiver skews zero crossings for a while after engaging,
        # so a known entry explains estimates within the relative radius too
        radius = max(cfg.adopt_radius, cfg.fast_adopt_radius * self._active_freq)
        if abs(f - self._active_freq) <= radius and self.table.find(self._active_freq):
            self._drift_since = None
            return
        entry = nearest_known(f, self.table, cfg.adopt_radius)
        if entry is not None:
            if entry.freq == self._active_freq:
                return
            f_use = entry.freq
            duty = entry.duty if cfg.regulation_enabled else ton_toff(f_use, self.params.l_r,
                                                                       self.params.c_r1, self.params.c_r2)
        elif abs(f - st.active_entry.freq) <= cfg.adopt_radius:
            try:
                duty = ton_toff(f, self.params.l_r, self.params.c_r1, self.params.c_r2)
            except OutOfBandError:
                self._restart(t, "refined out of band")
                return
            f_use = f
            entry = FrequencyTableEntry(f, duty, "computed")
        else:
            if self._drift_since is None:
                self._drift_since = t
            elif t - self._drift_since >= cfg.estimation_window:
                self._restart(t, "drift")
            return
        self._drift_since = None
        self._active_freq = f_use
        st.active_entry = entry
        self.pattern.configure(f_use, duty.clamped(cfg.t_filter).t_on)
        self.events.append(("refine", t, f_use))

    def _regulate(self, t, tz):
        """Live trim from the transmitter-phase tap (calibration runs only)."""
        if self._it_zero is None:
            return
        st = self.state
        period = 1.0 / self._active_freq
        z = current_zero_estimate(self.config.sense_mode, tz, self._valley, st.freq_estimate)
        lead = math.remainder(self._it_zero - z, period) / period * 360.0
        self._phase_samples.append(lead)
        if t < self._next_regulation:
            return
        phase = sum(self._phase_samples) / len(self._phase_samples)
        self._phase_samples = []
        self._next_regulation = t + self.config.regulation_interval
        prev, self._last_phase = self._last_phase, phase
        st.phase_error = phase - 90.0
        # the self-timed switch settles far slower than one interval; acting on
        # a moving phase makes the loop oscillate
        if prev is None or abs(phase - prev) > self.config.regulation_settle_deg:
            return
        duty = DutyTimes.from_t_on(self.pattern.t_on, self._active_freq)
        new = regulate_phase(phase, duty, self.config)
        if new.t_on != duty.t_on:
            self._last_phase = None
            self.pattern.configure(self._active_freq, new.t_on)
            if self.config.memorize:
                self.table.add(FrequencyTableEntry(self._active_freq, new, "refined",
                                                   st.active_entry.hits if st.active_entry else 0))
                st.active_entry = self.table.find(self._active_freq)

    def _flag(self, t, why):
        st = self.state
        if st.distortion_flags == 0:
            self._flag_run_start = self._recent[-1] if self._recent else None
        st.distortion_flags += 1
        st.clean_streak = 0
        if st.distortion_flags >= self.config.distortion_count:
            self._restart(t, why)
            return True
        return False

    def _restart(self, t, why):
        st = self.state
        self.events.append(("restart", t, why))
        st.mode = SENSE
        st.active_entry = None
        st.distortion_flags = 0
        st.clean_streak = 0
        self._drift_since = None
        st.edge_buffer = deque()
        self.pattern.clear()
        self._deadline = None
        self._lockout_period = None
        # the edges that raised the flags already belong to the new frequency
        seeds = self._restart_seeds()
        self._recent.clear()
        self._flag_run_start = None
        if seeds:
            st.mode = ESTIMATE
            st.edge_buffer = deque(seeds)
            self._estimate_start = seeds[0]

    def _restart_seeds(self):
        if self._flag_run_start is None:
            return []
        seeds = [e for e in self._recent if e >= self._flag_run_start]
        if len(seeds) >= 3:
            iv = [b - a for a, b in zip(seeds[:-1], seeds[1:])]
            mean_iv = sum(iv) / len(iv)
            if all(abs(x - mean_iv) <= self.config.distortion_rel_tol * mean_iv for x in iv):
                return seeds
        return seeds[-1:]
