"""Post-processing of traces: lock time, steady-state power, phase and the
stolen-power ratio."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DomainError, InsufficientDataError, UndefinedPhaseError

NOT_LOCKED = math.inf
LOCK_FRACTION = 0.9
LOCK_WINDOWS = 3
STEADY_FRACTION = 0.2
DEFAULT_ATTACKER = "attacker"
INTERCEPTOR_MODES = ("SENSE", "ESTIMATE", "ENGAGE")


def fundamental_phasor(t, x, freq):
    """Complex amplitude ``a`` with ``x ~ Re(a * exp(j w t))``, fit over whole periods."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if len(t) < 2:
        raise InsufficientDataError("need at least two samples")
    dt = t[1] - t[0]
    n_per = int(round(1.0 / (freq * dt)))
    n_periods = len(t) // n_per if n_per > 0 else 0
    if n_periods < 1:
        raise InsufficientDataError(f"window shorter than one period at {freq:g} Hz")
    n = n_periods * n_per
    t, x = t[-n:], x[-n:]
    w = 2.0 * math.pi * freq
    return 2.0 / n * complex(np.dot(x, np.cos(w * t)), -np.dot(x, np.sin(w * t)))


def phase_between(t, a, b, freq, min_amplitude=1e-12):
    """Phase of ``a`` minus phase of ``b`` at ``freq`` in degrees, wrapped to (-180, 180]."""
    pa = fundamental_phasor(t, a, freq)
    pb = fundamental_phasor(t, b, freq)
    if abs(pa) < min_amplitude or abs(pb) < min_amplitude:
        raise UndefinedPhaseError("signal amplitude is zero")
    d = math.degrees(math.atan2(pa.imag, pa.real) - math.atan2(pb.imag, pb.real))
    d = math.fmod(d, 360.0)
    if d <= -180.0:
        d += 360.0
    elif d > 180.0:
        d -= 360.0
    return d


def _whole_period_slice(trace, t0, t1, freq):
    i0, i1 = trace.index_window(t0, t1)
    n_per = int(round(1.0 / (freq * trace.dt)))
    n = ((i1 - i0) // n_per) * n_per
    if n < n_per:
        raise DomainError(f"window [{t0:g}, {t1:g}] holds less than one period")
    return slice(i1 - n, i1)


def steady_state_power(trace, receiver, t0, t1, freq=None):
    """Mean load power of ``receiver`` over the whole periods ending at ``t1``."""
    if freq is None:
        i0, _ = trace.index_window(t0, t1)
        freq = float(trace["f_t_active"][i0])
    sl = _whole_period_slice(trace, t0, t1, freq)
    return float(np.mean(trace.rx(receiver, "v_load")[sl] * trace.rx(receiver, "i_r")[sl]))


def half_period_peaks(trace, receiver, t0, t1, freq):
    """``(window_end_time, peak |i_r|)`` for consecutive half periods in ``[t0, t1)``."""
    i0, i1 = trace.index_window(t0, t1)
    n_half = max(1, int(round(0.5 / (freq * trace.dt))))
    i = np.abs(trace.rx(receiver, "i_r")[i0:i1])
    m = len(i) // n_half
    if m == 0:
        return np.empty(0), np.empty(0)
    peaks = i[: m * n_half].reshape(m, n_half).max(axis=1)
    ends = trace.t[i0] + (np.arange(m) + 1) * n_half * trace.dt
    return ends, peaks


class LockTime(NamedTuple):
    seconds: float
    cycles: float

    @property
    def locked(self):
        return math.isfinite(self.seconds)


def lock_time(trace, t_hop, threshold=LOCK_FRACTION, receiver=None, t_end=None,
              steady_amplitude=None, require_engaged=False):
    """Time from ``t_hop`` until the current envelope holds ``threshold`` of steady state.

    The envelope is the per-half-period peak of ``|i_r|``. Lock is the end of
    the first of three consecutive windows at or above the threshold.
    ``steady_amplitude`` defaults to the mean envelope over the last 20% of
    the dwell. Returns ``NOT_LOCKED`` when never reached. With
    ``require_engaged`` only windows inside the controller's last unbroken
    ENGAGE run of the dwell count.
    ``receiver`` defaults to the attacker. Returns ``LockTime(seconds, cycles)``.
    """
    if receiver is None:
        receiver = DEFAULT_ATTACKER
    i0, _ = trace.index_window(t_hop, t_hop)
    freq = float(trace["f_t_active"][min(i0, len(trace) - 1)])
    seconds = _lock_seconds(trace, receiver, t_hop, t_end, freq, threshold, steady_amplitude,
                            require_engaged)
    return LockTime(seconds, lock_time_cycles(seconds, freq))


def _lock_seconds(trace, receiver, t_hop, t_end, freq, threshold, steady_amplitude, require_engaged):
    if t_end is None:
        t_end = next((d[1] for d in trace.dwells() if d[0] <= t_hop < d[1]), trace.t[-1])
    ends, peaks = half_period_peaks(trace, receiver, t_hop, t_end, freq)
    if len(peaks) < LOCK_WINDOWS:
        return NOT_LOCKED
    if steady_amplitude is None:
        tail = max(1, int(len(peaks) * STEADY_FRACTION))
        steady_amplitude = float(np.mean(peaks[-tail:]))
    ok = peaks >= threshold * steady_amplitude
    if require_engaged and "controller_mode" in trace:
        # only the final engagement of the dwell counts: a controller that lets
        # go (or never engages) has not locked
        i0, i1 = trace.index_window(t_hop, t_end)
        off = np.flatnonzero(trace["controller_mode"][i0:i1] != "ENGAGE")
        if len(off):
            ok &= ends > trace.t[i0 + off[-1]]
    for k in range(len(ok) - LOCK_WINDOWS + 1):
        if ok[k: k + LOCK_WINDOWS].all():
            return float(ends[k] - t_hop)
    return NOT_LOCKED


def lock_time_cycles(seconds, freq):
    return seconds * freq if math.isfinite(seconds) else NOT_LOCKED


@dataclass
class HopMetrics:
    index: int
    t_start: float
    t_end: float
    freq: float
    lock_time_s: float
    powers: dict = field(default_factory=dict)
    stolen_ratio: float = math.nan
    phase_error_deg: float = math.nan
    switching_loss_w: float = 0.0

    @property
    def locked(self):
        return math.isfinite(self.lock_time_s)

    @property
    def lock_time_cycles(self):
        return lock_time_cycles(self.lock_time_s, self.freq)


@dataclass
class Metrics:
    hops: list
    attacker: str | None = None
    receivers: list = field(default_factory=list)

    def header(self):
        cols = ["hop", "t_start_s", "t_end_s", "freq_hz", "locked", "lock_time_s", "lock_time_cycles"]
        cols += [f"p_{rx}_w" for rx in self.receivers]
        return cols + ["stolen_ratio", "phase_error_deg", "switching_loss_w"]

    def rows(self):
        for h in self.hops:
            row = [h.index, h.t_start, h.t_end, h.freq, int(h.locked), h.lock_time_s, h.lock_time_cycles]
            row += [h.powers.get(rx, math.nan) for rx in self.receivers]
            yield row + [h.stolen_ratio, h.phase_error_deg, h.switching_loss_w]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.header()) + "\n")
            for row in self.rows():
                fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "nan" if v != v else "-inf")
    return str(v)


def analyze(trace, attacker=None, min_dwell_periods=4):
    """Per-dwell metrics computed from the trace alone.

    ``attacker`` defaults to the receiver named ``attacker`` when present.
    The stolen ratio compares the attacker with the best fixed receiver of
    the same run during that dwell. When the trace comes from the tracking
    controller, lock also requires the controller to be engaged, so a hop it
    cannot follow never counts as locked.
    """
    if attacker is None and DEFAULT_ATTACKER in trace.receivers:
        attacker = DEFAULT_ATTACKER
    gate = "controller_mode" in trace and any(m in INTERCEPTOR_MODES
                                               for m in set(trace["controller_mode"].tolist()))
    hops = []
    for idx, (t0, t1, f) in enumerate(trace.dwells()):
        if f <= 0 or (t1 - t0) * f < min_dwell_periods:
            continue
        t_ss = t1 - STEADY_FRACTION * (t1 - t0)
        powers = {}
        for rx in trace.receivers:
            try:
                powers[rx] = steady_state_power(trace, rx, t_ss, t1, f)
            except (DomainError, InsufficientDataError):
                powers[rx] = math.nan
        h = HopMetrics(idx, t0, t1, f, NOT_LOCKED, powers)
        if attacker is not None:
            h.lock_time_s = lock_time(trace, t0, receiver=attacker, t_end=t1,
                                      require_engaged=gate).seconds
            fixed = [p for rx, p in powers.items() if rx != attacker and math.isfinite(p)]
            if fixed and max(fixed) > 0:
                h.stolen_ratio = powers[attacker] / max(fixed)
            try:
                sl = _whole_period_slice(trace, t_ss, t1, f)
                h.phase_error_deg = phase_between(trace.t[sl], trace.rx(attacker, "i_r")[sl],
                                                  trace["i_t"][sl], f) - 90.0
            except (DomainError, InsufficientDataError, UndefinedPhaseError):
                pass
            loss = trace.rx(attacker, "switch_loss_j")
            i0, i1 = trace.index_window(t0, t1)
            if i1 > i0:
                h.switching_loss_w = float(loss[i1 - 1] - loss[i0]) / (t1 - t0)
        hops.append(h)
    return Metrics(hops, attacker, list(trace.receivers))
