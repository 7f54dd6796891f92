"""Closed-form compensation design for the time-division switched capacitor,
plus the intruder's frequency table and its simulation-based calibration."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

from .encryptor import HopSchedule
from .errors import CalibrationError, DomainError, InfeasibleBandError, OutOfBandError
from .metrics import phase_between
from .plant import TWO_PI, Plant, achievable_band
from .simcore import SimConfig, Simulation
from .switching import PhaseLockedDriver

ORIGINS = ("computed", "calibrated", "refined")
SENSE_MODES = ("capacitor-voltage", "load-voltage")
DEDUP_TOLERANCE_HZ = 1.0


@dataclass(frozen=True)
class DutyTimes:
    """Per-half-cycle closed (``t_on``) and open (``t_off``) durations."""

    t_on: float
    t_off: float
    period: float

    def __post_init__(self):
        if self.t_on < 0 or self.t_off < 0:
            raise DomainError(f"negative duty times ({self.t_on}, {self.t_off})")
        if abs(self.t_on + self.t_off - 0.5 * self.period) > 1e-9 * self.period:
            raise DomainError("t_on + t_off must equal half a period")

    @classmethod
    def from_t_on(cls, t_on, freq):
        period = 1.0 / freq
        t_on = min(max(t_on, 0.0), 0.5 * period)
        return cls(t_on, 0.5 * period - t_on, period)

    @property
    def freq(self):
        return 1.0 / self.period

    def clamped(self, t_filter):
        """Limit ``t_on`` so the open interval leaves room for the comparator filter."""
        t_on_max = max(0.0, 0.5 * self.period - 2.0 * t_filter)
        if self.t_on <= t_on_max:
            return self
        return DutyTimes(t_on_max, 0.5 * self.period - t_on_max, self.period)


@dataclass
class FrequencyTableEntry:
    freq: float
    duty: DutyTimes
    origin: str = "computed"
    hits: int = 0

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ValueError(f"origin must be one of {ORIGINS}")


@dataclass(frozen=True)
class DesignBand:
    f_l: float
    f_h: float
    t_filter: float = 0.0
    sense_mode: str = "load-voltage"

    def __post_init__(self):
        if not 0 < self.f_l < self.f_h:
            raise DomainError(f"need 0 < f_l < f_h, got ({self.f_l}, {self.f_h})")
        if self.t_filter < 0:
            raise DomainError("t_filter must be >= 0")
        if self.sense_mode not in SENSE_MODES:
            raise DomainError(f"sense_mode must be one of {SENSE_MODES}")


def ideal_capacitance(f_t, l_r):
    """Capacitance resonating with ``l_r`` at ``f_t``."""
    return 1.0 / ((TWO_PI * f_t) ** 2 * l_r)


def duty_argument(f_t, l_r, c_r1, c_r2):
    """The arcsin argument of the duty-cycle law."""
    return (c_r1 + c_r2) / c_r2 * (1.0 - (TWO_PI * f_t) ** 2 * l_r * c_r1)


def ton_toff(f_t, l_r, c_r1, c_r2):
    """Switch on/off time per half cycle that makes the network resonate at ``f_t``."""
    if min(f_t, l_r, c_r1, c_r2) <= 0:
        raise DomainError("all arguments must be positive")
    a = duty_argument(f_t, l_r, c_r1, c_r2)
    # absorb rounding exactly at the band edges
    if -1e-12 < a < 0.0:
        a = 0.0
    elif 1.0 < a < 1.0 + 1e-12:
        a = 1.0
    if not 0.0 <= a <= 1.0:
        raise OutOfBandError(f_t, achievable_band(l_r, c_r1, c_r2))
    t_on = math.asin(a) / (math.pi * f_t)
    period = 1.0 / f_t
    return DutyTimes(t_on, max(0.0, 0.5 * period - t_on), period)


def equivalent_capacitance(t_off, f_t, c_r1, c_r2):
    """Equivalent capacitance of the switched pair for a given open time."""
    half = 0.5 / f_t
    if not -1e-15 <= t_off <= half * (1 + 1e-12):
        raise DomainError(f"t_off={t_off:g} outside [0, {half:g}]")
    k = math.cos(math.pi * f_t * t_off)
    return 1.0 / ((1.0 - k) / c_r1 + k / (c_r1 + c_r2))


def splitting_factors(c_r1, c_r2):
    """Current shares of C_R1 and C_R2 while paralleled (drop-free approximation)."""
    k1 = c_r1 / (c_r1 + c_r2)
    return k1, 1.0 - k1


@dataclass(frozen=True)
class CapacitorReport:
    sense_mode: str
    c_r1_max: float
    c_r2_min: float
    c_r1: float | None = None
    c_r2: float | None = None

    @property
    def feasible(self):
        ok = True
        if self.c_r1 is not None:
            ok &= self.c_r1 <= self.c_r1_max * (1 + 1e-12)
        if self.c_r2 is not None:
            ok &= self.c_r2 >= self.c_r2_min * (1 - 1e-12)
        return ok


def select_capacitors(band, l_r, c_r2_candidate, c_r1_candidate=None):
    """Capacitor bounds for covering ``band`` with coil ``l_r``.

    Load-voltage sensing uses the plain resonance bounds; capacitor-voltage
    sensing tightens the C_R1 bound by the comparator filter time. In both
    modes C_R1 + C_R2 must reach the resonant capacitance at ``f_l``.
    """
    wh2l = (TWO_PI * band.f_h) ** 2 * l_r
    c_low_res = ideal_capacitance(band.f_l, l_r)
    if band.sense_mode == "load-voltage":
        c_r1_max = 1.0 / wh2l
    else:
        s = math.sin(math.pi * band.f_h * band.t_filter)
        denom = wh2l - s / c_r2_candidate
        if denom <= 0:
            raise InfeasibleBandError(
                f"filter time {band.t_filter:g} s leaves no C_R1 bound at {band.f_h:g} Hz "
                f"with C_R2={c_r2_candidate:g} F"
            )
        c_r1_max = (1.0 - s) / denom
    c_r1_ref = c_r1_candidate if c_r1_candidate is not None else c_r1_max
    c_r2_min = max(0.0, c_low_res - c_r1_ref)
    return CapacitorReport(band.sense_mode, c_r1_max, c_r2_min, c_r1_candidate, c_r2_candidate)


# --------------------------------------------------------------------------
# frequency table


class FrequencyTable:
    """Sorted memory of (frequency -> duty) entries."""

    def __init__(self, entries=()):
        self._entries = []
        for e in entries:
            self.add(e)

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def __getitem__(self, k):
        return self._entries[k]

    def __repr__(self):
        return f"FrequencyTable({self._entries!r})"

    @property
    def frequencies(self):
        return [e.freq for e in self._entries]

    def find(self, freq, tol=DEDUP_TOLERANCE_HZ):
        for e in self._entries:
            if abs(e.freq - freq) <= tol:
                return e
        return None

    def add(self, entry):
        """Insert or replace (entries within 1 Hz merge); keeps frequency order."""
        old = self.find(entry.freq)
        if old is not None:
            self._entries.remove(old)
        self._entries.append(entry)
        self._entries.sort(key=lambda e: e.freq)
        return entry

    def copy(self):
        return FrequencyTable(replace(e) for e in self._entries)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["freq_hz", "t_on_s", "t_off_s", "origin"])
            for e in self._entries:
                w.writerow([repr(e.freq), repr(e.duty.t_on), repr(e.duty.t_off), e.origin])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        out = cls()
        for r in rows:
            f = float(r["freq_hz"])
            duty = DutyTimes(float(r["t_on_s"]), float(r["t_off_s"]), 1.0 / f)
            out.add(FrequencyTableEntry(f, duty, r["origin"]))
        return out


def build_frequency_table(freq_list, l_r, c_r1, c_r2):
    """One computed entry per distinct frequency, sorted."""
    table = FrequencyTable()
    for f in sorted(float(f) for f in freq_list):
        if table.find(f) is not None:
            continue
        table.add(FrequencyTableEntry(f, ton_toff(f, l_r, c_r1, c_r2), "computed"))
    return table


@dataclass
class CalibrationResult:
    entry: FrequencyTableEntry
    iterations: int
    phase_deg: float
    history: list = field(default_factory=list)
    status: str = "converged"  # converged | resolution_limited | clamped


def calibrate_entry(entry, params, *, sense_mode="load-voltage", t_filter=0.0, dt=1e-8,
                    tol_deg=0.5, gain=0.5, max_step=0.1, max_iter=50, measure_periods=20,
                    settle_tol_deg=0.05, max_settle_windows=60, full=False):
    """Trim ``t_on`` until the intruder current leads the transmitter current by 90 deg.

    Runs a private simulation with the switch pattern anchored to the sensed
    zero crossings and measures the phase against the transmitter current
    (the lab oracle). After each change the phase is re-measured over
    consecutive windows until it stops moving, since the self-timed switch
    settles far slower than the receiver envelope. Steps are
    multiplicative, ``gain`` times the phase error normalized to 90 deg and
    limited to ``max_step``; once the target is bracketed, steps that leave
    the bracket fall back to bisection. When the bracket shrinks below the
    time step the best point found is returned (``resolution_limited``).
    """
    f = entry.freq
    period = 1.0 / f
    t_on_max = max(0.0, 0.5 * period - 2.0 * t_filter)
    t_on = min(max(entry.duty.t_on, 0.0), t_on_max)

    driver = PhaseLockedDriver(f, t_on, sense_mode=sense_mode, t_filter=t_filter)
    n_meas = max(1, int(round(max(measure_periods * period, 2 * params.tau) / period)))
    meas_steps = int(round(n_meas * period / dt))
    horizon = (max_iter + 1) * (max_settle_windows + 1) * n_meas * period
    cfg = SimConfig(duration=horizon, dt=dt)
    sim = Simulation(Plant(params, attacker=True), [driver], HopSchedule.fixed(f, 2 * horizon), cfg)
    name = sim.plant.attacker_name

    def settled_phase():
        last = None
        for _ in range(max_settle_windows):
            sim.drain()
            sim.advance(n_steps=meas_steps)
            tr = sim.drain()
            ph = phase_between(tr.t, tr.rx(name, "i_r"), tr["i_t"], f)
            if last is not None and abs(ph - last) < settle_tol_deg:
                return ph
            last = ph
        return last

    lo = hi = None  # t_on known too small / too large
    history = []
    best = None
    for it in range(1, max_iter + 1):
        phase = settled_phase()
        err = phase - 90.0
        history.append((t_on, phase))
        if best is None or abs(err) < abs(best[1] - 90.0):
            best = (t_on, phase)
        if abs(err) < tol_deg:
            return _calibrated(entry, t_on, f, it, phase, history, full, "converged")
        if err > 0:
            lo = t_on if lo is None else max(lo, t_on)
        else:
            hi = t_on if hi is None else min(hi, t_on)
        if lo is not None and hi is not None and hi - lo < 0.25 * dt:
            return _calibrated(entry, best[0], f, it, best[1], history, full, "resolution_limited")
        step = max(-max_step, min(max_step, gain * err / 90.0))
        cand = t_on * (1.0 + step) if t_on > 0 else step * 0.5 * period
        if lo is not None and hi is not None and not lo < cand < hi:
            cand = 0.5 * (lo + hi)
        cand = min(max(cand, 0.0), t_on_max)
        if cand == t_on:
            # pinned against the filter bound or zero
            return _calibrated(entry, t_on, f, it, phase, history, full, "clamped")
        t_on = cand
        driver.set_t_on(t_on)
    raise CalibrationError(f"calibration at {f:g} Hz did not converge in {max_iter} iterations "
                           f"(last phase {history[-1][1]:.2f} deg)")


def _calibrated(entry, t_on, f, it, phase, history, full, status):
    new = FrequencyTableEntry(f, DutyTimes.from_t_on(t_on, f), "calibrated", entry.hits)
    if full:
        return CalibrationResult(new, it, phase, history, status)
    return new


def calibrate_table(table, params, **kwargs):
    return FrequencyTable(calibrate_entry(e, params, **kwargs) for e in table)
