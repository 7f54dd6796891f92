"""Circuit models: stiff transmitter current source, fixed-resonance receivers
and the intruder's receiver with a time-division switched capacitor.

Sign convention: the EMF induced in a receiver is ``+M dI_T/dt`` so that a
receiver at resonance carries a current leading the transmitter current by
90 degrees.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, NumericalDivergenceError

TWO_PI = 2.0 * math.pi

#: Peak transmitter current giving ~2.9 A rms (42 W) in a matched desk-set receiver.
DEFAULT_I_T_AMPLITUDE = 4.0 * math.sqrt(2.0)


def resonant_frequency(l, c):
    return 1.0 / (TWO_PI * math.sqrt(l * c))


def achievable_band(l_r, c_r1, c_r2):
    """(f_low, f_high) reachable by the switched network: parallel and C_R1-only resonances."""
    return resonant_frequency(l_r, c_r1 + c_r2), resonant_frequency(l_r, c_r1)


@dataclass(frozen=True)
class SystemParams:
    """Electrical constants of the transmitter and the intruding receiver."""

    l_t: float
    l_r: float
    m_r: float
    c_r1: float
    c_r2: float
    r_load: float
    i_t_amplitude: float = DEFAULT_I_T_AMPLITUDE
    delta_v_d: float = 0.0
    r_switch: float = 0.0

    def __post_init__(self):
        for name in ("l_t", "l_r", "m_r", "c_r1", "c_r2", "r_load", "i_t_amplitude"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigurationError(f"{name} must be positive and finite, got {value!r}")
        for name in ("delta_v_d", "r_switch"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigurationError(f"{name} must be >= 0, got {value!r}")
        if self.m_r > math.sqrt(self.l_t * self.l_r) * (1 + 1e-12):
            raise ConfigurationError("m_r exceeds sqrt(l_t * l_r)")
        if self.delta_v_d > 0 and self.r_switch == 0:
            raise ConfigurationError("delta_v_d > 0 requires r_switch > 0")

    @property
    def band(self):
        return achievable_band(self.l_r, self.c_r1, self.c_r2)

    @property
    def tau(self):
        """Envelope time constant 2L/R of the receiver."""
        return 2.0 * self.l_r / self.r_load

    def matched_receiver(self, freq, name=None):
        """Fixed receiver with the intruder's coil, load and coupling, tuned to ``freq``."""
        return FixedReceiver.tuned(freq, self.l_r, self.r_load, self.m_r,
                                   name=name or f"rx{freq / 1e3:g}k")


@dataclass(frozen=True)
class FixedReceiver:
    l: float
    c: float
    r_load: float
    m: float
    name: str = "rx"

    def __post_init__(self):
        for attr in ("l", "c", "r_load", "m"):
            value = getattr(self, attr)
            if not (math.isfinite(value) and value > 0):
                raise ConfigurationError(f"receiver {self.name}: {attr} must be positive, got {value!r}")

    @classmethod
    def tuned(cls, freq, l, r_load, m, name="rx"):
        return cls(l=l, c=1.0 / ((TWO_PI * freq) ** 2 * l), r_load=r_load, m=m, name=name)

    @property
    def resonance(self):
        return resonant_frequency(self.l, self.c)

    def phasor_current(self, freq, i_t_amplitude):
        """Steady-state complex current amplitude, referenced to I_T = A sin(wt)."""
        return series_rlc_phasor(freq, self.l, self.c, self.r_load, self.m, i_t_amplitude)


def series_rlc_phasor(freq, l, c, r, m, i_t_amplitude):
    """Closed-form steady-state receiver current phasor ``jwM I_T / (R + jwL + 1/(jwC))``.

    The phasor is relative to the transmitter current, so ``angle == +90deg``
    at resonance.
    """
    w = TWO_PI * freq
    z = r + 1j * (w * l - 1.0 / (w * c))
    return 1j * w * m * i_t_amplitude / z


@dataclass
class ReceiverState:
    i_r: float = 0.0
    v_c1: float = 0.0
    v_c2: float = 0.0
    switch_closed: bool = False
    #: cumulative energy dissipated by the switch network (J)
    switch_loss: float = 0.0

    def is_finite(self):
        return all(map(math.isfinite, (self.i_r, self.v_c1, self.v_c2)))


# --------------------------------------------------------------------------
# transmitter


def _segments(schedule, until=None):
    """Continuous-time segments ``(t_start, freq, phase0)`` of a schedule."""
    out = []
    t = 0.0
    phase = 0.0
    for freq, dwell in schedule.iter_hops():
        out.append((t, freq, phase))
        phase = math.fmod(phase + TWO_PI * freq * dwell, TWO_PI)
        t += dwell
        if until is not None and t > until:
            break
    return out


def transmitter_current(t, schedule, amplitude):
    """Phase-continuous transmitter current at time ``t``.

    Past the end of a finite schedule the last frequency is held.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    segs = _segments(schedule, until=t)
    if not segs:
        return 0.0
    idx = len(segs) - 1
    while idx > 0 and segs[idx][0] > t:
        idx -= 1
    t0, freq, phase0 = segs[idx]
    return amplitude * math.sin(phase0 + TWO_PI * freq * (t - t0))


class Transmitter:
    """Step-quantized, phase-continuous current source driven by a hop schedule.

    Hop instants are rounded to the simulation grid. ``abandon`` cuts the
    current dwell short (used by the defense monitor).
    """

    def __init__(self, schedule, amplitude, dt):
        self.amplitude = amplitude
        self.dt = dt
        self._hops = schedule.iter_hops() if schedule is not None else iter(())
        self.freq = 0.0
        self.omega = 0.0
        self.start_step = 0
        self.end_step = None
        self.phase0 = 0.0
        self.history = []  # (t_start, freq)
        self.exhausted = False
        self._next_segment(0)

    def _next_segment(self, step):
        try:
            freq, dwell = next(self._hops)
        except StopIteration:
            self.exhausted = True
            self.end_step = None
            return
        if self.history:
            self.phase0 = self.phase_at_step(step)
        self.freq = float(freq)
        self.omega = TWO_PI * self.freq
        self.start_step = step
        self.end_step = step + max(1, int(round(dwell / self.dt)))
        self.history.append((step * self.dt, self.freq))

    def phase_at_step(self, step):
        return self.phase0 + self.omega * (step - self.start_step) * self.dt

    def update(self, step):
        """Move to the segment active at grid index ``step``."""
        while self.end_step is not None and step >= self.end_step:
            self._next_segment(self.end_step)

    def abandon(self, step):
        """End the current dwell at ``step`` and draw the next hop."""
        if self.exhausted or not self.history:
            return
        self._next_segment(step)

    def current(self, step):
        if not self.history:
            return 0.0
        return self.amplitude * math.sin(self.phase_at_step(step))

    def didt_samples(self, step):
        """dI_T/dt at the start, middle and end of step ``step``."""
        if not self.history:
            return 0.0, 0.0, 0.0
        a = self.amplitude * self.omega
        p = self.phase_at_step(step)
        half = 0.5 * self.omega * self.dt
        return a * math.cos(p), a * math.cos(p + half), a * math.cos(p + 2 * half)


# --------------------------------------------------------------------------
# receiver kernels


def _emf3(induced_emf):
    if isinstance(induced_emf, (tuple, list)):
        e0, eh, e1 = induced_emf
        return float(e0), float(eh), float(e1)
    e = float(induced_emf)
    return e, e, e


def series_rk4(i, v, e0, eh, e1, l, r, c, h):
    """One classical RK4 step of ``L di/dt = e - v - R i``, ``C dv/dt = i``."""
    k1i = (e0 - v - r * i) / l
    k1v = i / c
    i2 = i + 0.5 * h * k1i
    v2 = v + 0.5 * h * k1v
    k2i = (eh - v2 - r * i2) / l
    k2v = i2 / c
    i3 = i + 0.5 * h * k2i
    v3 = v + 0.5 * h * k2v
    k3i = (eh - v3 - r * i3) / l
    k3v = i3 / c
    i4 = i + h * k3i
    v4 = v + h * k3v
    k4i = (e1 - v4 - r * i4) / l
    k4v = i4 / c
    h6 = h / 6.0
    return (i + h6 * (k1i + 2.0 * k2i + 2.0 * k3i + k4i),
            v + h6 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v))


def _branch_current(u, r_sw, dvd):
    # C_R2 branch: resistor in series with an opposing drop that follows the current
    if u > dvd:
        return (u - dvd) / r_sw
    if u < -dvd:
        return (u + dvd) / r_sw
    return 0.0


def resistive_switch_rk4(i, v1, v2, e0, eh, e1, p, h):
    """RK4 step with the switch closed through ``r_switch`` (and optional drop).

    Returns ``(i, v1, v2, dissipated_energy)``.
    """
    l, r, c1, c2, rs, dvd = p.l_r, p.r_load, p.c_r1, p.c_r2, p.r_switch, p.delta_v_d

    def f(i, v1, v2, e):
        i2 = _branch_current(v1 - v2, rs, dvd)
        loss = i2 * i2 * rs + abs(i2) * dvd
        return (e - v1 - r * i) / l, (i - i2) / c1, i2 / c2, loss

    a1, b1, c1_, d1 = f(i, v1, v2, e0)
    a2, b2, c2_, d2 = f(i + 0.5 * h * a1, v1 + 0.5 * h * b1, v2 + 0.5 * h * c1_, eh)
    a3, b3, c3_, d3 = f(i + 0.5 * h * a2, v1 + 0.5 * h * b2, v2 + 0.5 * h * c2_, eh)
    a4, b4, c4_, d4 = f(i + h * a3, v1 + h * b3, v2 + h * c3_, e1)
    h6 = h / 6.0
    return (i + h6 * (a1 + 2 * a2 + 2 * a3 + a4),
            v1 + h6 * (b1 + 2 * b2 + 2 * b3 + b4),
            v2 + h6 * (c1_ + 2 * c2_ + 2 * c3_ + c4_),
            h6 * (d1 + 2 * d2 + 2 * d3 + d4))


def close_switch_charge_share(v_c1, v_c2, c_r1, c_r2):
    """Instantaneous charge redistribution when the ideal switch closes.

    Returns ``(merged_voltage, dissipated_energy)``.
    """
    ctot = c_r1 + c_r2
    merged = (c_r1 * v_c1 + c_r2 * v_c2) / ctot
    loss = 0.5 * c_r1 * c_r2 / ctot * (v_c1 - v_c2) ** 2
    return merged, loss


def _check(state, where=0):
    if not state.is_finite():
        raise NumericalDivergenceError(where, "receiver state")
    return state


def step_attacker_receiver(state, induced_emf, switch_cmd, params, dt):
    """Advance the switched-capacitor receiver by one step.

    ``switch_cmd`` holds for the whole step. With ``r_switch == 0`` closing
    the switch merges the two capacitor voltages instantaneously.
    """
    e0, eh, e1 = _emf3(induced_emf)
    i, v1, v2, loss = state.i_r, state.v_c1, state.v_c2, state.switch_loss
    closed = bool(switch_cmd)
    if closed and params.r_switch == 0.0:
        if not state.switch_closed:
            v1, dl = close_switch_charge_share(v1, v2, params.c_r1, params.c_r2)
            v2 = v1
            loss += dl
        i, v1 = series_rk4(i, v1, e0, eh, e1, params.l_r, params.r_load,
                           params.c_r1 + params.c_r2, dt)
        v2 = v1
    elif closed:
        i, v1, v2, dl = resistive_switch_rk4(i, v1, v2, e0, eh, e1, params, dt)
        loss += dl
    else:
        i, v1 = series_rk4(i, v1, e0, eh, e1, params.l_r, params.r_load, params.c_r1, dt)
    return _check(ReceiverState(i, v1, v2, closed, loss))


def step_fixed_receiver(state, induced_emf, fixed_params, dt):
    e0, eh, e1 = _emf3(induced_emf)
    i, v = series_rk4(state.i_r, state.v_c1, e0, eh, e1,
                      fixed_params.l, fixed_params.r_load, fixed_params.c, dt)
    return _check(ReceiverState(i, v, 0.0, False, 0.0))


# --------------------------------------------------------------------------
# assembled plant


@dataclass
class Plant:
    """Transmitter + intruder + authorized receivers.

    ``coupling`` optionally maps receiver-name pairs to mutual inductance
    between receivers (ignored by default).
    """

    params: SystemParams
    fixed: Sequence[FixedReceiver] = ()
    attacker: bool = True
    attacker_name: str = "attacker"
    coupling: dict = field(default_factory=dict)

    def __post_init__(self):
        self.fixed = tuple(self.fixed)
        names = self.receiver_names
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate receiver names: {names}")
        for pair, m in self.coupling.items():
            a, b = pair
            if a not in names or b not in names or a == b:
                raise ConfigurationError(f"bad coupling pair {pair!r}")
            if not (math.isfinite(m) and m >= 0):
                raise ConfigurationError(f"coupling {pair!r} must be >= 0")

    @property
    def receiver_names(self):
        names = [r.name for r in self.fixed]
        if self.attacker:
            names.insert(0, self.attacker_name)
        return names

    def receiver(self, name):
        for r in self.fixed:
            if r.name == name:
                return r
        if self.attacker and name == self.attacker_name:
            return self.params
        raise KeyError(name)

    def inductance_matrix(self):
        """Self and mutual inductances between receivers (order of ``receiver_names``)."""
        names = self.receiver_names
        n = len(names)
        mat = np.zeros((n, n))
        for k, name in enumerate(names):
            rx = self.receiver(name)
            mat[k, k] = rx.l_r if isinstance(rx, SystemParams) else rx.l
        for (a, b), m in self.coupling.items():
            ia, ib = names.index(a), names.index(b)
            mat[ia, ib] = mat[ib, ia] = m
        return mat

    def with_fixed(self, *receivers):
        return replace(self, fixed=tuple(self.fixed) + tuple(receivers))
