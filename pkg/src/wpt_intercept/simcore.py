"""Fixed-step RK4 engine that advances a plant and its switch controllers in
lockstep and records a uniformly sampled trace."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encryptor import DefenseMonitor, HopSchedule, SlidingMean
from .errors import ConfigurationError, NumericalDivergenceError
from .plant import (Plant, SystemParams, Transmitter, close_switch_charge_share,
                    resistive_switch_rk4, series_rk4, _branch_current)

MIN_STEPS_PER_PERIOD = 100
RECEIVER_FIELDS = ("i_r", "v_c1", "v_c2", "v_load", "switch_closed", "switch_loss_j")
MODE_NONE = "NONE"


@dataclass(frozen=True)
class SimConfig:
    duration: float
    dt: float = 1e-8
    seed: int = 0
    record_decimation: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigurationError(f"dt must be > 0, got {self.dt!r}")
        if not (self.duration > 0 and math.isfinite(self.duration)):
            raise ConfigurationError(f"duration must be > 0, got {self.duration!r}")
        if int(self.record_decimation) != self.record_decimation or self.record_decimation < 1:
            raise ConfigurationError("record_decimation must be an integer >= 1")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigurationError("seed must be a non-negative integer")

    @property
    def n_steps(self):
        return int(round(self.duration / self.dt))

    def check_resolution(self, max_freq):
        if max_freq > 0 and 1.0 / (max_freq * self.dt) < MIN_STEPS_PER_PERIOD:
            raise ConfigurationError(
                f"dt={self.dt:g} s gives {1.0 / (max_freq * self.dt):.1f} steps per period "
                f"at {max_freq:g} Hz; at least {MIN_STEPS_PER_PERIOD} required"
            )


@dataclass(frozen=True)
class EdgeEvent:
    t: float
    kind: str  # "up" | "down"
    source: str = ""


class ZeroCrossDetector:
    """Streaming zero-crossing comparator with hysteresis.

    An upward edge is confirmed once the signal exceeds ``+h`` after having
    been below ``-h``; it is timestamped at the linearly interpolated zero
    crossing that preceded the confirmation. ``h`` is either fixed or a
    fraction of a decaying running peak.
    """

    def __init__(self, hysteresis=None, rel_hysteresis=0.02, peak_tau=50e-6,
                 min_hysteresis=0.0, source=""):
        self.hysteresis = hysteresis
        self.rel_hysteresis = rel_hysteresis
        self.peak_tau = peak_tau
        self.min_hysteresis = min_hysteresis
        self.source = source
        self.reset()

    def reset(self):
        self._prev_t = None
        self._prev_x = 0.0
        self._armed = 0  # -1 seen below -h, +1 seen above +h
        self._zero_up = None
        self._zero_down = None
        self._peak = 0.0
        self._decay_dt = None
        self._decay = 1.0

    def update(self, t, x):
        prev_t, prev_x = self._prev_t, self._prev_x
        if self.hysteresis is None:
            if prev_t is not None and self.peak_tau:
                step = t - prev_t
                if step != self._decay_dt:
                    self._decay_dt = step
                    self._decay = math.exp(-step / self.peak_tau)
                self._peak *= self._decay
            ax = abs(x)
            if ax > self._peak:
                self._peak = ax
            h = max(self.rel_hysteresis * self._peak, self.min_hysteresis)
        else:
            h = self.hysteresis
        if prev_t is not None:
            if prev_x < 0.0 <= x:
                self._zero_up = prev_t + (t - prev_t) * (-prev_x) / (x - prev_x)
            elif prev_x >= 0.0 > x:
                self._zero_down = prev_t + (t - prev_t) * prev_x / (prev_x - x)
        self._prev_t, self._prev_x = t, x
        event = None
        if x > h and x > 0.0:
            if self._armed == -1 and self._zero_up is not None:
                event = EdgeEvent(self._zero_up, "up", self.source)
            self._armed = 1
        elif x < -h and x < 0.0:
            if self._armed == 1 and self._zero_down is not None:
                event = EdgeEvent(self._zero_down, "down", self.source)
            self._armed = -1
        return event


def detect_zero_cross(t, signal, hysteresis=0.0, source=""):
    """All hysteresis-confirmed zero crossings of a sampled window, time ordered."""
    t = np.asarray(t, dtype=float)
    signal = np.asarray(signal, dtype=float)
    if t.shape != signal.shape:
        raise ValueError("t and signal must have the same shape")
    if len(t) < 2:
        raise ValueError("window must hold at least 2 samples")
    det = ZeroCrossDetector(hysteresis=float(hysteresis), source=source)
    events = []
    for tk, xk in zip(t.tolist(), signal.tolist()):
        ev = det.update(tk, xk)
        if ev is not None:
            events.append(ev)
    return events


def rk4_step(f, t, x, dt):
    """Generic classical RK4 step for ``dx/dt = f(t, x)`` on numpy vectors."""
    k1 = f(t, x)
    k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = f(t + dt, x + dt * k3)
    out = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NumericalDivergenceError(0, "rk4_step")
    return out


# --------------------------------------------------------------------------
# trace


class Trace:
    """Uniformly sampled record of a run, stored column-wise."""

    def __init__(self, columns, receivers, events=None):
        self.columns = dict(columns)
        self.receivers = list(receivers)
        self.events = list(events or [])
        t = self.columns["t"]
        self.dt = float(t[1] - t[0]) if len(t) > 1 else 0.0

    def __len__(self):
        return len(self.columns["t"])

    def __getitem__(self, name):
        return self.columns[name]

    def __contains__(self, name):
        return name in self.columns

    @property
    def t(self):
        return self.columns["t"]

    @property
    def header(self):
        return list(self.columns)

    def rx(self, receiver, field_name):
        return self.columns[f"{receiver}.{field_name}"]

    def index_window(self, t0, t1):
        t = self.t
        i0 = int(np.searchsorted(t, t0 - 0.5 * self.dt))
        i1 = int(np.searchsorted(t, t1 - 0.5 * self.dt))
        return i0, i1

    def to_csv(self, path):
        names = self.header
        cols = []
        for name in names:
            col = self.columns[name]
            if col.dtype.kind == "f":
                cols.append([repr(v) for v in col.tolist()])
            else:
                cols.append([str(v) for v in col.tolist()])
        with open(path, "w", newline="") as fh:
            fh.write(",".join(names) + "\n")
            fh.writelines(",".join(row) + "\n" for row in zip(*cols))

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        raw = list(zip(*rows)) if rows else [()] * len(header)
        columns = {}
        receivers = []
        for name, values in zip(header, raw):
            if name in ("controller_mode",):
                columns[name] = np.array(values, dtype=object)
            elif name.endswith(".switch_closed"):
                columns[name] = np.array(values, dtype=np.int8)
            else:
                columns[name] = np.array(values, dtype=float)
            if name.endswith(".i_r"):
                receivers.append(name[: -len(".i_r")])
        return cls(columns, receivers)

    def hops(self):
        """``(t_hop, f_before, f_after)`` for each change of the active frequency."""
        f = self.columns["f_t_active"]
        idx = np.flatnonzero(np.diff(f) != 0) + 1
        return [(float(self.t[k]), float(f[k - 1]), float(f[k])) for k in idx]

    def dwells(self):
        """``(t_start, t_end, freq)`` of each constant-frequency interval."""
        f = self.columns["f_t_active"]
        t = self.t
        if len(t) == 0:
            return []
        edges = [0] + list(np.flatnonzero(np.diff(f) != 0) + 1) + [len(t)]
        end_t = t[-1] + self.dt
        out = []
        for a, b in zip(edges[:-1], edges[1:]):
            out.append((float(t[a]), float(t[b]) if b < len(t) else float(end_t), float(f[a])))
        return out


# --------------------------------------------------------------------------
# engine


class Simulation:
    """Resumable lockstep simulation.

    ``controllers`` holds at most one switch controller, bound to the
    plant's intruder receiver. A controller exposes ``sense`` (``"v_c1"``,
    ``"v_load"`` or ``"i_r"``), ``uses_oracle``, ``reset(dt, rng)`` and
    ``step(t, sensed, i_t) -> bool``; its command applies to the next step.
    """

    def __init__(self, plant: Plant, controllers: Sequence = (), schedule: HopSchedule | None = None,
                 config: SimConfig | None = None, defense=None):
        if config is None:
            raise ConfigurationError("a SimConfig is required")
        self.plant = plant
        self.config = config
        self.schedule = schedule if schedule is not None else HopSchedule()
        config.check_resolution(self.schedule.max_frequency)
        controllers = list(controllers)
        if len(controllers) > 1:
            raise ConfigurationError("only one switch controller per plant is supported")
        if controllers and not plant.attacker:
            raise ConfigurationError("controller given but the plant has no intruder receiver")
        self.controller = controllers[0] if controllers else None
        self.defense = defense
        self._monitor = DefenseMonitor(defense) if defense is not None and defense.enabled else None
        self.rng = np.random.default_rng(config.seed)
        if self.controller is not None:
            self.controller.reset(config.dt, self.rng)
        self.dt = config.dt
        self.tx = Transmitter(self.schedule, plant.params.i_t_amplitude, self.dt)
        self.step_index = 0
        self.events = []

        p = plant.params
        self._att = [0.0, 0.0, 0.0, False, 0.0] if plant.attacker else None
        self._fixed = [[0.0, 0.0] for _ in plant.fixed]
        self._coupled = bool(plant.coupling)
        if self._coupled:
            self._linv = np.linalg.inv(plant.inductance_matrix())
        self._rec = {name: [] for name in self._column_names()}
        self._p_tx = SlidingMean()
        self._p_auth = SlidingMean()
        self._mean_freq = None
        self._params = p

    # ---- bookkeeping
    def _column_names(self):
        names = ["t", "i_t"]
        for rx in self.plant.receiver_names:
            names += [f"{rx}.{f}" for f in RECEIVER_FIELDS]
        names += ["f_t_active", "controller_mode", "f_estimate_hz", "t_on_s"]
        return names

    def receiver_state(self, name):
        from .plant import ReceiverState
        if self.plant.attacker and name == self.plant.attacker_name:
            i, v1, v2, closed, loss = self._att
            return ReceiverState(i, v1, v2, closed, loss)
        k = [r.name for r in self.plant.fixed].index(name)
        i, v = self._fixed[k]
        return ReceiverState(i, v, 0.0, False, 0.0)

    @property
    def time(self):
        return self.step_index * self.dt

    def _record(self, k):
        rec = self._rec
        t = k * self.dt
        rec["t"].append(t)
        rec["i_t"].append(self.tx.current(k))
        p = self._params
        if self._att is not None:
            i, v1, v2, closed, loss = self._att
            name = self.plant.attacker_name
            rec[f"{name}.i_r"].append(i)
            rec[f"{name}.v_c1"].append(v1)
            rec[f"{name}.v_c2"].append(v2)
            rec[f"{name}.v_load"].append(p.r_load * i)
            rec[f"{name}.switch_closed"].append(1 if closed else 0)
            rec[f"{name}.switch_loss_j"].append(loss)
        for rx, (i, v) in zip(self.plant.fixed, self._fixed):
            rec[f"{rx.name}.i_r"].append(i)
            rec[f"{rx.name}.v_c1"].append(v)
            rec[f"{rx.name}.v_c2"].append(0.0)
            rec[f"{rx.name}.v_load"].append(rx.r_load * i)
            rec[f"{rx.name}.switch_closed"].append(0)
            rec[f"{rx.name}.switch_loss_j"].append(0.0)
        rec["f_t_active"].append(self.tx.freq)
        ctrl = self.controller
        if ctrl is None:
            rec["controller_mode"].append(MODE_NONE)
            rec["f_estimate_hz"].append(0.0)
            rec["t_on_s"].append(0.0)
        else:
            rec["controller_mode"].append(ctrl.mode_tag)
            rec["f_estimate_hz"].append(float(ctrl.f_estimate))
            rec["t_on_s"].append(float(ctrl.t_on))

    # ---- stepping
    def advance(self, n_steps=None, until=None):
        """Advance ``n_steps`` (or up to time ``until``, or to the configured end)."""
        end = self.config.n_steps
        if n_steps is not None:
            end = self.step_index + int(n_steps)
        elif until is not None:
            end = int(round(until / self.dt))
        dt = self.dt
        tx = self.tx
        plant = self.plant
        p = self._params
        ctrl = self.controller
        att = self._att
        fixed = plant.fixed
        fstate = self._fixed
        dec = self.config.record_decimation
        monitor = self._monitor
        sense_kind = ctrl.sense if ctrl is not None else None
        oracle = ctrl is not None and ctrl.uses_oracle
        r0 = p.r_switch == 0.0
        c_par = p.c_r1 + p.c_r2
        for k in range(self.step_index, end):
            t = k * dt
            tx.update(k)
            # controller decides the topology for [t, t + dt]
            cmd = False
            if ctrl is not None:
                if sense_kind == "v_c1":
                    sensed = att[1]
                elif sense_kind == "v_load":
                    sensed = p.r_load * att[0]
                else:
                    sensed = att[0]
                cmd = ctrl.step(t, sensed, tx.current(k) if oracle else None)
            if k % dec == 0:
                self._record(k)
            d0, dh, d1 = tx.didt_samples(k)
            if self._coupled:
                self._coupled_step(k, cmd, d0, dh, d1)
            else:
                if att is not None:
                    i, v1, v2, closed, loss = att
                    m = p.m_r
                    if cmd and r0:
                        if not closed:
                            v1, dl = close_switch_charge_share(v1, v2, p.c_r1, p.c_r2)
                            loss += dl
                        i, v1 = series_rk4(i, v1, m * d0, m * dh, m * d1, p.l_r, p.r_load, c_par, dt)
                        v2 = v1
                    elif cmd:
                        i, v1, v2, dl = resistive_switch_rk4(i, v1, v2, m * d0, m * dh, m * d1, p, dt)
                        loss += dl
                    else:
                        i, v1 = series_rk4(i, v1, m * d0, m * dh, m * d1, p.l_r, p.r_load, p.c_r1, dt)
                    if not (-1e15 < i < 1e15 and -1e15 < v1 < 1e15 and -1e15 < v2 < 1e15):
                        raise NumericalDivergenceError(k + 1, "intruder receiver")
                    att[0], att[1], att[2], att[3], att[4] = i, v1, v2, bool(cmd), loss
                for rx, st in zip(fixed, fstate):
                    m = rx.m
                    i, v = series_rk4(st[0], st[1], m * d0, m * dh, m * d1, rx.l, rx.r_load, rx.c, dt)
                    if not (-1e15 < i < 1e15 and -1e15 < v < 1e15):
                        raise NumericalDivergenceError(k + 1, f"receiver {rx.name}")
                    st[0], st[1] = i, v
            if monitor is not None:
                self._defense_step(k + 1)
        self.step_index = max(end, self.step_index)
        return self

    def _coupled_step(self, k, cmd, d0, dh, d1):
        """Generic RK4 over all receivers with receiver-to-receiver coupling."""
        plant, p, dt = self.plant, self._params, self.dt
        att = self._att
        n_fixed = len(plant.fixed)
        offset = 1 if att is not None else 0
        n = n_fixed + offset
        r0 = p.r_switch == 0.0
        if att is not None and cmd and r0 and not att[3]:
            att[1], dl = close_switch_charge_share(att[1], att[2], p.c_r1, p.c_r2)
            att[2] = att[1]
            att[4] += dl
        x = np.zeros(2 * n + 2)
        if att is not None:
            x[0], x[n], x[2 * n], x[2 * n + 1] = att[0], att[1], att[2], att[4]
        for j, st in enumerate(self._fixed):
            x[offset + j], x[n + offset + j] = st
        ms = np.array(([p.m_r] if att is not None else []) + [rx.m for rx in plant.fixed])
        rs = np.array(([p.r_load] if att is not None else []) + [rx.r_load for rx in plant.fixed])
        cs = np.array(([p.c_r1] if att is not None else []) + [rx.c for rx in plant.fixed])
        if att is not None and cmd and r0:
            cs[0] = p.c_r1 + p.c_r2
        linv = self._linv
        didt = {0.0: d0, 0.5: dh, 1.0: d1}

        def f(tau, y):
            i = y[:n]
            v = y[n:2 * n]
            out = np.zeros_like(y)
            out[:n] = linv @ (ms * didt[tau] - v - rs * i)
            dv = i / cs
            if att is not None and cmd and not r0:
                i2 = _branch_current(v[0] - y[2 * n], p.r_switch, p.delta_v_d)
                dv[0] = (i[0] - i2) / p.c_r1
                out[2 * n] = i2 / p.c_r2
                out[2 * n + 1] = i2 * i2 * p.r_switch + abs(i2) * p.delta_v_d
            elif att is not None and cmd:
                out[2 * n] = dv[0]
            out[n:2 * n] = dv
            return out

        try:
            x = _rk4_fractional(f, x, dt)
        except NumericalDivergenceError:
            raise NumericalDivergenceError(k + 1, "coupled receivers") from None
        if att is not None:
            att[0], att[1], att[2], att[3], att[4] = x[0], x[n], x[2 * n], bool(cmd), x[2 * n + 1]
        for j, st in enumerate(self._fixed):
            st[0], st[1] = x[offset + j], x[n + offset + j]

    def _defense_step(self, k):
        p = self._params
        tx = self.tx
        if tx.freq <= 0:
            return
        if self._mean_freq != tx.freq:
            self._mean_freq = tx.freq
            n = int(round(1.0 / (tx.freq * self.dt)))
            self._p_tx.resize(n)
            self._p_auth.resize(n)
        d0, _, _ = tx.didt_samples(k)
        p_tx = 0.0
        if self._att is not None:
            p_tx += p.m_r * d0 * self._att[0]
        p_auth = 0.0
        for rx, (i, _) in zip(self.plant.fixed, self._fixed):
            p_tx += rx.m * d0 * i
            p_auth += rx.r_load * i * i
        mean_tx = self._p_tx.push(p_tx)
        mean_auth = self._p_auth.push(p_auth)
        if self._monitor(mean_tx, mean_auth, k * self.dt):
            self.events.append(("defense_hop", k * self.dt, tx.freq))
            tx.abandon(k)

    def trace(self):
        cols = {}
        for name, values in self._rec.items():
            if name == "controller_mode":
                cols[name] = np.array(values, dtype=object)
            elif name.endswith(".switch_closed"):
                cols[name] = np.array(values, dtype=np.int8)
            else:
                cols[name] = np.array(values, dtype=float)
        events = list(self.events)
        if self.controller is not None:
            events += list(getattr(self.controller, "events", []))
        return Trace(cols, self.plant.receiver_names, events)

    def drain(self):
        """Trace of the rows recorded so far, then forget them (bounds memory in long runs)."""
        tr = self.trace()
        self._rec = {name: [] for name in self._column_names()}
        return tr


def _rk4_fractional(f, x, dt):
    # f takes the fractional position within the step (0, 0.5, 1)
    k1 = f(0.0, x)
    k2 = f(0.5, x + 0.5 * dt * k1)
    k3 = f(0.5, x + 0.5 * dt * k2)
    k4 = f(1.0, x + dt * k3)
    out = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NumericalDivergenceError(0, "rk4")
    return out


def run(plant, controllers=(), schedule=None, sim_config=None, defense=None):
    """Run a complete simulation and return its trace."""
    sim = Simulation(plant, controllers, schedule, sim_config, defense=defense)
    sim.advance()
    return sim.trace()


def integrate_step(plant: Plant, states: dict, didt, switch_cmd: bool, dt: float):
    """One RK4 step of every receiver in ``plant`` (uncoupled form).

    ``states`` maps receiver name to ``ReceiverState``; ``didt`` is the
    transmitter dI/dt at the start, middle and end of the step.
    """
    from .plant import step_attacker_receiver, step_fixed_receiver
    d0, dh, d1 = didt
    out = {}
    for name in plant.receiver_names:
        rx = plant.receiver(name)
        if isinstance(rx, SystemParams):
            m = rx.m_r
            out[name] = step_attacker_receiver(states[name], (m * d0, m * dh, m * d1), switch_cmd, rx, dt)
        else:
            m = rx.m
            out[name] = step_fixed_receiver(states[name], (m * d0, m * dh, m * d1), rx, dt)
    return out
