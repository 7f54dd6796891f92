"""Experiment plumbing: scenario runs, duty-cycle sweeps and report files."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .design import FrequencyTable, ton_toff
from .encryptor import HopSchedule, write_schedule_csv
from .errors import ConfigurationError, WPTError
from .interceptor import Interceptor
from .metrics import analyze, fundamental_phasor, half_period_peaks, phase_between
from .plant import Plant
from .simcore import SimConfig, Simulation
from .switching import PhaseLockedDriver

OUTPUT_ENV = "WPT_INTERCEPT_OUTPUT_DIR"
SWEEP_SETTLE_TOL = 1e-3
MODE_LEVELS = {"SENSE": 0, "ESTIMATE": 1, "ENGAGE": 2, "OPEN": 0, "CLOSED": 2, "": 0}


@dataclass
class RunResult:
    trace: object
    metrics: object
    controller: object
    files: dict


def make_controller(scenario):
    if scenario.controller is None:
        return None
    table = scenario.table.copy() if scenario.table is not None else FrequencyTable()
    return Interceptor(scenario.params, table, scenario.controller)


def simulate(scenario):
    """Run a scenario once; returns ``(trace, controller)``."""
    ctrl = make_controller(scenario)
    sim = Simulation(scenario.plant, [ctrl] if ctrl else [], scenario.schedule, scenario.sim,
                     defense=scenario.defense)
    sim.advance()
    return sim.trace(), ctrl


def run_scenario(scenario, out_dir=None):
    """Simulate, compute metrics and write the report files."""
    trace, ctrl = simulate(scenario)
    metrics = analyze(trace)
    out = Path(out_dir) if out_dir is not None else scenario.output_dir
    files = emit_report(metrics, trace, out, schedule=scenario.schedule, duration=scenario.sim.duration)
    return RunResult(trace, metrics, ctrl, files)


# ---------------------------------------------------------------------------
# duty sweep


@dataclass(frozen=True)
class SweepPoint:
    t_off: float
    amplitude: float
    phase_deg: float


def duty_sweep(params, freq, t_off_values, *, sense_mode="load-voltage", t_filter=0.0, dt=1e-8,
               measure_periods=20, max_windows=200, csv_path=None):
    """Steady-state ``(t_off, |I_R|, phase)`` for each fixed ``t_off`` at ``freq``.

    The interceptor is bypassed: a phase-locked driver holds the duty fixed.
    Each point runs until the fundamental amplitude changes by less than
    0.1% between consecutive measurement windows. Phase is receiver current
    relative to the transmitter current.
    """
    half = 0.5 / freq
    points = []
    for t_off in t_off_values:
        if not 0.0 <= t_off <= half:
            raise ConfigurationError(f"t_off {t_off:g} s outside [0, {half:g}] s")
        driver = PhaseLockedDriver(freq, half - t_off, sense_mode=sense_mode, t_filter=t_filter)
        period = 1.0 / freq
        n_meas = max(1, int(round(max(measure_periods * period, 2 * params.tau) / period)))
        steps = int(round(n_meas * period / dt))
        horizon = (max_windows + 1) * n_meas * period
        sim = Simulation(Plant(params), [driver], HopSchedule.fixed(freq, 2 * horizon),
                         SimConfig(duration=horizon, dt=dt))
        name = sim.plant.attacker_name
        last = None
        for _ in range(max_windows):
            sim.drain()
            sim.advance(n_steps=steps)
            tr = sim.drain()
            amp = abs(fundamental_phasor(tr.t, tr.rx(name, "i_r"), freq))
            if last is not None and abs(amp - last) <= SWEEP_SETTLE_TOL * max(amp, 1e-15):
                break
            last = amp
        phase = phase_between(tr.t, tr.rx(name, "i_r"), tr["i_t"], freq)
        points.append(SweepPoint(float(t_off), amp, phase))
    if csv_path is not None:
        write_sweep_csv(points, csv_path)
    return points


def write_sweep_csv(points, path):
    with open(path, "w", newline="") as fh:
        fh.write("t_off_s,amplitude_a,phase_deg\n")
        for p in points:
            fh.write(f"{p.t_off!r},{p.amplitude!r},{p.phase_deg!r}\n")


def optimum_t_off(params, freq):
    return ton_toff(freq, params.l_r, params.c_r1, params.c_r2).t_off


# ---------------------------------------------------------------------------
# report


def emit_report(metrics, trace, out_dir, schedule=None, duration=None):
    """Write trace CSV, metrics CSV and SVG plots; returns ``{kind: path}``.

    Output bytes depend only on the inputs.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise WPTError(f"cannot create output directory {out}: {exc}") from exc
    files = {
        "trace": out / "trace.csv",
        "metrics": out / "metrics.csv",
        "envelopes": out / "envelopes.svg",
        "modes": out / "modes.svg",
    }
    trace.to_csv(files["trace"])
    metrics.to_csv(files["metrics"])
    if schedule is not None and duration is not None:
        files["schedule"] = out / "schedule.csv"
        write_schedule_csv(schedule.starts(duration), files["schedule"])
    end = duration if duration is not None else float(trace.t[-1] + trace.dt)
    plot_envelopes(trace, files["envelopes"], end)
    plot_modes(trace, files["modes"], end)
    return files


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "wpt-intercept"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


def envelope_series(trace, receiver):
    """Half-period peak ``|i_r|`` across every dwell, as ``(t, peak)`` arrays."""
    ts, ps = [], []
    for t0, t1, f in trace.dwells():
        if f <= 0:
            continue
        e, p = half_period_peaks(trace, receiver, t0, t1, f)
        ts.append(e)
        ps.append(p)
    if not ts:
        return np.empty(0), np.empty(0)
    return np.concatenate(ts), np.concatenate(ps)


def plot_envelopes(trace, path, t_end):
    """Per-receiver current envelopes; returns the x limits in ms."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(8, 3.5))
    for rx in trace.receivers:
        t, p = envelope_series(trace, rx)
        ax.plot(t * 1e3, p, label=rx, linewidth=1.0)
    for t_hop, _, _ in trace.hops():
        ax.axvline(t_hop * 1e3, color="0.7", linewidth=0.6, linestyle="--")
    ax.set_xlim(0.0, t_end * 1e3)
    ax.set_xlabel("time (ms)")
    ax.set_ylabel("|i_r| envelope (A)")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
    return ax.get_xlim()


def plot_modes(trace, path, t_end):
    """Controller mode and frequency timeline; returns the x limits in ms."""
    plt = _pyplot()
    fig, (ax_m, ax_f) = plt.subplots(2, 1, figsize=(8, 3.5), sharex=True)
    t = trace.t * 1e3
    modes = trace["controller_mode"] if "controller_mode" in trace else np.array([""] * len(t))
    level = np.array([MODE_LEVELS.get(str(m), 0) for m in modes], dtype=float)
    # plot only the samples where something changes, plus the end point
    keep = np.r_[0, np.flatnonzero(np.diff(level)) + 1, len(level) - 1] if len(level) else []
    ax_m.step(t[keep], level[keep], where="post", linewidth=1.0)
    ax_m.set_yticks([0, 1, 2], ["SENSE", "ESTIMATE", "ENGAGE"])
    f_t = trace["f_t_active"]
    f_est = trace["f_estimate_hz"] if "f_estimate_hz" in trace else np.zeros_like(f_t)
    keep_f = np.r_[0, np.flatnonzero((np.diff(f_t) != 0) | (np.diff(f_est) != 0)) + 1, len(t) - 1]
    ax_f.step(t[keep_f], f_t[keep_f] / 1e3, where="post", label="transmitter", linewidth=1.0)
    ax_f.step(t[keep_f], f_est[keep_f] / 1e3, where="post", label="estimate", linewidth=1.0,
              linestyle="--")
    ax_f.set_ylabel("freq (kHz)")
    ax_f.set_xlabel("time (ms)")
    ax_f.set_xlim(0.0, t_end * 1e3)
    ax_f.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
    return ax_f.get_xlim()


def summarize(metrics):
    """One human-readable line per hop."""
    lines = []
    for h in metrics.hops:
        lock = (f"{h.lock_time_s * 1e6:7.1f} us {h.lock_time_cycles:5.1f} cyc" if h.locked
                else "  not locked        ")
        ratio = f"{h.stolen_ratio:.3f}" if math.isfinite(h.stolen_ratio) else "  n/a"
        phase = f"{h.phase_error_deg:+.2f}" if math.isfinite(h.phase_error_deg) else "n/a"
        lines.append(f"hop {h.index:3d} {h.freq / 1e3:8.2f} kHz  lock {lock}  ratio {ratio}  "
                     f"phase err {phase} deg")
    return lines
