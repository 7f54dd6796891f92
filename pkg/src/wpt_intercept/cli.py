"""Command-line interface: design, table, simulate, sweep and analyze.

Exit codes: 0 success, 1 usage or parse error, 2 numerical failure,
3 acceptance threshold violated.
"""
from __future__ import annotations

import argparse
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .design import (DesignBand, FrequencyTable, build_frequency_table, calibrate_entry,
                     ideal_capacitance, select_capacitors)
from .errors import (CalibrationError, ConfigurationError, DomainError, InfeasibleBandError,
                     NumericalDivergenceError, OutOfBandError, ScenarioParseError, WPTError)
from .harness import OUTPUT_ENV, duty_sweep, run_scenario, summarize
from .metrics import analyze
from .plant import achievable_band
from .scenario import parse_quantity, parse_scenario
from .simcore import Trace

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_THRESHOLD = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _quantity(unit):
    def conv(text):
        try:
            return parse_quantity(text, unit, key="argument")
        except ScenarioParseError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    conv.__name__ = f"quantity[{unit}]"
    return conv


def _quantity_list(unit):
    one = _quantity(unit)

    def conv(text):
        return [one(x) for x in text.split(",") if x.strip()]
    conv.__name__ = f"list[{unit}]"
    return conv


def _emit(lines):
    for line in lines:
        print(line)


# ---------------------------------------------------------------------------
# design


def cmd_design(args):
    l_r, c_r1, c_r2 = args.l_r, args.c_r1, args.c_r2
    t_filter, sense = args.t_filter, args.sense_mode
    f_low, f_high = args.f_low, args.f_high
    if args.scenario:
        sc = parse_scenario(args.scenario)
        p = sc.params
        l_r = l_r or p.l_r
        c_r1 = c_r1 or p.c_r1
        c_r2 = c_r2 or p.c_r2
        if sc.controller is not None:
            t_filter = sc.controller.t_filter if t_filter is None else t_filter
            sense = sense or sc.controller.sense_mode
        freqs = sc.schedule.frequencies()
        f_low = f_low or (min(freqs) if freqs else None)
        f_high = f_high or (max(freqs) if freqs else None)
    if l_r is None or c_r2 is None or f_low is None or f_high is None:
        raise ConfigurationError("design needs --l-r, --c-r2, --f-low and --f-high (or --scenario)")
    band = DesignBand(f_low, f_high, t_filter or 0.0, sense or "load-voltage")
    rep = select_capacitors(band, l_r, c_r2, c_r1)
    lines = [
        f"design band       {f_low / 1e3:.3f} - {f_high / 1e3:.3f} kHz  ({band.sense_mode}, "
        f"t_filter {band.t_filter * 1e6:.3f} us)",
        f"ideal C at f_low  {ideal_capacitance(f_low, l_r) * 1e9:.4f} nF",
        f"ideal C at f_high {ideal_capacitance(f_high, l_r) * 1e9:.4f} nF",
        f"C_R1 max          {rep.c_r1_max * 1e9:.4f} nF",
        f"C_R2 min          {rep.c_r2_min * 1e9:.4f} nF",
    ]
    if c_r1 is not None:
        lo, hi = achievable_band(l_r, c_r1, c_r2)
        lines.append(f"candidate         C_R1 {c_r1 * 1e9:.4f} nF, C_R2 {c_r2 * 1e9:.4f} nF")
        lines.append(f"achievable band   {lo / 1e3:.3f} - {hi / 1e3:.3f} kHz")
    lines.append(f"feasible          {'yes' if rep.feasible else 'no'}")
    _emit(lines)
    return EXIT_OK if rep.feasible else EXIT_THRESHOLD


# ---------------------------------------------------------------------------
# table


def cmd_table(args):
    sc = parse_scenario(args.scenario)
    p = sc.params
    freqs = args.freqs or [f for f in sc.schedule.frequencies() if p.band[0] <= f <= p.band[1]]
    if not freqs:
        raise ConfigurationError("no in-band frequencies to tabulate")
    table = build_frequency_table(freqs, p.l_r, p.c_r1, p.c_r2)
    if args.calibrate:
        ctrl = sc.controller
        kwargs = {"dt": sc.sim.dt}
        if ctrl is not None:
            kwargs.update(sense_mode=ctrl.sense_mode, t_filter=ctrl.t_filter)
        entries = []
        for e in table:
            res = calibrate_entry(e, p, full=True, **kwargs)
            print(f"{e.freq / 1e3:9.3f} kHz  t_on x{res.entry.duty.t_on / e.duty.t_on:.4f}  "
                  f"phase {res.phase_deg:7.2f} deg  {res.status} ({res.iterations} iterations)",
                  file=sys.stderr)
            entries.append(res.entry)
        table = FrequencyTable(entries)
    if args.output:
        table.to_csv(args.output)
    else:
        print("freq_hz,t_on_s,t_off_s,origin")
        for e in table:
            print(f"{e.freq!r},{e.duty.t_on!r},{e.duty.t_off!r},{e.origin}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def _output_dir(args, sc, many):
    base = args.out or os.environ.get(OUTPUT_ENV)
    if base is None:
        return sc.output_dir
    return Path(base) / sc.name if many else Path(base)


def _simulate_one(path, out, thresholds):
    sc = parse_scenario(path)
    out_dir = out if out is not None else sc.output_dir
    res = run_scenario(sc, out_dir)
    lines = [f"== {sc.name} -> {out_dir}"] + [f"warning: {w}" for w in sc.warnings]
    lines += summarize(res.metrics)
    return lines, violations(res.metrics, **thresholds)


def violations(metrics, min_ratio=None, max_lock_cycles=None, max_lock_time=None):
    bad = []
    for h in metrics.hops:
        if min_ratio is not None and not h.stolen_ratio >= min_ratio:
            bad.append(f"hop {h.index}: stolen ratio {h.stolen_ratio:.3f} < {min_ratio}")
        if max_lock_cycles is not None and not h.lock_time_cycles <= max_lock_cycles:
            bad.append(f"hop {h.index}: lock {h.lock_time_cycles:.1f} cycles > {max_lock_cycles}")
        if max_lock_time is not None and not h.lock_time_s <= max_lock_time:
            bad.append(f"hop {h.index}: lock {h.lock_time_s * 1e6:.1f} us > {max_lock_time * 1e6:.1f} us")
    return bad


def cmd_simulate(args):
    many = len(args.scenarios) > 1
    jobs = []
    for path in args.scenarios:
        sc = parse_scenario(path)  # validate everything before running anything
        jobs.append((path, _output_dir(args, sc, many)))
    thresholds = {"min_ratio": args.min_ratio, "max_lock_cycles": args.max_lock_cycles,
                  "max_lock_time": args.max_lock_time}
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_simulate_one, p, o, thresholds) for p, o in jobs]
            results = [f.result() for f in futures]
    else:
        results = [_simulate_one(p, o, thresholds) for p, o in jobs]
    failed = False
    for lines, bad in results:
        _emit(lines)
        for b in bad:
            print(f"threshold violated: {b}")
        failed |= bool(bad)
    return EXIT_THRESHOLD if failed else EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def cmd_sweep(args):
    sc = parse_scenario(args.scenario)
    if args.t_off is not None:
        values = args.t_off
    else:
        start, stop, n = args.t_off_range
        values = list(np.linspace(start, stop, int(n)))
    kwargs = {"dt": sc.sim.dt}
    if sc.controller is not None:
        kwargs.update(sense_mode=sc.controller.sense_mode, t_filter=sc.controller.t_filter)
    out = args.output
    if out is None:
        base = Path(os.environ.get(OUTPUT_ENV) or sc.output_dir)
        base.mkdir(parents=True, exist_ok=True)
        out = base / f"sweep_{args.freq / 1e3:g}kHz.csv"
    points = duty_sweep(sc.params, args.freq, values, csv_path=out, **kwargs)
    for q in points:
        print(f"t_off {q.t_off * 1e6:8.4f} us  |I_R| {q.amplitude:9.5f} A  phase {q.phase_deg:8.3f} deg")
    print(f"wrote {out}")
    return EXIT_OK


def _range(text):
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected start:stop:count")
    q = _quantity("s")
    try:
        n = int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError("count must be an integer") from None
    if n < 1:
        raise argparse.ArgumentTypeError("count must be >= 1")
    return q(parts[0]), q(parts[1]), n


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(args):
    try:
        trace = Trace.from_csv(args.trace)
    except (OSError, ValueError, KeyError, StopIteration) as exc:
        raise ScenarioParseError(f"cannot read trace: {exc}", None, args.trace) from exc
    metrics = analyze(trace, attacker=args.attacker)
    _emit(summarize(metrics))
    if args.output:
        metrics.to_csv(args.output)
    bad = violations(metrics, args.min_ratio, args.max_lock_cycles, args.max_lock_time)
    for b in bad:
        print(f"threshold violated: {b}")
    return EXIT_THRESHOLD if bad else EXIT_OK


# ---------------------------------------------------------------------------


def _add_thresholds(p):
    p.add_argument("--min-ratio", type=float, help="fail (exit 3) if any hop's stolen ratio is lower")
    p.add_argument("--max-lock-cycles", type=float, help="fail (exit 3) if any hop locks slower")
    p.add_argument("--max-lock-time", type=_quantity("s"), help="fail (exit 3) above this lock time")


def build_parser():
    parser = _Parser(prog="wpt-intercept",
                     description="Frequency-tracking intruder on a frequency-hopping wireless power link.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("design", help="capacitor bounds and feasibility for a frequency band")
    p.add_argument("--scenario", help="take coil, capacitors and band from a scenario")
    p.add_argument("--l-r", type=_quantity("H"))
    p.add_argument("--c-r1", type=_quantity("F"))
    p.add_argument("--c-r2", type=_quantity("F"))
    p.add_argument("--f-low", type=_quantity("Hz"))
    p.add_argument("--f-high", type=_quantity("Hz"))
    p.add_argument("--t-filter", type=_quantity("s"))
    p.add_argument("--sense-mode", choices=("capacitor-voltage", "load-voltage"))
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("table", help="build (and optionally calibrate) a frequency table")
    p.add_argument("scenario")
    p.add_argument("--freqs", type=_quantity_list("Hz"), help="comma list, default: schedule frequencies")
    p.add_argument("--calibrate", action="store_true", help="trim each entry by simulation")
    p.add_argument("-o", "--output", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("simulate", help="run scenarios and write reports")
    p.add_argument("scenarios", nargs="+")
    p.add_argument("--jobs", type=int, default=1, help="scenarios to run concurrently")
    p.add_argument("--out", help=f"output directory (overrides ${OUTPUT_ENV} and the scenario)")
    _add_thresholds(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="steady-state |I_R| and phase against t_off at one frequency")
    p.add_argument("scenario")
    p.add_argument("--freq", type=_quantity("Hz"), required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--t-off", type=_quantity_list("s"), help="comma list of t_off values")
    g.add_argument("--t-off-range", type=_range, help="start:stop:count")
    p.add_argument("-o", "--output", help="CSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="recompute metrics from a saved trace CSV")
    p.add_argument("trace")
    p.add_argument("--attacker", help="receiver name of the intruder (default: attacker)")
    p.add_argument("-o", "--output", help="metrics CSV path")
    _add_thresholds(p)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # scenario warnings are printed in the summary
            return args.func(args)
    except (NumericalDivergenceError, CalibrationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ScenarioParseError, ConfigurationError, DomainError, OutOfBandError,
            InfeasibleBandError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WPTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
