import math
from collections import Counter

import numpy as np
import pytest

from wpt_intercept import (ConfigurationError, DefenseConfig, HopSchedule, Interceptor, Plant,
                           SimConfig, Simulation, FrequencyTable)
from wpt_intercept.encryptor import (DefenseMonitor, SlidingMean, defense_monitor,
                                     make_generator_state, next_hop, write_schedule_csv)


def draws(freq_set, n, seed=0, dwell=(1e-3, 2e-3)):
    state = make_generator_state(freq_set, dwell, seed)
    out = []
    for _ in range(n):
        f, d, state = next_hop(state)
        out.append((f, d))
    return out


def test_two_frequencies_alternate():
    seq = [f for f, _ in draws([65e3, 125e3], 50)]
    assert all(a != b for a, b in zip(seq, seq[1:]))


def test_seed_determinism():
    assert draws([65e3, 90e3, 125e3], 100, seed=42) == draws([65e3, 90e3, 125e3], 100, seed=42)
    assert draws([65e3, 90e3, 125e3], 100, seed=42) != draws([65e3, 90e3, 125e3], 100, seed=43)


def test_uniform_over_set():
    seq = draws([65e3, 90e3, 125e3], 1000, seed=7)
    counts = Counter(f for f, _ in seq)
    for f in (65e3, 90e3, 125e3):
        assert abs(counts[f] / 1000 - 1 / 3) <= 0.05
    chi2 = sum((c - 1000 / 3) ** 2 / (1000 / 3) for c in counts.values())
    assert chi2 < 13.8  # 2 dof, p = 0.001
    assert all(1e-3 <= d <= 2e-3 for _, d in seq)


def test_single_frequency_repeats():
    assert {f for f, _ in draws([65e3], 5)} == {65e3}


def test_schedule_forms(tmp_path):
    s = HopSchedule.alternating([65e3, 125e3], 1e-3)
    assert s.starts(3.5e-3) == [(0.0, 65e3), (1e-3, 125e3), (2e-3, 65e3), (3e-3, 125e3)]
    assert HopSchedule(entries=((65e3, 1e-3),)).starts(5e-3) == [(0.0, 65e3)]
    r = HopSchedule.random([65e3, 125e3], (1e-4, 2e-4), seed=3)
    assert r.is_generated and r.frequencies() == [65e3, 125e3]
    assert r.starts(1e-3) == HopSchedule.random([65e3, 125e3], (1e-4, 2e-4), seed=3).starts(1e-3)
    assert HopSchedule().is_empty and HopSchedule().max_frequency == 0.0
    write_schedule_csv(s.starts(2e-3), tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines() == ["t_start_s,freq_hz", "0.0,65000.0",
                                                            "0.001,125000.0"]


def test_schedule_validation():
    with pytest.raises(ConfigurationError):
        HopSchedule(entries=((65e3, 0.0),))
    with pytest.raises(ConfigurationError):
        HopSchedule(entries=((-65e3, 1e-3),))
    with pytest.raises(ConfigurationError):
        HopSchedule(entries=((65e3, 1e-3),), freq_set=(65e3,))
    with pytest.raises(ConfigurationError):
        HopSchedule.random([65e3], (2e-3, 1e-3))
    with pytest.raises(ConfigurationError):
        make_generator_state([], (1e-3, 2e-3), 0)


def test_defense_never_flags_without_mismatch():
    mon = DefenseMonitor(DefenseConfig(enabled=True))
    assert not any(mon(10.0, 9.5, k * 1e-6) for k in range(1000))
    assert not any(mon(0.0, 0.0, k * 1e-6) for k in range(1000))


def test_defense_flags_stealing_after_delay():
    cfg = DefenseConfig(enabled=True, mismatch_threshold=0.2, reaction_delay=100e-6)
    mon = DefenseMonitor(cfg)
    # the thief takes 65% of what is delivered
    flagged = [t for t in np.arange(0, 300e-6, 1e-6) if mon(100.0, 35.0, t)]
    assert flagged[0] == pytest.approx(100e-6, abs=1.5e-6)


def test_defense_ignores_short_mismatch():
    mon = DefenseMonitor(DefenseConfig(enabled=True, reaction_delay=100e-6))
    flags = []
    for k in range(1000):
        t = k * 1e-6
        stealing = (k // 50) % 2 == 0  # 50 us bursts
        flags.append(mon(100.0, 35.0 if stealing else 100.0, t))
    assert not any(flags)


def test_defense_disabled_and_functional_form():
    assert not DefenseMonitor(DefenseConfig())(100.0, 0.0, 1.0)
    cfg = DefenseConfig(enabled=True, reaction_delay=0.0)
    flag, mon = defense_monitor(100.0, 10.0, cfg, 0.0)
    assert flag
    with pytest.raises(ConfigurationError):
        DefenseConfig(mismatch_threshold=1.5)


def test_sliding_mean():
    m = SlidingMean(3)
    assert [m.push(x) for x in (1.0, 2.0, 3.0, 4.0)] == [1.0, 1.5, 2.0, 3.0]
    m.resize(1)
    assert m.push(10.0) == 10.0


def test_defense_truncates_dwell_in_simulation(desk):
    table = FrequencyTable.from_csv(
        __import__("importlib.resources").resources.files("wpt_intercept") / "scenarios" / "desk_table.csv")
    rx = desk.matched_receiver(65e3, "rx65")
    sched = HopSchedule.random([65e3, 125e3], (1e-3, 1e-3), seed=1)
    sim = Simulation(Plant(desk, fixed=(rx,)), [Interceptor(desk, table)], sched,
                     SimConfig(duration=1.5e-3), defense=DefenseConfig(enabled=True))
    sim.advance()
    tr = sim.trace()
    hops = [e for e in sim.events if e[0] == "defense_hop"]
    assert hops, "the monitor should notice the intruder"
    # the first dwell ends early, well before its nominal 1 ms
    first = tr.dwells()[0]
    assert first[1] < 1e-3
    assert tr.dwells()[1][2] != first[2]
