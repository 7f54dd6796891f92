import math

import pytest
from hypothesis import given, settings, strategies as st

from wpt_intercept import (DesignBand, DomainError, DutyTimes, FrequencyTable, FrequencyTableEntry,
                           InfeasibleBandError, OutOfBandError, build_frequency_table,
                           equivalent_capacitance, ideal_capacitance, select_capacitors,
                           splitting_factors, ton_toff)
from wpt_intercept.design import duty_argument
from wpt_intercept.plant import achievable_band, resonant_frequency

T3 = (38e-6, 22e-9, 147e-9)
S4 = (80e-6, 3e-9, 130e-9)


def bisect(fn, lo, hi, n=200):
    flo = fn(lo)
    for _ in range(n):
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def toff_oracle(f, l_r, c1, c2):
    # open time whose equivalent capacitance resonates with l_r, found by bisection
    target = 1.0 / ideal_capacitance(f, l_r)

    def g(t_off):
        k = math.cos(math.pi * f * t_off)
        return (1 - k) / c1 + k / (c1 + c2) - target
    return bisect(g, 0.0, 0.5 / f)


@pytest.mark.parametrize("f, t_on, t_off", [(65e3, 6.97e-6, 0.72e-6), (125e3, 1.50e-6, 2.50e-6)])
def test_ton_toff_examples(f, t_on, t_off):
    d = ton_toff(f, *T3)
    assert d.t_on == pytest.approx(t_on, abs=0.01e-6)
    assert d.t_off == pytest.approx(t_off, abs=0.01e-6)
    assert d.t_off == pytest.approx(toff_oracle(f, *T3), rel=1e-9)
    assert d.t_on + d.t_off == pytest.approx(0.5 / f, rel=1e-12)


def test_ton_toff_at_c1_resonance_needs_no_switch():
    f = resonant_frequency(T3[0], T3[1])
    d = ton_toff(f, *T3)
    assert d.t_on == pytest.approx(0.0, abs=1e-15)
    assert d.t_off == pytest.approx(0.5 / f)


def test_ton_toff_errors():
    with pytest.raises(OutOfBandError) as err:
        ton_toff(500e3, *T3)
    assert err.value.band == pytest.approx(achievable_band(*T3))
    with pytest.raises(OutOfBandError):
        ton_toff(30e3, *T3)
    with pytest.raises(DomainError):
        ton_toff(-1.0, *T3)


def test_equivalent_capacitance_examples():
    f = 65e3
    assert equivalent_capacitance(0.0, f, 22e-9, 147e-9) == pytest.approx(169e-9)
    assert equivalent_capacitance(0.5 / f, f, 22e-9, 147e-9) == pytest.approx(22e-9)
    assert equivalent_capacitance(0.717e-6, f, 22e-9, 147e-9) == pytest.approx(157.8e-9, rel=1e-3)
    with pytest.raises(DomainError):
        equivalent_capacitance(1e-3, f, 22e-9, 147e-9)


def test_ideal_capacitance_examples():
    assert ideal_capacitance(324.9e3, 80e-6) == pytest.approx(3.0e-9, rel=1e-2)
    assert ideal_capacitance(65e3, 38e-6) == pytest.approx(157.8e-9, rel=1e-3)
    assert ideal_capacitance(130e3, 38e-6) == pytest.approx(ideal_capacitance(65e3, 38e-6) / 4)


def test_splitting_factors_examples():
    k1, k2 = splitting_factors(22e-9, 147e-9)
    assert (k1, k2) == (pytest.approx(0.1302, abs=1e-4), pytest.approx(0.8698, abs=1e-4))
    k1, k2 = splitting_factors(3e-9, 130e-9)
    assert (k1, k2) == (pytest.approx(0.0226, abs=1e-4), pytest.approx(0.9774, abs=1e-4))


@given(st.floats(1e-12, 1e-3), st.floats(1e-12, 1e-3))
def test_splitting_factors_sum_to_one(c1, c2):
    assert sum(splitting_factors(c1, c2)) == pytest.approx(1.0)


def _in_band(params, u):
    lo, hi = achievable_band(*params)
    return lo + u * (hi - lo)


@settings(max_examples=300)
@given(st.sampled_from([T3, S4]), st.floats(0.0, 1.0))
def test_roundtrip(params, u):
    f = _in_band(params, u)
    d = ton_toff(f, *params)
    c = equivalent_capacitance(d.t_off, f, params[1], params[2])
    assert c == pytest.approx(ideal_capacitance(f, params[0]), rel=1e-9)


@given(st.sampled_from([T3, S4]), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_t_on_monotone_decreasing_in_frequency(params, u, v):
    f1, f2 = sorted((_in_band(params, u), _in_band(params, v)))
    if f2 - f1 < 1e-6 * f2:
        return
    # higher frequency needs less capacitance, so a shorter closed fraction
    a1 = duty_argument(f1, *params)
    a2 = duty_argument(f2, *params)
    assert a1 >= a2
    assert ton_toff(f1, *params).t_on * f1 >= ton_toff(f2, *params).t_on * f2 - 1e-12


def implicit_bound_oracle(f_h, l_r, t_filter, c2):
    s = math.sin(math.pi * f_h * t_filter)
    target = (2 * math.pi * f_h) ** 2 * l_r
    return bisect(lambda c1: (1 - s) / c1 + s / (c1 + c2) - target, 1e-12, 1e-6)


def test_capacitor_voltage_bound():
    band = DesignBand(65e3, 125e3, 0.75e-6, "capacitor-voltage")
    rep = select_capacitors(band, 38e-6, 147e-9, 22e-9)
    oracle = implicit_bound_oracle(125e3, 38e-6, 0.75e-6, 147e-9)
    assert rep.c_r1_max == pytest.approx(33e-9, rel=0.02)
    assert rep.c_r1_max == pytest.approx(oracle, rel=0.02)
    assert rep.feasible


def test_load_voltage_bound():
    rep = select_capacitors(DesignBand(48.8e3, 324e3), 80e-6, 130e-9, 3e-9)
    assert rep.c_r1_max == pytest.approx(3.0e-9, rel=0.03)
    assert rep.c_r1_max == pytest.approx(ideal_capacitance(324e3, 80e-6))
    assert rep.feasible


def test_zero_filter_reduces_to_resonance_bound():
    a = select_capacitors(DesignBand(65e3, 125e3, 0.0, "capacitor-voltage"), 38e-6, 147e-9)
    b = select_capacitors(DesignBand(65e3, 125e3, 0.0, "load-voltage"), 38e-6, 147e-9)
    assert a.c_r1_max == pytest.approx(b.c_r1_max)


def test_infeasible_and_bad_bands():
    rep = select_capacitors(DesignBand(65e3, 125e3), 38e-6, 147e-9, 50e-9)  # C_R1 too large
    assert not rep.feasible
    with pytest.raises(InfeasibleBandError):
        select_capacitors(DesignBand(65e3, 125e3, 3.9e-6, "capacitor-voltage"), 38e-6, 1e-12)
    with pytest.raises(DomainError):
        DesignBand(125e3, 65e3)
    with pytest.raises(DomainError):
        DesignBand(65e3, 125e3, sense_mode="current")


def test_duty_times():
    d = DutyTimes.from_t_on(7e-6, 65e3)
    assert d.freq == pytest.approx(65e3)
    c = d.clamped(0.75e-6)
    assert c.t_on == pytest.approx(0.5 / 65e3 - 1.5e-6)
    assert d.clamped(0.0) is d
    with pytest.raises(DomainError):
        DutyTimes(1e-6, 1e-6, 1e-5)
    with pytest.raises(DomainError):
        DutyTimes(-1e-6, 6e-6, 1e-5)


def test_build_table_examples(tmp_path):
    table = build_frequency_table([125e3, 65e3, 65e3], *T3)
    assert table.frequencies == [65e3, 125e3]
    assert all(e.origin == "computed" for e in table)
    assert table[0].duty == ton_toff(65e3, *T3)
    assert len(build_frequency_table([], *T3)) == 0
    with pytest.raises(OutOfBandError):
        build_frequency_table([500e3], *T3)
    path = tmp_path / "t.csv"
    table.to_csv(path)
    back = FrequencyTable.from_csv(path)
    assert [(e.freq, e.duty, e.origin) for e in back] == [(e.freq, e.duty, e.origin) for e in table]


def test_table_merges_within_one_hertz():
    table = FrequencyTable()
    table.add(FrequencyTableEntry(65e3, ton_toff(65e3, *T3)))
    table.add(FrequencyTableEntry(65e3 + 0.5, ton_toff(65e3, *T3), "refined"))
    assert len(table) == 1 and table[0].origin == "refined"
    with pytest.raises(ValueError):
        FrequencyTableEntry(65e3, ton_toff(65e3, *T3), "guessed")
