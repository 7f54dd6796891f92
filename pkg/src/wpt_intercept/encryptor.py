"""Transmitter-side frequency-hopping key schedules and the power-mismatch
defense monitor."""
from __future__ import annotations

import csv
import itertools
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass
class HopGeneratorState:
    rng: np.random.Generator
    freq_set: tuple
    dwell_range: tuple
    prev: float | None = None


def make_generator_state(freq_set, dwell_range, seed):
    freq_set = tuple(float(f) for f in freq_set)
    if not freq_set:
        raise ConfigurationError("freq_set must not be empty")
    return HopGeneratorState(np.random.default_rng(seed), freq_set, tuple(dwell_range))


def next_hop(state):
    """Draw the next (freq, dwell) pair.

    The frequency is uniform over the set minus the previous frequency (a
    single-frequency set repeats). The dwell is uniform in ``dwell_range``.
    """
    choices = [f for f in state.freq_set if f != state.prev] or list(state.freq_set)
    freq = choices[int(state.rng.integers(len(choices)))]
    lo, hi = state.dwell_range
    dwell = float(state.rng.uniform(lo, hi)) if hi > lo else float(lo)
    state.prev = freq
    return freq, dwell, state


@dataclass(frozen=True)
class HopSchedule:
    """The "key": explicit (freq, dwell) pairs, optionally cycled, or a seeded generator."""

    entries: tuple = ()
    cycle: bool = False
    freq_set: tuple = ()
    dwell_range: tuple = (0.5e-3, 2e-3)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple((float(f), float(d)) for f, d in self.entries))
        object.__setattr__(self, "freq_set", tuple(float(f) for f in self.freq_set))
        object.__setattr__(self, "dwell_range", tuple(float(d) for d in self.dwell_range))
        if self.entries and self.freq_set:
            raise ConfigurationError("schedule has both explicit entries and a generator")
        for f, d in self.entries:
            if not (f > 0 and d > 0 and math.isfinite(f) and math.isfinite(d)):
                raise ConfigurationError(f"invalid hop ({f}, {d}): freq and dwell must be > 0")
        for f in self.freq_set:
            if not (f > 0 and math.isfinite(f)):
                raise ConfigurationError(f"invalid frequency {f}")
        lo, hi = self.dwell_range
        if self.freq_set and not (0 < lo <= hi):
            raise ConfigurationError(f"invalid dwell_range {self.dwell_range}")

    @classmethod
    def fixed(cls, freq, dwell=1.0):
        return cls(entries=((freq, dwell),))

    @classmethod
    def alternating(cls, freqs, dwell):
        return cls(entries=tuple((f, dwell) for f in freqs), cycle=True)

    @classmethod
    def random(cls, freq_set, dwell_range=(0.5e-3, 2e-3), seed=0):
        return cls(freq_set=tuple(freq_set), dwell_range=tuple(dwell_range), seed=seed)

    @property
    def is_generated(self):
        return bool(self.freq_set)

    @property
    def is_empty(self):
        return not self.entries and not self.freq_set

    def frequencies(self):
        return sorted(set(self.freq_set) | {f for f, _ in self.entries})

    @property
    def max_frequency(self):
        fs = self.frequencies()
        return max(fs) if fs else 0.0

    def iter_hops(self):
        if self.freq_set:
            return self._generate()
        if self.cycle and self.entries:
            return itertools.cycle(self.entries)
        return iter(self.entries)

    def _generate(self):
        state = make_generator_state(self.freq_set, self.dwell_range, self.seed)
        while True:
            freq, dwell, state = next_hop(state)
            yield freq, dwell

    def starts(self, duration):
        """``(t_start, freq)`` of every hop beginning before ``duration``."""
        out = []
        t = 0.0
        for freq, dwell in self.iter_hops():
            if t >= duration:
                break
            out.append((t, freq))
            t += dwell
        return out


def write_schedule_csv(starts, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_start_s", "freq_hz"])
        for t, f in starts:
            w.writerow([repr(float(t)), repr(float(f))])


@dataclass(frozen=True)
class DefenseConfig:
    enabled: bool = False
    mismatch_threshold: float = 0.2
    reaction_delay: float = 100e-6

    def __post_init__(self):
        if not 0 < self.mismatch_threshold < 1:
            raise ConfigurationError("mismatch_threshold must lie in (0, 1)")
        if self.reaction_delay < 0:
            raise ConfigurationError("reaction_delay must be >= 0")


class DefenseMonitor:
    """Flags a hop when transmitted power exceeds authorized received power.

    Call with instantaneous or averaged powers; the flag is raised once the
    relative mismatch has stayed above threshold for ``reaction_delay``.
    """

    def __init__(self, config):
        self.config = config
        self._since = None

    def reset(self):
        self._since = None

    def __call__(self, p_transmitted, p_authorized_sum, t):
        if not self.config.enabled or p_transmitted <= 0:
            self._since = None
            return False
        mismatch = (p_transmitted - p_authorized_sum) / p_transmitted
        if mismatch <= self.config.mismatch_threshold:
            self._since = None
            return False
        if self._since is None:
            self._since = t
        if t - self._since >= self.config.reaction_delay:
            self._since = None
            return True
        return False


def defense_monitor(p_transmitted, p_authorized_sum, config, clock, monitor=None):
    """Functional form; pass the same ``monitor`` across calls to keep timing state."""
    monitor = monitor or DefenseMonitor(config)
    return monitor(p_transmitted, p_authorized_sum, clock), monitor


class SlidingMean:
    """Mean of the last ``n`` samples; ``n`` may change (e.g. at a hop)."""

    def __init__(self, n=1):
        self.n = max(1, int(n))
        self._buf = deque()
        self._sum = 0.0

    def resize(self, n):
        self.n = max(1, int(n))
        while len(self._buf) > self.n:
            self._sum -= self._buf.popleft()

    def push(self, x):
        self._buf.append(x)
        self._sum += x
        if len(self._buf) > self.n:
            self._sum -= self._buf.popleft()
        return self._sum / len(self._buf)
