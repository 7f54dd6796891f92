"""Scenario files: sectioned ``key = value`` text with SI-prefixed units.

Grammar (one item per line, ``#`` starts a comment)::

    [section]            plant | attacker | schedule | defense | sim | output
    [receiver NAME]      one fixed receiver per section
    key = value

Quantities take an optional SI prefix (p n u µ m k M G) and the unit the
key expects (H, F, ohm, A, V, s, Hz); a bare number is read in base units.
Lists are comma separated; hops are ``freq:dwell`` pairs.
"""
from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .design import FrequencyTable, build_frequency_table
from .encryptor import DefenseConfig, HopSchedule
from .errors import ScenarioParseError, WPTError
from .interceptor import ControllerConfig
from .plant import FixedReceiver, Plant, SystemParams
from .simcore import SimConfig

PREFIXES = {"p": 1e-12, "n": 1e-9, "u": 1e-6, "µ": 1e-6, "m": 1e-3, "": 1.0, "k": 1e3, "M": 1e6, "G": 1e9}
UNIT_ALIASES = {"Ω": "ohm", "Ohm": "ohm", "ohms": "ohm"}
_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-zµΩ]*)\s*$")

# key -> (kind, unit); kind in quantity | int | bool | str | freq_list | hops
SCHEMA = {
    "plant": {
        "l_t": ("quantity", "H"), "l_r": ("quantity", "H"), "m_r": ("quantity", "H"),
        "c_r1": ("quantity", "F"), "c_r2": ("quantity", "F"), "r_load": ("quantity", "ohm"),
        "i_t_amplitude": ("quantity", "A"), "delta_v_d": ("quantity", "V"),
        "r_switch": ("quantity", "ohm"),
    },
    "receiver": {
        "resonance": ("quantity", "Hz"), "l": ("quantity", "H"), "c": ("quantity", "F"),
        "r_load": ("quantity", "ohm"), "m": ("quantity", "H"),
    },
    "attacker": {
        "enabled": ("bool", None), "sense_mode": ("str", None), "t_filter": ("quantity", "s"),
        "estimation_window": ("quantity", "s"), "adopt_radius": ("quantity", "Hz"),
        "phase_tolerance": ("float", None), "trim_gain": ("float", None),
        "distortion_rel_tol": ("float", None), "estimate_rel_tol": ("float", None),
        "distortion_count": ("int", None),
        "regulation_enabled": ("bool", None), "fast_adopt_intervals": ("int", None),
        "fast_adopt_radius": ("float", None), "memorize": ("bool", None),
        "sense_noise": ("quantity", "V"), "refine_threshold": ("quantity", "Hz"),
        "regulation_interval": ("quantity", "s"), "rel_hysteresis": ("float", None),
        "calibration_mode": ("bool", None), "regulation_settle_deg": ("float", None),
        "table": ("freq_list", "Hz"), "table_file": ("str", None),
    },
    "schedule": {
        "hops": ("hops", None), "cycle": ("bool", None), "freq_set": ("freq_list", "Hz"),
        "dwell_min": ("quantity", "s"), "dwell_max": ("quantity", "s"), "seed": ("int", None),
    },
    "defense": {
        "enabled": ("bool", None), "mismatch_threshold": ("float", None),
        "reaction_delay": ("quantity", "s"),
    },
    "sim": {
        "duration": ("quantity", "s"), "dt": ("quantity", "s"), "seed": ("int", None),
        "record_decimation": ("int", None),
    },
    "output": {"dir": ("str", None)},
}
REQUIRED = {"plant": ("l_t", "l_r", "m_r", "c_r1", "c_r2", "r_load"), "sim": ("duration",)}
NONNEGATIVE = {"delta_v_d", "r_switch", "t_filter", "sense_noise", "refine_threshold"}


@dataclass
class Scenario:
    plant: Plant
    controller: ControllerConfig | None
    table: FrequencyTable | None
    schedule: HopSchedule
    defense: DefenseConfig
    sim: SimConfig
    output_dir: Path
    name: str = "scenario"
    path: Path | None = None
    warnings: list = field(default_factory=list)

    @property
    def params(self):
        return self.plant.params


def parse_quantity(text, unit, where=None, key=""):
    m = _NUMBER.match(text)
    if not m:
        raise ScenarioParseError(f"{key}: cannot read a number from {text!r}", *_loc(where))
    value = float(m.group(1))
    suffix = UNIT_ALIASES.get(m.group(2), m.group(2))
    if suffix:
        scale = None
        if unit is not None:
            for prefix, factor in PREFIXES.items():
                rest = suffix[len(prefix):]
                if suffix.startswith(prefix) and UNIT_ALIASES.get(rest, rest) == unit:
                    scale = factor
                    break
        if scale is None:
            raise ScenarioParseError(f"{key}: unit {m.group(2)!r} does not match expected {unit or 'none'}",
                                     *_loc(where))
        value *= scale
    if not math.isfinite(value):
        raise ScenarioParseError(f"{key}: value must be finite", *_loc(where))
    return value


def _loc(where):
    return where if where is not None else (None, None)


def _convert(kind, unit, raw, key, where):
    if kind == "quantity":
        return parse_quantity(raw, unit, where, key)
    if kind == "float":
        return parse_quantity(raw, None, where, key)
    if kind == "int":
        v = parse_quantity(raw, None, where, key)
        if v != int(v):
            raise ScenarioParseError(f"{key}: expected an integer, got {raw!r}", *where)
        return int(v)
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ScenarioParseError(f"{key}: expected true/false, got {raw!r}", *where)
    if kind == "str":
        return raw.strip()
    if kind == "freq_list":
        return [parse_quantity(x, unit, where, key) for x in raw.split(",") if x.strip()]
    if kind == "hops":
        hops = []
        for item in raw.split(","):
            if not item.strip():
                continue
            if ":" not in item:
                raise ScenarioParseError(f"{key}: hop {item.strip()!r} is not freq:dwell", *where)
            f, d = item.split(":", 1)
            hops.append((parse_quantity(f, "Hz", where, key), parse_quantity(d, "s", where, key)))
        return hops
    raise AssertionError(kind)


def parse_scenario_text(text, path=None):
    """Parse scenario text into raw typed sections: ``{section: {key: value}}``."""
    sections = {}
    receivers = []
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        where = (lineno, str(path) if path else None)
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ScenarioParseError(f"malformed section header {line!r}", *where)
            head = line[1:-1].split()
            if not head:
                raise ScenarioParseError("empty section header", *where)
            if head[0] == "receiver":
                if len(head) != 2:
                    raise ScenarioParseError("receiver section needs exactly one name", *where)
                current = {"name": head[1], "_line": lineno}
                receivers.append(current)
                kind = "receiver"
            elif head[0] in SCHEMA and len(head) == 1:
                if head[0] in sections:
                    raise ScenarioParseError(f"duplicate section [{head[0]}]", *where)
                current = sections.setdefault(head[0], {})
                kind = head[0]
            else:
                raise ScenarioParseError(f"unknown section [{' '.join(head)}]", *where)
            current_kind = kind
            continue
        if current is None:
            raise ScenarioParseError("key outside of any section", *where)
        if "=" not in line:
            raise ScenarioParseError(f"expected key = value, got {line!r}", *where)
        key, raw = (x.strip() for x in line.split("=", 1))
        schema = SCHEMA[current_kind]
        if key not in schema:
            raise ScenarioParseError(f"unknown key {key!r} in [{current_kind}]", *where)
        if key in current:
            raise ScenarioParseError(f"duplicate key {key!r}", *where)
        kind, unit = schema[key]
        value = _convert(kind, unit, raw, key, where)
        if kind == "quantity":
            ok = value >= 0 if key in NONNEGATIVE else value > 0
            if not ok:
                raise ScenarioParseError(f"{key} must be {'>= 0' if key in NONNEGATIVE else '> 0'}, "
                                         f"got {raw}", *where)
        current[key] = value
        current.setdefault("_lines", {})[key] = lineno
    for name, keys in REQUIRED.items():
        sec = sections.get(name)
        if sec is None:
            raise ScenarioParseError(f"missing section [{name}]", None, str(path) if path else None)
        for key in keys:
            if key not in sec:
                raise ScenarioParseError(f"missing required key {key!r} in [{name}]", None,
                                         str(path) if path else None)
    return sections, receivers


def _public(d):
    return {k: v for k, v in d.items() if not k.startswith("_")}


def build_scenario(sections, receivers, path=None):
    path = Path(path) if path else None
    base = path.parent if path else Path.cwd()
    pfile = str(path) if path else None
    notes = []

    def guarded(section, build):
        try:
            return build()
        except WPTError as exc:
            if isinstance(exc, ScenarioParseError):
                raise
            raise ScenarioParseError(f"[{section}] {exc}", None, pfile) from exc

    params = guarded("plant", lambda: SystemParams(**_public(sections["plant"])))
    fixed = []
    for rx in receivers:
        vals = _public(rx)
        name = vals.pop("name")
        line = rx["_line"]
        l = vals.get("l", params.l_r)
        r = vals.get("r_load", params.r_load)
        m = vals.get("m", params.m_r)
        if "resonance" in vals and "c" in vals:
            raise ScenarioParseError(f"receiver {name}: give resonance or c, not both", line, pfile)
        if "resonance" in vals:
            fixed.append(guarded("receiver", lambda: FixedReceiver.tuned(vals["resonance"], l, r, m, name)))
        elif "c" in vals:
            fixed.append(guarded("receiver", lambda: FixedReceiver(l, vals["c"], r, m, name)))
        else:
            raise ScenarioParseError(f"receiver {name}: missing resonance or c", line, pfile)
    names = [r.name for r in fixed]
    if len(set(names)) != len(names) or "attacker" in names:
        raise ScenarioParseError("receiver names must be unique and not 'attacker'", None, pfile)

    att = _public(sections.get("attacker", {}))
    enabled = att.pop("enabled", True) if "attacker" in sections else False
    table_freqs = att.pop("table", None)
    table_file = att.pop("table_file", None)
    controller = table = None
    if enabled:
        controller = guarded("attacker", lambda: ControllerConfig(**att))
        if table_file:
            tpath = Path(table_file)
            tpath = tpath if tpath.is_absolute() else base / tpath
            try:
                table = FrequencyTable.from_csv(tpath)
            except OSError as exc:
                raise ScenarioParseError(f"cannot read table_file {tpath}: {exc}", None, pfile) from exc
        elif table_freqs:
            table = guarded("attacker", lambda: build_frequency_table(table_freqs, params.l_r,
                                                                      params.c_r1, params.c_r2))
        else:
            table = FrequencyTable()
    plant = Plant(params, tuple(fixed), attacker=enabled)

    sch = _public(sections.get("schedule", {}))
    if "hops" in sch and "freq_set" in sch:
        raise ScenarioParseError("[schedule] give hops or freq_set, not both", None, pfile)
    if "hops" in sch:
        schedule = guarded("schedule", lambda: HopSchedule(entries=tuple(sch["hops"]),
                                                           cycle=sch.get("cycle", False)))
    elif "freq_set" in sch:
        dwell = (sch.get("dwell_min", 0.5e-3), sch.get("dwell_max", 2e-3))
        schedule = guarded("schedule", lambda: HopSchedule.random(sch["freq_set"], dwell, sch.get("seed", 0)))
    else:
        raise ScenarioParseError("[schedule] needs hops or freq_set", None, pfile)

    defense = guarded("defense", lambda: DefenseConfig(**_public(sections.get("defense", {}))))
    sim = guarded("sim", lambda: SimConfig(**_public(sections["sim"])))
    guarded("sim", lambda: sim.check_resolution(schedule.max_frequency))

    lo, hi = params.band
    for f in schedule.frequencies():
        if not lo <= f <= hi:
            msg = f"schedule frequency {f:g} Hz lies outside the attacker band [{lo:g}, {hi:g}] Hz"
            notes.append(msg)
            warnings.warn(msg, stacklevel=2)

    out = _public(sections.get("output", {})).get("dir")
    name = path.stem if path else "scenario"
    out_dir = Path(out) if out else Path("out") / name
    if not out_dir.is_absolute() and path is not None and out:
        out_dir = base / out_dir
    return Scenario(plant, controller, table, schedule, defense, sim, out_dir, name, path, notes)


def parse_scenario(file):
    """Read and validate a scenario file."""
    path = Path(file)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario: {exc}", None, str(path)) from exc
    sections, receivers = parse_scenario_text(text, path)
    return build_scenario(sections, receivers, path)


def bundled_scenario(name):
    """Path of a scenario shipped with the package (``desk`` or ``wideband``)."""
    from importlib import resources
    return Path(str(resources.files("wpt_intercept") / "scenarios" / f"{name}.scenario"))
