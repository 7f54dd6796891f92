"""Simulation of a frequency-tracking intruder on a frequency-hopping
wireless power link."""
from .design import (DesignBand, DutyTimes, FrequencyTable, FrequencyTableEntry,
                     build_frequency_table, calibrate_entry, equivalent_capacitance,
                     ideal_capacitance, select_capacitors, splitting_factors, ton_toff)
from .encryptor import DefenseConfig, HopSchedule
from .errors import (CalibrationError, ConfigurationError, DomainError, InfeasibleBandError,
                     InsufficientDataError, NumericalDivergenceError, OutOfBandError,
                     ScenarioParseError, UndefinedPhaseError, WPTError)
from .harness import RunResult, duty_sweep, emit_report, run_scenario, simulate
from .interceptor import ControllerConfig, Interceptor
from .metrics import analyze, lock_time, phase_between, steady_state_power
from .plant import FixedReceiver, Plant, SystemParams
from .scenario import Scenario, bundled_scenario, parse_scenario
from .simcore import SimConfig, Simulation, Trace, run

__version__ = "0.1.0"
