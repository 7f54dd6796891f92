"""Exception types raised across the package."""


class WPTError(Exception):
    """Base class for all package errors."""


class ConfigurationError(WPTError, ValueError):
    """Invalid simulation or component configuration."""


class NumericalDivergenceError(WPTError, ArithmeticError):
    def __init__(self, step, detail=""):
        self.step = step
        msg = f"non-finite state at step {step}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class OutOfBandError(WPTError, ValueError):
    """Requested frequency cannot be reached by the switched-capacitor network."""

    def __init__(self, freq, band):
        self.freq = freq
        self.band = band
        super().__init__(
            f"{freq:.6g} Hz outside achievable band "
            f"[{band[0]:.6g}, {band[1]:.6g}] Hz"
        )


class DomainError(WPTError, ValueError):
    """Argument outside the domain of a closed-form expression."""


class InfeasibleBandError(WPTError, ValueError):
    """No capacitor pair can cover the requested band."""


class CalibrationError(WPTError, RuntimeError):
    """Duty-cycle trimming did not converge."""


class InsufficientDataError(WPTError, ValueError):
    """Not enough zero-crossing edges to estimate a frequency."""


class UndefinedPhaseError(WPTError, ValueError):
    """Phase requested for a signal with no fundamental component."""


class ScenarioParseError(WPTError, ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
