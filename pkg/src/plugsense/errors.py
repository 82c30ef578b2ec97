class PlugsenseError(Exception):
    """Base class for all errors raised by this package."""


class UnknownBusError(PlugsenseError, KeyError):
    def __init__(self, bus):
        super().__init__(bus)
        self.bus = bus

    def __str__(self):
        return f"unknown bus {self.bus!r}"


class InvalidGridError(PlugsenseError, ValueError):
    pass


class InfeasibleLoadError(PlugsenseError):
    """Raised when a load set drives a bus voltage below the collapse floor."""

    def __init__(self, message, bus=None, voltage=None, case=None):
        super().__init__(message)
        self.bus = bus
        self.voltage = voltage
        self.case = case


class BoundExhaustedError(PlugsenseError):
    """Raised when a measured voltage cannot be reached within the load bounds.

    ``bound`` is ``"upper"`` when even the maximum load leaves the voltage too
    high, ``"lower"`` when the minimum load already pulls it too low.
    """

    def __init__(self, message, bound):
        super().__init__(message)
        self.bound = bound


class ScenarioError(PlugsenseError):
    def __init__(self, message, timestamp_ns=None):
        super().__init__(message)
        self.timestamp_ns = timestamp_ns


# telemetry parse errors, one per failure kind


class MessageError(PlugsenseError, ValueError):
    kind = "message"


class MalformedTopicError(MessageError):
    kind = "malformed_topic"


class InvalidJSONError(MessageError):
    kind = "invalid_json"


class MissingVoltageError(MessageError):
    kind = "missing_voltage"


class InvalidTimeError(MessageError):
    kind = "invalid_time"


class OutOfOrderError(PlugsenseError):
    def __init__(self, device, timestamp_ns, last_ns):
        super().__init__(
            f"out-of-order timestamp {timestamp_ns} for device {device!r} (last {last_ns})"
        )
        self.device = device
        self.timestamp_ns = timestamp_ns
        self.last_ns = last_ns


class StoreError(PlugsenseError):
    pass


# calibration


class CalibrationError(PlugsenseError, ValueError):
    pass


class ExtrapolationError(CalibrationError):
    pass


class NoDataError(CalibrationError):
    pass


class InsufficientWindowError(CalibrationError):
    pass


class NoOverlapError(CalibrationError):
    pass


class ConfigError(PlugsenseError, ValueError):
    pass
