from typing import List, Optional


class FootprintError(Exception):
    """Base error; exit_code is what the CLI returns for it"""

    exit_code = 1


# Validation family (exit 1)

class ValidationError(FootprintError):
    exit_code = 1

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class InvalidQuantityError(ValidationError):
    pass


class FactorValidationError(ValidationError):
    pass


class ScenarioValidationError(ValidationError):
    pass


class AggregationError(ValidationError):
    pass


class CompositionError(ValidationError):
    pass


class ComparisonError(ValidationError):
    pass


class AdjustmentUnavailableError(ValidationError):
    pass


class ReportFormatError(ValidationError):
    pass


class ReplayFormatError(ValidationError):
    def __init__(self, message: str, line_number: int):
        super().__init__(f"Replay line {line_number}: {message}")
        self.line_number = line_number


# Run family (exit 2)

class RunError(FootprintError):
    exit_code = 2


class SamplingError(RunError):
    pass


class TraceTooShortError(SamplingError):
    pass


class ProviderError(SamplingError):
    """A provider could not read some or all of its channels.

    `partial` holds whatever the provider could still read, so the sampler can
    keep the run going on the remaining channels.
    """

    def __init__(self, message: str, failed_channels: List[str], partial=None):
        super().__init__(message)
        self.failed_channels = list(failed_channels)
        self.partial = partial


class ProviderExhausted(SamplingError):
    pass


class MonotonicityError(SamplingError):
    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class ProtocolError(RunError):
    def __init__(self, message: str, line: Optional[str] = None, line_number: Optional[int] = None):
        super().__init__(message)
        self.line = line
        self.line_number = line_number


class DriverRunError(RunError):
    def __init__(self, message: str):
        super().__init__(f"Driver reported an error: {message}")
        self.driver_message = message


class DriverTimeoutError(RunError):
    pass


class DurationError(RunError):
    pass


class CampaignError(RunError):
    def __init__(self, message: str, unit: str, run_index: int):
        super().__init__(message)
        self.unit = unit
        self.run_index = run_index
