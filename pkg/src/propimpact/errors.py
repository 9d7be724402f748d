"""Exception hierarchy shared by all modules."""


class PropImpactError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(PropImpactError, ValueError):
    """Invalid argument or specification."""


class TapeParseError(PropImpactError, ValueError):
    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


class EmptySeriesError(PropImpactError, ValueError):
    pass


class DataIntegrityError(PropImpactError, ValueError):
    pass


class DegenerateTypeError(PropImpactError, ValueError):
    def __init__(self, event_type, count):
        self.event_type = event_type
        self.count = count
        super().__init__(
            f"event type {event_type} occurs {count} times; too few for a conditional estimate"
        )


class LagError(PropImpactError, ValueError):
    """Requested lag exceeds what the day segments can support."""


class ConditioningError(PropImpactError, ArithmeticError):
    def __init__(self, message, condition=None):
        self.condition = condition
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        super().__init__(message)


class NonDarRepresentableError(PropImpactError, ValueError):
    pass


class HorizonError(PropImpactError, ValueError):
    def __init__(self, required, available):
        self.required = required
        self.available = available
        super().__init__(
            f"correlations are measured to lag {available}; this evaluation needs lag {required}"
        )
