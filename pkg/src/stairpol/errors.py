"""Exception hierarchy shared by every stage of the pipeline."""


class StairpolError(Exception):
    """Base class for all library errors."""


class InputError(StairpolError, ValueError):
    """Malformed, mismatched or out-of-domain input.

    ``stage`` and ``field`` are optional labels that say where the problem was
    found, e.g. ``InputError("shape mismatch", field="i45")``.
    """

    def __init__(self, message, *, stage=None, field=None):
        self.stage = stage
        self.field = field
        prefix = ""
        if stage:
            prefix += f"[{stage}] "
        if field:
            prefix += f"{field}: "
        super().__init__(prefix + message)


class DegenerateGeometryError(InputError):
    """Point sets that cannot determine a rigid transform (collinear, coincident)."""


class NumericalError(StairpolError, ArithmeticError):
    """A computation produced a non-finite value or failed to converge."""

    def __init__(self, message, *, stage=None):
        self.stage = stage
        super().__init__(f"[{stage}] {message}" if stage else message)
