"""Exception types shared across the package."""


class DynregError(Exception):
    """Base class for dynreg-specific failures."""


class ConfigError(DynregError):
    """Invalid or inconsistent configuration values."""


class DataFormatError(DynregError):
    """Malformed input file. Carries the offending position when known."""

    def __init__(self, message, row=None, column=None):
        if row is not None:
            message = f"{message} (row {row}" + (f", column {column})" if column is not None else ")")
        super().__init__(message)
        self.row = row
        self.column = column


class SeriesTooShortError(DynregError):
    """Panel has too few time steps for the requested windows."""

    def __init__(self, t_actual, t_required):
        super().__init__(
            f"series has {t_actual} steps but at least {t_required} are required"
        )
        self.t_actual = t_actual
        self.t_required = t_required


class NoValidWindowsError(DynregError):
    """No usable training or validation anchors could be built."""


class DivergenceError(DynregError):
    """Training loss became non-finite."""

    def __init__(self, epoch, part):
        super().__init__(f"non-finite loss in epoch {epoch} (part: {part})")
        self.epoch = epoch
        self.part = part


class NonStationaryError(ConfigError):
    """Planted AR coefficients have spectral radius >= 1."""


class InsufficientSamplesError(DynregError):
    """Too few anchors to estimate the requested correlation."""


class EmptyReportError(DynregError):
    """Correlation report contains no lags to rank."""


class AnchorError(DynregError):
    """Anchor is infeasible for the model's lag and window sizes."""
