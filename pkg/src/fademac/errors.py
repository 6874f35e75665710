"""Exception types shared across the package."""


class FademacError(Exception):
    """Base class for all package-specific errors."""


class InputError(FademacError, ValueError):
    """An argument or input file violates a documented precondition."""


class SchemaError(InputError):
    """A network or rates file is malformed; the message names the field."""


class IllConditionedError(InputError):
    """Rates too close together for the partial-fraction survival formula."""


class NotComputableError(FademacError):
    """The requested analytic method does not exist for this input."""


class ProtocolError(FademacError, RuntimeError):
    """A distributed processor was used outside the exchange/update cycle."""
