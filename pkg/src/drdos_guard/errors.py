"""Exception types raised across the toolkit."""


class DrdosGuardError(Exception):
    """Base class for all toolkit errors."""


class MalformedFrame(DrdosGuardError, ValueError):
    """A declared header extends past the end of the captured buffer."""


class BadMagic(DrdosGuardError, ValueError):
    pass


class DuplicateEntryId(DrdosGuardError, KeyError):
    pass


class InvalidSetField(DrdosGuardError, ValueError):
    """A set-field action names a header the packet does not carry."""


class SubnetExhausted(DrdosGuardError, RuntimeError):
    pass


class NotAnArpRequest(DrdosGuardError, ValueError):
    pass


class UnorderedInput(DrdosGuardError, ValueError):
    """Packets were supplied out of timestamp order."""


class InsufficientHistory(DrdosGuardError, ValueError):
    """Not enough frames to hold the reference, the gap and the current window."""
