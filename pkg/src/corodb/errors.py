"""Exception types raised by the engine."""


class CoroDBError(Exception):
    pass


class UsageError(CoroDBError):
    """An API was called in violation of its preconditions."""


class DuplicateNameError(UsageError):
    pass


class ResourceError(CoroDBError):
    """A configured capacity or the host's memory is exhausted."""


class TransactionAborted(CoroDBError):
    """Raised out of an engine operation after the transaction was rolled back.

    ``reason`` is one of ``"conflict"``, ``"not-found"``, ``"duplicate"``
    or ``"error"``.
    """

    def __init__(self, reason, detail=""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
