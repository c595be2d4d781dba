"""Exception types shared across the package."""


class BCFLError(Exception):
    """Base class for every error raised by bcfl."""


# traffic / data
class InvalidRecord(BCFLError, ValueError):
    pass


class EmptyDataset(BCFLError, ValueError):
    pass


class DoubleNormalize(BCFLError, ValueError):
    pass


# ml
class BadTopology(BCFLError, ValueError):
    pass


class UnnormalizedInput(BCFLError, ValueError):
    pass


class CorruptModel(BCFLError, ValueError):
    pass


# keys
class DuplicateParticipant(BCFLError, KeyError):
    pass


class UnknownParticipant(BCFLError, KeyError):
    pass


# ledger
class NothingToSeal(BCFLError):
    pass


class SyncRejected(BCFLError):
    def __init__(self, height: int, reason: str):
        super().__init__(f"sync rejected at height {height}: {reason}")
        self.height = height
        self.reason = reason


class CorruptLedger(BCFLError):
    """Raised when a persisted ledger cannot even be parsed."""

    def __init__(self, height: int, reason: str):
        super().__init__(f"corrupt ledger at height {height}: {reason}")
        self.height = height
        self.reason = reason


class LedgerRejected(BCFLError):
    def __init__(self, reason: str):
        super().__init__(f"ledger rejected transaction: {reason}")
        self.reason = reason


# contracts
class DuplicateContract(BCFLError):
    pass


class ModelUnavailable(BCFLError):
    pass


# federation
class RoundInProgress(BCFLError):
    pass


class NoOpenRound(BCFLError):
    pass


class InsufficientParticipation(BCFLError):
    def __init__(self, got: int, needed: int):
        super().__init__(f"{got} valid updates, {needed} required")
        self.got = got
        self.needed = needed


class IncompatibleTopology(BCFLError, ValueError):
    pass


class MixedBaseVersion(BCFLError, ValueError):
    pass


# simnet
class UnknownNode(BCFLError, KeyError):
    pass


class TimeTravel(BCFLError, ValueError):
    pass


# scenario
class ConfigError(BCFLError, ValueError):
    pass
