"""Exception types shared across the package."""


class GdraaError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgument(GdraaError, ValueError):
    pass


class OutOfBounds(GdraaError, IndexError):
    pass


class PayloadSizeError(GdraaError):
    """A data message's payload disagrees with the block it addresses."""


class ConnectionLost(GdraaError):
    pass


class MalformedBody(GdraaError, ValueError):
    pass


class ShapeMismatch(GdraaError):
    pass


class PeerTimeout(GdraaError):
    """A synchronization deadline expired before every peer arrived."""

    def __init__(self, phase, missing):
        self.phase = phase
        self.missing = sorted(missing)
        super().__init__(f"timed out in {phase}: missing ranks {self.missing}")


class Aborted(GdraaError):
    """The job server asked this worker to stop mid-collective."""


class RejectedOversizedDataset(GdraaError):
    pass


class InsufficientWorkers(GdraaError):
    pass


class WorkerTimeout(GdraaError):
    def __init__(self, rank):
        self.rank = rank
        super().__init__(f"worker {rank} missed its heartbeat deadline")


class DivergenceDetected(GdraaError):
    pass


class MissingBaseline(GdraaError, ValueError):
    pass


class InvariantViolation(GdraaError, AssertionError):
    pass
