"""Exception hierarchy shared by all runtime components.

Workload bugs (out-of-bounds writes, invalid frees, declared crashes) are
faults: they end the current epoch abnormally and are reported, never
propagated into the host process. Framework misuse and broken internal
invariants raise ordinary errors.
"""

from __future__ import annotations


class RewindError(Exception):
    """Base class for every error raised by the runtime."""


# ---------------------------------------------------------------------------
# Workload faults: bugs in the program under test, surfaced as epoch events
# ---------------------------------------------------------------------------


class WorkloadFault(RewindError):
    """A workload bug observed by the runtime; ends the epoch abnormally."""

    kind = "fault"

    def __init__(self, message: str, *, thread: int | None = None, step: str | None = None):
        super().__init__(message)
        self.thread = thread
        self.step = step

    def describe(self) -> dict:
        return {"kind": self.kind, "thread": self.thread, "step": self.step,
                "message": str(self)}


class OutOfBounds(WorkloadFault):
    kind = "out-of-bounds"


class InvalidFree(WorkloadFault):
    kind = "invalid-free"


class DeclaredCrash(WorkloadFault):
    kind = "crash"


# ---------------------------------------------------------------------------
# Resource and configuration errors
# ---------------------------------------------------------------------------


class OutOfMemory(RewindError):
    """The super heap cannot hand out another block."""


class TooLarge(RewindError):
    """Requested allocation exceeds the block size."""


class SizeMismatch(RewindError):
    """Snapshot taken from a differently sized arena."""


class UnknownSyscall(RewindError):
    """Syscall name (or flag combination) outside the supported table."""


class BadDescriptor(RewindError):
    """Operation on a descriptor that is not open."""


class ConfigError(RewindError):
    """Invalid runtime or workload configuration."""


class UnsupportedWorkload(RewindError):
    """Workload violates the framework contract (e.g. quiescence timeout)."""


class InternalInvariantViolation(RewindError):
    """A condition the design guarantees impossible was observed."""


class CursorExhausted(RewindError):
    """Replay cursor ran past the recorded log (end of epoch reached)."""


class LogExhausted(RewindError):
    """Per-thread event log is out of pre-allocated entries."""


# ---------------------------------------------------------------------------
# Control-flow signals used inside workload threads (never user-visible)
# ---------------------------------------------------------------------------


class EpochRestart(Exception):
    """Unwinds a workload thread back to its loop for rollback/replay."""


class WorkloadAbort(Exception):
    """Unwinds a workload thread for final teardown."""
