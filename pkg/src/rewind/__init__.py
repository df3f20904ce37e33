"""In-process record-and-replay runtime for multithreaded workloads.

Records synchronization and syscall events at low overhead, checkpoints
epochs, rolls the same process back on evidence of failure, re-executes the
last epoch identically (searching across replays when races diverge), and
localizes heap overflows and use-after-free errors with canaries and
software watchpoints during replay.
"""

from .arena import Arena, ArenaSnapshot, WatchSet, WatchHit, content_hash
from .config import RuntimeConfig, DIGEST_ALGORITHM
from .detectors import CorruptionEvidence, Detectors, RootCauseReport
from .epochs import EpochManager, EpochSnapshot
from .errors import (ConfigError, DeclaredCrash, InvalidFree, OutOfBounds,
                     OutOfMemory, RewindError, SizeMismatch, TooLarge,
                     UnknownSyscall, UnsupportedWorkload, WorkloadFault)
from .events import EventLog, EventRecord, ShadowSyncObject
from .heap import HeapManager, size_class
from .replay import ReplayController, ReplayPlan, SearchResult
from .runtime import Runtime, ThreadState
from .vfs import Vfs, classify
from .workloads import (BUILTINS, RunSummary, WorkloadSpec, assemble,
                        get_workload, load_scenario, run, with_terminal_overflow)

__version__ = "0.1.0"

__all__ = [
    "Arena", "ArenaSnapshot", "WatchSet", "WatchHit", "content_hash",
    "RuntimeConfig", "DIGEST_ALGORITHM",
    "CorruptionEvidence", "Detectors", "RootCauseReport",
    "EpochManager", "EpochSnapshot",
    "ConfigError", "DeclaredCrash", "InvalidFree", "OutOfBounds", "OutOfMemory",
    "RewindError", "SizeMismatch", "TooLarge", "UnknownSyscall",
    "UnsupportedWorkload", "WorkloadFault",
    "EventLog", "EventRecord", "ShadowSyncObject",
    "HeapManager", "size_class",
    "ReplayController", "ReplayPlan", "SearchResult",
    "Runtime", "ThreadState",
    "Vfs", "classify",
    "BUILTINS", "RunSummary", "WorkloadSpec", "assemble", "get_workload",
    "load_scenario", "run", "with_terminal_overflow",
    "__version__",
]
