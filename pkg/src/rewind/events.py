"""Event recording core: per-thread logs joined with per-variable order lists.

Every synchronization or syscall event lands in its thread's pre-allocated
log; events that take or pass a synchronization variable are additionally
appended to that variable's order list while the variable itself is held,
so recording adds no cross-thread locking of its own. Replay walks both
structures with cursors: a thread may proceed on a variable exactly when
the variable's next recorded taker is that thread's own next event.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional

from .errors import CursorExhausted, LogExhausted

# Event kinds (stable strings; they appear verbatim in log dumps).
MUTEX_ACQUIRE = "MutexAcquire"
MUTEX_TRY_ACQUIRE = "MutexTryAcquire"
COND_WAKEUP = "CondWakeup"
BARRIER_WAIT = "BarrierWait"
THREAD_CREATE = "ThreadCreate"
THREAD_JOIN = "ThreadJoin"
SYSCALL = "Syscall"
THREAD_EXIT = "ThreadExit"

# Shadow object kinds.
KIND_MUTEX = "Mutex"
KIND_CONDVAR = "CondVar"
KIND_BARRIER = "Barrier"
KIND_CREATE_LOCK = "CreateLock"
KIND_FETCH_LOCK = "FetchLock"
KIND_JOIN_POINT = "JoinPoint"

TRY_ACQUIRED = 1
TRY_BUSY = 0


class EventRecord:
    """One logged event; instances are pre-allocated and refilled per epoch."""

    __slots__ = ("thread", "seq", "kind", "var", "ret", "payload", "detail")

    def __init__(self):
        self.thread = -1
        self.seq = -1
        self.kind = ""
        self.var: Optional[str] = None
        self.ret = 0
        self.payload: Optional[bytes] = None
        self.detail: Optional[str] = None  # syscall identity, if any

    def dump_dict(self, epoch: int) -> dict:
        return {
            "epoch": epoch,
            "thread": self.thread,
            "seq": self.seq,
            "kind": self.kind,
            "var": self.var,
            "ret": self.ret,
            "payload_hex": self.payload.hex() if self.payload is not None else None,
        }


class PerThreadLog:
    """Fixed-capacity event list; single writer (the owning thread)."""

    def __init__(self, thread: int, capacity: int):
        self.thread = thread
        self.capacity = capacity
        self.entries = [EventRecord() for _ in range(capacity)]
        self.record_len = 0
        self.replay_cursor = 0

    def has_room(self, need: int = 1) -> bool:
        return self.record_len + need <= self.capacity

    def append(self, kind: str, var: Optional[str], ret: int,
               payload: Optional[bytes], detail: Optional[str]) -> EventRecord:
        if self.record_len >= self.capacity:
            raise LogExhausted(f"thread {self.thread} log budget {self.capacity} exhausted")
        rec = self.entries[self.record_len]
        rec.thread = self.thread
        rec.seq = self.record_len
        rec.kind = kind
        rec.var = var
        rec.ret = ret
        rec.payload = payload
        rec.detail = detail
        self.record_len += 1
        return rec

    def peek(self) -> Optional[EventRecord]:
        if self.replay_cursor >= self.record_len:
            return None
        return self.entries[self.replay_cursor]

    def clear(self) -> None:
        self.record_len = 0
        self.replay_cursor = 0


class PerVariableList:
    """Acquisition/pass order for one variable: (thread, seq) references."""

    def __init__(self):
        self.order: list[tuple[int, int]] = []
        self.replay_cursor = 0

    def append(self, thread: int, seq: int) -> None:
        self.order.append((thread, seq))

    def head(self) -> Optional[tuple[int, int]]:
        if self.replay_cursor >= len(self.order):
            return None
        return self.order[self.replay_cursor]

    def clear(self) -> None:
        self.order.clear()
        self.replay_cursor = 0


class ShadowSyncObject:
    """Indirection record pairing one sync variable with its live primitive.

    The monitor guards the primitive's own state; the attributes below cover
    every primitive kind so the sync layer can treat shadows uniformly.
    """

    def __init__(self, ident: str, kind: str, parties: int = 0):
        self.id = ident
        self.kind = kind
        self.mon = threading.Condition()
        self.var_list = PerVariableList()
        # mutex-like state
        self.owner: Optional[int] = None
        # condvar state
        self.waiters: list[int] = []
        self.tickets: set[int] = set()
        # barrier state
        self.parties = parties
        self.generation = 0
        self.arrived: set[int] = set()

    def notify_all(self) -> None:
        with self.mon:
            self.mon.notify_all()


@dataclass
class Divergence:
    """A replay event that failed to match the recorded next event."""

    thread: int
    cursor: int
    expected: str
    actual: str

    def to_dict(self) -> dict:
        return {"thread": self.thread, "cursor": self.cursor,
                "expected": self.expected, "actual": self.actual}


def _describe(kind: str, var: Optional[str], detail: Optional[str]) -> str:
    parts = [kind]
    if var is not None:
        parts.append(var)
    if detail is not None:
        parts.append(detail)
    return ":".join(parts)


class EventLog:
    """All per-thread logs and shadow objects for the current epoch."""

    def __init__(self, budget: int):
        self.budget = budget
        self.threads: dict[int, PerThreadLog] = {}
        self.shadows: dict[str, ShadowSyncObject] = {}

    # -- registration ----------------------------------------------------------

    def register_thread(self, tid: int) -> PerThreadLog:
        log = self.threads.get(tid)
        if log is None:
            log = PerThreadLog(tid, self.budget)
            self.threads[tid] = log
        return log

    def register_shadow(self, ident: str, kind: str, parties: int = 0) -> ShadowSyncObject:
        shadow = self.shadows.get(ident)
        if shadow is None:
            shadow = ShadowSyncObject(ident, kind, parties)
            self.shadows[ident] = shadow
        return shadow

    def shadow(self, ident: str) -> ShadowSyncObject:
        return self.shadows[ident]

    # -- recording ----------------------------------------------------------------

    def record(self, tid: int, kind: str, var: Optional[ShadowSyncObject] = None,
               ret: int = 0, payload: Optional[bytes] = None,
               detail: Optional[str] = None, var_ordered: Optional[bool] = None) -> int:
        """Log one event; add it to the variable's order list when it took or
        passed the variable (failed try-locks stay per-thread only)."""
        log = self.threads[tid]
        var_id = var.id if var is not None else None
        rec = log.append(kind, var_id, ret, payload, detail)
        if var is not None:
            if var_ordered is None:
                var_ordered = not (kind == MUTEX_TRY_ACQUIRE and ret != TRY_ACQUIRED)
            if var_ordered:
                var.var_list.append(tid, rec.seq)
        return rec.seq

    # -- replay ------------------------------------------------------------------

    def may_proceed(self, tid: int, var: ShadowSyncObject) -> bool:
        """True iff the variable's next recorded taker is this thread's own
        next per-thread event on this variable."""
        head = var.var_list.head()
        if head is None:
            return False
        entry = self.threads[tid].peek()
        if entry is None or entry.var != var.id:
            return False
        return head == (tid, entry.seq)

    def peek(self, tid: int) -> Optional[EventRecord]:
        return self.threads[tid].peek()

    def consume(self, tid: int, var: Optional[ShadowSyncObject] = None,
                var_ordered: bool = True) -> EventRecord:
        """Advance the thread cursor (and the variable cursor for ordered
        events); returns the recorded event for result substitution."""
        log = self.threads[tid]
        rec = log.peek()
        if rec is None:
            raise CursorExhausted(f"thread {tid} replay ran past its recorded log")
        log.replay_cursor += 1
        if var is not None and var_ordered:
            var.var_list.replay_cursor += 1
        return rec

    def check_divergence(self, tid: int, kind: str, var: Optional[str] = None,
                         detail: Optional[str] = None) -> Optional[Divergence]:
        """Compare an attempted event against the recorded next one."""
        entry = self.threads[tid].peek()
        cursor = self.threads[tid].replay_cursor
        actual = _describe(kind, var, detail)
        if entry is None:
            return Divergence(tid, cursor, expected="<log exhausted>", actual=actual)
        if entry.kind != kind or entry.var != var or (entry.detail or None) != (detail or None):
            expected = _describe(entry.kind, entry.var, entry.detail)
            return Divergence(tid, cursor, expected=expected, actual=actual)
        return None

    def reset_cursors(self) -> None:
        for log in self.threads.values():
            log.replay_cursor = 0
        for shadow in self.shadows.values():
            shadow.var_list.replay_cursor = 0

    def clear_epoch(self) -> None:
        for log in self.threads.values():
            log.clear()
        for shadow in self.shadows.values():
            shadow.var_list.clear()

    # -- introspection ------------------------------------------------------------

    def all_exhausted(self) -> bool:
        return all(log.replay_cursor >= log.record_len for log in self.threads.values())

    def total_recorded(self) -> int:
        return sum(log.record_len for log in self.threads.values())

    def dump_lines(self, epoch: int) -> list[dict]:
        lines = []
        for tid in sorted(self.threads):
            log = self.threads[tid]
            for i in range(log.record_len):
                lines.append(log.entries[i].dump_dict(epoch))
        return lines
