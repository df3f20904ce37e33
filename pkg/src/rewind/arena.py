"""Byte arena standing in for the workload's writable memory.

Addresses are offsets from the arena base, so "identical memory layout"
across record and replay means identical offsets. The first part of the
arena is the globals region; the rest is the heap region handed out by the
allocator. A write barrier implements software watchpoints during replay.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .errors import OutOfBounds, SizeMismatch

MODE_RECORDING = "recording"
MODE_REPLAYING = "replaying"

MAX_WATCHPOINTS = 4


@dataclass(frozen=True)
class ArenaSnapshot:
    """Immutable copy of the arena contents plus its digest."""

    bytes_copy: bytes
    hash: str

    @property
    def size(self) -> int:
        return len(self.bytes_copy)


@dataclass(frozen=True)
class WatchEntry:
    address: int
    length: int
    label: str = ""

    def overlaps(self, addr: int, length: int) -> bool:
        return addr < self.address + self.length and self.address < addr + length


@dataclass
class WatchHit:
    """One trapped write against an active watchpoint."""

    thread: int
    step: str
    address: int
    old: bytes
    new: bytes
    entry: WatchEntry

    def to_dict(self) -> dict:
        return {
            "thread": self.thread,
            "step": self.step,
            "address": self.address,
            "old_hex": self.old.hex(),
            "new_hex": self.new.hex(),
            "watch_label": self.entry.label,
        }


class WatchSet:
    """At most four active watched ranges (hardware watchpoint budget)."""

    def __init__(self):
        self._entries: list[WatchEntry] = []

    def install(self, address: int, length: int = 1, label: str = "") -> WatchEntry:
        if len(self._entries) >= MAX_WATCHPOINTS:
            raise ValueError(f"watchpoint capacity is {MAX_WATCHPOINTS}")
        entry = WatchEntry(address, length, label)
        self._entries.append(entry)
        return entry

    def remove(self, index: int) -> WatchEntry:
        return self._entries.pop(index)

    def clear(self) -> None:
        self._entries.clear()

    def entries(self) -> list[WatchEntry]:
        return list(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def matches(self, addr: int, length: int) -> list[WatchEntry]:
        return [e for e in self._entries if e.overlaps(addr, length)]


def content_hash(data: bytes | bytearray | memoryview) -> str:
    return hashlib.sha256(bytes(data)).hexdigest()


class Arena:
    """Zero-initialized byte store with snapshot/restore and a write barrier.

    Reads and writes may come from any workload thread concurrently;
    overlapping unsynchronized writes are the model of a data race and are
    deliberately left unordered. snapshot/restore require quiescence, which
    the epoch manager guarantees.
    """

    def __init__(self, size_bytes: int, globals_size: int):
        if globals_size <= 0 or globals_size >= size_bytes:
            raise ValueError("globals region must split the arena in two")
        self.size_bytes = size_bytes
        self.globals_size = globals_size
        self._bytes = bytearray(size_bytes)
        self.mode = MODE_RECORDING
        self.watchset = WatchSet()
        self.watch_hits: list[WatchHit] = []
        self.hit_callback = None  # live notification hook (REPL)

    # -- regions ------------------------------------------------------------

    @property
    def heap_base(self) -> int:
        return self.globals_size

    @property
    def heap_size(self) -> int:
        return self.size_bytes - self.globals_size

    def _check_range(self, addr: int, length: int, thread: int, step: str) -> None:
        if addr < 0 or length < 0 or addr + length > self.size_bytes:
            raise OutOfBounds(
                f"range [{addr}, {addr + length}) outside arena of {self.size_bytes} bytes",
                thread=thread, step=step)

    # -- workload-visible accessors ------------------------------------------

    def write(self, thread: int, addr: int, data: bytes, step: str = "") -> None:
        """Workload write; traps against watchpoints while replaying."""
        self._check_range(addr, len(data), thread, step)
        if self.mode == MODE_REPLAYING and len(self.watchset):
            for entry in self.watchset.matches(addr, len(data)):
                old = bytes(self._bytes[addr:addr + len(data)])
                hit = WatchHit(thread=thread, step=step, address=addr,
                               old=old, new=bytes(data), entry=entry)
                self.watch_hits.append(hit)
                if self.hit_callback is not None:
                    self.hit_callback(hit)
        self._bytes[addr:addr + len(data)] = data

    def read(self, thread: int, addr: int, length: int, step: str = "") -> bytes:
        """Workload read; never traps (detectors are write-evidence based)."""
        self._check_range(addr, length, thread, step)
        return bytes(self._bytes[addr:addr + length])

    # -- detector/allocator internal access (exempt from watch traps) --------

    def raw_write(self, addr: int, data: bytes) -> None:
        self._bytes[addr:addr + len(data)] = data

    def raw_read(self, addr: int, length: int) -> bytes:
        return bytes(self._bytes[addr:addr + length])

    def fill(self, addr: int, length: int, value: int) -> None:
        self._bytes[addr:addr + length] = bytes([value]) * length

    # -- snapshot / restore ---------------------------------------------------

    def snapshot(self) -> ArenaSnapshot:
        data = bytes(self._bytes)
        return ArenaSnapshot(bytes_copy=data, hash=content_hash(data))

    def restore(self, snap: ArenaSnapshot) -> None:
        if snap.size != self.size_bytes:
            raise SizeMismatch(
                f"snapshot of {snap.size} bytes does not fit arena of {self.size_bytes}")
        self._bytes[:] = snap.bytes_copy

    def hash(self) -> str:
        return content_hash(self._bytes)

    def drain_watch_hits(self) -> list[WatchHit]:
        hits, self.watch_hits = self.watch_hits, []
        return hits
