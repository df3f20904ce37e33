"""Deterministic per-thread heap over the arena's heap region.

Power-of-two size classes with bump-pointer allocation and LIFO free lists;
block fetches from the super heap are the only cross-thread interaction and
happen under a global lock that the runtime records like any mutex. Freed
objects pass through a per-thread quarantine FIFO filled with canary bytes
so writes-after-free leave evidence.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .arena import Arena
from .errors import InvalidFree, OutOfMemory, TooLarge

MIN_CLASS = 8
QUARANTINE_FILL = 128  # freed-object canary prefix length


def size_class(requested: int, block_size: int) -> int:
    """Smallest power of two >= requested + 1 (guarantees a redzone byte)."""
    if requested < 1:
        raise ValueError("allocation size must be positive")
    cls = MIN_CLASS
    while cls < requested + 1:
        cls <<= 1
    if cls > block_size:
        raise TooLarge(f"class {cls} for request {requested} exceeds block size {block_size}")
    return cls


@dataclass
class AllocationRecord:
    """Bookkeeping for one object; lives outside application-visible memory."""

    offset: int
    requested: int
    class_size: int
    alloc_site: str
    free_site: Optional[str] = None

    def copy(self) -> "AllocationRecord":
        return AllocationRecord(self.offset, self.requested, self.class_size,
                                self.alloc_site, self.free_site)


@dataclass
class QuarantineEntry:
    offset: int
    class_size: int
    free_site: str
    canary_len: int
    record: AllocationRecord

    def copy(self) -> "QuarantineEntry":
        return QuarantineEntry(self.offset, self.class_size, self.free_site,
                               self.canary_len, self.record.copy())


class CanaryBitmap:
    """One bit per heap byte: set iff the byte holds a detector-owned canary."""

    def __init__(self, heap_base: int, heap_size: int):
        self.heap_base = heap_base
        self.heap_size = heap_size
        self._bits = bytearray((heap_size + 7) // 8)

    def _index(self, addr: int) -> tuple[int, int]:
        off = addr - self.heap_base
        if off < 0 or off >= self.heap_size:
            raise IndexError(f"address {addr} outside heap region")
        return off >> 3, 1 << (off & 7)

    def set_range(self, addr: int, length: int) -> None:
        for a in range(addr, addr + length):
            byte, mask = self._index(a)
            self._bits[byte] |= mask

    def clear_range(self, addr: int, length: int) -> None:
        for a in range(addr, addr + length):
            byte, mask = self._index(a)
            self._bits[byte] &= ~mask

    def is_set(self, addr: int) -> bool:
        byte, mask = self._index(addr)
        return bool(self._bits[byte] & mask)

    def set_addresses(self) -> list[int]:
        out = []
        for off in range(self.heap_size):
            if self._bits[off >> 3] & (1 << (off & 7)):
                out.append(self.heap_base + off)
        return out

    def snapshot(self) -> bytes:
        return bytes(self._bits)

    def restore(self, data: bytes) -> None:
        self._bits[:] = data


class SuperHeap:
    """Hands out block_size-aligned blocks at monotonically increasing offsets.

    Offsets are aligned relative to the heap region base. Callers serialize
    fetches with the global fetch lock; this class holds no lock itself.
    """

    def __init__(self, heap_base: int, heap_size: int, block_size: int):
        self.heap_base = heap_base
        self.heap_end = heap_base + heap_size
        self.block_size = block_size
        self.next_block_offset = heap_base

    def fetch(self) -> tuple[int, int]:
        base = self.next_block_offset
        if base + self.block_size > self.heap_end:
            raise OutOfMemory("super heap exhausted")
        self.next_block_offset = base + self.block_size
        return base, self.block_size


@dataclass
class PerThreadHeap:
    """Owner-thread-only allocation state; never shared between live threads."""

    owner: int
    blocks: list[tuple[int, int]] = field(default_factory=list)
    bump_cursor: int = 0
    bump_limit: int = 0
    free_lists: dict[int, list[int]] = field(default_factory=dict)
    quarantine: deque = field(default_factory=deque)
    quarantine_bytes: int = 0


class HeapManager:
    """All per-thread heaps plus the super heap and shared bookkeeping.

    ``fetch_hook`` is installed by the runtime so block fetches run under the
    recorded global fetch lock; the default calls the super heap directly,
    which is only appropriate single-threaded.
    """

    def __init__(self, arena: Arena, block_size: int, canary_byte: int,
                 quarantine_limit: int):
        self.arena = arena
        self.block_size = block_size
        self.canary_byte = canary_byte
        self.quarantine_limit = quarantine_limit
        self.super_heap = SuperHeap(arena.heap_base, arena.heap_size, block_size)
        self.bitmap = CanaryBitmap(arena.heap_base, arena.heap_size)
        self.heaps: dict[int, PerThreadHeap] = {}
        self.live: dict[int, AllocationRecord] = {}
        self.fetch_hook: Callable[[int], tuple[int, int]] = lambda tid: self.super_heap.fetch()
        self.uaf_check_hook: Optional[Callable[[QuarantineEntry], None]] = None

    # -- heap assignment -------------------------------------------------------

    def heap_for(self, tid: int) -> PerThreadHeap:
        heap = self.heaps.get(tid)
        if heap is None:
            heap = PerThreadHeap(owner=tid)
            self.heaps[tid] = heap
        return heap

    # -- allocation --------------------------------------------------------------

    def allocate(self, tid: int, requested: int, step: str = "") -> int:
        heap = self.heap_for(tid)
        cls = size_class(requested, self.block_size)
        free_list = heap.free_lists.get(cls)
        if free_list:
            offset = free_list.pop()
        else:
            offset = self._bump(heap, cls, tid)
        record = AllocationRecord(offset=offset, requested=requested,
                                  class_size=cls, alloc_site=step)
        self.live[offset] = record
        redzone = cls - requested
        if redzone:
            self.arena.fill(offset + requested, redzone, self.canary_byte)
            self.bitmap.set_range(offset + requested, redzone)
        return offset

    def _bump(self, heap: PerThreadHeap, cls: int, tid: int) -> int:
        if heap.bump_cursor + cls > heap.bump_limit:
            base, size = self.fetch_hook(tid)
            heap.blocks.append((base, size))
            heap.bump_cursor = base
            heap.bump_limit = base + size
        offset = heap.bump_cursor
        heap.bump_cursor += cls
        return offset

    # -- deallocation -----------------------------------------------------------

    def free(self, tid: int, offset: int, step: str = "") -> None:
        record = self.live.pop(offset, None)
        if record is None:
            raise InvalidFree(f"free of non-live offset {offset}", thread=tid, step=step)
        record.free_site = step
        fill = min(QUARANTINE_FILL, record.class_size)
        self.arena.fill(offset, fill, self.canary_byte)
        self.bitmap.set_range(offset, fill)
        heap = self.heap_for(tid)
        heap.quarantine.append(QuarantineEntry(
            offset=offset, class_size=record.class_size,
            free_site=step, canary_len=fill, record=record))
        heap.quarantine_bytes += record.class_size
        while heap.quarantine_bytes > self.quarantine_limit:
            self._evict_oldest(heap)

    def _evict_oldest(self, heap: PerThreadHeap) -> None:
        entry: QuarantineEntry = heap.quarantine.popleft()
        if self.uaf_check_hook is not None:
            self.uaf_check_hook(entry)
        self.bitmap.clear_range(entry.offset, entry.class_size)
        heap.quarantine_bytes -= entry.class_size
        heap.free_lists.setdefault(entry.class_size, []).append(entry.offset)

    def drain_quarantine(self, tid: int) -> None:
        """Flush a thread's quarantine completely (eviction checks included)."""
        heap = self.heap_for(tid)
        while heap.quarantine:
            self._evict_oldest(heap)

    # -- state capture ------------------------------------------------------------

    def snapshot_state(self) -> dict:
        return {
            "next_block": self.super_heap.next_block_offset,
            "heaps": {
                tid: {
                    "blocks": list(h.blocks),
                    "bump_cursor": h.bump_cursor,
                    "bump_limit": h.bump_limit,
                    "free_lists": {c: list(v) for c, v in h.free_lists.items()},
                    "quarantine": [e.copy() for e in h.quarantine],
                    "quarantine_bytes": h.quarantine_bytes,
                }
                for tid, h in self.heaps.items()
            },
            "live": {off: rec.copy() for off, rec in self.live.items()},
            "bitmap": self.bitmap.snapshot(),
        }

    def restore_state(self, state: dict) -> None:
        self.super_heap.next_block_offset = state["next_block"]
        self.heaps = {}
        for tid, h in state["heaps"].items():
            heap = PerThreadHeap(owner=tid)
            heap.blocks = list(h["blocks"])
            heap.bump_cursor = h["bump_cursor"]
            heap.bump_limit = h["bump_limit"]
            heap.free_lists = {c: list(v) for c, v in h["free_lists"].items()}
            heap.quarantine = deque(e.copy() for e in h["quarantine"])
            heap.quarantine_bytes = h["quarantine_bytes"]
            self.heaps[tid] = heap
        self.live = {off: rec.copy() for off, rec in state["live"].items()}
        self.bitmap.restore(state["bitmap"])

    # -- introspection ---------------------------------------------------------

    def stats(self) -> dict:
        return {
            "live_objects": len(self.live),
            "quarantined_bytes": sum(h.quarantine_bytes for h in self.heaps.values()),
            "quarantined_objects": sum(len(h.quarantine) for h in self.heaps.values()),
            "blocks_fetched": sum(len(h.blocks) for h in self.heaps.values()),
            "threads": sorted(self.heaps),
        }

    def block_map(self) -> dict[int, list[tuple[int, int]]]:
        return {tid: list(h.blocks) for tid, h in self.heaps.items()}

    def state_digest(self) -> str:
        """Digest of all allocation metadata: equal digests mean identical
        block ownership, bump cursors, free lists, and live offsets.
        Pristine heaps (registered but never used) carry no state."""
        import json
        from .arena import content_hash
        view = {
            "next_block": self.super_heap.next_block_offset,
            "heaps": {
                str(tid): {
                    "blocks": list(h.blocks),
                    "bump": [h.bump_cursor, h.bump_limit],
                    "free": {str(c): v for c, v in sorted(h.free_lists.items())},
                    "quarantine": [e.offset for e in h.quarantine],
                }
                for tid, h in sorted(self.heaps.items())
                if h.blocks or h.free_lists or h.quarantine
            },
            "live": sorted(self.live),
        }
        return content_hash(json.dumps(view, sort_keys=True).encode())

    def quarantined_offsets(self) -> set[int]:
        out: set[int] = set()
        for heap in self.heaps.values():
            out.update(e.offset for e in heap.quarantine)
        return out
