"""Arena: bounds, snapshot/restore, and the replay write barrier."""

import random

import pytest
from hypothesis import given, settings, strategies as st

from rewind.arena import (Arena, MODE_RECORDING, MODE_REPLAYING,
                          MAX_WATCHPOINTS, WatchEntry, content_hash)
from rewind.errors import OutOfBounds, SizeMismatch


def make_arena(size=4096, globals_size=1024):
    return Arena(size, globals_size)


def test_write_then_read_identity():
    a = make_arena()
    a.write(1, 0, b"AB")
    assert a.read(1, 0, 2) == b"AB"


def test_write_at_end_out_of_bounds():
    a = make_arena()
    with pytest.raises(OutOfBounds):
        a.write(1, a.size_bytes, b"X")


def test_fresh_arena_reads_zero():
    a = make_arena()
    assert a.read(1, 0, 4) == b"\x00\x00\x00\x00"


def test_read_after_write_single_byte():
    a = make_arena()
    a.write(1, 8, bytes([0xDE]))
    assert a.read(1, 8, 1) == bytes([0xDE])


def test_read_straddling_end_out_of_bounds():
    a = make_arena()
    with pytest.raises(OutOfBounds):
        a.read(1, a.size_bytes - 1, 2)


def test_snapshot_restore_identity():
    a = make_arena()
    snap = a.snapshot()
    rng = random.Random(7)
    for _ in range(1000):
        a.write(1, rng.randrange(a.size_bytes - 4), rng.randbytes(4))
    assert a.hash() != snap.hash
    a.restore(snap)
    assert a.hash() == snap.hash


def test_restore_is_idempotent():
    a = make_arena()
    a.write(1, 0, b"seed")
    snap = a.snapshot()
    a.write(1, 0, b"junk")
    a.restore(snap)
    h1 = a.hash()
    a.restore(snap)
    assert a.hash() == h1


def test_snapshots_without_writes_are_equal():
    a = make_arena()
    a.write(1, 100, b"stable")
    assert a.snapshot().hash == a.snapshot().hash


def test_restore_size_mismatch():
    a = make_arena(4096)
    b = make_arena(8192, 1024)
    with pytest.raises(SizeMismatch):
        b.restore(a.snapshot())


def test_hash_is_pure_function_of_bytes():
    a, b = make_arena(), make_arena()
    a.write(1, 5, b"same")
    b.write(2, 5, b"same")
    assert a.hash() == b.hash() == content_hash(a.raw_read(0, a.size_bytes))


def test_replaying_same_writes_reproduces_hash():
    a = make_arena()
    rng = random.Random(42)
    writes = [(rng.randrange(1000), rng.randbytes(3)) for _ in range(200)]
    snap = a.snapshot()
    for addr, data in writes:
        a.write(1, addr, data)
    end = a.hash()
    a.restore(snap)
    for addr, data in writes:
        a.write(1, addr, data)
    assert a.hash() == end


# ---------------------------------------------------------------------------
# Watchpoints
# ---------------------------------------------------------------------------


def test_watch_hit_on_overlapping_replay_write():
    a = make_arena()
    a.mode = MODE_REPLAYING
    a.watchset.install(0x100, 16)
    a.write(2, 0x104, b"\x01")
    hits = a.drain_watch_hits()
    assert len(hits) == 1
    assert hits[0].thread == 2 and hits[0].address == 0x104
    assert a.read(2, 0x104, 1) == b"\x01"  # write still applied


def test_no_hits_while_recording():
    a = make_arena()
    a.watchset.install(0x100, 16)
    a.write(1, 0x100, b"zz")
    assert a.drain_watch_hits() == []


def test_watch_overlap_exhaustive_small_space():
    """Hit iff mode is replaying and the written range intersects an entry,
    checked against brute-force interval intersection."""
    watch_addr, watch_len = 8, 4
    for mode in (MODE_RECORDING, MODE_REPLAYING):
        for addr in range(0, 30):
            for length in range(1, 4):
                a = make_arena(32, 8)
                a.mode = mode
                a.watchset.install(watch_addr, watch_len)
                if addr + length > a.size_bytes:
                    continue
                a.write(1, addr, b"\xff" * length)
                expected = (mode == MODE_REPLAYING
                            and addr < watch_addr + watch_len
                            and watch_addr < addr + length)
                assert bool(a.drain_watch_hits()) == expected, (mode, addr, length)


def test_watchset_capacity_is_four():
    a = make_arena()
    for i in range(MAX_WATCHPOINTS):
        a.watchset.install(i * 10, 1)
    with pytest.raises(ValueError):
        a.watchset.install(999, 1)
    a.watchset.remove(0)
    a.watchset.install(999, 1)  # room again after removal


def test_watch_hit_records_old_and_new_bytes():
    a = make_arena()
    a.mode = MODE_REPLAYING
    a.write(1, 0x40, b"\xaa\xbb")
    a.watchset.install(0x40, 2)
    a.write(2, 0x40, b"\xcc\xdd")
    (hit,) = a.drain_watch_hits()
    assert hit.old == b"\xaa\xbb" and hit.new == b"\xcc\xdd"


@settings(max_examples=50, deadline=None)
@given(addr=st.integers(min_value=0, max_value=4000),
       length=st.integers(min_value=1, max_value=64))
def test_read_never_mutates(addr, length):
    a = make_arena()
    a.write(1, 0, bytes(range(256)))
    before = a.hash()
    if addr + length <= a.size_bytes:
        a.read(1, addr, length)
    assert a.hash() == before


def test_regions_cover_arena():
    a = make_arena(4096, 1024)
    assert a.heap_base == 1024
    assert a.heap_size == 3072
    assert a.heap_base + a.heap_size == a.size_bytes


def test_entry_overlap_helper():
    e = WatchEntry(10, 4)
    assert e.overlaps(9, 2) and e.overlaps(13, 1) and e.overlaps(0, 100)
    assert not e.overlaps(14, 4) and not e.overlaps(0, 10)
