"""Process-internal virtual file system, clock, and syscall taxonomy.

Every supported call falls into one of five categories that decide its
record-time and replay-time treatment:

  repeatable  — same result either phase; executed both times, never logged
  recordable  — result logged; replay returns the payload without executing
  revocable   — executed both phases; reproducible once positions/lengths
                are restored (file reads/writes)
  deferrable  — effect delayed to commit so rollback can still happen
                (close, unmap)
  irrevocable — closes the epoch; the effect applies at the start of the
                next epoch, outside any replayable region

Descriptors model kernel state under in-situ replay: they survive rollback,
so recordable calls can substitute recorded descriptors without mutating
anything during replay. Rollback itself renormalizes the table.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Optional

from .arena import content_hash
from .errors import BadDescriptor, InternalInvariantViolation, UnknownSyscall
from . import events

if TYPE_CHECKING:
    from .runtime import Runtime, ThreadState

REPEATABLE = "repeatable"
RECORDABLE = "recordable"
REVOCABLE = "revocable"
DEFERRABLE = "deferrable"
IRREVOCABLE = "irrevocable"

FIRST_FD = 3  # 0..2 model the stdio descriptors and are never handed out

_PLAIN = {
    "getpid": REPEATABLE,
    "time": RECORDABLE,
    "socket_recv": RECORDABLE,
    "open": RECORDABLE,
    "read": REVOCABLE,
    "write": REVOCABLE,
    "close": DEFERRABLE,
    "unmap": DEFERRABLE,
    "exec_marker": IRREVOCABLE,
    "fork_marker": IRREVOCABLE,
}

_FLAGGED = {
    ("fcntl", "F_GETOWN"): REPEATABLE,
    ("fcntl", "F_DUPFD"): RECORDABLE,
    ("lseek", "noop"): REPEATABLE,
    ("lseek", "forward"): REVOCABLE,
    ("lseek", "reposition"): IRREVOCABLE,
}


def classify(name: str, flags: Optional[str] = None) -> str:
    """Map a syscall (and flag, where it matters) to its category."""
    if flags is not None:
        cat = _FLAGGED.get((name, flags))
        if cat is not None:
            return cat
        raise UnknownSyscall(f"{name} with flag {flags!r}")
    cat = _PLAIN.get(name)
    if cat is None:
        raise UnknownSyscall(name)
    return cat


# ---------------------------------------------------------------------------
# Virtual kernel state
# ---------------------------------------------------------------------------


@dataclass
class VirtualFile:
    name: str
    content: bytearray = field(default_factory=bytearray)
    open_descriptors: set[int] = field(default_factory=set)

    @property
    def shadow_id(self) -> str:
        return f"file:{self.name}"


@dataclass
class Descriptor:
    fd: int
    file: VirtualFile
    position: int = 0
    # creation-time facts; rollback uses them to renormalize descriptors
    # opened after the epoch snapshot (the in-situ analog of fds that the
    # kernel keeps open across a rollback)
    initial_position: int = 0
    initial_length: int = 0
    created_file: bool = False


@dataclass
class DeferredOp:
    kind: str       # "close" | "unmap"
    target: object  # fd or mapping name
    order: int

    def identity(self) -> tuple:
        return (self.kind, self.target)


class VirtualClock:
    def __init__(self, start: int = 1000):
        self.now = start

    def read_and_advance(self) -> int:
        value = self.now
        self.now += 1
        return value


class ScriptedSocket:
    """Byte-stream stub; recv consumes from a pre-seeded script."""

    def __init__(self, name: str, script: bytes):
        self.name = name
        self.script = script
        self.position = 0

    def recv(self, length: int) -> bytes:
        chunk = self.script[self.position:self.position + length]
        self.position += len(chunk)
        return chunk


class Vfs:
    """Files, descriptors, sockets, mappings, and the deferral queue."""

    def __init__(self, mappings: tuple[str, ...] = ()):
        self.files: dict[str, VirtualFile] = {}
        self.table: dict[int, Descriptor] = {}
        self.sockets: dict[str, ScriptedSocket] = {}
        self.mappings: set[str] = set(mappings)
        self.clock = VirtualClock()
        self.deferred: list[DeferredOp] = []
        self._deferred_seq = 0
        self.pid = 4242

    # -- descriptor table ---------------------------------------------------

    def _alloc_fd(self) -> int:
        fd = FIRST_FD
        while fd in self.table:
            fd += 1
        return fd

    def descriptor(self, fd: int) -> Descriptor:
        desc = self.table.get(fd)
        if desc is None:
            raise BadDescriptor(f"descriptor {fd} is not open")
        return desc

    def open_file(self, name: str) -> Descriptor:
        f = self.files.get(name)
        created = f is None
        if created:
            f = VirtualFile(name)
            self.files[name] = f
        desc = Descriptor(fd=self._alloc_fd(), file=f,
                          initial_length=len(f.content), created_file=created)
        self.table[desc.fd] = desc
        f.open_descriptors.add(desc.fd)
        return desc

    def dup_fd(self, fd: int) -> Descriptor:
        orig = self.descriptor(fd)
        desc = Descriptor(fd=self._alloc_fd(), file=orig.file,
                          position=orig.position,
                          initial_position=orig.position,
                          initial_length=len(orig.file.content))
        self.table[desc.fd] = desc
        orig.file.open_descriptors.add(desc.fd)
        return desc

    def close_now(self, fd: int) -> None:
        desc = self.table.pop(fd, None)
        if desc is not None:
            desc.file.open_descriptors.discard(fd)

    def register_fd(self, fd: int, name: str, position: int,
                    created_file: bool, initial_length: int) -> Descriptor:
        """Recreate a descriptor from a recorded open/dup (recording only)."""
        f = self.files.get(name)
        if f is None:
            f = VirtualFile(name)
            self.files[name] = f
        desc = Descriptor(fd=fd, file=f, position=position,
                          initial_position=position,
                          initial_length=initial_length, created_file=created_file)
        self.table[fd] = desc
        f.open_descriptors.add(fd)
        return desc

    # -- data plane -----------------------------------------------------------

    def read_fd(self, fd: int, length: int) -> bytes:
        desc = self.descriptor(fd)
        data = bytes(desc.file.content[desc.position:desc.position + length])
        desc.position += len(data)
        return data

    def write_fd(self, fd: int, data: bytes) -> int:
        desc = self.descriptor(fd)
        end = desc.position + len(data)
        if end > len(desc.file.content):
            desc.file.content.extend(b"\x00" * (end - len(desc.file.content)))
        desc.file.content[desc.position:end] = data
        desc.position = end
        return len(data)

    def seek_fd(self, fd: int, position: int) -> int:
        desc = self.descriptor(fd)
        desc.position = position
        return position

    # -- deferral -----------------------------------------------------------------

    def enqueue_deferred(self, kind: str, target) -> None:
        identity = (kind, target)
        if any(op.identity() == identity for op in self.deferred):
            return
        self.deferred.append(DeferredOp(kind, target, self._deferred_seq))
        self._deferred_seq += 1

    def commit_deferred(self) -> None:
        for op in self.deferred:
            if op.kind == "close":
                self.close_now(op.target)
            elif op.kind == "unmap":
                self.mappings.discard(op.target)
        self.deferred.clear()

    # -- snapshot / rollback ---------------------------------------------------------

    def snapshot_positions(self) -> dict[int, tuple[int, int]]:
        return {fd: (d.position, len(d.file.content)) for fd, d in self.table.items()}

    def restore_positions(self, snap: dict[int, tuple[int, int]]) -> None:
        for fd, (position, length) in snap.items():
            desc = self.table.get(fd)
            if desc is None:
                raise InternalInvariantViolation(
                    f"descriptor {fd} from snapshot is no longer open")
            desc.position = position
            del desc.file.content[length:]
        # Descriptors opened after the snapshot survive rollback (kernel
        # state); reset them so the replay's substituted descriptors start
        # from the same place the recording did.
        for fd, desc in self.table.items():
            if fd not in snap:
                desc.position = desc.initial_position
                if desc.created_file:
                    del desc.file.content[desc.initial_length:]

    # -- content inspection -------------------------------------------------------

    def digest(self) -> str:
        blob = bytearray()
        for name in sorted(self.files):
            blob += name.encode()
            blob += b"\x00"
            blob += self.files[name].content
            blob += b"\x01"
        return content_hash(blob)

    def seed_from_dir(self, path: str | Path) -> None:
        root = Path(path)
        for entry in sorted(root.iterdir()):
            if entry.is_file():
                self.files[entry.name] = VirtualFile(
                    entry.name, bytearray(entry.read_bytes()))

    def dump_to_dir(self, path: str | Path) -> None:
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        for name, f in self.files.items():
            (root / name).write_bytes(bytes(f.content))

    def add_socket(self, name: str, script: bytes) -> None:
        self.sockets[name] = ScriptedSocket(name, script)


# ---------------------------------------------------------------------------
# Record/replay orchestration for syscalls
# ---------------------------------------------------------------------------


class SyscallLayer:
    """Applies each category's record/replay/defer behavior for one runtime."""

    def __init__(self, runtime: "Runtime"):
        self.rt = runtime
        self.vfs = runtime.vfs

    # Per-call event budget: revocable file ops also log the file-shadow
    # acquisition, so they reserve two entries.
    def invoke(self, ts: "ThreadState", call: str, /, **args):
        handler = getattr(self, f"_sys_{call}", None)
        if handler is None:
            raise UnknownSyscall(call)
        return handler(ts, **args)

    # -- helpers ------------------------------------------------------------------

    def _replaying(self) -> bool:
        return self.rt.replaying

    def _record(self, ts, detail: str, ret: int, payload: Optional[bytes] = None) -> None:
        self.rt.log.record(ts.tid, events.SYSCALL, ret=ret, payload=payload, detail=detail)

    def _consume(self, ts, detail: str, actual_ret: Optional[int] = None) -> events.EventRecord:
        div = self.rt.log.check_divergence(ts.tid, events.SYSCALL, detail=detail)
        if div is not None:
            self.rt.report_divergence(ts, div)
        rec = self.rt.consume_event(ts, actual_ret=actual_ret)
        self.rt.apply_pending_delay(ts)
        return rec

    def _gate_or_park(self, ts, need: int, step: str) -> bool:
        """Entry gate; returns False if the replay cursor is exhausted (the
        op belongs to the next epoch and must not run yet)."""
        self.rt.gate(ts, need=need, step=step)
        if self._replaying() and self.rt.log.peek(ts.tid) is None:
            self.rt.park_replay_done(ts)
            self.rt.gate(ts, need=need, step=step)
        return True

    def _file_shadow(self, fname: str):
        return self.rt.log.register_shadow(f"file:{fname}", events.KIND_MUTEX)

    # -- repeatable ---------------------------------------------------------------

    def _sys_getpid(self, ts) -> int:
        self.rt.gate(ts, need=0, step=ts.step)
        return self.vfs.pid

    def _sys_fcntl(self, ts, fd: int, flag: str):
        if flag == "F_GETOWN":
            self.rt.gate(ts, need=0, step=ts.step)
            return self.vfs.pid
        if flag == "F_DUPFD":
            detail = f"fcntl:F_DUPFD:{fd}"
            self._gate_or_park(ts, 1, ts.step)
            if self._replaying():
                return self._consume(ts, detail).ret
            try:
                ret = self.vfs.dup_fd(fd).fd
            except BadDescriptor:
                ret = -1  # errors are results: logged and replayed like any
            self._record(ts, detail, ret=ret)
            return ret
        raise UnknownSyscall(f"fcntl flag {flag!r}")

    # -- recordable ----------------------------------------------------------------

    def _sys_time(self, ts) -> int:
        detail = "time"
        self._gate_or_park(ts, 1, ts.step)
        if self._replaying():
            return self._consume(ts, detail).ret
        value = self.vfs.clock.read_and_advance()
        self._record(ts, detail, ret=value)
        return value

    def _sys_socket_recv(self, ts, socket: str, length: int) -> bytes:
        detail = f"socket_recv:{socket}"
        self._gate_or_park(ts, 1, ts.step)
        if self._replaying():
            rec = self._consume(ts, detail)
            return rec.payload or b""
        sock = self.vfs.sockets.get(socket)
        if sock is None:
            raise UnknownSyscall(f"socket {socket!r} was never seeded")
        data = sock.recv(length)
        self._record(ts, detail, ret=len(data), payload=data)
        return data

    def _sys_open(self, ts, name: str) -> int:
        detail = f"open:{name}"
        self._gate_or_park(ts, 1, ts.step)
        if self._replaying():
            # The descriptor survived rollback; substitute it untouched.
            return self._consume(ts, detail).ret
        desc = self.vfs.open_file(name)
        self._record(ts, detail, ret=desc.fd,
                     payload=b"created" if desc.created_file else b"")
        return desc.fd

    # -- revocable ------------------------------------------------------------------

    def _fd_name(self, fd: int) -> str:
        return self.vfs.descriptor(fd).file.name

    def _sys_read(self, ts, fd: int, length: int) -> bytes:
        detail = f"read:{fd}"
        self._gate_or_park(ts, 2, ts.step)
        shadow = self._file_shadow(self._fd_name(fd))
        self.rt.sync.lock_shadow(ts, shadow)
        try:
            if self._replaying():
                data = self.vfs.read_fd(fd, length)
                self._verify_ret(ts, detail, len(data))
                return data
            data = self.vfs.read_fd(fd, length)
            self._record(ts, detail, ret=len(data))
            return data
        finally:
            self.rt.sync.unlock_shadow(ts, shadow)

    def _sys_write(self, ts, fd: int, data: bytes) -> int:
        detail = f"write:{fd}"
        self._gate_or_park(ts, 2, ts.step)
        shadow = self._file_shadow(self._fd_name(fd))
        self.rt.sync.lock_shadow(ts, shadow)
        try:
            if self._replaying():
                n = self.vfs.write_fd(fd, data)
                self._verify_ret(ts, detail, n)
                return n
            n = self.vfs.write_fd(fd, data)
            self._record(ts, detail, ret=n)
            return n
        finally:
            self.rt.sync.unlock_shadow(ts, shadow)

    def _verify_ret(self, ts, detail: str, actual: int) -> None:
        """Re-executed calls must reproduce their recorded results; a
        mismatch is divergence evidence (the state they act on differs)."""
        from .events import Divergence
        rec = self.rt.log.peek(ts.tid)
        if rec is not None and rec.kind == events.SYSCALL \
                and rec.detail == detail and rec.ret != actual:
            div = Divergence(ts.tid, self.rt.log.threads[ts.tid].replay_cursor,
                             expected=f"{detail}->{rec.ret}",
                             actual=f"{detail}->{actual}")
            self.rt.report_divergence(ts, div)
        self._consume(ts, detail, actual_ret=actual)

    def _sys_lseek(self, ts, fd: int, position: int) -> int:
        desc = self.vfs.descriptor(fd)
        if position == desc.position:
            flags = "noop"
        elif position > desc.position and self.rt.config.forward_lseek_revocable:
            flags = "forward"
        else:
            flags = "reposition"
        category = classify("lseek", flags)
        detail = f"lseek:{fd}:{position}"
        if category == REPEATABLE:
            self.rt.gate(ts, need=0, step=ts.step)
            return desc.position
        if category == REVOCABLE:
            self._gate_or_park(ts, 2, ts.step)
            shadow = self._file_shadow(desc.file.name)
            self.rt.sync.lock_shadow(ts, shadow)
            try:
                if self._replaying():
                    self._consume(ts, detail)
                    return self.vfs.seek_fd(fd, position)
                value = self.vfs.seek_fd(fd, position)
                self._record(ts, detail, ret=value)
                return value
            finally:
                self.rt.sync.unlock_shadow(ts, shadow)
        return self._irrevocable(ts, detail, ("lseek", fd, position))

    # -- deferrable -----------------------------------------------------------------

    def _sys_close(self, ts, fd: int) -> int:
        detail = f"close:{fd}"
        self.vfs.descriptor(fd)  # validate while the call happens
        self._gate_or_park(ts, 1, ts.step)
        if self._replaying():
            self._consume(ts, detail)
        else:
            self._record(ts, detail, ret=0)
        self.vfs.enqueue_deferred("close", fd)
        return 0

    def _sys_unmap(self, ts, name: str) -> int:
        detail = f"unmap:{name}"
        self._gate_or_park(ts, 1, ts.step)
        if self._replaying():
            self._consume(ts, detail)
        else:
            self._record(ts, detail, ret=0)
        self.vfs.enqueue_deferred("unmap", name)
        return 0

    # -- irrevocable ----------------------------------------------------------------

    def _sys_exec_marker(self, ts) -> int:
        return self._irrevocable(ts, "exec_marker", ("exec_marker",))

    def _sys_fork_marker(self, ts) -> int:
        return self._irrevocable(ts, "fork_marker", ("fork_marker",))

    def _irrevocable(self, ts, detail: str, pending: tuple) -> int:
        self.rt.gate(ts, need=0, step=ts.step)
        if self._replaying():
            # The recorded epoch closed before this call; a replay that
            # reaches it has consumed the whole log and parks here.
            if self.rt.log.peek(ts.tid) is None:
                self.rt.park_replay_done(ts)
                self.rt.gate(ts, need=0, step=ts.step)
            else:
                div = self.rt.log.check_divergence(ts.tid, events.SYSCALL, detail=detail)
                self.rt.report_divergence(ts, div)
        # Calling thread becomes coordinator; the effect applies at the
        # start of the next epoch and the result comes back through it.
        return self.rt.epochs.close_for_irrevocable(ts, pending)

    def apply_pending(self, pending: tuple) -> int:
        """Execute a deferred irrevocable effect (next-epoch housekeeping)."""
        name = pending[0]
        if name == "lseek":
            _, fd, position = pending
            return self.vfs.seek_fd(fd, position)
        return 0
