"""Workload authoring model and the built-in corpus.

A workload thread body is a list of small instructions interpreted against
a locals dict plus a program counter, both stored in the thread's
local-state blob. Each instruction performs at most one framework API call
and commits its locals update only after the call returns, which is what
makes "restore the blob and re-run the body" a faithful stand-in for stack
and register restoration.

Programs use `$name` to reference locals and may address arena memory
either absolutely or relative to a pointer local:  {"base": "$p", "off": 16}.
"""

from __future__ import annotations

import copy
import json
import time as _time
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Optional

from .config import KIB, RuntimeConfig
from .errors import (ConfigError, DeclaredCrash, OutOfMemory, WorkloadAbort,
                     WorkloadFault)
from .epochs import TRIGGER_BOUNDARY, TRIGGER_TERMINATION
from .runtime import ACT_ABORT, ACT_RUN, Runtime, ThreadState
from .vfs import VirtualFile

if TYPE_CHECKING:
    pass


# ---------------------------------------------------------------------------
# Workload specification
# ---------------------------------------------------------------------------


@dataclass
class WorkloadSpec:
    name: str
    threads: list[dict]                       # {"name", "program", "locals"}
    programs: dict[str, list] = field(default_factory=dict)
    barriers: dict[str, int] = field(default_factory=dict)
    vfs_files: dict[str, bytes] = field(default_factory=dict)
    sockets: dict[str, bytes] = field(default_factory=dict)
    declared_bugs: list[dict] = field(default_factory=list)
    config_overrides: dict = field(default_factory=dict)
    racy: bool = False

    def copy(self) -> "WorkloadSpec":
        return copy.deepcopy(self)


def assemble(instructions: list[dict]) -> tuple[list[dict], dict[str, int]]:
    """Strip label pseudo-ops and resolve jump targets to pc values."""
    labels: dict[str, int] = {}
    program: list[dict] = []
    for instr in instructions:
        if instr.get("op") == "label":
            labels[instr["name"]] = len(program)
        else:
            program.append(dict(instr))
    for pc, instr in enumerate(program):
        target = instr.get("to")
        if isinstance(target, str):
            if target not in labels:
                raise ConfigError(f"undefined label {target!r} at pc {pc}")
            instr["to"] = labels[target]
    return program, labels


def step_tag(tid: int, pc: int, op: str) -> str:
    return f"T{tid}@{pc}:{op}"


# ---------------------------------------------------------------------------
# The instruction engine
# ---------------------------------------------------------------------------


class Engine:
    def __init__(self, rt: Runtime, spec: WorkloadSpec):
        self.rt = rt
        self.spec = spec

    def run_program(self, ts: ThreadState) -> None:
        rt = self.rt
        if rt.replaying:
            rt.attempt_start_delay(ts)
        program = ts.program
        while True:
            if rt.aborting:  # run teardown; never an epoch stop point
                raise WorkloadAbort()
            state = ts.local_state
            pc = state["pc"]
            if pc >= len(program):
                return
            instr = program[pc]
            op = instr["op"]
            ts.step = step_tag(ts.tid, pc, op)
            rt.count_step()
            next_pc = self._dispatch(ts, instr, pc)
            state["pc"] = next_pc

    # -- value helpers -------------------------------------------------------

    def _val(self, ts, x):
        if isinstance(x, str) and x.startswith("$"):
            return ts.local_state["vars"][x[1:]]
        return x

    def _addr(self, ts, spec):
        if isinstance(spec, dict):
            return self._val(ts, spec["base"]) + spec.get("off", 0)
        return self._val(ts, spec)

    def _data(self, ts, instr) -> bytes:
        if "data" in instr:
            return bytes.fromhex(self._val(ts, instr["data"]))
        value = self._val(ts, instr["value"])
        return int(value).to_bytes(instr.get("len", 8), "little")

    def _vars(self, ts) -> dict:
        return ts.local_state["vars"]

    # -- dispatch -----------------------------------------------------------------

    def _dispatch(self, ts, instr, pc) -> int:
        handler = getattr(self, f"_op_{instr['op']}", None)
        if handler is None:
            raise ConfigError(f"unknown instruction {instr['op']!r}")
        out = handler(ts, instr, pc)
        return pc + 1 if out is None else out

    # pure local computation --------------------------------------------------

    def _op_set(self, ts, instr, pc):
        self._vars(ts)[instr["var"]] = self._val(ts, instr["value"])

    def _op_add(self, ts, instr, pc):
        self._vars(ts)[instr["var"]] += self._val(ts, instr["value"])

    def _op_jump(self, ts, instr, pc):
        return instr["to"]

    def _op_branch(self, ts, instr, pc):
        left = self._vars(ts)[instr["var"]]
        right = self._val(ts, instr["value"])
        cmp = instr.get("cmp", "eq")
        taken = {
            "eq": left == right,
            "ne": left != right,
            "lt": left < right,
            "ge": left >= right,
        }[cmp]
        return instr["to"] if taken else None

    def _op_expect(self, ts, instr, pc):
        left = self._vars(ts)[instr["var"]]
        right = self._val(ts, instr["value"])
        if left != right:
            raise DeclaredCrash(f"expectation failed: {instr['var']}={left} wanted {right}",
                                thread=ts.tid, step=ts.step)

    def _op_sleep(self, ts, instr, pc):
        _time.sleep(self._val(ts, instr["ms"]) / 1000.0)

    def _op_nop(self, ts, instr, pc):
        pass

    def _op_crash(self, ts, instr, pc):
        raise DeclaredCrash(instr.get("reason", "declared crash"),
                            thread=ts.tid, step=ts.step)

    # arena ---------------------------------------------------------------------
    # Memory and allocator operations are deliberately not stop points: a
    # replay could not reproduce a thread parked mid-computation, so threads
    # only park at synchronization/syscall entries (matching the recording).

    def _op_write(self, ts, instr, pc):
        self.rt.arena.write(ts.tid, self._addr(ts, instr["addr"]),
                            self._data(ts, instr), step=ts.step)

    def _op_read(self, ts, instr, pc):
        data = self.rt.arena.read(ts.tid, self._addr(ts, instr["addr"]),
                                  instr.get("len", 8), step=ts.step)
        self._vars(ts)[instr["var"]] = int.from_bytes(data, "little")

    # heap ----------------------------------------------------------------------

    def _op_alloc(self, ts, instr, pc):
        try:
            offset = self.rt.heap.allocate(ts.tid, self._val(ts, instr["size"]),
                                           step=ts.step)
        except OutOfMemory as exc:
            fault = WorkloadFault(str(exc), thread=ts.tid, step=ts.step)
            fault.kind = "out-of-memory"
            raise fault from exc
        self._vars(ts)[instr["var"]] = offset

    def _op_free(self, ts, instr, pc):
        self.rt.heap.free(ts.tid, self._val(ts, instr["ptr"]), step=ts.step)

    # synchronization ---------------------------------------------------------------

    def _op_lock(self, ts, instr, pc):
        self.rt.sync.mutex_lock(ts, self.rt.sync.mutex(instr["m"]))

    def _op_unlock(self, ts, instr, pc):
        self.rt.sync.mutex_unlock(ts, self.rt.sync.mutex(instr["m"]))

    def _op_trylock(self, ts, instr, pc):
        ret = self.rt.sync.mutex_trylock(ts, self.rt.sync.mutex(instr["m"]))
        self._vars(ts)[instr["var"]] = ret

    def _op_wait(self, ts, instr, pc):
        self.rt.sync.cond_wait(ts, self.rt.sync.condvar(instr["cv"]),
                               self.rt.sync.mutex(instr["m"]))

    def _op_signal(self, ts, instr, pc):
        self.rt.sync.cond_signal(ts, self.rt.sync.condvar(instr["cv"]))

    def _op_broadcast(self, ts, instr, pc):
        self.rt.sync.cond_broadcast(ts, self.rt.sync.condvar(instr["cv"]))

    def _op_barrier(self, ts, instr, pc):
        ret = self.rt.sync.barrier_wait(ts, self.rt.sync.barrier(instr["b"]))
        if "var" in instr:
            self._vars(ts)[instr["var"]] = ret

    def _op_spawn(self, ts, instr, pc):
        body = self.spec.programs[instr["program"]]
        locals_init = dict(instr.get("locals", {}))
        child = self.rt.sync.spawn(ts, body, {"pc": 0, "vars": locals_init},
                                   name=instr["program"])
        self._vars(ts)[instr["var"]] = child

    def _op_join(self, ts, instr, pc):
        self.rt.sync.join(ts, self._val(ts, instr["child"]))

    def _op_epoch(self, ts, instr, pc):
        rt = self.rt
        if not rt.recording_enabled:
            return None
        if rt.replaying:
            rt.gate(ts, need=0)
            if rt.log.peek(ts.tid) is None:
                # The recorded epoch closed here; done once committed.
                rt.park_replay_done(ts)
                return None
            div = rt.log.check_divergence(ts.tid, "EpochBoundary")
            rt.report_divergence(ts, div)
        rt.epochs.close_epoch(ts, TRIGGER_BOUNDARY)

    # syscalls -----------------------------------------------------------------------

    def _op_open(self, ts, instr, pc):
        fd = self.rt.syscalls.invoke(ts, "open", name=instr["name"])
        self._vars(ts)[instr["var"]] = fd

    def _op_close(self, ts, instr, pc):
        self.rt.syscalls.invoke(ts, "close", fd=self._val(ts, instr["fd"]))

    def _op_fwrite(self, ts, instr, pc):
        self.rt.syscalls.invoke(ts, "write", fd=self._val(ts, instr["fd"]),
                                data=self._data(ts, instr))

    def _op_fread(self, ts, instr, pc):
        data = self.rt.syscalls.invoke(ts, "read", fd=self._val(ts, instr["fd"]),
                                       length=self._val(ts, instr["len"]))
        self._vars(ts)[instr["var"]] = data.hex()

    def _op_lseek(self, ts, instr, pc):
        self.rt.syscalls.invoke(ts, "lseek", fd=self._val(ts, instr["fd"]),
                                position=self._val(ts, instr["pos"]))

    def _op_time(self, ts, instr, pc):
        self._vars(ts)[instr["var"]] = self.rt.syscalls.invoke(ts, "time")

    def _op_getpid(self, ts, instr, pc):
        self._vars(ts)[instr["var"]] = self.rt.syscalls.invoke(ts, "getpid")

    def _op_recv(self, ts, instr, pc):
        data = self.rt.syscalls.invoke(ts, "socket_recv", socket=instr["socket"],
                                       length=self._val(ts, instr["len"]))
        self._vars(ts)[instr["var"]] = data.hex()

    def _op_fcntl(self, ts, instr, pc):
        ret = self.rt.syscalls.invoke(ts, "fcntl", fd=self._val(ts, instr["fd"]),
                                      flag=instr["flag"])
        if "var" in instr:
            self._vars(ts)[instr["var"]] = ret

    def _op_unmap(self, ts, instr, pc):
        self.rt.syscalls.invoke(ts, "unmap", name=instr["name"])

    def _op_exec_marker(self, ts, instr, pc):
        self.rt.syscalls.invoke(ts, "exec_marker")


# ---------------------------------------------------------------------------
# Running a workload end to end
# ---------------------------------------------------------------------------


@dataclass
class RunSummary:
    name: str
    ok: bool
    epochs: list[dict]
    reports: list[dict]
    final_arena_hash: str
    final_vfs_digest: str
    event_count: int
    recorded_dump: list[dict]
    replay_searches: list[dict]
    heap_stats: dict
    wall_time_s: float

    def to_dict(self) -> dict:
        return {
            "workload": self.name,
            "ok": self.ok,
            "epochs": self.epochs,
            "reports": self.reports,
            "final_arena_hash": self.final_arena_hash,
            "final_vfs_digest": self.final_vfs_digest,
            "event_count": self.event_count,
            "replay_searches": self.replay_searches,
            "heap_stats": self.heap_stats,
            "wall_time_s": round(self.wall_time_s, 6),
        }


def _validate_spec(spec: WorkloadSpec) -> None:
    if not spec.threads:
        raise ConfigError("workload declares no threads")
    programs = [t["program"] for t in spec.threads] + list(spec.programs.values())
    for program in programs:
        for instr in program:
            if instr["op"] == "barrier" and instr["b"] not in spec.barriers:
                raise ConfigError(
                    f"barrier {instr['b']!r} used without a declared party count")
            if instr["op"] == "spawn" and instr["program"] not in spec.programs:
                raise ConfigError(f"spawned program {instr['program']!r} not defined")


def run(spec: WorkloadSpec, config: Optional[RuntimeConfig] = None,
        debugger=None, vfs_in: Optional[str] = None,
        vfs_out: Optional[str] = None, runtime_out: Optional[list] = None) -> RunSummary:
    """Execute the full lifecycle: record, close epochs, detect, replay as
    triggered, and summarize."""
    _validate_spec(spec)
    base = config or RuntimeConfig()
    if spec.config_overrides:
        base = base.replace(**spec.config_overrides)
    rt = Runtime(base)
    rt.debugger = debugger
    if debugger is not None:
        debugger.rt = rt
    rt.engine = Engine(rt, spec)
    if runtime_out is not None:
        runtime_out.append(rt)

    for name, content in spec.vfs_files.items():
        rt.vfs.files[name] = VirtualFile(name, bytearray(content))
    if vfs_in:
        rt.vfs.seed_from_dir(vfs_in)
    for name, script in spec.sockets.items():
        rt.vfs.add_socket(name, script)
    for name, parties in spec.barriers.items():
        rt.sync.barrier(name, parties)

    started = _time.monotonic()
    threads = []
    for t in spec.threads:
        ts = rt.new_thread(t["program"], {"pc": 0, "vars": dict(t.get("locals", {}))},
                           name=t.get("name", ""))
        threads.append(ts)

    if rt.recording_enabled:
        rt.epochs.begin_epoch()
    for ts in threads:
        rt.release(ts, ACT_RUN)

    _await_run_end(rt)
    if rt.control_error is not None:
        rt.shutdown()
        raise rt.control_error

    if rt.recording_enabled and not rt.epochs.ended:
        rt.epochs.close_from_root(TRIGGER_TERMINATION)
    if not rt.recording_enabled:
        for ts in rt.live_threads():
            rt.release(ts, ACT_ABORT)
    for ts in rt.threads.values():
        if ts.os_thread is not None:
            ts.os_thread.join(timeout=10.0)
    rt.shutdown()
    wall = _time.monotonic() - started

    if vfs_out:
        rt.vfs.dump_to_dir(vfs_out)

    return RunSummary(
        name=spec.name,
        ok=not rt.run_failed,
        epochs=list(rt.epochs.trace),
        reports=list(rt.detectors.reports),
        final_arena_hash=rt.arena.hash(),
        final_vfs_digest=rt.vfs.digest(),
        event_count=sum(line.get("events", 0) for line in rt.epochs.trace),
        recorded_dump=list(rt.epochs.recorded_dump),
        replay_searches=[s.report() for s in rt.replayer.searches],
        heap_stats=rt.heap.stats(),
        wall_time_s=wall,
    )


def _await_run_end(rt: Runtime) -> None:
    with rt._ctl:
        while True:
            if rt.epochs.ended or rt.aborting or rt.control_error is not None:
                return
            workers = list(rt.threads.values())
            if workers and all((not t.alive) or t.exited for t in workers):
                return
            rt._ctl.wait(0.05)


# ---------------------------------------------------------------------------
# Built-in corpus
# ---------------------------------------------------------------------------

SMALL = {"arena_size": 256 * KIB, "globals_size": 4 * KIB, "block_size": 32 * KIB}

CELL_COUNTER = 0
CELL_PC_COUNT = 16
CELL_PC_DONE = 24
CELL_PHASE_BASE = 32
CELL_TRY = 64
CELL_FLAG = 96
CELL_SPAWN_A = 128
CELL_SPAWN_B = 136
CELL_SERIAL_BASE = 160
CELL_GOT_BASE = 224


def _counter_body(iters: int) -> list[dict]:
    return [
        {"op": "set", "var": "i", "value": 0},
        {"op": "label", "name": "loop"},
        {"op": "branch", "var": "i", "cmp": "ge", "value": iters, "to": "done"},
        {"op": "lock", "m": "m"},
        {"op": "read", "addr": CELL_COUNTER, "len": 8, "var": "c"},
        {"op": "add", "var": "c", "value": 1},
        {"op": "write", "addr": CELL_COUNTER, "value": "$c", "len": 8},
        {"op": "unlock", "m": "m"},
        {"op": "add", "var": "i", "value": 1},
        {"op": "jump", "to": "loop"},
        {"op": "label", "name": "done"},
    ]


def build_counter(iters: int = 1000) -> WorkloadSpec:
    program, _ = assemble(_counter_body(iters))
    return WorkloadSpec(
        name="counter",
        threads=[{"name": "inc1", "program": program},
                 {"name": "inc2", "program": program}],
        config_overrides=dict(SMALL),
    )


def build_producer_consumer(items: int = 6) -> WorkloadSpec:
    producer, _ = assemble([
        {"op": "set", "var": "i", "value": 0},
        {"op": "label", "name": "loop"},
        {"op": "branch", "var": "i", "cmp": "ge", "value": items, "to": "fin"},
        {"op": "sleep", "ms": 1},  # let consumers drain and actually wait
        {"op": "lock", "m": "m"},
        {"op": "read", "addr": CELL_PC_COUNT, "len": 8, "var": "c"},
        {"op": "add", "var": "c", "value": 1},
        {"op": "write", "addr": CELL_PC_COUNT, "value": "$c", "len": 8},
        {"op": "signal", "cv": "cv"},
        {"op": "unlock", "m": "m"},
        {"op": "add", "var": "i", "value": 1},
        {"op": "jump", "to": "loop"},
        {"op": "label", "name": "fin"},
        {"op": "lock", "m": "m"},
        {"op": "write", "addr": CELL_PC_DONE, "value": 1, "len": 8},
        {"op": "broadcast", "cv": "cv"},
        {"op": "unlock", "m": "m"},
    ])
    consumer, _ = assemble([
        {"op": "set", "var": "got", "value": 0},
        {"op": "label", "name": "loop"},
        {"op": "lock", "m": "m"},
        {"op": "label", "name": "check"},
        {"op": "read", "addr": CELL_PC_COUNT, "len": 8, "var": "c"},
        {"op": "branch", "var": "c", "cmp": "ne", "value": 0, "to": "take"},
        {"op": "read", "addr": CELL_PC_DONE, "len": 8, "var": "d"},
        {"op": "branch", "var": "d", "cmp": "eq", "value": 1, "to": "out"},
        {"op": "wait", "cv": "cv", "m": "m"},
        {"op": "jump", "to": "check"},
        {"op": "label", "name": "take"},
        {"op": "add", "var": "c", "value": -1},
        {"op": "write", "addr": CELL_PC_COUNT, "value": "$c", "len": 8},
        {"op": "add", "var": "got", "value": 1},
        {"op": "unlock", "m": "m"},
        {"op": "jump", "to": "loop"},
        {"op": "label", "name": "out"},
        {"op": "unlock", "m": "m"},
        {"op": "write", "addr": "$gotslot", "value": "$got", "len": 8},
    ])
    return WorkloadSpec(
        name="producer-consumer",
        threads=[{"name": "producer", "program": producer},
                 {"name": "consumer1", "program": consumer,
                  "locals": {"gotslot": CELL_GOT_BASE}},
                 {"name": "consumer2", "program": consumer,
                  "locals": {"gotslot": CELL_GOT_BASE + 8}}],
        config_overrides=dict(SMALL),
    )


def build_barrier_phases(phases: int = 3) -> WorkloadSpec:
    def body(idx: int):
        slot_addr = CELL_PHASE_BASE + idx * 8
        instrs = [
            {"op": "set", "var": "p", "value": 0},
            {"op": "set", "var": "serials", "value": 0},
            {"op": "label", "name": "loop"},
            {"op": "branch", "var": "p", "cmp": "ge", "value": phases, "to": "done"},
            {"op": "add", "var": "p", "value": 1},
            {"op": "write", "addr": slot_addr, "value": "$p", "len": 8},
            {"op": "barrier", "b": "b", "var": "r"},
            {"op": "add", "var": "serials", "value": "$r"},
        ]
        total = [{"op": "set", "var": "sum", "value": 0}]
        for i in range(3):
            total.append({"op": "read", "addr": CELL_PHASE_BASE + i * 8, "len": 8,
                          "var": f"s{i}"})
            total.append({"op": "add", "var": "sum", "value": f"$s{i}"})
        instrs += total
        instrs += [
            {"op": "set", "var": "want", "value": 0},
            {"op": "add", "var": "want", "value": "$p"},
            {"op": "add", "var": "want", "value": "$p"},
            {"op": "add", "var": "want", "value": "$p"},
            {"op": "expect", "var": "sum", "value": "$want"},
            {"op": "barrier", "b": "b", "var": "r2"},
            {"op": "add", "var": "serials", "value": "$r2"},
            {"op": "jump", "to": "loop"},
            {"op": "label", "name": "done"},
            {"op": "write", "addr": CELL_SERIAL_BASE + idx * 8,
             "value": "$serials", "len": 8},
        ]
        program, _ = assemble(instrs)
        return program

    return WorkloadSpec(
        name="barrier-phases",
        threads=[{"name": f"phase{i}", "program": body(i)} for i in range(3)],
        barriers={"b": 3},
        config_overrides=dict(SMALL),
    )


def build_trylock_mix(tries: int = 40) -> WorkloadSpec:
    program, _ = assemble([
        {"op": "set", "var": "i", "value": 0},
        {"op": "set", "var": "misses", "value": 0},
        {"op": "label", "name": "loop"},
        {"op": "branch", "var": "i", "cmp": "ge", "value": tries, "to": "done"},
        {"op": "trylock", "m": "t", "var": "r"},
        {"op": "branch", "var": "r", "cmp": "eq", "value": 0, "to": "miss"},
        {"op": "read", "addr": CELL_TRY, "len": 8, "var": "c"},
        {"op": "add", "var": "c", "value": 1},
        {"op": "write", "addr": CELL_TRY, "value": "$c", "len": 8},
        {"op": "unlock", "m": "t"},
        {"op": "jump", "to": "next"},
        {"op": "label", "name": "miss"},
        {"op": "add", "var": "misses", "value": 1},
        {"op": "label", "name": "next"},
        {"op": "add", "var": "i", "value": 1},
        {"op": "jump", "to": "loop"},
        {"op": "label", "name": "done"},
    ])
    return WorkloadSpec(
        name="trylock-mix",
        threads=[{"name": "try1", "program": program},
                 {"name": "try2", "program": program}],
        config_overrides=dict(SMALL),
    )


def build_file_pipeline() -> WorkloadSpec:
    def body(src: str, out: str):
        program, _ = assemble([
            {"op": "open", "name": src, "var": "fd"},
            {"op": "fread", "fd": "$fd", "len": 8, "var": "head"},
            {"op": "time", "var": "t"},
            {"op": "open", "name": out, "var": "fd2"},
            {"op": "fwrite", "fd": "$fd2", "data": "$head"},
            {"op": "fwrite", "fd": "$fd2", "value": "$t", "len": 8},
            {"op": "recv", "socket": "feed", "len": 4, "var": "net"},
            {"op": "fwrite", "fd": "$fd2", "data": "$net"},
            {"op": "close", "fd": "$fd"},
            {"op": "close", "fd": "$fd2"},
        ])
        return program

    return WorkloadSpec(
        name="file-pipeline",
        threads=[{"name": "pipe1", "program": body("src1", "out1")},
                 {"name": "pipe2", "program": body("src2", "out2")}],
        vfs_files={"src1": b"alphabet soup", "src2": b"binary stew!"},
        sockets={"feed": b"netpayload-0123456789"},
        config_overrides=dict(SMALL),
    )


def build_spawn_tree() -> WorkloadSpec:
    worker, _ = assemble([
        {"op": "read", "addr": "$slot", "len": 8, "var": "v"},
        {"op": "add", "var": "v", "value": 7},
        {"op": "write", "addr": "$slot", "value": "$v", "len": 8},
    ])
    parent, _ = assemble([
        {"op": "spawn", "program": "worker", "locals": {"slot": CELL_SPAWN_A}, "var": "a"},
        {"op": "spawn", "program": "worker", "locals": {"slot": CELL_SPAWN_B}, "var": "b"},
        {"op": "join", "child": "$a"},
        {"op": "join", "child": "$b"},
        {"op": "read", "addr": CELL_SPAWN_A, "len": 8, "var": "ra"},
        {"op": "read", "addr": CELL_SPAWN_B, "len": 8, "var": "rb"},
        {"op": "expect", "var": "ra", "value": 7},
        {"op": "expect", "var": "rb", "value": 7},
    ])
    return WorkloadSpec(
        name="spawn-tree",
        threads=[{"name": "parent", "program": parent}],
        programs={"worker": worker},
        config_overrides=dict(SMALL),
    )


def build_crasher(writer_delay_ms: float = 2.0, reader_delay_ms: float = 1.0) -> WorkloadSpec:
    """Racy flag with a sleep-widened window; the stale-read path writes far
    outside the arena and faults."""
    writer, _ = assemble([
        {"op": "sleep", "ms": writer_delay_ms},
        {"op": "write", "addr": CELL_FLAG, "value": 1, "len": 8},
    ])
    reader, _ = assemble([
        {"op": "sleep", "ms": reader_delay_ms},
        {"op": "read", "addr": CELL_FLAG, "len": 8, "var": "f"},
        {"op": "branch", "var": "f", "cmp": "eq", "value": 1, "to": "clean"},
        {"op": "write", "addr": 1 << 30, "value": 255, "len": 1},
        {"op": "label", "name": "clean"},
        {"op": "lock", "m": "safe"},
        {"op": "unlock", "m": "safe"},
    ])
    return WorkloadSpec(
        name="crasher",
        threads=[{"name": "writer", "program": writer},
                 {"name": "reader", "program": reader}],
        config_overrides={"arena_size": 64 * KIB, "globals_size": 4 * KIB,
                          "block_size": 8 * KIB},
        racy=True,
    )


def build_overflow_implant() -> WorkloadSpec:
    instrs = [
        {"op": "alloc", "size": 16, "var": "p"},
        {"op": "write", "addr": {"base": "$p", "off": 0}, "value": 17, "len": 8},
        {"op": "label", "name": "implant"},
        {"op": "write", "addr": {"base": "$p", "off": 16}, "data": "77"},
        {"op": "alloc", "size": 8, "var": "q"},
        {"op": "free", "ptr": "$q"},
    ]
    program, labels = assemble(instrs)
    site = step_tag(1, labels["implant"], "write")
    return WorkloadSpec(
        name="overflow-implant",
        threads=[{"name": "main", "program": program}],
        declared_bugs=[{"kind": "overflow", "site": site}],
        config_overrides=dict(SMALL),
    )


def build_uaf_implant() -> WorkloadSpec:
    instrs = [
        {"op": "alloc", "size": 64, "var": "p"},
        {"op": "write", "addr": {"base": "$p", "off": 0}, "value": 3, "len": 8},
        {"op": "free", "ptr": "$p"},
        {"op": "label", "name": "implant"},
        {"op": "write", "addr": {"base": "$p", "off": 4}, "data": "55"},
        {"op": "alloc", "size": 16, "var": "q"},
    ]
    program, labels = assemble(instrs)
    site = step_tag(1, labels["implant"], "write")
    return WorkloadSpec(
        name="uaf-implant",
        threads=[{"name": "main", "program": program}],
        declared_bugs=[{"kind": "use-after-free", "site": site}],
        config_overrides=dict(SMALL),
    )


def build_multi_bug(bugs: int = 6) -> WorkloadSpec:
    instrs = []
    for i in range(bugs):
        instrs.append({"op": "alloc", "size": 16, "var": f"p{i}"})
    sites = []
    for i in range(bugs):
        instrs.append({"op": "label", "name": f"implant{i}"})
        instrs.append({"op": "write", "addr": {"base": f"$p{i}", "off": 16},
                       "data": f"{0x80 + i:02x}"})
    program, labels = assemble(instrs)
    declared = []
    for i in range(bugs):
        declared.append({"kind": "overflow",
                         "site": step_tag(1, labels[f"implant{i}"], "write")})
    return WorkloadSpec(
        name="multi-bug",
        threads=[{"name": "main", "program": program}],
        declared_bugs=declared,
        config_overrides=dict(SMALL),
    )


BUILTINS = {
    "counter": build_counter,
    "producer-consumer": build_producer_consumer,
    "barrier-phases": build_barrier_phases,
    "trylock-mix": build_trylock_mix,
    "file-pipeline": build_file_pipeline,
    "spawn-tree": build_spawn_tree,
    "crasher": build_crasher,
    "overflow-implant": build_overflow_implant,
    "uaf-implant": build_uaf_implant,
    "multi-bug": build_multi_bug,
}


def get_workload(name: str) -> WorkloadSpec:
    builder = BUILTINS.get(name)
    if builder is None:
        raise ConfigError(f"unknown workload {name!r}; choose from {sorted(BUILTINS)}")
    return builder()


def with_terminal_overflow(spec: WorkloadSpec) -> WorkloadSpec:
    """Append a one-byte overflow implant to the first thread's body, the
    standard trick for forcing a validating replay at termination."""
    out = spec.copy()
    program = list(out.threads[0]["program"])
    pc = len(program)
    program.append({"op": "alloc", "size": 12, "var": "__imp"})
    program.append({"op": "write", "addr": {"base": "$__imp", "off": 12}, "data": "7a"})
    out.threads[0]["program"] = program
    out.declared_bugs = out.declared_bugs + [
        {"kind": "overflow", "site": step_tag(1, pc + 1, "write")}]
    out.name = spec.name
    return out


# ---------------------------------------------------------------------------
# Declarative scenario files
# ---------------------------------------------------------------------------


def load_scenario(path: str | Path) -> WorkloadSpec:
    """Load a workload from a JSON scenario file (schema in the README)."""
    raw = json.loads(Path(path).read_text())
    try:
        threads = []
        for t in raw["threads"]:
            program, _ = assemble(t["program"])
            threads.append({"name": t.get("name", ""), "program": program,
                            "locals": t.get("locals", {})})
        programs = {}
        for name, body in raw.get("programs", {}).items():
            program, _ = assemble(body)
            programs[name] = program
        vfs_files = {}
        for name, content in raw.get("vfs", {}).items():
            if isinstance(content, dict):
                vfs_files[name] = bytes.fromhex(content["hex"])
            else:
                vfs_files[name] = content.encode()
        sockets = {name: (bytes.fromhex(v["hex"]) if isinstance(v, dict) else v.encode())
                   for name, v in raw.get("sockets", {}).items()}
        return WorkloadSpec(
            name=raw.get("name", Path(path).stem),
            threads=threads,
            programs=programs,
            barriers={k: int(v) for k, v in raw.get("barriers", {}).items()},
            vfs_files=vfs_files,
            sockets=sockets,
            declared_bugs=raw.get("bugs", []),
            config_overrides=raw.get("config", {}),
            racy=bool(raw.get("racy", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario file {path}: {exc}") from exc
