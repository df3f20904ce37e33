"""Composition root: workload threads, the stop protocol, and replay hooks.

Threads run real `threading.Thread` bodies but interact with shared state
only through the framework. Every synchronization or syscall entry passes
through `gate`, which is where threads observe stop requests, budget
exhaustion, and replay divergence. Blocked threads always wait on their
primitive's own monitor and fall back to a control-monitor park whenever a
boundary is pending, so the whole world can reach a stable stopped state.
"""

from __future__ import annotations

import threading
import time
from typing import Callable, Optional

from .arena import Arena, MODE_RECORDING, MODE_REPLAYING
from .config import RuntimeConfig
from .errors import (EpochRestart, InternalInvariantViolation, UnsupportedWorkload,
                     WorkloadAbort, WorkloadFault)
from .events import Divergence, EventLog, EventRecord, ShadowSyncObject
from .heap import HeapManager

# Thread statuses (spec's ThreadState.status values plus replay bookkeeping).
ST_RUNNING = "Running"
ST_STOPPED = "StoppedAtEpoch"
ST_JOINABLE = "Joinable"
ST_JOINED = "Joined"
ST_KEPT_ALIVE = "KeptAlive"
ST_REPLAY_DONE = "ReplayDone"

PARKED_STATUSES = {ST_STOPPED, ST_JOINABLE, ST_JOINED, ST_KEPT_ALIVE, ST_REPLAY_DONE}

# Release actions handed to parked threads.
ACT_RUN = "run"          # start/restart the body from local_state
ACT_PROCEED = "proceed"  # resume the interrupted operation
ACT_RESET = "reset"      # unwind to the ready park without running
ACT_ABORT = "abort"      # unwind and terminate
ACT_RECLAIM = "reclaim"  # thread is truly done; let the OS thread exit


class ThreadState:
    """Everything the runtime knows about one workload thread."""

    def __init__(self, tid: int, program: list, local_state: dict, name: str = ""):
        self.tid = tid
        self.name = name or f"T{tid}"
        self.program = program
        self.local_state = local_state
        self.init_local = _copy_state(local_state)
        self.status = ST_KEPT_ALIVE
        self.park_kind = "ready"          # "ready" | "boundary"
        self.step = f"T{tid}@start"
        self.blocked_on: Optional[str] = None
        self.exited = False
        self.alive = True
        self.release_action: Optional[str] = None
        self.run_immediately = False
        self.pending_delay = 0.0
        self.parent: Optional[int] = None
        self.os_thread: Optional[threading.Thread] = None

    def __repr__(self):
        return f"<ThreadState {self.tid} {self.status} step={self.step}>"


def _copy_state(state):
    import copy
    return copy.deepcopy(state)


class Runtime:
    """Shared services for one workload run."""

    def __init__(self, config: RuntimeConfig):
        config.validate()
        self.config = config
        self.arena = Arena(config.arena_size, config.globals_size)
        self.heap = HeapManager(self.arena, config.block_size,
                                config.canary_byte, config.quarantine_bytes)
        self.log = EventLog(config.log_budget)
        from .vfs import Vfs, SyscallLayer
        self.vfs = Vfs(mappings=config.mappings)
        self.syscalls = SyscallLayer(self)
        from .sync import SyncLayer
        self.sync = SyncLayer(self)
        from .detectors import Detectors
        self.detectors = Detectors(self)
        from .epochs import EpochManager
        self.epochs = EpochManager(self)
        from .replay import ReplayController
        self.replayer = ReplayController(self)
        self.heap.fetch_hook = self.sync.fetch_block
        self.heap.uaf_check_hook = self.detectors.on_quarantine_evict

        self.recording_enabled = config.recording
        self.replaying = False

        self._ctl = threading.Condition()
        self._stop_requested = False
        self._coordinator: Optional[int] = None
        self._boundary_request: Optional[dict] = None
        self._boundaries_done = 0
        self._divergence: Optional[Divergence] = None
        self._replay_fault: Optional[dict] = None
        self._pending_faults: list[WorkloadFault] = []
        self.run_failed = False
        self.aborting = False
        self.control_error: Optional[BaseException] = None
        self._shutdown = False

        self.threads: dict[int, ThreadState] = {}
        self._next_tid = 1
        self.step_counter = 0

        # replay bookkeeping (owned by the controller per attempt)
        self.delay_points: dict[tuple[int, int], float] = {}
        self.observed: list[dict] = []

        self.engine = None    # installed by the harness before threads start
        self.debugger = None  # optional interactive session
        self.gate_hook = None  # test instrumentation: called at every gate

        # Boundary work (quiescence, snapshots, replay searches) runs on a
        # dedicated control thread acting for the coordinator, so the
        # coordinating workload thread can itself roll back and re-execute.
        self._control = threading.Thread(target=self._control_main,
                                         name="rewind-control", daemon=True)
        self._control.start()

    # ------------------------------------------------------------------
    # thread lifecycle
    # ------------------------------------------------------------------

    def new_thread(self, program: list, local_state: dict, name: str = "",
                   parent: Optional[int] = None) -> ThreadState:
        with self._ctl:
            tid = self._next_tid
            self._next_tid += 1
        ts = ThreadState(tid, program, local_state, name)
        ts.parent = parent
        self.threads[tid] = ts
        self.log.register_thread(tid)
        self.heap.heap_for(tid)
        t = threading.Thread(target=self._thread_main, args=(ts,),
                             name=f"rewind-{ts.name}", daemon=True)
        ts.os_thread = t
        t.start()
        return ts

    def _thread_main(self, ts: ThreadState) -> None:
        while True:
            if ts.run_immediately:
                ts.run_immediately = False
            else:
                action = self._park(ts, ST_KEPT_ALIVE, kind="ready")
                if action in (ACT_ABORT, ACT_RECLAIM):
                    break
                if action not in (ACT_RUN,):
                    continue
            try:
                ts.exited = False
                self.engine.run_program(ts)
                self.sync.thread_exit(ts)
            except EpochRestart:
                continue
            except WorkloadAbort:
                break
            except WorkloadFault as fault:
                try:
                    self.handle_fault(ts, fault)
                except EpochRestart:
                    continue
                except WorkloadAbort:
                    break
            except Exception as exc:  # framework bug: surface it, never hang
                fault = WorkloadFault(f"internal error: {exc!r}",
                                      thread=ts.tid, step=ts.step)
                fault.kind = "internal-error"
                try:
                    self.handle_fault(ts, fault)
                except EpochRestart:
                    continue
                except WorkloadAbort:
                    break
        with self._ctl:
            ts.alive = False
            ts.status = ST_KEPT_ALIVE
            self._ctl.notify_all()

    # ------------------------------------------------------------------
    # parking and releasing
    # ------------------------------------------------------------------

    def _park(self, ts: ThreadState, status: str, kind: str) -> str:
        with self._ctl:
            ts.status = status
            ts.park_kind = kind
            self._ctl.notify_all()
            while ts.release_action is None:
                self._ctl.wait(0.1)
            action, ts.release_action = ts.release_action, None
            ts.status = ST_RUNNING
            return action

    def release(self, ts: ThreadState, action: str) -> None:
        with self._ctl:
            ts.release_action = action
            # Mark resumed threads busy right away so completion predicates
            # cannot observe the release-to-wakeup window as quiescence.
            if action in (ACT_RUN, ACT_PROCEED, ACT_RESET):
                ts.status = ST_RUNNING
            self._ctl.notify_all()

    def _apply_boundary_action(self, ts: ThreadState, action: str) -> None:
        if action == ACT_PROCEED:
            return
        if action == ACT_RUN:
            ts.run_immediately = True
            raise EpochRestart()
        if action == ACT_RESET:
            ts.run_immediately = False
            raise EpochRestart()
        if action in (ACT_ABORT, ACT_RECLAIM):
            raise WorkloadAbort()
        raise InternalInvariantViolation(f"unexpected release action {action!r}")

    def pause_at_boundary(self, ts: ThreadState) -> None:
        """Park at a stop/divergence boundary; resumes or unwinds per the
        coordinator's decision."""
        action = self._park(ts, ST_STOPPED, kind="boundary")
        self._apply_boundary_action(ts, action)

    def park_replay_done(self, ts: ThreadState) -> None:
        """Replay cursor exhausted: the pending op belongs to the next epoch."""
        action = self._park(ts, ST_REPLAY_DONE, kind="boundary")
        self._apply_boundary_action(ts, action)

    # ------------------------------------------------------------------
    # boundary requests and the control thread
    # ------------------------------------------------------------------

    def request_boundary(self, ts: Optional[ThreadState], trigger: str,
                         fault: Optional[WorkloadFault] = None,
                         pending: Optional[tuple] = None) -> bool:
        """Elect a coordinator for an epoch closure. Returns True when this
        caller's request was posted (first come wins); the boundary itself
        runs on the control thread while the caller parks."""
        with self._ctl:
            if fault is not None:
                self._pending_faults.append(fault)
            if self._stop_requested:
                won = False
            else:
                self._stop_requested = True
                self._coordinator = ts.tid if ts is not None else None
                self._boundary_request = {
                    "trigger": trigger,
                    "requester": ts.tid if ts is not None else None,
                    "pending": pending,
                }
                won = True
            self._ctl.notify_all()
        self.notify_all_shadows()
        return won

    def _control_main(self) -> None:
        while True:
            with self._ctl:
                while self._boundary_request is None and not self._shutdown:
                    self._ctl.wait(0.1)
                if self._shutdown:
                    return
                request, self._boundary_request = self._boundary_request, None
            try:
                self.epochs.run_boundary(request)
            except BaseException as exc:
                with self._ctl:
                    self.control_error = exc
                    self._ctl.notify_all()
                self.epochs._finish_run(aborted=True)
            with self._ctl:
                self._boundaries_done += 1
                self._ctl.notify_all()

    def boundary_completed(self, before: int) -> None:
        with self._ctl:
            while self._boundaries_done <= before and self.control_error is None:
                self._ctl.wait(0.1)

    def boundaries_done(self) -> int:
        with self._ctl:
            return self._boundaries_done

    def shutdown(self) -> None:
        with self._ctl:
            self._shutdown = True
            self._ctl.notify_all()
        self._control.join(timeout=5.0)

    # ------------------------------------------------------------------
    # the gate: stop flag, divergence flag, and log budget
    # ------------------------------------------------------------------

    def boundary_pending(self, ts: ThreadState) -> bool:
        if self.replaying:
            return self._divergence is not None or self.aborting
        return self._stop_requested or self.aborting

    def gate(self, ts: ThreadState, need: int = 0, step: Optional[str] = None) -> None:
        if step:
            ts.step = step
        if self.gate_hook is not None:
            self.gate_hook(ts)
        while self.boundary_pending(ts):
            self.pause_at_boundary(ts)
        if need and self.recording_enabled and not self.replaying:
            log = self.log.threads[ts.tid]
            if not log.has_room(need):
                self.request_boundary(ts, "log-budget")
                self.pause_at_boundary(ts)
                self.gate(ts, need=need)

    # ------------------------------------------------------------------
    # blocking waits on primitives
    # ------------------------------------------------------------------

    def wait_shadow(self, ts: ThreadState, shadow: ShadowSyncObject,
                    pred: Callable[[], bool]) -> None:
        """Wait under the shadow's monitor until pred() holds; pred runs with
        the monitor held and may mutate primitive state on success."""
        ts.blocked_on = shadow.id
        try:
            while True:
                with shadow.mon:
                    while True:
                        if pred():
                            return
                        if self.boundary_pending(ts):
                            break
                        shadow.mon.wait(0.05)
                self.pause_at_boundary(ts)
        finally:
            ts.blocked_on = None

    def notify_all_shadows(self) -> None:
        for shadow in list(self.log.shadows.values()):
            shadow.notify_all()

    # ------------------------------------------------------------------
    # replay services
    # ------------------------------------------------------------------

    def consume_event(self, ts: ThreadState, shadow=None, var_ordered: bool = True,
                      actual_ret: Optional[int] = None,
                      actual_payload: Optional[bytes] = None) -> EventRecord:
        """Advance cursors for a matched event and note the observation used
        to rebuild the replay-side dump."""
        rec = self.log.consume(ts.tid, shadow, var_ordered)
        self.observed.append({
            "thread": ts.tid,
            "kind": rec.kind,
            "var": rec.var,
            "ret": rec.ret if actual_ret is None else actual_ret,
            "payload": rec.payload if actual_payload is None else actual_payload,
        })
        cursor = self.log.threads[ts.tid].replay_cursor
        delay = self.delay_points.get((ts.tid, cursor), 0.0)
        if delay:
            ts.pending_delay = delay
        return rec

    def apply_pending_delay(self, ts: ThreadState) -> None:
        if ts.pending_delay:
            delay, ts.pending_delay = ts.pending_delay, 0.0
            time.sleep(delay)

    def attempt_start_delay(self, ts: ThreadState) -> None:
        cursor = self.log.threads[ts.tid].replay_cursor
        delay = self.delay_points.get((ts.tid, cursor), 0.0)
        if delay:
            time.sleep(delay)

    def report_divergence(self, ts: ThreadState, div: Divergence) -> None:
        """Flag a divergence and park; never returns normally."""
        with self._ctl:
            if self._divergence is None:
                self._divergence = div
            self._ctl.notify_all()
        self.notify_all_shadows()
        while True:
            self.pause_at_boundary(ts)

    def handle_fault(self, ts: ThreadState, fault: WorkloadFault) -> None:
        if self.replaying:
            info = fault.describe()
            expected = self.epochs.closed.get("fault") if self.epochs.closed else None
            with self._ctl:
                self._replay_fault = info
                if expected is None or (expected.get("thread"), expected.get("step")) != (
                        info.get("thread"), info.get("step")):
                    if self._divergence is None:
                        cursor = self.log.threads[ts.tid].replay_cursor
                        self._divergence = Divergence(
                            ts.tid, cursor,
                            expected=f"fault:{expected}" if expected else "<no fault>",
                            actual=f"fault:{info.get('kind')}@{info.get('step')}")
                self._ctl.notify_all()
            self.notify_all_shadows()
            while True:
                self.pause_at_boundary(ts)
        else:
            self.request_boundary(ts, "fault", fault=fault)
            while True:
                # The fault boundary replays (this thread re-runs its body
                # via a restart release) and then aborts the run.
                self.pause_at_boundary(ts)

    # ------------------------------------------------------------------
    # coordinator-side waits
    # ------------------------------------------------------------------

    def _unparked(self) -> list[ThreadState]:
        return [t for t in self.threads.values()
                if t.alive and t.status == ST_RUNNING]

    def await_quiescence(self) -> None:
        deadline = time.monotonic() + self.config.quiescence_timeout_s
        with self._ctl:
            while True:
                busy = self._unparked()
                if not busy:
                    return
                if time.monotonic() > deadline:
                    names = [t.name for t in busy]
                    raise UnsupportedWorkload(
                        f"quiescence timeout: threads never reached an API call: {names}")
                self._ctl.wait(0.05)

    def await_replay_settled(self, timeout: float) -> str:
        """Wait until the attempt diverged or every thread finished replaying.

        Returns "diverged" or "complete"; completion still needs the
        controller to check log exhaustion and the recorded end condition.
        """
        deadline = time.monotonic() + timeout
        with self._ctl:
            while True:
                busy = self._unparked()
                if self._divergence is not None and not busy:
                    return "diverged"
                if self._divergence is None and not busy:
                    return "complete"
                if time.monotonic() > deadline:
                    stuck = [t.name for t in busy]
                    if self._divergence is None:
                        self._divergence = Divergence(
                            thread=busy[0].tid if busy else -1, cursor=-1,
                            expected="settled replay", actual=f"stall in {stuck}")
                    self.notify_all_shadows()
                    deadline = time.monotonic() + timeout
                self._ctl.wait(0.02)

    # ------------------------------------------------------------------
    # misc
    # ------------------------------------------------------------------

    def live_threads(self) -> list[ThreadState]:
        return [t for t in self.threads.values() if t.alive]

    def count_step(self) -> None:
        self.step_counter += 1

    def set_replaying(self, flag: bool) -> None:
        self.replaying = flag
        self.arena.mode = MODE_REPLAYING if flag else MODE_RECORDING
