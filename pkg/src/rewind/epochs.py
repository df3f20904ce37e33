"""Epoch lifecycle: begin (housekeeping + checkpoint), stop-the-world
closure, commit, and rollback.

The thread that hits a closure condition (log budget, an irrevocable
syscall, a fault, an explicit boundary, or a user command) elects itself
coordinator with an atomic flag and runs the whole boundary inline while
every other thread parks at its next API entry. Rollback restores every
value that can influence replayed behavior: arena bytes, heap metadata,
canary bitmap, file positions and lengths, primitive ownership, log
cursors, and each thread's local-state blob.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

from .arena import ArenaSnapshot
from .errors import InternalInvariantViolation, WorkloadFault
from .runtime import (ACT_ABORT, ACT_PROCEED, ACT_RECLAIM, ST_JOINED, ST_RUNNING,
                      ThreadState)

if TYPE_CHECKING:
    from .runtime import Runtime

TRIGGER_BUDGET = "log-budget"
TRIGGER_IRREVOCABLE = "irrevocable-syscall"
TRIGGER_FAULT = "fault"
TRIGGER_BOUNDARY = "workload-boundary"
TRIGGER_TERMINATION = "termination"
TRIGGER_USER = "user-command"


@dataclass
class EpochSnapshot:
    """Copy of all mutable managed state, captured under full quiescence."""

    epoch_index: int
    arena: ArenaSnapshot
    positions: dict
    thread_states: dict
    live_threads: set
    heap_state: dict
    shadow_state: dict
    evidence: list = field(default_factory=list)


class EpochManager:
    def __init__(self, rt: "Runtime"):
        self.rt = rt
        self.epoch_index = 0
        self.snapshot: Optional[EpochSnapshot] = None
        self.closed: dict = {}           # facts about the last closed epoch
        self.trace: list[dict] = []
        self.recorded_dump: list[dict] = []   # all committed epochs' events
        self._pending_irrevocable: Optional[tuple] = None
        self.irrevocable_results: dict[int, int] = {}
        self.awaiting_replay = False
        self.ended = False

    # ------------------------------------------------------------------
    # epoch begin
    # ------------------------------------------------------------------

    def begin_epoch(self) -> EpochSnapshot:
        """Housekeeping then checkpoint; requires quiescence."""
        rt = self.rt
        if self.awaiting_replay:
            raise InternalInvariantViolation(
                "rollback leads to replay, never directly to a new epoch")
        if self.epoch_index > 0:
            rt.vfs.commit_deferred()
            self._reclaim_joined()
            rt.log.clear_epoch()
            rt.detectors.reset_epoch()
        if self._pending_irrevocable is not None:
            requester, op = self._pending_irrevocable
            self.irrevocable_results[requester] = rt.syscalls.apply_pending(op)
            self._pending_irrevocable = None
        self.epoch_index += 1
        self.snapshot = self._capture()
        return self.snapshot

    def _reclaim_joined(self) -> None:
        for ts in list(self.rt.threads.values()):
            if ts.alive and ts.status == ST_JOINED:
                self.rt.release(ts, ACT_RECLAIM)
                ts.os_thread.join(timeout=5.0)

    def _capture(self) -> EpochSnapshot:
        rt = self.rt
        thread_states = {}
        live = set()
        for tid, ts in rt.threads.items():
            if not ts.alive:
                continue
            live.add(tid)
            thread_states[tid] = {
                "local": copy.deepcopy(ts.local_state),
                "exited": ts.exited,
                "status": ts.status,
            }
        return EpochSnapshot(
            epoch_index=self.epoch_index,
            arena=rt.arena.snapshot(),
            positions=rt.vfs.snapshot_positions(),
            thread_states=thread_states,
            live_threads=live,
            heap_state=rt.heap.snapshot_state(),
            shadow_state=self._capture_shadows(),
            evidence=list(rt.detectors.epoch_evidence),
        )

    def _capture_shadows(self) -> dict:
        out = {}
        for ident, s in self.rt.log.shadows.items():
            out[ident] = {
                "owner": s.owner,
                "waiters": list(s.waiters),
                "tickets": set(s.tickets),
                "generation": s.generation,
                "arrived": set(s.arrived),
            }
        return out

    # ------------------------------------------------------------------
    # closure: election + stop the world
    # ------------------------------------------------------------------

    def request_stop(self, ts: Optional[ThreadState], trigger: str) -> bool:
        """Set the stop flag; returns False if another closure is underway."""
        return self.rt.request_boundary(ts, trigger)

    def await_quiescence(self) -> None:
        self.rt.await_quiescence()

    def close_epoch(self, ts: Optional[ThreadState], trigger: str,
                    fault: Optional[WorkloadFault] = None) -> None:
        """Workload-side closure: post the request (first come wins the
        coordinator role) and park until the boundary resolves."""
        rt = self.rt
        if ts is None:
            self.close_from_root(trigger)
            return
        rt.request_boundary(ts, trigger, fault=fault)
        rt.pause_at_boundary(ts)

    def close_from_root(self, trigger: str) -> None:
        rt = self.rt
        while not self.ended:
            before = rt.boundaries_done()
            won = rt.request_boundary(None, trigger)
            rt.boundary_completed(before)
            if rt.control_error is not None:
                raise rt.control_error
            if won:
                return

    def close_for_irrevocable(self, ts: ThreadState, pending: tuple) -> int:
        """Irrevocable syscall: close the epoch; the effect applies at the
        start of the next epoch and its result is returned to the caller."""
        rt = self.rt
        while True:
            rt.gate(ts, need=0)
            won = rt.request_boundary(ts, TRIGGER_IRREVOCABLE,
                                      pending=(ts.tid, pending))
            rt.pause_at_boundary(ts)
            if won:
                return self.irrevocable_results.pop(ts.tid)
            # Lost the election; retry inside the fresh epoch.

    # ------------------------------------------------------------------
    # the boundary itself (runs on the control thread for the coordinator)
    # ------------------------------------------------------------------

    def run_boundary(self, request: dict) -> None:
        trigger = request["trigger"]
        if request.get("pending") is not None:
            self._pending_irrevocable = request["pending"]
        self._run_boundary(trigger)

    def _run_boundary(self, trigger: str) -> None:
        rt = self.rt
        self.await_quiescence()
        steps_at_quiescence = rt.step_counter

        fault = None
        with rt._ctl:
            if rt._pending_faults:
                fault = rt._pending_faults[0]
                rt._pending_faults.clear()
        if fault is not None:
            trigger = TRIGGER_FAULT

        self._capture_closed(trigger, fault)

        if fault is not None:
            self._fault_boundary(fault)
            return

        evidence = rt.detectors.epoch_end_sweep()
        # No workload step may run between quiescence and here; replays
        # below are coordinator-orchestrated and re-execute steps on purpose.
        if rt.step_counter != steps_at_quiescence:
            raise InternalInvariantViolation(
                "workload steps executed inside the stop-the-world window")
        if evidence:
            ok = rt.detectors.localize(evidence)
            if not ok:
                # The replay search gave up; the rolled-back state cannot be
                # committed as if the epoch had completed.
                self._trace_closed("rollback(attempts-exhausted)")
                self._finish_run(aborted=True)
                return

        if rt.debugger is not None:
            command = rt.debugger.on_pause("epoch-end", self.closed)
            if command == "quit":
                self._finish_run(aborted=True)
                return

        if trigger == TRIGGER_TERMINATION:
            rt.vfs.commit_deferred()
            self.recorded_dump.extend(self.closed["dump"])
            self._trace_closed("commit")
            self._finish_run(aborted=False)
            return

        self._trace_closed("commit")
        self.decide("commit")

    def decide(self, outcome: str) -> None:
        """Commit opens the next epoch and resumes every thread; rollback
        hands control to the replay controller."""
        rt = self.rt
        if outcome == "commit":
            self.recorded_dump.extend(self.closed["dump"])
            self.begin_epoch()
            with rt._ctl:
                rt._stop_requested = False
                rt._coordinator = None
                rt._ctl.notify_all()
            for other in rt.live_threads():
                if other.status != ST_RUNNING and other.park_kind == "boundary":
                    rt.release(other, ACT_PROCEED)
        elif outcome == "rollback":
            self.rollback()
        else:
            raise ValueError(f"unknown outcome {outcome!r}")

    def _capture_closed(self, trigger: str, fault: Optional[WorkloadFault]) -> None:
        rt = self.rt
        self.closed = {
            "epoch_index": self.epoch_index,
            "trigger": trigger,
            "fault": fault.describe() if fault is not None else None,
            "dump": rt.log.dump_lines(self.epoch_index),
            "end_hash": rt.arena.hash(),
            "vfs_digest": rt.vfs.digest(),
            "heap_digest": rt.heap.state_digest(),
            "event_count": rt.log.total_recorded(),
        }

    def _trace_closed(self, outcome: str, extra: Optional[dict] = None) -> None:
        line = {
            "epoch": self.closed["epoch_index"],
            "trigger": self.closed["trigger"],
            "outcome": outcome,
            "events": self.closed["event_count"],
            "arena_hash": self.closed["end_hash"],
        }
        if extra:
            line.update(extra)
        self.trace.append(line)
        if self.rt.config.trace_epochs:
            print(json.dumps(line, sort_keys=False))

    def _fault_boundary(self, fault: WorkloadFault) -> None:
        rt = self.rt
        report = {
            "type": "fault",
            "kind": fault.kind,
            "thread": fault.thread,
            "step": fault.step,
            "message": str(fault),
            "reproduced": False,
            "replay_attempts": 0,
        }
        if rt.recording_enabled:
            result = rt.replayer.search(label="fault-reproduce")
            report["reproduced"] = result.outcome == "accepted"
            report["replay_attempts"] = result.attempts
        rt.detectors.reports.append(report)
        self.recorded_dump.extend(self.closed["dump"])
        self._trace_closed("fault", {"fault": self.closed["fault"]})
        if rt.debugger is not None:
            rt.debugger.on_pause("fault", self.closed)
        self._finish_run(aborted=True)

    def _finish_run(self, aborted: bool) -> None:
        rt = self.rt
        self.ended = True
        rt.run_failed = rt.run_failed or aborted
        with rt._ctl:
            rt.aborting = True
            rt._stop_requested = False
            rt._coordinator = None
            rt._ctl.notify_all()
        rt.notify_all_shadows()
        for other in rt.live_threads():
            rt.release(other, ACT_ABORT)

    # ------------------------------------------------------------------
    # rollback
    # ------------------------------------------------------------------

    def rollback(self) -> None:
        """Restore every snapshot-covered value; requires quiescence."""
        rt = self.rt
        snap = self.snapshot
        if snap is None:
            raise InternalInvariantViolation("rollback without an epoch snapshot")
        self.awaiting_replay = True
        rt.arena.restore(snap.arena)
        rt.heap.restore_state(snap.heap_state)
        rt.vfs.restore_positions(snap.positions)
        rt.log.reset_cursors()
        for ident, state in snap.shadow_state.items():
            shadow = rt.log.shadows.get(ident)
            if shadow is None:
                continue
            with shadow.mon:
                shadow.owner = state["owner"]
                shadow.waiters = list(state["waiters"])
                shadow.tickets = set(state["tickets"])
                shadow.generation = state["generation"]
                shadow.arrived = set(state["arrived"])
        for tid, blob in snap.thread_states.items():
            ts = rt.threads.get(tid)
            if ts is None or not ts.alive:
                continue
            ts.local_state = copy.deepcopy(blob["local"])
            ts.exited = blob["exited"]
        rt.detectors.epoch_evidence = list(snap.evidence)
        rt.arena.drain_watch_hits()
