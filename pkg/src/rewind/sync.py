"""Synchronization API: mutexes, try-locks, condition variables, barriers,
and thread spawn/join/exit, each recorded during normal runs and enforced
against the recorded order during replay.

Replay follows one rule everywhere: a thread may take a variable when the
variable's next recorded taker is that thread's own next event, and (for
real mutual exclusion) the underlying primitive is actually available.
Unlocks are never logged; the acquisition order alone induces the schedule.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Optional

from . import events
from .errors import WorkloadFault

if TYPE_CHECKING:
    from .runtime import Runtime, ThreadState

CREATE_LOCK = "create-lock"
FETCH_LOCK = "fetch-lock"


class SyncLayer:
    def __init__(self, rt: "Runtime"):
        self.rt = rt
        rt.log.register_shadow(CREATE_LOCK, events.KIND_CREATE_LOCK)
        rt.log.register_shadow(FETCH_LOCK, events.KIND_FETCH_LOCK)

    # -- shadow registration ------------------------------------------------

    def mutex(self, name: str) -> events.ShadowSyncObject:
        return self.rt.log.register_shadow(f"mutex:{name}", events.KIND_MUTEX)

    def condvar(self, name: str) -> events.ShadowSyncObject:
        return self.rt.log.register_shadow(f"cv:{name}", events.KIND_CONDVAR)

    def barrier(self, name: str, parties: int = 0) -> events.ShadowSyncObject:
        shadow = self.rt.log.register_shadow(f"barrier:{name}", events.KIND_BARRIER,
                                             parties=parties)
        if parties:
            shadow.parties = parties
        return shadow

    def join_point(self, tid: int) -> events.ShadowSyncObject:
        return self.rt.log.register_shadow(f"join:{tid}", events.KIND_JOIN_POINT)

    # -- internal acquisition helpers ----------------------------------------

    def _acquire_primitive(self, ts: "ThreadState", shadow) -> None:
        def pred():
            if shadow.owner is None:
                shadow.owner = ts.tid
                return True
            return False
        self.rt.wait_shadow(ts, shadow, pred)

    def _release_primitive(self, ts: "ThreadState", shadow) -> None:
        with shadow.mon:
            if shadow.owner != ts.tid:
                raise WorkloadFault(f"unlock of {shadow.id} not held by T{ts.tid}",
                                    thread=ts.tid, step=ts.step)
            shadow.owner = None
            shadow.mon.notify_all()

    def _replay_take(self, ts: "ThreadState", shadow) -> events.EventRecord:
        """Ordered replay acquisition: log order plus real mutual exclusion."""
        rec_holder: list = []

        def pred():
            if self.rt.log.may_proceed(ts.tid, shadow) and shadow.owner is None:
                shadow.owner = ts.tid
                rec_holder.append(self.rt.consume_event(ts, shadow))
                shadow.mon.notify_all()
                return True
            return False

        self.rt.wait_shadow(ts, shadow, pred)
        self.rt.apply_pending_delay(ts)
        return rec_holder[0]

    def _check(self, ts: "ThreadState", kind: str, var: Optional[str] = None) -> None:
        div = self.rt.log.check_divergence(ts.tid, kind, var=var)
        if div is not None:
            self.rt.report_divergence(ts, div)

    # -- mutex ------------------------------------------------------------------

    def mutex_lock(self, ts: "ThreadState", shadow) -> None:
        while True:
            self.rt.gate(ts, need=1)
            with shadow.mon:
                if shadow.owner == ts.tid:
                    raise WorkloadFault(f"relock of {shadow.id}", thread=ts.tid, step=ts.step)
            if not self.rt.replaying:
                self._acquire_primitive(ts, shadow)
                if self.rt.recording_enabled:
                    self.rt.log.record(ts.tid, events.MUTEX_ACQUIRE, var=shadow)
                return
            if self.rt.log.peek(ts.tid) is None:
                self.rt.park_replay_done(ts)
                continue
            self._check(ts, events.MUTEX_ACQUIRE, shadow.id)
            self._replay_take(ts, shadow)
            return

    def lock_shadow(self, ts: "ThreadState", shadow) -> None:
        """Recorded acquisition of an internal shadow (VFS objects)."""
        if not self.rt.replaying:
            self._acquire_primitive(ts, shadow)
            if self.rt.recording_enabled:
                self.rt.log.record(ts.tid, events.MUTEX_ACQUIRE, var=shadow)
            return
        self._check(ts, events.MUTEX_ACQUIRE, shadow.id)
        self._replay_take(ts, shadow)

    def unlock_shadow(self, ts: "ThreadState", shadow) -> None:
        self._release_primitive(ts, shadow)

    def mutex_unlock(self, ts: "ThreadState", shadow) -> None:
        self.rt.gate(ts, need=0)
        self._release_primitive(ts, shadow)

    def mutex_trylock(self, ts: "ThreadState", shadow) -> int:
        while True:
            self.rt.gate(ts, need=1)
            if not self.rt.replaying:
                with shadow.mon:
                    if shadow.owner is None and shadow.owner != ts.tid:
                        shadow.owner = ts.tid
                        ret = events.TRY_ACQUIRED
                    else:
                        ret = events.TRY_BUSY
                    if self.rt.recording_enabled:
                        self.rt.log.record(ts.tid, events.MUTEX_TRY_ACQUIRE,
                                           var=shadow, ret=ret)
                return ret
            if self.rt.log.peek(ts.tid) is None:
                self.rt.park_replay_done(ts)
                continue
            self._check(ts, events.MUTEX_TRY_ACQUIRE, shadow.id)
            rec = self.rt.log.peek(ts.tid)
            if rec.ret == events.TRY_BUSY:
                # Recorded failure: return it without contending.
                self.rt.consume_event(ts, shadow, var_ordered=False)
                self.rt.apply_pending_delay(ts)
                return events.TRY_BUSY
            self._replay_take(ts, shadow)
            return events.TRY_ACQUIRED

    # -- condition variables ---------------------------------------------------

    def cond_wait(self, ts: "ThreadState", cv, mutex) -> None:
        while True:
            self.rt.gate(ts, need=0)
            if not self.rt.replaying:
                self._wait_recording(ts, cv, mutex)
                return
            # Wait entry predates any logged wakeup: register, then release
            # the mutex so recorded acquisitions by other threads proceed.
            # Registration lets replayed signals re-create pending wakeup
            # tickets for waiters still parked when the epoch closed.
            with cv.mon:
                if ts.tid not in cv.waiters:
                    cv.waiters.append(ts.tid)
            with mutex.mon:
                if mutex.owner == ts.tid:
                    mutex.owner = None
                    mutex.mon.notify_all()
            if self.rt.log.peek(ts.tid) is None:
                self.rt.park_replay_done(ts)
                continue
            self._check(ts, events.COND_WAKEUP, cv.id)

            def pred():
                if self.rt.log.may_proceed(ts.tid, cv):
                    self.rt.consume_event(ts, cv)
                    cv.tickets.discard(ts.tid)
                    if ts.tid in cv.waiters:
                        cv.waiters.remove(ts.tid)
                    cv.mon.notify_all()
                    return True
                return False

            self.rt.wait_shadow(ts, cv, pred)
            self.rt.apply_pending_delay(ts)
            self._replay_reacquire(ts, mutex)
            return

    def _wait_recording(self, ts, cv, mutex) -> None:
        with mutex.mon:
            if mutex.owner is not None and mutex.owner != ts.tid:
                raise WorkloadFault(f"cond_wait on {cv.id} without holding {mutex.id}",
                                    thread=ts.tid, step=ts.step)
        # Register before releasing the mutex: a signaler that holds the
        # mutex cannot signal until we appear in the waiter list, so its
        # wakeup cannot be lost in between.
        with cv.mon:
            if ts.tid not in cv.waiters:
                cv.waiters.append(ts.tid)
        with mutex.mon:
            if mutex.owner == ts.tid:
                mutex.owner = None
                mutex.mon.notify_all()

        def pred():
            return ts.tid in cv.tickets

        self.rt.wait_shadow(ts, cv, pred)
        # Wakeup plus reacquisition are two events; reserve both before
        # consuming the ticket so a budget closure leaves the wait intact.
        self.rt.gate(ts, need=2)
        with cv.mon:
            cv.tickets.discard(ts.tid)
            if ts.tid in cv.waiters:
                cv.waiters.remove(ts.tid)
            if self.rt.recording_enabled:
                self.rt.log.record(ts.tid, events.COND_WAKEUP, var=cv)
        self._acquire_primitive(ts, mutex)
        if self.rt.recording_enabled:
            self.rt.log.record(ts.tid, events.MUTEX_ACQUIRE, var=mutex)

    def _replay_reacquire(self, ts, mutex) -> None:
        if self.rt.log.peek(ts.tid) is None:
            self.rt.park_replay_done(ts)
            # New epoch: take the mutex live, recording the acquisition.
            self._acquire_primitive(ts, mutex)
            if self.rt.recording_enabled and not self.rt.replaying:
                self.rt.log.record(ts.tid, events.MUTEX_ACQUIRE, var=mutex)
            return
        self._check(ts, events.MUTEX_ACQUIRE, mutex.id)
        self._replay_take(ts, mutex)

    def cond_signal(self, ts: "ThreadState", cv) -> None:
        self.rt.gate(ts, need=0)
        with cv.mon:
            target = self._pick_waiter(cv)
            if target is not None:
                cv.tickets.add(target)
                cv.mon.notify_all()

    def cond_broadcast(self, ts: "ThreadState", cv) -> None:
        self.rt.gate(ts, need=0)
        with cv.mon:
            if cv.waiters:
                cv.tickets.update(cv.waiters)
                cv.mon.notify_all()

    def _pick_waiter(self, cv) -> Optional[int]:
        candidates = [w for w in cv.waiters if w not in cv.tickets]
        if not candidates:
            return None
        if self.rt.replaying:
            # Waiters with no remaining logged wakeup stay parked past the
            # epoch; hand tickets to them first so pending wakeups survive
            # into the live continuation.
            for w in candidates:
                entry = self.rt.log.peek(w)
                if entry is None or entry.kind != events.COND_WAKEUP:
                    return w
        return candidates[0]

    # -- barriers -----------------------------------------------------------------

    def barrier_wait(self, ts: "ThreadState", shadow) -> int:
        while True:
            self.rt.gate(ts, need=1)
            if not self.rt.replaying:
                return self._barrier_recording(ts, shadow)
            if self.rt.log.peek(ts.tid) is None:
                self.rt.park_replay_done(ts)
                continue
            self._check(ts, events.BARRIER_WAIT, shadow.id)
            with shadow.mon:
                gen = shadow.generation
                if ts.tid not in shadow.arrived:
                    shadow.arrived.add(ts.tid)
                if len(shadow.arrived) >= shadow.parties:
                    shadow.generation += 1
                    shadow.arrived.clear()
                    shadow.mon.notify_all()
                    gen = shadow.generation - 1

            def cycled():
                return shadow.generation != gen

            self.rt.wait_shadow(ts, shadow, cycled)

            rec_holder = []

            def pass_in_order():
                if self.rt.log.may_proceed(ts.tid, shadow):
                    rec_holder.append(self.rt.consume_event(ts, shadow))
                    shadow.mon.notify_all()
                    return True
                return False

            self.rt.wait_shadow(ts, shadow, pass_in_order)
            self.rt.apply_pending_delay(ts)
            return rec_holder[0].ret

    def _barrier_recording(self, ts, shadow) -> int:
        with shadow.mon:
            gen = shadow.generation
            if ts.tid not in shadow.arrived:
                shadow.arrived.add(ts.tid)
            if len(shadow.arrived) >= shadow.parties:
                # Cycle completer carries the serial flag.
                shadow.generation += 1
                shadow.arrived.clear()
                shadow.mon.notify_all()
                if self.rt.recording_enabled:
                    self.rt.log.record(ts.tid, events.BARRIER_WAIT, var=shadow, ret=1)
                return 1

        def cycled():
            return shadow.generation != gen

        self.rt.wait_shadow(ts, shadow, cycled)
        with shadow.mon:
            if self.rt.recording_enabled:
                self.rt.log.record(ts.tid, events.BARRIER_WAIT, var=shadow, ret=0)
        return 0

    # -- thread lifecycle ------------------------------------------------------------

    def spawn(self, ts: "ThreadState", program: list, init_local: dict,
              name: str = "") -> int:
        create = self.rt.log.shadow(CREATE_LOCK)
        while True:
            self.rt.gate(ts, need=1)
            if not self.rt.replaying:
                self._acquire_primitive(ts, create)
                child = self.rt.new_thread(program, init_local, name=name,
                                           parent=ts.tid)
                self.join_point(child.tid)
                if self.rt.recording_enabled:
                    with create.mon:
                        self.rt.log.record(ts.tid, events.THREAD_CREATE,
                                           var=create, ret=child.tid)
                self._release_primitive(ts, create)
                self.rt.release(child, "run")
                return child.tid
            if self.rt.log.peek(ts.tid) is None:
                self.rt.park_replay_done(ts)
                continue
            self._check(ts, events.THREAD_CREATE, create.id)
            rec = self._replay_take(ts, create)
            self._release_primitive(ts, create)
            child = self.rt.threads.get(rec.ret)
            if child is None:
                from .errors import InternalInvariantViolation
                raise InternalInvariantViolation(
                    f"replayed creation of unknown thread {rec.ret}")
            # Kept-alive child restarts its body from its initial state.
            child.local_state = _copy(child.init_local)
            child.exited = False
            self.rt.release(child, "run")
            return child.tid

    def join(self, ts: "ThreadState", child_tid: int) -> None:
        child = self.rt.threads.get(child_tid)
        if child is None:
            raise WorkloadFault(f"join on unknown thread {child_tid}",
                                thread=ts.tid, step=ts.step)
        shadow = self.join_point(child_tid)
        while True:
            self.rt.gate(ts, need=1)
            if not self.rt.replaying:
                self.rt.wait_shadow(ts, shadow, lambda: child.exited)
                with self.rt._ctl:
                    child.status = "Joined" if child.status == "Joinable" else child.status
                with shadow.mon:
                    if self.rt.recording_enabled:
                        self.rt.log.record(ts.tid, events.THREAD_JOIN, var=shadow)
                return
            if self.rt.log.peek(ts.tid) is None:
                self.rt.park_replay_done(ts)
                continue
            self._check(ts, events.THREAD_JOIN, shadow.id)

            def pred():
                if child.exited and self.rt.log.may_proceed(ts.tid, shadow):
                    self.rt.consume_event(ts, shadow)
                    shadow.mon.notify_all()
                    return True
                return False

            self.rt.wait_shadow(ts, shadow, pred)
            self.rt.apply_pending_delay(ts)
            return

    def thread_exit(self, ts: "ThreadState") -> None:
        shadow = self.join_point(ts.tid)
        while True:
            self.rt.gate(ts, need=1)
            if not self.rt.replaying:
                if self.rt.recording_enabled:
                    self.rt.log.record(ts.tid, events.THREAD_EXIT)
                break
            if self.rt.log.peek(ts.tid) is None:
                self.rt.park_replay_done(ts)
                continue
            self._check(ts, events.THREAD_EXIT, None)
            self.rt.consume_event(ts)
            self.rt.apply_pending_delay(ts)
            break
        with self.rt._ctl:
            ts.exited = True
            ts.status = "Joinable"
            self.rt._ctl.notify_all()
        shadow.notify_all()

    # -- super-heap block fetch (recorded like any mutex) -------------------------

    def fetch_block(self, tid: int) -> tuple[int, int]:
        ts = self.rt.threads[tid]
        fetch = self.rt.log.shadow(FETCH_LOCK)
        while True:
            self.rt.gate(ts, need=1)
            if not self.rt.replaying:
                self._acquire_primitive(ts, fetch)
                try:
                    block = self.rt.heap.super_heap.fetch()
                    if self.rt.recording_enabled:
                        self.rt.log.record(ts.tid, events.MUTEX_ACQUIRE, var=fetch,
                                           ret=block[0])
                finally:
                    self._release_primitive(ts, fetch)
                return block
            if self.rt.log.peek(ts.tid) is None:
                self.rt.park_replay_done(ts)
                continue
            self._check(ts, events.MUTEX_ACQUIRE, fetch.id)
            self._replay_take(ts, fetch)
            try:
                block = self.rt.heap.super_heap.fetch()
            finally:
                self._release_primitive(ts, fetch)
            return block


def _copy(state):
    import copy
    return copy.deepcopy(state)
