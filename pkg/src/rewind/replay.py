"""Replay search: rollback, schedule-enforced re-execution, divergence
handling, and seeded delay injection at previously diverging points.

An attempt is accepted when every thread finished its recorded log with
zero divergence and the epoch's recorded end condition (including a fault,
if one closed the epoch) re-occurred. A diverged attempt stops the world,
records the diverging cursor position, plans a random delay there, and
starts over from the snapshot.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

from .arena import WatchHit
from .errors import InternalInvariantViolation
from .events import Divergence
from .runtime import ACT_RESET, ACT_RUN

if TYPE_CHECKING:
    from .runtime import Runtime


@dataclass
class ReplayPlan:
    """Search parameters for one epoch's re-execution attempts."""

    rng_seed: int
    max_attempts: int               # 0 = unlimited
    delay_max_s: float
    label: str = "replay"
    delay_points: dict = field(default_factory=dict)


@dataclass
class SearchResult:
    outcome: str                    # "accepted" | "attempts-exhausted"
    attempts: int
    label: str
    watch_hits: list[WatchHit] = field(default_factory=list)
    divergences: list[dict] = field(default_factory=list)
    accepted_hash: str = ""
    dump_match: bool = False
    hash_match: bool = False
    heap_match: bool = False
    vfs_match: bool = False
    replay_dump: list = field(default_factory=list)
    attempt_log: list = field(default_factory=list)

    def report(self) -> dict:
        return {
            "label": self.label,
            "outcome": self.outcome,
            "attempts": self.attempts,
            "divergences": self.divergences,
            "dump_match": self.dump_match,
            "hash_match": self.hash_match,
            "heap_match": self.heap_match,
            "vfs_match": self.vfs_match,
            "attempt_log": self.attempt_log,
        }


class ReplayController:
    def __init__(self, rt: "Runtime"):
        self.rt = rt
        self.searches: list[SearchResult] = []

    # ------------------------------------------------------------------

    def make_plan(self, label: str) -> ReplayPlan:
        cfg = self.rt.config
        seed = hash((cfg.seed, self.rt.epochs.epoch_index, label)) & 0xFFFFFFFF
        return ReplayPlan(rng_seed=seed, max_attempts=cfg.max_attempts,
                          delay_max_s=cfg.delay_max_ms / 1000.0, label=label)

    def search(self, label: str = "replay") -> SearchResult:
        return self.start_replay(self.make_plan(label))

    def start_replay(self, plan: ReplayPlan) -> SearchResult:
        """Run re-execution attempts until one is accepted or the attempt
        budget runs out. Requires the epoch to be closed and quiescent."""
        rt = self.rt
        rng = random.Random(plan.rng_seed)
        result = SearchResult(outcome="attempts-exhausted", attempts=0, label=plan.label)
        attempt = 0
        while plan.max_attempts == 0 or attempt < plan.max_attempts:
            attempt += 1
            result.attempts = attempt
            self._begin_attempt(plan)
            rt.await_replay_settled(rt.config.quiescence_timeout_s)
            div = rt._divergence
            if div is None:
                div = self._verify_complete()
            if div is None:
                self._accept(result)
                result.attempt_log.append({"attempt": attempt, "outcome": "accepted",
                                           "delays": _fmt_delays(plan.delay_points)})
                self.searches.append(result)
                return result
            delay = rng.uniform(0.0, plan.delay_max_s)
            plan.delay_points[(div.thread, div.cursor)] = delay
            result.divergences.append(div.to_dict())
            result.attempt_log.append({
                "attempt": attempt, "outcome": "diverged",
                "divergence": div.to_dict(),
                "delays": _fmt_delays(plan.delay_points),
            })
        # Out of attempts: leave the world rolled back and replaying off;
        # callers treat this as a failed reproduction.
        self.rt.epochs.rollback()
        rt.set_replaying(False)
        self.searches.append(result)
        return result

    # ------------------------------------------------------------------

    def _begin_attempt(self, plan: ReplayPlan) -> None:
        rt = self.rt
        rt.epochs.rollback()
        snap = rt.epochs.snapshot
        with rt._ctl:
            rt._divergence = None
            rt._replay_fault = None
            rt.observed = []
            rt.delay_points = dict(plan.delay_points)
            rt.set_replaying(True)
        for ts in rt.live_threads():
            if ts.tid not in snap.live_threads:
                # Born during the epoch: stays kept-alive until its parent's
                # replayed creation releases it.
                if ts.park_kind == "boundary":
                    rt.release(ts, ACT_RESET)
                continue
            if snap.thread_states[ts.tid]["exited"]:
                if ts.park_kind == "boundary":
                    rt.release(ts, ACT_RESET)
                continue
            rt.release(ts, ACT_RUN)

    def _verify_complete(self) -> Optional[Divergence]:
        """All threads parked without divergence; confirm the logs were fully
        consumed and the recorded end condition re-occurred."""
        rt = self.rt
        closed = rt.epochs.closed
        for tid, log in rt.log.threads.items():
            if log.replay_cursor < log.record_len:
                nxt = log.entries[log.replay_cursor]
                return Divergence(tid, log.replay_cursor,
                                  expected=f"{nxt.kind}:{nxt.var}",
                                  actual="<thread finished early>")
        expected_fault = closed.get("fault")
        if expected_fault is not None:
            observed = rt._replay_fault
            if observed is None:
                tid = expected_fault.get("thread", -1)
                cursor = 0
                if tid in rt.log.threads:
                    cursor = rt.log.threads[tid].replay_cursor
                return Divergence(tid, cursor,
                                  expected=f"fault@{expected_fault.get('step')}",
                                  actual="<no fault>")
        return None

    def _accept(self, result: SearchResult) -> None:
        """Replay matched the recording; finalize evidence and hand the
        (bit-identical) end state back to the epoch manager."""
        rt = self.rt
        closed = rt.epochs.closed
        result.outcome = "accepted"
        result.watch_hits = rt.arena.drain_watch_hits()
        result.accepted_hash = rt.arena.hash()
        result.hash_match = result.accepted_hash == closed["end_hash"]
        result.heap_match = rt.heap.state_digest() == closed["heap_digest"]
        result.vfs_match = rt.vfs.digest() == closed["vfs_digest"]
        result.replay_dump = self._observed_dump(closed["epoch_index"])
        recorded = [json.dumps(line, sort_keys=False) for line in closed["dump"]]
        replayed = [json.dumps(line, sort_keys=False) for line in result.replay_dump]
        result.dump_match = recorded == replayed
        rt.set_replaying(False)
        rt.delay_points = {}
        rt.epochs.awaiting_replay = False

    def _observed_dump(self, epoch: int) -> list[dict]:
        per_thread: dict[int, int] = {}
        lines = []
        for obs in self.rt.observed:
            tid = obs["thread"]
            seq = per_thread.get(tid, 0)
            per_thread[tid] = seq + 1
            payload = obs["payload"]
            lines.append({
                "epoch": epoch,
                "thread": tid,
                "seq": seq,
                "kind": obs["kind"],
                "var": obs["var"],
                "ret": obs["ret"],
                "payload_hex": payload.hex() if payload is not None else None,
            })
        lines.sort(key=lambda d: (d["thread"], d["seq"]))
        return lines

    def accept(self) -> None:
        """Spec-level acceptance hook; state checks live in _accept."""
        if self.rt.replaying:
            raise InternalInvariantViolation("accept() before the search settled")


def _fmt_delays(points: dict) -> list[dict]:
    return [{"thread": t, "cursor": c, "delay_ms": round(d * 1000.0, 3)}
            for (t, c), d in sorted(points.items())]
