"""Evidence-based heap-overflow and use-after-free detection.

Corrupted canary bytes are collected at quarantine evictions and at epoch
end; localization installs up to four watchpoints per batch and replays the
epoch, attributing each corrupted byte to the workload write that left a
non-canary value there. Read-only misuse leaves no evidence and is out of
reach by design.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

from .arena import WatchHit
from .heap import AllocationRecord, QuarantineEntry

if TYPE_CHECKING:
    from .runtime import Runtime

BATCH = 4  # watchpoint capacity per localization replay


@dataclass
class CorruptionEvidence:
    kind: str                 # "overflow" | "use-after-free"
    address: int
    expected: int
    found: int
    owner: AllocationRecord
    discovered_at: str        # "epoch-end" | "quarantine-eviction"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "address": self.address,
            "expected": self.expected,
            "found": self.found,
            "alloc_site": self.owner.alloc_site,
            "free_site": self.owner.free_site,
            "discovered_at": self.discovered_at,
        }


@dataclass
class RootCauseReport:
    evidence: CorruptionEvidence
    writer: Optional[dict]
    replay_attempts_used: int

    def to_dict(self) -> dict:
        out = {"type": self.evidence.kind}
        out.update(self.evidence.to_dict())
        out.pop("kind")
        out["writer"] = self.writer
        out["replay_attempts"] = self.replay_attempts_used
        return out


class Detectors:
    def __init__(self, rt: "Runtime"):
        self.rt = rt
        self.epoch_evidence: list[CorruptionEvidence] = []
        self.reports: list[dict] = []
        self.localization_replays = 0

    def reset_epoch(self) -> None:
        self.epoch_evidence = []

    # ------------------------------------------------------------------
    # checks
    # ------------------------------------------------------------------

    def check_overflow(self) -> list[CorruptionEvidence]:
        """Scan live objects' redzones for overwritten canaries."""
        rt = self.rt
        canary = rt.config.canary_byte
        out = []
        for record in rt.heap.live.values():
            start = record.offset + record.requested
            length = record.class_size - record.requested
            if length <= 0:
                continue
            data = rt.arena.raw_read(start, length)
            for i, b in enumerate(data):
                if b != canary:
                    out.append(CorruptionEvidence(
                        kind="overflow", address=start + i, expected=canary,
                        found=b, owner=record, discovered_at="epoch-end"))
        return out

    def check_uaf(self, entry: Optional[QuarantineEntry] = None) -> list[CorruptionEvidence]:
        """Compare quarantined objects' canary prefixes; a single entry at
        eviction time, or every quarantine at an epoch boundary."""
        if entry is not None:
            return self._check_entry(entry, "quarantine-eviction")
        out = []
        for heap in self.rt.heap.heaps.values():
            for e in heap.quarantine:
                out.extend(self._check_entry(e, "epoch-end"))
        return out

    def _check_entry(self, entry: QuarantineEntry, where: str) -> list[CorruptionEvidence]:
        canary = self.rt.config.canary_byte
        data = self.rt.arena.raw_read(entry.offset, entry.canary_len)
        out = []
        for i, b in enumerate(data):
            if b != canary:
                out.append(CorruptionEvidence(
                    kind="use-after-free", address=entry.offset + i,
                    expected=canary, found=b, owner=entry.record,
                    discovered_at=where))
        return out

    def on_quarantine_evict(self, entry: QuarantineEntry) -> None:
        if self.rt.replaying or not self.rt.recording_enabled:
            return
        self.epoch_evidence.extend(self.check_uaf(entry))

    def epoch_end_sweep(self) -> list[CorruptionEvidence]:
        found = list(self.epoch_evidence)
        found.extend(self.check_overflow())
        found.extend(self.check_uaf())
        seen = set()
        unique = []
        for ev in found:
            if ev.address not in seen:
                seen.add(ev.address)
                unique.append(ev)
        return unique

    # ------------------------------------------------------------------
    # localization
    # ------------------------------------------------------------------

    def localize(self, evidence: list[CorruptionEvidence]) -> bool:
        """Replay with up to four watchpoints per batch until every piece of
        evidence has a root cause. Returns False if a search failed."""
        rt = self.rt
        ordered = sorted(evidence, key=lambda e: e.address)
        ok = True
        for start in range(0, len(ordered), BATCH):
            batch = ordered[start:start + BATCH]
            rt.arena.watchset.clear()
            for ev in batch:
                rt.arena.watchset.install(ev.address, 1, label=ev.kind)
            result = rt.replayer.search(label=f"localize@{batch[0].address}")
            rt.arena.watchset.clear()
            self.localization_replays += result.attempts
            if result.outcome != "accepted":
                ok = False
                for ev in batch:
                    self.reports.append(RootCauseReport(ev, None, result.attempts).to_dict())
                continue
            for ev in batch:
                writer = self._attribute(ev, result.watch_hits)
                self.reports.append(
                    RootCauseReport(ev, writer, result.attempts).to_dict())
        return ok

    def _attribute(self, ev: CorruptionEvidence, hits: list[WatchHit]) -> Optional[dict]:
        canary = self.rt.config.canary_byte
        best = None
        for hit in hits:
            if not (hit.address <= ev.address < hit.address + len(hit.new)):
                continue
            written = hit.new[ev.address - hit.address]
            if written == canary:
                continue  # re-arming noise: writes of the canary value itself
            if best is None or written == ev.found:
                best = {"thread": hit.thread, "step": hit.step,
                        "value_hex": f"{written:02x}"}
        return best
