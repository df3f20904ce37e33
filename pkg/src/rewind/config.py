"""Runtime configuration knobs and their defaults."""

from __future__ import annotations

from dataclasses import dataclass

KIB = 1024
MIB = 1024 * KIB

#: Snapshot digests use SHA-256; the hex form is what the CLI prints.
DIGEST_ALGORITHM = "sha256"


@dataclass
class RuntimeConfig:
    """All tunables for one run. Workload specs may override sizes."""

    arena_size: int = 64 * MIB
    globals_size: int = 1 * MIB
    block_size: int = 4 * MIB

    log_budget: int = 4096          # pre-allocated event entries per thread
    quarantine_bytes: int = 256 * KIB   # per-thread delayed-reuse budget
    canary_byte: int = 0xCA

    max_attempts: int = 64          # replay search bound; 0 = unlimited
    delay_max_ms: float = 2.0       # injected delay drawn uniform [0, this]
    seed: int = 0

    quiescence_timeout_s: float = 10.0
    recording: bool = True          # False: bare execution, no logs/epochs
    forward_lseek_revocable: bool = False

    trace_epochs: bool = False
    mappings: tuple[str, ...] = ()  # pre-seeded pseudo-mapping names

    def validate(self) -> None:
        if self.globals_size <= 0 or self.globals_size >= self.arena_size:
            raise ValueError("globals region must be non-empty and smaller than the arena")
        if self.block_size <= 0 or self.block_size > self.arena_size - self.globals_size:
            raise ValueError("block size must fit inside the heap region")
        if not 0 <= self.canary_byte <= 0xFF:
            raise ValueError("canary byte must be a single byte value")
        if self.log_budget < 1:
            raise ValueError("log budget must be at least 1")

    def replace(self, **kw) -> "RuntimeConfig":
        from dataclasses import replace
        return replace(self, **kw)
