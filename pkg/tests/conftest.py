"""Shared helpers for runtime-level tests."""

from __future__ import annotations

from rewind import RuntimeConfig, run
from rewind.workloads import WorkloadSpec, assemble


def run_capturing(spec: WorkloadSpec, config: RuntimeConfig | None = None,
                  debugger=None, **config_overrides):
    """Run a workload and return (summary, runtime) for state inspection."""
    base = config or RuntimeConfig()
    if spec.config_overrides:
        merged = dict(spec.config_overrides)
        merged.update(config_overrides)
    else:
        merged = config_overrides
    holder: list = []
    summary = run(spec, base.replace(**merged) if merged else base,
                  debugger=debugger, runtime_out=holder)
    return summary, holder[0]


def single_thread_spec(name: str, instructions: list[dict], *, locals=None,
                       **spec_kw) -> WorkloadSpec:
    program, _ = assemble(instructions)
    return WorkloadSpec(
        name=name,
        threads=[{"name": "main", "program": program, "locals": locals or {}}],
        config_overrides={"arena_size": 256 * 1024, "globals_size": 4096,
                          "block_size": 32 * 1024},
        **spec_kw,
    )


def two_thread_spec(name: str, a: list[dict], b: list[dict], *,
                    locals_a=None, locals_b=None, **spec_kw) -> WorkloadSpec:
    pa, _ = assemble(a)
    pb, _ = assemble(b)
    return WorkloadSpec(
        name=name,
        threads=[{"name": "a", "program": pa, "locals": locals_a or {}},
                 {"name": "b", "program": pb, "locals": locals_b or {}}],
        config_overrides={"arena_size": 256 * 1024, "globals_size": 4096,
                          "block_size": 32 * 1024},
        **spec_kw,
    )


class HookDebugger:
    """Test-only pause hook: runs a callback on the control thread at the
    first epoch-end pause (full quiescence), then continues."""

    def __init__(self, hook):
        self.rt = None
        self.hook = hook
        self.fired = False
        self.result = None

    def on_pause(self, kind: str, closed: dict) -> str:
        if kind == "epoch-end" and not self.fired:
            self.fired = True
            self.result = self.hook(self.rt, closed)
        return "continue"


def cell(summary_or_rt, addr: int, runtime=None) -> int:
    rt = runtime if runtime is not None else summary_or_rt
    return int.from_bytes(rt.arena.raw_read(addr, 8), "little")
