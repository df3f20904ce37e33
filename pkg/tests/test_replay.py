"""Replay search: acceptance, divergence handling, delay injection, and
the attempt budget."""

import time

from conftest import HookDebugger, run_capturing

from rewind import RuntimeConfig, run
from rewind.workloads import (build_counter, build_crasher,
                              build_producer_consumer, with_terminal_overflow)


def test_race_free_workload_accepts_first_attempt():
    spec = with_terminal_overflow(build_counter(iters=40))
    summary, _ = run_capturing(spec)
    search = summary.replay_searches[-1]
    assert search["outcome"] == "accepted"
    assert search["attempts"] == 1
    assert search["dump_match"] and search["hash_match"]


def test_accepted_replay_dump_byte_identical():
    spec = with_terminal_overflow(build_producer_consumer(items=4))

    captured = {}

    def hook(rt, closed):
        result = rt.replayer.search(label="hook")
        captured["recorded"] = closed["dump"]
        captured["replayed"] = result.replay_dump
        return result

    summary, _ = run_capturing(spec, debugger=HookDebugger(hook))
    import json
    rec = [json.dumps(l, sort_keys=False) for l in captured["recorded"]]
    rep = [json.dumps(l, sort_keys=False) for l in captured["replayed"]]
    assert rec == rep


def test_tampered_log_exhausts_attempt_budget():
    """A log that cannot be matched ends in AttemptsExhausted with the full
    divergence history."""
    spec = with_terminal_overflow(build_counter(iters=5))

    def hook(rt, closed):
        # Corrupt the recorded expectation: no replay can ever match it.
        log = rt.log.threads[1]
        victim = log.entries[0]
        victim.var = "mutex:never-exists"
        plan = rt.replayer.make_plan("tampered")
        plan.max_attempts = 3
        return rt.replayer.start_replay(plan)

    dbg = HookDebugger(hook)
    summary, rt = run_capturing(spec, debugger=dbg)
    assert dbg.result.outcome == "attempts-exhausted"
    assert dbg.result.attempts == 3
    assert len(dbg.result.divergences) == 3
    assert all(d["thread"] == 1 for d in dbg.result.divergences)


def test_divergence_record_carries_expected_and_actual():
    spec = with_terminal_overflow(build_counter(iters=5))

    def hook(rt, closed):
        log = rt.log.threads[1]
        log.entries[0].var = "mutex:other"
        plan = rt.replayer.make_plan("t")
        plan.max_attempts = 1
        return rt.replayer.start_replay(plan)

    dbg = HookDebugger(hook)
    run_capturing(spec, debugger=dbg)
    div = dbg.result.divergences[0]
    assert "mutex:other" in div["expected"]
    assert "mutex:m" in div["actual"]


def test_injected_delay_slows_attempt_without_changing_order():
    spec = with_terminal_overflow(build_counter(iters=10))

    def hook(rt, closed):
        plan = rt.replayer.make_plan("delayed")
        plan.delay_points[(1, 0)] = 0.08
        started = time.monotonic()
        result = rt.replayer.start_replay(plan)
        result.elapsed = time.monotonic() - started
        return result

    dbg = HookDebugger(hook)
    run_capturing(spec, debugger=dbg)
    assert dbg.result.outcome == "accepted"
    assert dbg.result.elapsed >= 0.08
    assert dbg.result.dump_match  # order preserved despite the delay


def test_no_delay_when_point_absent():
    spec = with_terminal_overflow(build_counter(iters=10))

    def hook(rt, closed):
        plan = rt.replayer.make_plan("fast")
        started = time.monotonic()
        result = rt.replayer.start_replay(plan)
        result.elapsed = time.monotonic() - started
        return result

    dbg = HookDebugger(hook)
    run_capturing(spec, debugger=dbg)
    assert dbg.result.elapsed < 0.08


def test_plan_seed_is_deterministic():
    spec = build_counter(iters=5)
    cfg = RuntimeConfig(seed=9, **spec.config_overrides)
    holder = []
    run(spec, cfg, runtime_out=holder)
    rt = holder[0]
    p1 = rt.replayer.make_plan("x")
    p2 = rt.replayer.make_plan("x")
    assert p1.rng_seed == p2.rng_seed
    assert rt.replayer.make_plan("y").rng_seed != p1.rng_seed
    import random
    drawn1 = [random.Random(p1.rng_seed).uniform(0, p1.delay_max_s) for _ in range(4)]
    drawn2 = [random.Random(p2.rng_seed).uniform(0, p2.delay_max_s) for _ in range(4)]
    assert drawn1 == drawn2  # same seed + same history => same delay schedule


def test_crasher_fault_reproduced_with_bounded_search():
    reproduced = 0
    trials = 25
    for i in range(trials):
        spec = build_crasher()
        summary = run(spec, RuntimeConfig(seed=i, **spec.config_overrides))
        faults = [r for r in summary.reports if r["type"] == "fault"]
        if not faults:
            continue
        assert faults[0]["reproduced"], summary.replay_searches
        assert faults[0]["replay_attempts"] <= 64
        reproduced += 1
    assert reproduced > trials // 2  # race manifests in a majority of trials


def test_racy_branch_divergence_detected_and_recovered():
    """Unsynchronized-read branch workload: force a first-attempt divergence
    by delaying the reader past the writer, then let the search recover."""
    from conftest import two_thread_spec
    producer = [
        {"op": "sleep", "ms": 3},
        {"op": "write", "addr": 900, "value": 1, "len": 8},
        {"op": "lock", "m": "m"},
        {"op": "signal", "cv": "cv"},
        {"op": "unlock", "m": "m"},
    ]
    consumer = [
        {"op": "read", "addr": 900, "len": 8, "var": "f"},
        {"op": "branch", "var": "f", "cmp": "eq", "value": 1, "to": "skip"},
        {"op": "lock", "m": "m"},
        {"op": "wait", "cv": "cv", "m": "m"},
        {"op": "unlock", "m": "m"},
        {"op": "jump", "to": "end"},
        {"op": "label", "name": "skip"},
        {"op": "lock", "m": "m2"},
        {"op": "unlock", "m": "m2"},
        {"op": "label", "name": "end"},
    ]
    spec = with_terminal_overflow(
        two_thread_spec("wait-bypass", producer, consumer))

    def hook(rt, closed):
        # Consumer (tid 2) read the flag before the producer wrote it in the
        # recording; delaying its start flips the racy read on attempt 1.
        waited = any(l["kind"] == "CondWakeup" for l in closed["dump"])
        if not waited:
            return "not-exercised"
        plan = rt.replayer.make_plan("bypass")
        plan.delay_points[(2, 0)] = 0.02
        return rt.replayer.start_replay(plan)

    dbg = HookDebugger(hook)
    summary, _ = run_capturing(spec, debugger=dbg)
    if dbg.result == "not-exercised":
        return
    assert dbg.result.attempts >= 2          # attempt 1 diverged as forced
    assert dbg.result.outcome == "accepted"  # later attempt matched
    assert dbg.result.divergences[0]["actual"].startswith("MutexAcquire:mutex:m2")
    assert dbg.result.dump_match and dbg.result.hash_match


def test_search_results_surface_in_summary():
    spec = with_terminal_overflow(build_counter(iters=5))
    summary, _ = run_capturing(spec)
    assert summary.replay_searches
    report = summary.replay_searches[-1]
    assert {"label", "outcome", "attempts", "divergences", "dump_match",
            "hash_match", "heap_match", "vfs_match", "attempt_log"} <= set(report)
