"""Trial-batch reports: delimited output plus rendered figures.

Both report kinds write a CSV next to a PNG in the output directory and
return a small summary dict that the CLI prints.
"""

from __future__ import annotations

import csv
import statistics
import time
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .config import RuntimeConfig
from .workloads import build_counter, build_crasher, run


def race_search_report(trials: int, out_dir: str | Path, seed: int = 0,
                       max_attempts: int = 64) -> dict:
    """Run the racy crasher workload repeatedly and chart how many replay
    attempts the schedule search needed whenever the race manifested."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    attempts_when_manifested = []
    manifested = 0
    for trial in range(trials):
        spec = build_crasher()
        summary = run(spec, RuntimeConfig(seed=seed + trial, max_attempts=max_attempts,
                                          **spec.config_overrides))
        fault = any(r["type"] == "fault" for r in summary.reports)
        search = summary.replay_searches[-1] if summary.replay_searches else None
        attempts = search["attempts"] if search else 0
        outcome = search["outcome"] if search else "none"
        if fault:
            manifested += 1
            attempts_when_manifested.append(attempts)
        rows.append({"trial": trial, "manifested": int(fault),
                     "attempts": attempts, "outcome": outcome})

    csv_path = out / "race_search.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["trial", "manifested", "attempts", "outcome"])
        writer.writeheader()
        writer.writerows(rows)

    fig_path = out / "race_search_attempts.png"
    fig, ax = plt.subplots(figsize=(6, 4))
    if attempts_when_manifested:
        top = max(attempts_when_manifested)
        bins = [i + 0.5 for i in range(top + 1)]
        ax.hist(attempts_when_manifested, bins=bins, color="#4878d0", edgecolor="black")
    ax.set_xlabel("replay attempts until accepted")
    ax.set_ylabel("trials")
    ax.set_title(f"schedule search convergence ({manifested}/{trials} races manifested)")
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)

    first_try = sum(1 for a in attempts_when_manifested if a == 1)
    return {
        "trials": trials,
        "manifested": manifested,
        "first_attempt": first_try,
        "max_attempts_seen": max(attempts_when_manifested, default=0),
        "csv": str(csv_path),
        "figure": str(fig_path),
    }


def overhead_report(runs: int, out_dir: str | Path, iters: int = 150) -> dict:
    """Compare recording-enabled wall time against bare execution."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    times = {"recording": [], "disabled": []}
    for mode, enabled in (("recording", True), ("disabled", False)):
        for i in range(runs):
            spec = build_counter(iters=iters)
            started = time.perf_counter()
            run(spec, RuntimeConfig(recording=enabled, **spec.config_overrides))
            elapsed = time.perf_counter() - started
            times[mode].append(elapsed)
            rows.append({"mode": mode, "run": i, "seconds": f"{elapsed:.6f}"})

    csv_path = out / "overhead.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["mode", "run", "seconds"])
        writer.writeheader()
        writer.writerows(rows)

    med_on = statistics.median(times["recording"])
    med_off = statistics.median(times["disabled"])
    ratio = med_on / med_off if med_off else float("inf")

    fig_path = out / "overhead.png"
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(["recording", "disabled"], [med_on, med_off], color=["#d65f5f", "#6acc64"])
    ax.set_ylabel("median wall time (s)")
    ax.set_title(f"recording overhead ratio: {ratio:.2f}x")
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)

    return {
        "runs": runs,
        "median_recording_s": round(med_on, 6),
        "median_disabled_s": round(med_off, 6),
        "ratio": round(ratio, 4),
        "csv": str(csv_path),
        "figure": str(fig_path),
    }
