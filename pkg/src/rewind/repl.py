"""Interactive debugging REPL.

The session pauses on the coordinator at every epoch boundary and on
faults while all workload threads are parked; `watch` plus `rollback`
re-executes the epoch with software watchpoints installed and prints hits
as they fire. A machine-readable mode wraps every prompt and response in
JSON for test automation.
"""

from __future__ import annotations

import json
import sys
from typing import Optional, TextIO

from .arena import MAX_WATCHPOINTS

HELP = """commands:
  continue              commit and proceed to the next epoch
  rollback              roll back and identically replay this epoch
  watch <hex-addr> [len]   install a watchpoint (at most 4)
  unwatch <n>           remove watchpoint n
  info log [thread]     recorded events of the paused epoch
  info epochs           epoch trace so far
  info heap             allocator statistics
  where                 per-thread step tags at the pause
  quit                  abort the run
"""


class Debugger:
    def __init__(self, stdin: Optional[TextIO] = None, stdout: Optional[TextIO] = None,
                 json_mode: bool = False):
        self.stdin = stdin or sys.stdin
        self.stdout = stdout or sys.stdout
        self.json_mode = json_mode
        self.rt = None           # bound by the harness
        self.watches: list[tuple[int, int]] = []

    # -- plumbing -------------------------------------------------------------

    def _emit(self, kind: str, **fields) -> None:
        if self.json_mode:
            self.stdout.write(json.dumps({"type": kind, **fields}) + "\n")
        else:
            text = fields.get("text")
            if text is None:
                text = json.dumps(fields)
            self.stdout.write(text + "\n")
        self.stdout.flush()

    def _read(self) -> Optional[str]:
        if self.json_mode:
            self._emit("prompt")
        else:
            self.stdout.write("(rewind) ")
            self.stdout.flush()
        line = self.stdin.readline()
        if not line:
            return None
        return line.strip()

    # -- pause loop -------------------------------------------------------------

    def on_pause(self, kind: str, closed: dict) -> str:
        self._emit("pause", reason=kind, epoch=closed.get("epoch_index"),
                   trigger=closed.get("trigger"), fault=closed.get("fault"),
                   events=closed.get("event_count"),
                   text=f"paused [{kind}] epoch={closed.get('epoch_index')} "
                        f"trigger={closed.get('trigger')} fault={closed.get('fault')}")
        while True:
            line = self._read()
            if line is None:
                return "quit"
            if not line:
                continue
            parts = line.split()
            cmd, args = parts[0], parts[1:]
            if cmd == "continue":
                return "continue"
            if cmd == "quit":
                return "quit"
            if cmd == "help":
                self._emit("help", text=HELP)
            elif cmd == "rollback":
                self._do_rollback()
            elif cmd == "watch":
                self._do_watch(args)
            elif cmd == "unwatch":
                self._do_unwatch(args)
            elif cmd == "info":
                self._do_info(args, closed)
            elif cmd == "where":
                self._do_where()
            else:
                self._emit("error", text=f"unknown command: {cmd}")

    # -- commands ----------------------------------------------------------------

    def _do_watch(self, args) -> None:
        if not args:
            self._emit("error", text="usage: watch <hex-addr> [len]")
            return
        if len(self.watches) >= MAX_WATCHPOINTS:
            self._emit("error",
                       text=f"watchpoint capacity is {MAX_WATCHPOINTS}; unwatch one first")
            return
        addr = int(args[0], 16)
        length = int(args[1]) if len(args) > 1 else 1
        self.watches.append((addr, length))
        self._emit("watch", index=len(self.watches) - 1, address=addr, length=length,
                   text=f"watch #{len(self.watches) - 1} at 0x{addr:x} len {length}")

    def _do_unwatch(self, args) -> None:
        try:
            removed = self.watches.pop(int(args[0]))
        except (IndexError, ValueError):
            self._emit("error", text="usage: unwatch <index>")
            return
        self._emit("unwatch", address=removed[0], text=f"removed watch at 0x{removed[0]:x}")

    def _do_rollback(self) -> None:
        rt = self.rt
        rt.arena.watchset.clear()
        for addr, length in self.watches:
            rt.arena.watchset.install(addr, length, label="repl")
        rt.arena.hit_callback = self._print_hit
        try:
            result = rt.replayer.search(label="repl-rollback")
        finally:
            rt.arena.hit_callback = None
            rt.arena.watchset.clear()
        self._emit("rollback", outcome=result.outcome, attempts=result.attempts,
                   hits=[h.to_dict() for h in result.watch_hits],
                   text=f"replay {result.outcome} after {result.attempts} attempt(s), "
                        f"{len(result.watch_hits)} watch hit(s)")

    def _print_hit(self, hit) -> None:
        self._emit("hit", **hit.to_dict(),
                   text=f"watch hit: thread {hit.thread} step {hit.step} "
                        f"addr 0x{hit.address:x} wrote {hit.new.hex()}")

    def _do_info(self, args, closed: dict) -> None:
        topic = args[0] if args else ""
        if topic == "log":
            lines = closed.get("dump", [])
            if len(args) > 1:
                tid = int(args[1])
                lines = [l for l in lines if l["thread"] == tid]
            if self.json_mode:
                self._emit("log", events=lines)
            else:
                for line in lines:
                    self._emit("log-line", text=json.dumps(line, sort_keys=False))
        elif topic == "epochs":
            trace = self.rt.epochs.trace
            if self.json_mode:
                self._emit("epochs", trace=trace)
            else:
                for line in trace:
                    self._emit("epoch-line", text=json.dumps(line, sort_keys=False))
        elif topic == "heap":
            stats = self.rt.heap.stats()
            self._emit("heap", stats=stats, text=json.dumps(stats, sort_keys=False))
        else:
            self._emit("error", text="usage: info log [thread] | info epochs | info heap")

    def _do_where(self) -> None:
        rows = []
        for tid in sorted(self.rt.threads):
            ts = self.rt.threads[tid]
            rows.append({"thread": tid, "name": ts.name, "status": ts.status,
                         "step": ts.step, "blocked_on": ts.blocked_on})
        if self.json_mode:
            self._emit("where", threads=rows)
        else:
            for row in rows:
                self._emit("where-line", text=json.dumps(row, sort_keys=False))
