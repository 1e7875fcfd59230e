"""Line-level variable traces of one unit, collected by a real run."""

import json
import re
import string
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from mgdbg.executors.sandbox import SandboxPolicy, run_isolated

MARKER = "<<MGDBG-TRACE>>"
EVENT_LIMIT = 200

TRACE_HARNESS = string.Template('''

import json as _mgdbg_json
import sys as _mgdbg_sys

_mgdbg_state = {"events": [], "final": None, "returned": None}


def _mgdbg_repr(value):
    try:
        text = repr(value)
    except Exception:
        text = "<unrepresentable %s>" % type(value).__name__
    return text if len(text) <= 200 else text[:200] + "..."


def _mgdbg_locals(frame):
    return {k: _mgdbg_repr(v) for k, v in frame.f_locals.items() if not k.startswith("_mgdbg")}


def _mgdbg_local(frame, event, arg):
    if event in ("line", "return") and len(_mgdbg_state["events"]) < ${limit}:
        _mgdbg_state["events"].append([event, frame.f_lineno, _mgdbg_locals(frame)])
    if event == "return":
        _mgdbg_state["final"] = _mgdbg_locals(frame)
        _mgdbg_state["returned"] = _mgdbg_repr(arg)
    return _mgdbg_local


def _mgdbg_global(frame, event, arg):
    if (
        event == "call"
        and "frame" not in _mgdbg_state
        and frame.f_code.co_name == ${unit}
        and frame.f_globals.get("__name__") == "__main__"
    ):
        _mgdbg_state["frame"] = True
        return _mgdbg_local
    return None


_mgdbg_outcome, _mgdbg_error = "pass", ""
_mgdbg_sys.settrace(_mgdbg_global)
try:
    exec(compile(${test}, "<test>", "exec"), globals())
except AssertionError as _mgdbg_exc:
    _mgdbg_outcome, _mgdbg_error = "fail", "AssertionError: %s" % _mgdbg_exc
except BaseException as _mgdbg_exc:
    _mgdbg_outcome, _mgdbg_error = "error", "%s: %s" % (type(_mgdbg_exc).__name__, _mgdbg_exc)
finally:
    _mgdbg_sys.settrace(None)

print()
print(${marker})
print(_mgdbg_json.dumps({
    "outcome": _mgdbg_outcome,
    "error": _mgdbg_error,
    "events": _mgdbg_state["events"],
    "final": _mgdbg_state["final"],
    "returned": _mgdbg_state["returned"],
}))
''')


@dataclass(frozen=True)
class TraceResult:
    test_index: int
    outcome: str  # pass | fail | error | timeout
    error: str = ""
    events: Tuple[Tuple[str, int, Dict[str, str]], ...] = ()
    final_locals: Dict[str, str] = field(default_factory=dict)
    returned: Optional[str] = None

    def render(self, limit: int = 40) -> str:
        lines = []
        for event, lineno, variables in self.events[:limit]:
            state = ", ".join(f"{k}={v}" for k, v in variables.items())
            label = "return" if event == "return" else f"line {lineno}"
            lines.append(f"{label}: {state}" if state else label)
        if len(self.events) > limit:
            lines.append(f"... {len(self.events) - limit} more steps")
        if self.returned is not None:
            lines.append(f"returned {self.returned}")
        if self.error:
            lines.append(self.error)
        return "\n".join(lines)


def build_trace_program(full_source: str, unit: str, test_source: str) -> str:
    harness = TRACE_HARNESS.substitute(
        limit=EVENT_LIMIT, unit=repr(unit), test=repr(test_source), marker=repr(MARKER)
    )
    return full_source.rstrip("\n") + "\n" + harness


def _definition_offset(full_source: str, unit: str) -> int:
    match = re.search(rf"^(?:async\s+)?def\s+{re.escape(unit)}\b", full_source, re.MULTILINE)
    return full_source.count("\n", 0, match.start()) if match else 0


def run_traced(
    full_source: str, unit: str, tests: Sequence[Any], policy: SandboxPolicy
) -> List[TraceResult]:
    """Trace the first call of `unit` under each test.

    Line numbers are relative to the unit's ``def`` line (line 1).
    """
    offset = _definition_offset(full_source, unit)
    results = []
    for index, test in enumerate(tests):
        source = test.render() if hasattr(test, "render") else str(test)
        outcome = run_isolated(build_trace_program(full_source, unit, source), policy)
        if outcome.timed_out:
            results.append(TraceResult(index, "timeout", f"timed out after {policy.timeout_per_test}s"))
            continue
        head, sep, tail = outcome.stdout.rpartition(MARKER)
        if not sep:
            error = outcome.stderr.strip().splitlines()[-1] if outcome.stderr.strip() else ""
            results.append(TraceResult(index, "error", error or "program crashed before tracing"))
            continue
        data = json.loads(tail.strip().splitlines()[0])
        events = tuple(
            (event, lineno - offset, variables) for event, lineno, variables in data["events"]
        )
        results.append(
            TraceResult(
                test_index=index,
                outcome=data["outcome"],
                error=data["error"],
                events=events,
                final_locals=data["final"] or {},
                returned=data["returned"],
            )
        )
    return results
