"""Verdict engines: model-simulated execution and real sandboxed execution.

Both produce an ExecutionReport with one CaseResult per test, so the
debugger can swap one for the other.
"""

import ast
import logging
import re
import signal
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from mgdbg.errors import SimulationFormatError
from mgdbg.executors.sandbox import MiB, ProcessOutcome, SandboxPolicy, run_isolated
from mgdbg.executors.tracing import TraceResult, run_traced
from mgdbg.llm import Gateway
from mgdbg.testgen import PublicTestSet, SubTestCase
from mgdbg.utils import shorten

logger = logging.getLogger(__name__)

__all__ = [
    "BreakpointAccuracy",
    "CaseResult",
    "ExecutionReport",
    "MiB",
    "SandboxPolicy",
    "TraceResult",
    "Verdict",
    "attach_traces",
    "compare_traces",
    "parse_simulation",
    "run_real",
    "run_traced",
    "score_hidden",
    "simulate",
]


class Verdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    ERROR = "error"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class CaseResult:
    test_index: int
    verdict: Verdict
    detail: str = ""
    test: str = ""
    trace: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "test_index": self.test_index,
            "verdict": self.verdict.value,
            "detail": self.detail,
            "test": self.test,
            "trace": self.trace,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CaseResult":
        return cls(
            test_index=data["test_index"],
            verdict=Verdict(data["verdict"]),
            detail=data.get("detail", ""),
            test=data.get("test", ""),
            trace=data.get("trace", ""),
        )


@dataclass(frozen=True)
class ExecutionReport:
    unit: str
    mode: str  # simulated | real
    results: Tuple[CaseResult, ...]
    narrative: str = ""
    # "<test index>:<variable>" -> predicted value text
    predicted_states: Dict[str, str] = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(result.verdict is Verdict.PASS for result in self.results)

    @property
    def failures(self) -> List[CaseResult]:
        return [result for result in self.results if result.verdict is not Verdict.PASS]

    @property
    def pass_count(self) -> int:
        return len(self.results) - len(self.failures)

    def verdicts(self) -> List[str]:
        return [result.verdict.value for result in self.results]

    def format_results(self) -> str:
        """Test outcomes as shown to the model in repair prompts."""
        blocks = []
        for result in self.results:
            line = f"Test {result.test_index}: {result.test}\nResult: {result.verdict.value.upper()}"
            if result.detail:
                line += f" - {result.detail}"
            if result.trace:
                line += f"\nExecution trace:\n{result.trace}"
            blocks.append(line)
        text = "\n\n".join(blocks)
        if self.narrative:
            text += f"\n\nSimulated execution:\n{shorten(self.narrative, 4000)}"
        return text

    def to_dict(self) -> Dict[str, Any]:
        return {
            "unit": self.unit,
            "mode": self.mode,
            "all_passed": self.all_passed,
            "results": [result.to_dict() for result in self.results],
            "narrative": self.narrative,
            "predicted_states": dict(self.predicted_states),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExecutionReport":
        return cls(
            unit=data["unit"],
            mode=data["mode"],
            results=tuple(CaseResult.from_dict(r) for r in data.get("results", [])),
            narrative=data.get("narrative", ""),
            predicted_states=dict(data.get("predicted_states", {})),
        )


_VERDICT_RE = re.compile(
    r"^\W*VERDICT\s*\[?(\d+)\]?\s*:\s*(PASS|FAIL|ERROR)\b[ \t]*[—–:\-]*[ \t]*(.*?)[`*]*[ \t]*$",
    re.MULTILINE | re.IGNORECASE,
)
_STATE_RE = re.compile(
    r"^\W*STATE\s*\[?(\d+)\]?\s*:\s*([A-Za-z_]\w*)\s*=\s*(.+?)[`]*[ \t]*$",
    re.MULTILINE | re.IGNORECASE,
)


def parse_simulation(reply: str, test_count: int, tests: Sequence[SubTestCase]) -> ExecutionReport:
    """Read the VERDICT/STATE trailer of a simulation reply."""
    found: Dict[int, Tuple[str, str]] = {}
    first_verdict = None
    for match in _VERDICT_RE.finditer(reply):
        if first_verdict is None:
            first_verdict = match.start()
        found[int(match.group(1))] = (match.group(2).upper(), match.group(3).strip())

    missing = [i for i in range(test_count) if i not in found]
    if missing:
        raise SimulationFormatError(f"no VERDICT line for test(s) {missing}")

    results = []
    for i in range(test_count):
        label, reason = found[i]
        if label == "ERROR":
            # Predicted exceptions are repaired like failures.
            reason = f"predicted exception: {reason}" if reason else "predicted exception"
        verdict = Verdict.PASS if label == "PASS" else Verdict.FAIL
        results.append(CaseResult(i, verdict, reason, tests[i].render()))

    states = {f"{m.group(1)}:{m.group(2)}": m.group(3).strip() for m in _STATE_RE.finditer(reply)}
    narrative = reply[:first_verdict].strip() if first_verdict is not None else reply.strip()
    return ExecutionReport(
        unit=tests[0].target_unit if tests else "",
        mode="simulated",
        results=tuple(results),
        narrative=narrative,
        predicted_states=states,
    )


def simulate(
    unit_source: str, context_source: str, tests: Sequence[SubTestCase], gateway: Gateway
) -> ExecutionReport:
    """Ask the model to run `unit_source` mentally on each test."""
    if not tests:
        raise ValueError("simulate needs at least one test")
    unit = tests[0].target_unit
    slots = {
        "function_code": unit_source,
        "context_code": context_source.strip() or "(none)",
        "test_cases": "\n".join(f"[{i}] {test.render()}" for i, test in enumerate(tests)),
        "function_name": unit,
    }
    return gateway.ask("simulate", slots, lambda reply: parse_simulation(reply, len(tests), tests))


def _last_exception_line(stderr: str) -> str:
    lines = [line for line in stderr.strip().splitlines() if line.strip()]
    for line in reversed(lines):
        if not line.startswith((" ", "\t")):
            return line.strip()
    return lines[-1].strip() if lines else ""


def classify(outcome: ProcessOutcome, policy: SandboxPolicy) -> Tuple[Verdict, str]:
    if outcome.timed_out:
        return Verdict.TIMEOUT, f"exceeded {policy.timeout_per_test:g}s"
    if outcome.returncode == 0:
        return Verdict.PASS, ""
    cpu_signals = {getattr(signal, "SIGXCPU", None), getattr(signal, "SIGKILL", None)}
    if outcome.returncode is not None and outcome.returncode < 0 and -outcome.returncode in cpu_signals:
        return Verdict.TIMEOUT, "killed by the CPU time limit"
    last = _last_exception_line(outcome.stderr)
    if last.startswith("AssertionError"):
        return Verdict.FAIL, last
    tail = "\n".join(outcome.stderr.strip().splitlines()[-4:])
    return Verdict.ERROR, tail or f"exit status {outcome.returncode}"


def run_real(
    full_source: str,
    tests: Sequence[SubTestCase],
    policy: SandboxPolicy,
    stop_on_failure: bool = False,
) -> ExecutionReport:
    """Run each test in its own interpreter process against `full_source`."""
    policy.interpreter()
    results = []
    for i, test in enumerate(tests):
        program = f"{full_source.rstrip()}\n\n\n{test.render_check()}\n"
        verdict, detail = classify(run_isolated(program, policy), policy)
        results.append(CaseResult(i, verdict, detail, test.render()))
        if stop_on_failure and verdict is not Verdict.PASS:
            break
    unit = tests[0].target_unit if tests else ""
    return ExecutionReport(unit=unit, mode="real", results=tuple(results))


def score_hidden(final_source: str, hidden_tests: PublicTestSet, policy: SandboxPolicy) -> bool:
    """True iff every hidden test passes. Only final scoring may call this."""
    if not hidden_tests.tests:
        return True
    report = run_real(final_source, hidden_tests.as_subtests(""), policy, stop_on_failure=True)
    return len(report.results) == len(hidden_tests.tests) and report.all_passed


def attach_traces(
    report: ExecutionReport,
    full_source: str,
    tests: Sequence[SubTestCase],
    policy: SandboxPolicy,
) -> ExecutionReport:
    """Add instrumented traces to the failing results of a real report."""
    failing = [result.test_index for result in report.failures]
    if not failing:
        return report
    traces = run_traced(full_source, report.unit, [tests[i] for i in failing], policy)
    by_index = {index: trace.render() for index, trace in zip(failing, traces)}
    results = tuple(
        CaseResult(r.test_index, r.verdict, r.detail, r.test, by_index.get(r.test_index, ""))
        for r in report.results
    )
    return ExecutionReport(report.unit, report.mode, results, report.narrative, report.predicted_states)


@dataclass(frozen=True)
class BreakpointAccuracy:
    matched: int
    total: int
    mismatches: Tuple[str, ...] = ()

    @property
    def accuracy(self) -> Optional[float]:
        return self.matched / self.total if self.total else None


def _same_value(predicted: str, actual: str) -> bool:
    try:
        return ast.literal_eval(predicted) == ast.literal_eval(actual)
    except (ValueError, SyntaxError, TypeError, MemoryError, RecursionError):
        return predicted.strip() == actual.strip()


def compare_traces(
    unit_source: str,
    tests: Sequence[SubTestCase],
    gateway: Gateway,
    policy: SandboxPolicy,
    context_source: str = "",
) -> BreakpointAccuracy:
    """Score simulated final variable states against an instrumented real run.

    One checkpoint per (test, local variable of the unit at its return).
    """
    report = simulate(unit_source, context_source, tests, gateway)
    full_source = f"{context_source.rstrip()}\n\n\n{unit_source}\n" if context_source.strip() else unit_source
    traces = run_traced(full_source, tests[0].target_unit, tests, policy)

    matched = total = 0
    mismatches = []
    for trace in traces:
        for name, actual in trace.final_locals.items():
            total += 1
            predicted = report.predicted_states.get(f"{trace.test_index}:{name}")
            if predicted is not None and _same_value(predicted, actual):
                matched += 1
            else:
                mismatches.append(f"test {trace.test_index} {name}: predicted {predicted}, actual {actual}")
    return BreakpointAccuracy(matched, total, tuple(mismatches))
