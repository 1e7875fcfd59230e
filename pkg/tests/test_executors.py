"""Tests for real and simulated execution."""

import sys
import time

import pytest

from mgdbg.errors import InterpreterMissing, SimulationFormatError
from mgdbg.executors import (
    ExecutionReport,
    SandboxPolicy,
    Verdict,
    attach_traces,
    classify,
    compare_traces,
    parse_simulation,
    run_real,
    run_traced,
    score_hidden,
    simulate,
)
from mgdbg.executors.sandbox import ProcessOutcome, run_isolated
from mgdbg.testgen import PublicTestSet, SubTestCase

from .conftest import TWO_LEVEL_BUGGY, TWO_LEVEL_CANONICAL

GOLDEN = [
    ("def f(x):\n    return x + 1", "assert f(1) == 2", Verdict.PASS),
    ("def f(x):\n    return x + 1", "assert f(1) == 3", Verdict.FAIL),
    ("def f(x):\n    return 1 / x", "assert f(0) == 0", Verdict.ERROR),
    ("def f(x):\n    return x[5]", "assert f([1]) == 1", Verdict.ERROR),
    ("def f(x):\n    return undefined_name", "assert f(1) == 1", Verdict.ERROR),
    ("def f(s):\n    return s.upper()", "assert f('ab') == 'AB'", Verdict.PASS),
    ("def f(n):\n    return f(n + 1)", "assert f(0) == 0", Verdict.ERROR),
    ("def f(xs):\n    return sorted(xs)", "assert f([3, 1, 2]) == [1, 2, 3]", Verdict.PASS),
    ("def f(x):\n    return x > 0", "assert f(-1)", Verdict.FAIL),
    ("def f(x):\n    return x > 0", "assert f(1)", Verdict.PASS),
    ("def f(x)\n    return x", "assert f(1) == 1", Verdict.ERROR),
    ("import sys\n\n\ndef f():\n    sys.exit(3)", "assert f() is None", Verdict.ERROR),
    ("def f():\n    assert False, 'inner'", "assert f() == 1", Verdict.FAIL),
    ("def f():\n    return bytearray(2 ** 34)", "assert len(f()) > 0", Verdict.ERROR),
    (
        "import socket\n\n\ndef f():\n    return socket.create_connection(('127.0.0.1', 80))",
        "assert f() is not None",
        Verdict.ERROR,
    ),
    ("def f():\n    return 0.1 + 0.2", "assert f() == 0.3", Verdict.FAIL),
    ("def f():\n    print('x' * 100000)\n    return 1", "assert f() == 1", Verdict.PASS),
    ("def f(a, b):\n    return a + b", "assert f(1, 'x') == 0", Verdict.ERROR),
    ("import math\n\n\ndef f(x):\n    return math.factorial(x)", "assert f(5) == 120", Verdict.PASS),
    (
        "def f():\n    open('out.txt', 'w').write('hi')\n    return open('out.txt').read()",
        "assert f() == 'hi'",
        Verdict.PASS,
    ),
]


@pytest.mark.parametrize("program,test,expected", GOLDEN)
def test_run_real_golden(program, test, expected, policy):
    report = run_real(program, [SubTestCase.from_assertion(test, "f")], policy)

    assert report.mode == "real"
    assert [r.verdict for r in report.results] == [expected]
    assert report.results[0].test == test


def test_failure_detail_shows_the_actual_value(policy):
    report = run_real(
        "def f(x):\n    return x * 3", [SubTestCase("f", "f(2)", "4")], policy
    )

    assert report.results[0].verdict is Verdict.FAIL
    assert "f(2) returned 6, expected 4" in report.results[0].detail


def test_timeout(policy):
    fast = SandboxPolicy(timeout_per_test=1.0, python=policy.python)

    outcome = run_isolated("while True:\n    pass\n", fast)
    report = run_real(
        "def f():\n    while True:\n        pass", [SubTestCase("f", "f()", "None")], fast
    )

    assert outcome.timed_out
    assert 0.0 <= outcome.duration <= 2.0
    assert report.results[0].verdict is Verdict.TIMEOUT


def test_timeout_kills_spawned_processes(policy, tmp_path):
    fast = SandboxPolicy(timeout_per_test=1.0, python=policy.python)
    marker = tmp_path / "survived.txt"
    program = (
        "import subprocess, sys, time\n"
        "subprocess.Popen([sys.executable, '-c', "
        f"'import time; time.sleep(2); open({str(marker)!r}, \"w\").write(\"x\")'])\n"
        "time.sleep(60)\n"
    )

    outcome = run_isolated(program, fast)
    time.sleep(3)

    assert outcome.timed_out
    assert outcome.duration <= 2.5
    assert not marker.exists()


def test_stop_on_failure(policy):
    tests = [SubTestCase("f", "f()", str(v)) for v in (2, 1, 1)]

    report = run_real("def f():\n    return 1", tests, policy, stop_on_failure=True)

    assert report.verdicts() == ["fail"]


def test_missing_interpreter():
    policy = SandboxPolicy(python="no-such-python-3.99")

    with pytest.raises(InterpreterMissing, match="no-such-python-3.99"):
        run_real("def f(): pass", [SubTestCase("f", "f()", "None")], policy)


def test_classify_signals_and_asserts():
    policy = SandboxPolicy(python=sys.executable)
    killed = ProcessOutcome(returncode=-9, stdout="", stderr="", timed_out=False, duration=3.0)
    failed = ProcessOutcome(
        returncode=1,
        stdout="",
        stderr='Traceback (most recent call last):\n  File "program.py", line 3\nAssertionError: boom\n',
        timed_out=False,
        duration=0.1,
    )

    assert classify(killed, policy)[0] is Verdict.TIMEOUT
    assert classify(failed, policy) == (Verdict.FAIL, "AssertionError: boom")


def test_score_hidden(policy):
    hidden = PublicTestSet(
        ("assert count_evens([]) == 0", "assert count_evens([1, 3, 6]) == 1"), source="hidden_suite"
    )

    assert score_hidden(TWO_LEVEL_CANONICAL, hidden, policy)
    assert not score_hidden(TWO_LEVEL_BUGGY, hidden, policy)
    assert score_hidden(TWO_LEVEL_BUGGY, PublicTestSet((), source="hidden_suite"), policy)


def test_parse_simulation():
    tests = [SubTestCase("g", f"g({i})", str(i)) for i in range(3)]
    reply = (
        "Walking through g line by line.\n"
        "VERDICT 0: PASS — returns 0\n"
        "VERDICT [1]: ERROR: IndexError list index\n"
        "- verdict 2: fail - returns 3\n"
        "STATE 0: total = 3\n"
        "STATE 1: items = [1, 2]\n"
    )

    report = parse_simulation(reply, 3, tests)

    assert report.mode == "simulated"
    assert report.unit == "g"
    assert report.verdicts() == ["pass", "fail", "fail"]
    assert report.results[1].detail == "predicted exception: IndexError list index"
    assert report.results[2].detail == "returns 3"
    assert report.narrative == "Walking through g line by line."
    assert report.predicted_states == {"0:total": "3", "1:items": "[1, 2]"}
    assert ExecutionReport.from_dict(report.to_dict()) == report


def test_parse_simulation_missing_verdict():
    tests = [SubTestCase("g", "g(0)", "0"), SubTestCase("g", "g(1)", "1")]

    with pytest.raises(SimulationFormatError):
        parse_simulation("VERDICT 0: PASS", 2, tests)


def test_simulate_with_fake_model(make_gateway, oracle):
    gateway = make_gateway(oracle)
    unit = "def is_even(n):\n    return n % 2 == 1"
    tests = [SubTestCase("is_even", "is_even(2)", "True"), SubTestCase("is_even", "is_even(3)", "True")]

    report = simulate(unit, "", tests, gateway)

    assert report.verdicts() == ["fail", "pass"]
    assert gateway.census() == {"simulate": 1}
    prompt = gateway.records[0].rendered_user
    assert "[0] assert is_even(2) == True" in prompt
    assert "(none)" in prompt


def test_simulate_retries_bad_replies(make_gateway):
    tests = [SubTestCase("f", "f()", "1")]
    gateway = make_gateway(["I am not sure.", "VERDICT 0: PASS — fine"])

    report = simulate("def f():\n    return 1", "", tests, gateway)

    assert report.all_passed
    assert len(gateway.records) == 2


def test_simulate_needs_tests(make_gateway):
    with pytest.raises(ValueError):
        simulate("def f(): pass", "", [], make_gateway([]))


TOTAL = "def total(xs):\n    s = 0\n    for x in xs:\n        s += x\n    return s"


def test_run_traced(policy):
    source = "import math\n\n\n" + TOTAL + "\n"

    traces = run_traced(
        source,
        "total",
        [SubTestCase("total", "total([1, 2])", "3"), SubTestCase("total", "total([1])", "5")],
        policy,
    )

    first, second = traces
    assert first.outcome == "pass"
    assert first.events[0][:2] == ("line", 2)
    assert first.final_locals == {"xs": "[1, 2]", "s": "3", "x": "2"}
    assert first.returned == "3"
    assert "line 2" in first.render()
    assert second.outcome == "fail"


def test_attach_traces(policy):
    tests = [SubTestCase("total", "total([1, 2])", "3"), SubTestCase("total", "total([1])", "5")]
    report = run_real(TOTAL, tests, policy)

    traced = attach_traces(report, TOTAL, tests, policy)

    assert traced.verdicts() == ["pass", "fail"]
    assert traced.results[0].trace == ""
    assert "returned 1" in traced.results[1].trace
    assert "Execution trace:" in traced.format_results()


def test_compare_traces(policy, make_gateway):
    reply = (
        "VERDICT 0: PASS — sums to 3\n"
        "STATE 0: xs = [1, 2]\n"
        "STATE 0: s = 3\n"
        "STATE 0: x = 1\n"
    )
    gateway = make_gateway([reply])

    result = compare_traces(TOTAL, [SubTestCase("total", "total([1, 2])", "3")], gateway, policy)

    assert (result.matched, result.total) == (2, 3)
    assert result.accuracy == pytest.approx(2 / 3)
    assert result.mismatches == ("test 0 x: predicted 1, actual 2",)
