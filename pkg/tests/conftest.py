"""Shared fixtures: a sandbox policy on the current interpreter and a fake model.

The fake model answers every template the way a well-behaved model would,
but from real execution: `simulate` replies come from running the code in
process, `testgen` replies from recording the calls a correct program makes
on the public tests. Repairs come from a table of correct definitions
(oracle) or echo the input back (null).
"""

import ast
import os
import re
import sys
from typing import Callable, Dict, List, Optional, Sequence

import pytest

from mgdbg.executors import SandboxPolicy
from mgdbg.llm import Gateway, LLMConfig, ScriptedStub

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")

TWO_LEVEL_BUGGY = '''def is_even(n):
    return n % 2 == 1


def count_evens(numbers):
    return sum(1 for n in numbers if is_even(n))
'''

TWO_LEVEL_FIXED_HELPER = '''def is_even(n):
    return n % 2 == 0'''

TWO_LEVEL_CANONICAL = TWO_LEVEL_BUGGY.replace("n % 2 == 1", "n % 2 == 0")

TWO_LEVEL_VISIBLE = ("assert count_evens([2, 4, 5]) == 2",)


def _section(prompt: str, header: str, next_header: str) -> str:
    match = re.search(
        rf"{re.escape(header)}\n\n(.*?)\n\n{re.escape(next_header)}", prompt, re.DOTALL
    )
    assert match, f"prompt has no {header!r} section"
    return match.group(1)


def _block(code: str) -> str:
    return f"Here is the code.\n\n```python\n{code.strip()}\n```\n"


def _run_case(setup: str, test: str) -> tuple:
    namespace: Dict[str, object] = {"__name__": "__main__"}
    try:
        exec(compile(setup, "<code>", "exec"), namespace)
        exec(compile(test, "<test>", "exec"), namespace)
    except AssertionError as e:
        return "FAIL", f"AssertionError {e}".strip()
    except Exception as e:
        return "ERROR", f"{type(e).__name__}: {e}"
    return "PASS", "assertion holds"


def honest_simulation(user: str) -> str:
    """VERDICT lines obtained by actually running the code."""
    code = _section(user, "Function Code:", "Verified Helper Code:")
    context = _section(user, "Verified Helper Code:", "Test Cases:")
    tests = _section(user, "Test Cases:", "Instruction:")
    setup = code if context.strip() == "(none)" else f"{context}\n\n{code}"

    lines = ["Tracing the function line by line."]
    for line in tests.splitlines():
        match = re.match(r"\[(\d+)\]\s*(.*)", line)
        if not match:
            continue
        verdict, reason = _run_case(setup, match.group(2))
        lines.append(f"VERDICT {match.group(1)}: {verdict} — {reason}")
    return "\n".join(lines)


def _definitions(source: str) -> Dict[str, str]:
    module = ast.parse(source)
    return {
        node.name: ast.get_source_segment(source, node)
        for node in module.body
        if isinstance(node, ast.FunctionDef)
    }


def apply_fixes(code: str, fixes: Dict[str, str]) -> str:
    """Swap every definition in `code` that has a correct counterpart."""
    try:
        current = _definitions(code)
    except SyntaxError:
        return code
    for name, source in current.items():
        if name in fixes and fixes[name] != source:
            code = code.replace(source, fixes[name])
    return code


def recorded_subtests(canonical: str, unit: str, public_tests: Sequence[str]) -> List[str]:
    """Asserts for `unit` from the calls a correct program makes on the public tests."""
    namespace: Dict[str, object] = {"__name__": "__main__"}
    exec(compile(canonical, "<canonical>", "exec"), namespace)
    original = namespace[unit]
    calls: List[str] = []

    def recorder(*args):
        result = original(*args)
        call = f"{unit}({', '.join(repr(a) for a in args)})"
        assertion = f"assert {call} == {result!r}"
        if assertion not in calls:
            calls.append(assertion)
        return result

    namespace[unit] = recorder
    for test in public_tests:
        try:
            exec(compile(test, "<test>", "exec"), namespace)
        except Exception:
            pass
    return calls[:3]


class FakeModel:
    """Callable responder for ScriptedStub.

    `programs` maps entry point names to correct programs; repairs are drawn
    from their definitions unless `repair` is "null".
    """

    def __init__(
        self,
        programs: Dict[str, str],
        repair: str = "oracle",
        decompositions: Optional[Dict[str, str]] = None,
    ) -> None:
        self.programs = programs
        self.repair = repair
        self.decompositions = decompositions or {}
        self.fixes: Dict[str, str] = {}
        for program in programs.values():
            self.fixes.update(_definitions(program))
        self.calls: List[str] = []

    def _program_for(self, code: str) -> str:
        names = set(_definitions(code))
        for entry, program in self.programs.items():
            if entry in names:
                return program
        raise AssertionError("unknown program")

    def __call__(self, template_id: str, system: str, user: str) -> str:
        self.calls.append(template_id)
        if template_id == "decompose":
            code = _section(user, "Original Code:", "Instruction:")
            for entry, decomposed in self.decompositions.items():
                if entry in _definitions(code):
                    return _block(decomposed)
            return _block(code)
        if template_id == "testgen":
            full_code = _section(user, "Full Code:", "Public Test Cases for the Main Function:")
            public = _section(user, "Public Test Cases for the Main Function:", "Instruction:")
            unit = re.search(r"analyze how the (\w+) function", user).group(1)
            asserts = recorded_subtests(self._program_for(full_code), unit, public.splitlines())
            return "Derived cases:\n\n```python\n" + "\n".join(asserts) + "\n```\n"
        if template_id == "simulate":
            return honest_simulation(user)
        if template_id == "debug":
            code = _section(user, "Function Code:", "Test Case Results:")
            return _block(code if self.repair == "null" else apply_fixes(code, self.fixes))
        if template_id == "simple_feedback":
            code = _section(user, "Code:", "Failed Test Cases:")
            return _block(code if self.repair == "null" else apply_fixes(code, self.fixes))
        if template_id == "codegen":
            entry = re.search(r"including the function `(\w+)`", user).group(1)
            return _block(self.programs[entry])
        raise AssertionError(f"unexpected template {template_id}")


@pytest.fixture
def policy() -> SandboxPolicy:
    return SandboxPolicy(timeout_per_test=5.0, python=sys.executable)


@pytest.fixture
def llm_cfg() -> LLMConfig:
    return LLMConfig(endpoint="http://127.0.0.1:9", model_id="stub-model", temperature=0.8)


@pytest.fixture
def make_gateway(llm_cfg) -> Callable[..., Gateway]:
    def build(responder, cache_path=None) -> Gateway:
        return Gateway(llm_cfg, ScriptedStub(responder, cache_path))

    return build


@pytest.fixture
def oracle() -> FakeModel:
    return FakeModel({"count_evens": TWO_LEVEL_CANONICAL})


@pytest.fixture
def null_model() -> FakeModel:
    return FakeModel({"count_evens": TWO_LEVEL_CANONICAL}, repair="null")
