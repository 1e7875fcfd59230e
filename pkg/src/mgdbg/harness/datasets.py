"""Benchmark and seed-program loaders.

Visible/hidden splits:

- humaneval: visible tests come from the examples in the task description,
  hidden tests are the dataset's ``check`` function.
- mbpp: the first listed test is visible, the rest are hidden.
- humanevalfix: the buggy function is the seed; visible tests come from
  ``example_test`` and hidden tests from ``test``.
"""

import ast
import doctest
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from mgdbg.errors import SchemaError
from mgdbg.testgen import PublicTestSet
from mgdbg.utils import mentions

logger = logging.getLogger(__name__)

DATASET_KINDS = ("humaneval", "mbpp", "humanevalfix")

CATEGORIES = ("value", "missing_logic", "excess_logic", "operator", "variable", "function")

_BUG_TYPES = {
    "value misuse": "value",
    "missing logic": "missing_logic",
    "excess logic": "excess_logic",
    "operator misuse": "operator",
    "variable misuse": "variable",
    "function misuse": "function",
}

# "f(x) ➞ y" and similar example notations found in task descriptions.
_EXAMPLE_RE = re.compile(r"^\s*(?:>>>\s*)?([A-Za-z_]\w*\(.*\))\s*(?:==|➞|->|=>|returns?|should return)\s*(.+?)\s*$")


@dataclass(frozen=True)
class BenchmarkProblem:
    task_id: str
    prompt: str
    entry_point: str
    visible_tests: PublicTestSet
    hidden_tests: PublicTestSet
    category: Optional[str] = None
    canonical_solution: Optional[str] = None
    # Buggy program shipped with the dataset (humanevalfix).
    buggy_code: Optional[str] = None


@dataclass(frozen=True)
class SeedProgram:
    task_id: str
    code: str
    passes_hidden: Optional[bool] = None

    def to_dict(self) -> Dict[str, Any]:
        return {"task_id": self.task_id, "code": self.code, "passes_hidden": self.passes_hidden}


def _read_records(path: Union[str, Path]) -> List[Tuple[int, Dict[str, Any]]]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        index = 0
        for line in f:
            if not line.strip():
                continue
            try:
                records.append((index, json.loads(line)))
            except json.JSONDecodeError as e:
                raise SchemaError(f"invalid JSON: {e.msg}", index) from e
            index += 1
    return records


def _require(record: Mapping[str, Any], index: int, *keys: str) -> None:
    for key in keys:
        if key not in record or record[key] in (None, ""):
            raise SchemaError(f"missing field {key!r}", index)


def description_examples(prompt: str, entry_point: str) -> List[str]:
    """Assertions built from the usage examples in a task description."""
    tests: List[str] = []
    try:
        examples = doctest.DocTestParser().get_examples(prompt)
    except ValueError:
        examples = []
    for example in examples:
        source = example.source.strip()
        want = example.want.strip()
        if mentions(source, entry_point) and want and "\n" not in source:
            tests.append(f"assert {source} == {want}")

    if not tests:
        for line in prompt.splitlines():
            match = _EXAMPLE_RE.match(line)
            if match and mentions(match.group(1), entry_point):
                tests.append(f"assert {match.group(1)} == {match.group(2).rstrip('.')}")

    valid = []
    for test in tests:
        try:
            ast.parse(test)
        except SyntaxError:
            continue
        if test not in valid:
            valid.append(test)
    return valid


def _check_asserts(test_code: str, entry_point: str) -> List[str]:
    """Top-level asserts of a ``check(candidate)`` function, calling `entry_point`."""
    try:
        module = ast.parse(test_code)
    except SyntaxError:
        return []
    asserts = []
    for node in ast.walk(module):
        if isinstance(node, ast.Assert):
            segment = ast.get_source_segment(test_code, node)
            if segment and "\n" not in segment:
                asserts.append(re.sub(r"\bcandidate\b", entry_point, segment))
    return asserts


def _hidden_suite(test_code: str, entry_point: str) -> PublicTestSet:
    return PublicTestSet((f"{test_code.rstrip()}\n\n\ncheck({entry_point})",), source="hidden_suite")


def _load_humaneval(index: int, record: Mapping[str, Any]) -> BenchmarkProblem:
    _require(record, index, "task_id", "prompt", "entry_point", "test")
    entry_point = record["entry_point"]
    visible = description_examples(record["prompt"], entry_point)
    source = "task_description"
    if not visible:
        visible = _check_asserts(record["test"], entry_point)[:1]
        source = "dataset"
        logger.warning("%s: no usage examples in the description; using the first dataset assert", record["task_id"])
    if not visible:
        raise SchemaError("no visible test could be derived", index)
    return BenchmarkProblem(
        task_id=record["task_id"],
        prompt=record["prompt"],
        entry_point=entry_point,
        visible_tests=PublicTestSet(tuple(visible), source=source),
        hidden_tests=_hidden_suite(record["test"], entry_point),
        canonical_solution=record.get("canonical_solution"),
    )


def _mbpp_entry_point(record: Mapping[str, Any], first_test: str) -> Optional[str]:
    if record.get("entry_point"):
        return record["entry_point"]
    try:
        module = ast.parse(record.get("code", ""))
        defined = [n.name for n in module.body if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef))]
    except SyntaxError:
        defined = []
    for name in defined:
        if mentions(first_test, name):
            return name
    match = re.search(r"assert\s+(?:\w+\()*?([A-Za-z_]\w*)\(", first_test)
    return match.group(1) if match else None


def _load_mbpp(index: int, record: Mapping[str, Any]) -> BenchmarkProblem:
    _require(record, index, "task_id", "text", "test_list")
    tests = [t.strip() for t in record["test_list"] if t.strip()]
    if not tests:
        raise SchemaError("empty test_list", index)
    setup = (record.get("test_setup_code") or "").strip()
    if setup:
        tests = [f"{setup}\n{t}" for t in tests]
    entry_point = _mbpp_entry_point(record, tests[0])
    if not entry_point:
        raise SchemaError("missing field 'entry_point' and none derivable from the tests", index)
    prompt = f"{record['text']}\nYour code should pass this test:\n{tests[0]}"
    return BenchmarkProblem(
        task_id=str(record["task_id"]),
        prompt=prompt,
        entry_point=entry_point,
        visible_tests=PublicTestSet((tests[0],), source="first_mbpp_case"),
        hidden_tests=PublicTestSet(tuple(tests[1:]), source="hidden_suite"),
        canonical_solution=record.get("code"),
    )


def _load_humanevalfix(index: int, record: Mapping[str, Any]) -> BenchmarkProblem:
    _require(record, index, "task_id", "entry_point", "buggy_solution", "test")
    entry_point = record["entry_point"]
    bug_type = record.get("bug_type", "")
    category = _BUG_TYPES.get(bug_type, bug_type.replace(" ", "_") or None)
    if category is not None and category not in CATEGORIES:
        logger.warning("%s: unknown bug type %r", record["task_id"], bug_type)

    prompt = record.get("prompt", "")
    visible = _check_asserts(record.get("example_test", ""), entry_point)
    source = "dataset"
    if not visible:
        visible = description_examples(prompt, entry_point)
        source = "task_description"
    if not visible:
        raise SchemaError("no visible test could be derived", index)

    declaration = record.get("declaration") or prompt
    return BenchmarkProblem(
        task_id=record["task_id"],
        prompt=prompt,
        entry_point=entry_point,
        visible_tests=PublicTestSet(tuple(visible), source=source),
        hidden_tests=_hidden_suite(record["test"], entry_point),
        category=category,
        canonical_solution=record.get("canonical_solution"),
        buggy_code=declaration + record["buggy_solution"],
    )


_LOADERS = {
    "humaneval": _load_humaneval,
    "mbpp": _load_mbpp,
    "humanevalfix": _load_humanevalfix,
}


def load_benchmark(path: Union[str, Path], kind: str) -> List[BenchmarkProblem]:
    """Parse a benchmark JSON-lines file and apply its visible/hidden rule."""
    if kind not in _LOADERS:
        raise SchemaError(f"unknown dataset kind {kind!r}; expected one of {', '.join(DATASET_KINDS)}")
    loader = _LOADERS[kind]
    problems = [loader(index, record) for index, record in _read_records(path)]
    logger.info("loaded %d %s problem(s) from %s", len(problems), kind, path)
    return problems


def load_seeds(path: Union[str, Path]) -> List[SeedProgram]:
    seeds = []
    for index, record in _read_records(path):
        _require(record, index, "task_id")
        if "code" not in record:
            raise SchemaError("missing field 'code'", index)
        seeds.append(SeedProgram(str(record["task_id"]), record["code"], record.get("passes_hidden")))
    return seeds


def shipped_seeds(problems: Sequence[BenchmarkProblem]) -> List[SeedProgram]:
    """Seeds carried by the dataset itself (the buggy programs of humanevalfix)."""
    return [SeedProgram(p.task_id, p.buggy_code) for p in problems if p.buggy_code is not None]


def save_seeds(path: Union[str, Path], seeds: Sequence[SeedProgram]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for seed in seeds:
            f.write(json.dumps(seed.to_dict(), ensure_ascii=False) + "\n")
