"""Derived test cases for subfunctions.

The root of a decomposition tree is tested with the public tests as given.
Every other unit gets tests derived by the model from how the root's public
tests flow through it; replies are parsed into assert statements.
"""

import ast
import logging
import threading
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Mapping, Optional, Tuple

from mgdbg.code_model import DecompositionTree, flatten
from mgdbg.errors import FormatError, NoAssertionsFound, NoCodeBlock, TestGenFailed
from mgdbg.llm import Gateway, extract_code_block, text_before_last_block
from mgdbg.utils import digest, mentions, shorten

logger = logging.getLogger(__name__)

# expected_expr of an assertion that only checks truthiness.
TRUE_MARKER = "<truthy>"

TEST_SOURCES = ("task_description", "first_mbpp_case", "dataset", "hidden_suite", "user")


def render_assertion(call_expr: str, expected_expr: str) -> str:
    if expected_expr == TRUE_MARKER:
        return f"assert {call_expr}"
    return f"assert {call_expr} == {expected_expr}"


@dataclass(frozen=True)
class SubTestCase:
    target_unit: str
    call_expr: str
    expected_expr: str
    origin_public_test: Optional[int] = None
    rationale: str = ""
    # Exact public assertion text, kept for tests taken over unchanged.
    verbatim: Optional[str] = None

    def render(self) -> str:
        if self.verbatim is not None:
            return self.verbatim
        return render_assertion(self.call_expr, self.expected_expr)

    def render_check(self) -> str:
        """Executable form whose failure message shows the actual value."""
        if not self.call_expr or self.expected_expr == TRUE_MARKER:
            return self.render()
        message_head = repr(f"{self.call_expr} returned ")
        message_tail = repr(f", expected {self.expected_expr}")
        return (
            f"_mgdbg_actual = {self.call_expr}\n"
            f"assert _mgdbg_actual == ({self.expected_expr}), "
            f"{message_head} + repr(_mgdbg_actual) + {message_tail}"
        )

    @classmethod
    def from_assertion(
        cls, text: str, target_unit: str, origin: Optional[int] = None
    ) -> "SubTestCase":
        pair = parse_assertion_line(text)
        call_expr, expected_expr = pair if pair else ("", TRUE_MARKER)
        return cls(
            target_unit=target_unit,
            call_expr=call_expr,
            expected_expr=expected_expr,
            origin_public_test=origin,
            verbatim=text.strip(),
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SubTestCase":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


@dataclass(frozen=True)
class PublicTestSet:
    tests: Tuple[str, ...]
    source: str = "dataset"

    def __post_init__(self) -> None:
        if self.source not in TEST_SOURCES:
            raise ValueError(f"unknown test source {self.source!r}")

    def __len__(self) -> int:
        return len(self.tests)

    def as_subtests(self, target_unit: str) -> List[SubTestCase]:
        return [
            SubTestCase.from_assertion(test, target_unit, origin=i)
            for i, test in enumerate(self.tests)
        ]

    def render(self) -> str:
        return "\n".join(self.tests)


def _split_assert(node: ast.Assert, source: str) -> Tuple[str, str]:
    test = node.test
    if isinstance(test, ast.Compare) and len(test.ops) == 1 and isinstance(test.ops[0], ast.Eq):
        left = ast.get_source_segment(source, test.left)
        right = ast.get_source_segment(source, test.comparators[0])
        if left is not None and right is not None:
            return left, right
    return ast.get_source_segment(source, test) or ast.unparse(test), TRUE_MARKER


def parse_assertion_line(text: str) -> Optional[Tuple[str, str]]:
    """(call_expr, expected_expr) for a single assert statement, else None."""
    source = text.strip()
    try:
        module = ast.parse(source)
    except SyntaxError:
        return None
    if len(module.body) != 1 or not isinstance(module.body[0], ast.Assert):
        return None
    return _split_assert(module.body[0], source)


def parse_assertions(reply: str) -> List[Tuple[str, str]]:
    """Assertions from the reply's last code block (or the whole reply)."""
    try:
        body = extract_code_block(reply)
    except NoCodeBlock:
        body = reply

    try:
        module = ast.parse(body)
        pairs = [_split_assert(node, body) for node in module.body if isinstance(node, ast.Assert)]
    except SyntaxError:
        pairs = []
        for line in body.splitlines():
            if line.strip().startswith("assert"):
                pair = parse_assertion_line(line)
                if pair:
                    pairs.append(pair)

    if not pairs:
        raise NoAssertionsFound("no assert statements found in reply")
    return pairs


def generate_subtests(
    tree: DecompositionTree, unit: str, t_pub: PublicTestSet, gateway: Gateway
) -> List[SubTestCase]:
    """Tests for `unit`; the root takes the public tests unchanged."""
    if unit not in tree.reachable:
        raise KeyError(unit)
    if not t_pub.tests:
        raise ValueError("public test set is empty")
    if unit == tree.root:
        return t_pub.as_subtests(unit)

    def parse(reply: str) -> List[SubTestCase]:
        pairs = [(c, e) for c, e in parse_assertions(reply) if mentions(c, unit)]
        if not pairs:
            raise NoAssertionsFound(f"no assertion calls {unit}")
        rationale = shorten(text_before_last_block(reply))
        return [
            SubTestCase(
                target_unit=unit,
                call_expr=call_expr,
                expected_expr=expected_expr,
                origin_public_test=i if i < len(t_pub.tests) else None,
                rationale=rationale,
            )
            for i, (call_expr, expected_expr) in enumerate(pairs)
        ]

    slots = {
        "full_code": flatten(tree),
        "public_test_cases": t_pub.render(),
        "function_name": unit,
    }
    try:
        cases = gateway.ask("testgen", slots, parse)
    except FormatError as e:
        raise TestGenFailed(f"could not derive tests for {unit}: {e}") from e
    logger.debug("derived %d test(s) for %s", len(cases), unit)
    return cases


class SubtestCache:
    """Derived tests per unit, regenerated only when the unit's source changes.

    A failed generation is cached as an empty list for that source so the
    unit is left to be judged through its parents.
    """

    def __init__(self) -> None:
        self._cases: Dict[Tuple[str, str], List[SubTestCase]] = {}
        self._lock = threading.Lock()
        self.failures: List[str] = []

    def get(
        self, tree: DecompositionTree, unit: str, t_pub: PublicTestSet, gateway: Gateway
    ) -> List[SubTestCase]:
        key = (unit, digest(tree.unit(unit).source))
        with self._lock:
            if key in self._cases:
                return self._cases[key]
        try:
            cases = generate_subtests(tree, unit, t_pub, gateway)
        except TestGenFailed as e:
            logger.warning(str(e))
            self.failures.append(unit)
            cases = []
        with self._lock:
            self._cases[key] = cases
        return cases

