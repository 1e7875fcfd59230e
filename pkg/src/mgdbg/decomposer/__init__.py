"""Model-guided decomposition of a subject program into subfunctions."""

import ast
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from mgdbg.code_model import (
    DecompositionTree,
    build_tree,
    flatten,
    merge_statements,
    parse_artifact,
    with_preamble,
)
from mgdbg.errors import (
    DecompositionFailed,
    DecompositionRejected,
    FormatError,
    LLMError,
    MissingEntryPoint,
    ParseError,
    ReplayMiss,
)
from mgdbg.executors import SandboxPolicy, run_real
from mgdbg.llm import Gateway, extract_code_block
from mgdbg.testgen import PublicTestSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ValidationVerdict:
    equivalent: bool
    fatal: bool = False
    # Visible test indices whose outcome class differs.
    mismatches: Tuple[int, ...] = ()
    warnings: Tuple[str, ...] = ()
    accepted: bool = True


@dataclass(frozen=True)
class DecompositionResult:
    tree: DecompositionTree
    decomposed: bool
    verdict: Optional[ValidationVerdict] = None
    warnings: Tuple[str, ...] = field(default=())


def _statements(source: str) -> List[str]:
    try:
        module = ast.parse(source)
    except SyntaxError:
        return [line for line in source.splitlines() if line.strip()]
    return [ast.get_source_segment(source, node) or "" for node in module.body]


def decompose(code: str, entry_point: str, gateway: Gateway) -> DecompositionTree:
    """Ask the model to rewrite `code` as a tree of subfunctions.

    The entry point must keep its name and parameter list; replies that
    change it are re-requested like any other malformed reply.
    """
    original = parse_artifact(code, entry_point)
    signature = original.unit(entry_point).signature

    def parse(reply: str) -> DecompositionTree:
        block = extract_code_block(reply)
        try:
            artifact = parse_artifact(block, entry_point)
        except (ParseError, MissingEntryPoint) as e:
            raise DecompositionRejected(str(e)) from e
        found = artifact.unit(entry_point).signature
        if found != signature:
            raise DecompositionRejected(
                f"{entry_point} signature changed from ({signature}) to ({found})"
            )
        preamble = merge_statements(original.preamble, _statements(artifact.preamble))
        if preamble != artifact.preamble:
            artifact = with_preamble(artifact, preamble)
        return build_tree(artifact)

    try:
        tree = gateway.ask("decompose", {"code": code}, parse)
    except FormatError as e:
        raise DecompositionFailed(f"decomposition of {entry_point} failed: {e}") from e
    logger.info(
        "decomposed %s into %d unit(s), depth %d", entry_point, len(tree.reachable), tree.depth()
    )
    return tree


def validate_decomposition(
    tree: DecompositionTree,
    original: str,
    visible_tests: PublicTestSet,
    policy: SandboxPolicy,
    strict: bool = False,
) -> ValidationVerdict:
    """Compare the decomposed program with the original on the visible tests."""
    flat = flatten(tree)
    try:
        ast.parse(flat)
    except SyntaxError as e:
        return ValidationVerdict(
            equivalent=False,
            fatal=True,
            warnings=(f"decomposed program does not parse: line {e.lineno}: {e.msg}",),
            accepted=False,
        )

    tests = visible_tests.as_subtests(tree.root)
    before = run_real(original, tests, policy)
    after = run_real(flat, tests, policy)

    mismatches = []
    warnings = []
    for old, new in zip(before.results, after.results):
        if old.verdict != new.verdict:
            mismatches.append(old.test_index)
            warnings.append(
                f"visible test {old.test_index} was {old.verdict.value}, "
                f"is {new.verdict.value} after decomposition"
            )
    for warning in warnings:
        logger.warning(warning)
    equivalent = not mismatches
    return ValidationVerdict(
        equivalent=equivalent,
        fatal=False,
        mismatches=tuple(mismatches),
        warnings=tuple(warnings),
        accepted=equivalent or not strict,
    )


def natural_tree(code: str, entry_point: str) -> DecompositionTree:
    """The program's own call structure, used when decomposition is not possible."""
    return build_tree(parse_artifact(code, entry_point))


def decompose_with_fallback(
    code: str,
    entry_point: str,
    visible_tests: PublicTestSet,
    gateway: Gateway,
    policy: SandboxPolicy,
    strict: bool = False,
) -> DecompositionResult:
    """Decompose and validate; any failure yields the natural tree of `code`.

    Raises ParseError or MissingEntryPoint only when `code` itself is unusable.
    """
    fallback = natural_tree(code, entry_point)
    try:
        tree = decompose(code, entry_point, gateway)
    except ReplayMiss:
        raise
    except (DecompositionFailed, LLMError) as e:
        logger.warning("%s; debugging the original structure", e)
        return DecompositionResult(fallback, decomposed=False, warnings=(str(e),))

    verdict = validate_decomposition(tree, code, visible_tests, policy, strict=strict)
    if not verdict.accepted:
        reason = "decomposition rejected: " + "; ".join(verdict.warnings)
        logger.warning(reason)
        return DecompositionResult(
            fallback, decomposed=False, verdict=verdict, warnings=(*tree.warnings, reason)
        )
    return DecompositionResult(
        tree, decomposed=True, verdict=verdict, warnings=(*tree.warnings, *verdict.warnings)
    )
