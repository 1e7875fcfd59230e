"""Bottom-up debugging over a decomposition tree, and its baseline variants.

One attempt is one full post-order traversal: every unit is evaluated on its
tests (the root on the public tests), failing units are repaired, and the
repaired unit replaces the old one before its parents are looked at. After
the traversal the flattened program is checked for real on the public tests.
"""

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, TypeVar, Union

from mgdbg.code_model import (
    DecompositionTree,
    flatten,
    parse_artifact,
    replace_unit,
    subtree_source,
)
from mgdbg.config import STRATEGIES
from mgdbg.decomposer import decompose_with_fallback
from mgdbg.errors import (
    ConfigError,
    FormatError,
    LLMError,
    MissingEntryPoint,
    ParseError,
    ReplayMiss,
    SignatureRename,
)
from mgdbg.executors import (
    ExecutionReport,
    SandboxPolicy,
    attach_traces,
    run_real,
    simulate,
)
from mgdbg.llm import Gateway, PromptRecord, extract_code_block
from mgdbg.testgen import PublicTestSet, SubTestCase, SubtestCache
from mgdbg.utils import digest, mentions

logger = logging.getLogger(__name__)

S = TypeVar("S")


class Strategy(str, Enum):
    HIERARCHICAL = "hierarchical"
    HOLISTIC_SIMPLE_FEEDBACK = "holistic_simple_feedback"
    HOLISTIC_NO_DECOMPOSITION = "holistic_no_decomposition"
    NO_SIMULATED_EXECUTION = "no_simulated_execution"
    NO_TESTGEN = "no_testgen"
    REAL_EXECUTION_TRACE = "real_execution_trace"

    @property
    def is_holistic(self) -> bool:
        return self in (Strategy.HOLISTIC_SIMPLE_FEEDBACK, Strategy.HOLISTIC_NO_DECOMPOSITION)

    @property
    def evaluation(self) -> str:
        """How units are judged: simulated, real or traced."""
        if self in (Strategy.NO_SIMULATED_EXECUTION, Strategy.HOLISTIC_SIMPLE_FEEDBACK):
            return "real"
        if self is Strategy.REAL_EXECUTION_TRACE:
            return "traced"
        return "simulated"


@dataclass(frozen=True)
class DebugConfig:
    max_attempts: int = 10
    strategy: Strategy = Strategy.HIERARCHICAL
    per_unit_fix_retries: int = 3
    strict_validation: bool = False
    redecompose_on_failure: bool = False

    def __post_init__(self) -> None:
        if self.max_attempts <= 0:
            raise ConfigError("max_attempts must be positive")
        if self.per_unit_fix_retries <= 0:
            raise ConfigError("per_unit_fix_retries must be positive")
        if not isinstance(self.strategy, Strategy):
            try:
                object.__setattr__(self, "strategy", Strategy(self.strategy))
            except ValueError as e:
                raise ConfigError(
                    f"unknown strategy {self.strategy!r}; expected one of {', '.join(STRATEGIES)}"
                ) from e

    @classmethod
    def from_config(cls, section: Mapping[str, Any]) -> "DebugConfig":
        return cls(
            max_attempts=int(section.get("max_attempts", 10)),
            strategy=section.get("strategy", Strategy.HIERARCHICAL.value),
            per_unit_fix_retries=int(section.get("per_unit_fix_retries", 3)),
            strict_validation=bool(section.get("strict_validation", False)),
            redecompose_on_failure=bool(section.get("redecompose_on_failure", False)),
        )


@dataclass
class UnitVisit:
    unit: str
    report: Optional[ExecutionReport] = None
    patch_applied: bool = False
    fixed: bool = False
    # Skipped because the unit and everything below it already passed.
    memoized: bool = False
    repair_tries: int = 0
    note: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "unit": self.unit,
            "report": self.report.to_dict() if self.report else None,
            "patch_applied": self.patch_applied,
            "fixed": self.fixed,
            "memoized": self.memoized,
            "repair_tries": self.repair_tries,
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "UnitVisit":
        report = data.get("report")
        return cls(
            unit=data["unit"],
            report=ExecutionReport.from_dict(report) if report else None,
            patch_applied=data.get("patch_applied", False),
            fixed=data.get("fixed", False),
            memoized=data.get("memoized", False),
            repair_tries=data.get("repair_tries", 0),
            note=data.get("note", ""),
        )


@dataclass
class AttemptRecord:
    attempt_index: int
    traversal: List[UnitVisit]
    visible_pass: bool
    visible_report: Optional[ExecutionReport] = None
    # Tree the traversal walked, as it was when the attempt started.
    children: Dict[str, List[str]] = field(default_factory=dict)

    @property
    def order(self) -> List[str]:
        return [visit.unit for visit in self.traversal]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "attempt_index": self.attempt_index,
            "traversal": [visit.to_dict() for visit in self.traversal],
            "visible_pass": self.visible_pass,
            "visible_report": self.visible_report.to_dict() if self.visible_report else None,
            "children": self.children,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AttemptRecord":
        report = data.get("visible_report")
        return cls(
            attempt_index=data["attempt_index"],
            traversal=[UnitVisit.from_dict(v) for v in data.get("traversal", [])],
            visible_pass=data["visible_pass"],
            visible_report=ExecutionReport.from_dict(report) if report else None,
            children={k: list(v) for k, v in data.get("children", {}).items()},
        )


def _safe_name(problem_id: str) -> str:
    return re.sub(r"[^\w.-]+", "_", problem_id).strip("_") or "problem"


@dataclass
class DebugSession:
    problem_id: str
    seed_code: str
    entry_point: str
    strategy: str
    max_attempts: int
    attempts: List[AttemptRecord] = field(default_factory=list)
    # {"children": ..., "code": ...} at the end of every attempt.
    tree_snapshots: List[Dict[str, Any]] = field(default_factory=list)
    final_code: str = ""
    fixed: bool = False
    decomposed: bool = False
    llm_calls: List[PromptRecord] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    # Requests the model backend failed to deliver.
    backend_errors: List[str] = field(default_factory=list)
    quarantined: str = ""
    run_id: str = ""

    def census(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for record in self.llm_calls:
            counts[record.template_id] = counts.get(record.template_id, 0) + 1
        return counts

    @property
    def repair_calls(self) -> int:
        census = self.census()
        return census.get("debug", 0) + census.get("simple_feedback", 0)

    def snapshot_code(self, attempt_index: int) -> str:
        """Program as it stood after `attempt_index` (1-based)."""
        return self.tree_snapshots[attempt_index - 1]["code"]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "problem_id": self.problem_id,
            "run_id": self.run_id,
            "entry_point": self.entry_point,
            "strategy": self.strategy,
            "max_attempts": self.max_attempts,
            "seed_code": self.seed_code,
            "decomposed": self.decomposed,
            "fixed": self.fixed,
            "final_code": self.final_code,
            "quarantined": self.quarantined,
            "warnings": list(self.warnings),
            "backend_errors": list(self.backend_errors),
            "census": self.census(),
            "attempts": [attempt.to_dict() for attempt in self.attempts],
            "tree_snapshots": self.tree_snapshots,
            "llm_calls": [record.to_dict() for record in self.llm_calls],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DebugSession":
        return cls(
            problem_id=data["problem_id"],
            seed_code=data["seed_code"],
            entry_point=data["entry_point"],
            strategy=data["strategy"],
            max_attempts=data["max_attempts"],
            attempts=[AttemptRecord.from_dict(a) for a in data.get("attempts", [])],
            tree_snapshots=list(data.get("tree_snapshots", [])),
            final_code=data.get("final_code", ""),
            fixed=data.get("fixed", False),
            decomposed=data.get("decomposed", False),
            llm_calls=[PromptRecord.from_dict(r) for r in data.get("llm_calls", [])],
            warnings=list(data.get("warnings", [])),
            backend_errors=list(data.get("backend_errors", [])),
            quarantined=data.get("quarantined", ""),
            run_id=data.get("run_id", ""),
        )

    def path(self, root: Union[str, Path]) -> Path:
        return Path(root) / "sessions" / _safe_name(self.problem_id) / f"{self.run_id or 'session'}.json"

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, ensure_ascii=False)
            f.write("\n")
        return path

    def save(self, root: Union[str, Path]) -> Path:
        """Write the session under ``<root>/sessions/<problem_id>/<run_id>.json``."""
        return self.write(self.path(root))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DebugSession":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def make_run_id(problem_id: str, seed_code: str, strategy: str, model_id: str, temperature: float) -> str:
    return digest(problem_id, seed_code, strategy, model_id, temperature)[:12]


@dataclass(frozen=True)
class PatchOutcome:
    unit: str
    fixed: bool
    source: str
    tries: int
    # Best-scoring candidate seen; equals the input when nothing was applied.
    state: Any = None
    report: Optional[ExecutionReport] = None
    applied: bool = False
    error: str = ""


def _failed_test_listing(report: ExecutionReport) -> str:
    lines = []
    for result in report.failures:
        line = result.test
        if result.detail:
            line += f"  # {result.verdict.value}: {result.detail.splitlines()[-1]}"
        lines.append(line)
    return "\n".join(lines)


class Debugger:
    """Runs debugging sessions for one model gateway and sandbox policy."""

    def __init__(self, gateway: Gateway, policy: SandboxPolicy, cfg: Optional[DebugConfig] = None) -> None:
        self.gateway = gateway
        self.policy = policy
        self.cfg = cfg or DebugConfig()
        self.subtests = SubtestCache()

    # Evaluation

    def _evaluate_source(
        self, unit: str, unit_source: str, context: str, program: str, tests: List[SubTestCase]
    ) -> ExecutionReport:
        mode = self.cfg.strategy.evaluation
        if mode == "simulated":
            return simulate(unit_source, context, tests, self.gateway)
        report = run_real(program, tests, self.policy)
        if mode == "traced":
            report = attach_traces(report, program, tests, self.policy)
        return report

    def _evaluate_unit(self, tree: DecompositionTree, unit: str, tests: List[SubTestCase]) -> ExecutionReport:
        return self._evaluate_source(
            unit, tree.unit(unit).source, subtree_source(tree, unit), flatten(tree), tests
        )

    def _tests_for(self, tree: DecompositionTree, unit: str, t_pub: PublicTestSet) -> List[SubTestCase]:
        if unit == tree.root:
            return t_pub.as_subtests(unit)
        try:
            return self.subtests.get(tree, unit, t_pub, self.gateway)
        except ReplayMiss:
            raise
        except LLMError as e:
            logger.warning("test generation for %s failed: %s", unit, e)
            return []

    # Repair

    def _repair(
        self,
        template_id: str,
        slots: Callable[[str, ExecutionReport], Dict[str, str]],
        source_of: Callable[[S], str],
        apply: Callable[[S, str], S],
        evaluate: Callable[[S], ExecutionReport],
        state: S,
        report: ExecutionReport,
        unit: str,
    ) -> PatchOutcome:
        """Prompt, apply and re-evaluate up to per_unit_fix_retries times.

        Keeps the candidate passing the most tests; ties go to the newest.
        """
        best_state, best_report = state, report
        applied = False
        error = ""
        tries = 0
        for tries in range(1, self.cfg.per_unit_fix_retries + 1):
            current = source_of(best_state)
            try:
                code = self.gateway.ask(template_id, slots(current, best_report), extract_code_block)
            except ReplayMiss:
                raise
            except (FormatError, LLMError) as e:
                error = str(e)
                logger.debug("repair of %s, try %d: %s", unit, tries, e)
                if isinstance(e, LLMError):
                    break
                continue
            try:
                candidate = apply(best_state, code)
            except (SignatureRename, ParseError, MissingEntryPoint, KeyError) as e:
                error = f"patch rejected: {e}"
                logger.debug("repair of %s, try %d: %s", unit, tries, error)
                continue
            if source_of(candidate) == current:
                error = "patch is identical to the current code"
                continue
            try:
                new_report = evaluate(candidate)
            except ReplayMiss:
                raise
            except (FormatError, LLMError) as e:
                error = f"re-evaluation failed: {e}"
                continue
            if new_report.pass_count >= best_report.pass_count:
                best_state, best_report = candidate, new_report
                applied = True
            if new_report.all_passed:
                return PatchOutcome(unit, True, source_of(candidate), tries, candidate, new_report, True)
        return PatchOutcome(
            unit, False, source_of(best_state), tries, best_state, best_report, applied, error
        )

    def debug_unit(
        self,
        tree: DecompositionTree,
        unit: str,
        tests: List[SubTestCase],
        report: ExecutionReport,
        evaluate: Optional[Callable[[DecompositionTree], ExecutionReport]] = None,
    ) -> PatchOutcome:
        """Repair one unit of `tree`; `state` of the outcome is the resulting tree."""
        if report.all_passed:
            raise ValueError(f"{unit} has no failing test to repair")
        evaluate = evaluate or (lambda candidate: self._evaluate_unit(candidate, unit, tests))
        return self._repair(
            "debug",
            lambda source, rep: {"function_code": source, "test_case_results": rep.format_results()},
            lambda candidate: candidate.unit(unit).source,
            lambda current, code: replace_unit(current, unit, code),
            evaluate,
            tree,
            report,
            unit,
        )

    # Sessions

    def _new_session(self, problem_id: str, code: str, entry_point: str) -> DebugSession:
        return DebugSession(
            problem_id=problem_id,
            seed_code=code,
            entry_point=entry_point,
            strategy=self.cfg.strategy.value,
            max_attempts=self.cfg.max_attempts,
            run_id=make_run_id(
                problem_id,
                code,
                self.cfg.strategy.value,
                self.gateway.cfg.model_id,
                self.gateway.cfg.temperature,
            ),
        )

    def _finish(self, session: DebugSession, final_code: str) -> DebugSession:
        session.final_code = final_code
        session.fixed = bool(session.attempts) and session.attempts[-1].visible_pass
        session.llm_calls = list(self.gateway.records)
        session.backend_errors = list(self.gateway.backend_errors)
        return session

    def _visible(self, code: str, entry_point: str, t_pub: PublicTestSet) -> ExecutionReport:
        return run_real(code, t_pub.as_subtests(entry_point), self.policy)

    def debug_tree(
        self,
        tree: DecompositionTree,
        t_pub: PublicTestSet,
        problem_id: str = "",
        seed_code: Optional[str] = None,
        session: Optional[DebugSession] = None,
    ) -> DebugSession:
        """Bottom-up recursive debugging of `tree` against the public tests."""
        if not t_pub.tests:
            raise ValueError("public test set is empty")
        if session is None:
            session = self._new_session(problem_id, seed_code or flatten(tree), tree.root)
            session.warnings.extend(tree.warnings)
        # unit -> digest of its source and everything below it, when it last passed
        verified: Dict[str, str] = {}
        visits: List[UnitVisit] = []
        traversed = tree

        for attempt_index in range(1, self.cfg.max_attempts + 1):
            children = {name: list(kids) for name, kids in tree.children.items()}
            visits, tree = self._traverse(tree, t_pub, verified)
            traversed = tree

            visible = self._visible(flatten(tree), tree.root, t_pub)
            session.attempts.append(
                AttemptRecord(attempt_index, visits, visible.all_passed, visible, children)
            )
            session.tree_snapshots.append(
                {"children": {k: list(v) for k, v in tree.children.items()}, "code": flatten(tree)}
            )
            logger.info(
                "%s attempt %d: %d/%d visible tests pass",
                problem_id or tree.root,
                attempt_index,
                visible.pass_count,
                len(visible.results),
            )
            if visible.all_passed:
                break
            if self.cfg.redecompose_on_failure and attempt_index < self.cfg.max_attempts:
                result = decompose_with_fallback(
                    flatten(tree),
                    tree.root,
                    t_pub,
                    self.gateway,
                    self.policy,
                    strict=self.cfg.strict_validation,
                )
                tree = result.tree
                session.warnings.extend(result.warnings)
                verified.clear()

        # Judged on the final traversal only.
        self._note_inconsistent_tests(session, traversed, visits)
        return self._finish(session, flatten(tree))

    def _traverse(
        self, tree: DecompositionTree, t_pub: PublicTestSet, verified: Dict[str, str]
    ) -> Tuple[List[UnitVisit], DecompositionTree]:
        if self.cfg.strategy is Strategy.NO_TESTGEN:
            return self._traverse_root_only(tree, t_pub)

        visits: List[UnitVisit] = []
        for unit in tree.post_order():
            if unit not in tree.reachable:
                continue
            key = digest(*(tree.unit(name).source for name in tree.post_order(unit)))
            if unit != tree.root and verified.get(unit) == key:
                visits.append(UnitVisit(unit, memoized=True))
                continue

            tests = self._tests_for(tree, unit, t_pub)
            if not tests:
                visits.append(UnitVisit(unit, note="no derived tests; judged through its parents"))
                continue
            try:
                report = self._evaluate_unit(tree, unit, tests)
            except ReplayMiss:
                raise
            except (FormatError, LLMError) as e:
                visits.append(UnitVisit(unit, note=f"evaluation failed: {e}"))
                continue

            if report.all_passed:
                verified[unit] = key
                visits.append(UnitVisit(unit, report))
                continue

            outcome = self.debug_unit(tree, unit, tests, report)
            tree = outcome.state
            visits.append(
                UnitVisit(unit, report, outcome.applied, outcome.fixed, False, outcome.tries, outcome.error)
            )
            if outcome.fixed:
                verified[unit] = digest(*(tree.unit(name).source for name in tree.post_order(unit)))
        return visits, tree

    def _traverse_root_only(
        self, tree: DecompositionTree, t_pub: PublicTestSet
    ) -> Tuple[List[UnitVisit], DecompositionTree]:
        """Judge only the root; repair the unit its failures point at."""
        root = tree.root
        tests = t_pub.as_subtests(root)
        try:
            report = self._evaluate_unit(tree, root, tests)
        except ReplayMiss:
            raise
        except (FormatError, LLMError) as e:
            return [UnitVisit(root, note=f"evaluation failed: {e}")], tree
        if report.all_passed:
            return [UnitVisit(root, report)], tree

        target = implicated_unit(tree, report)
        outcome = self.debug_unit(
            tree, target, tests, report, lambda candidate: self._evaluate_unit(candidate, root, tests)
        )
        visits = [UnitVisit(root, report)]
        note = "" if target == root else f"implicated by failures of {root}"
        if outcome.error:
            note = f"{note}; {outcome.error}" if note else outcome.error
        if target == root:
            visits[0] = UnitVisit(root, report, outcome.applied, outcome.fixed, False, outcome.tries, note)
        else:
            visits.append(UnitVisit(target, report, outcome.applied, outcome.fixed, False, outcome.tries, note))
        return visits, outcome.state

    def _note_inconsistent_tests(
        self, session: DebugSession, tree: DecompositionTree, visits: List[UnitVisit]
    ) -> None:
        passed = {v.unit for v in visits if v.memoized or v.fixed or (v.report and v.report.all_passed)}
        for visit in visits:
            if visit.report is None or visit.fixed or visit.report.all_passed:
                continue
            parents = [p for p in tree.parents(visit.unit) if p in tree.reachable]
            if parents and all(p in passed for p in parents):
                message = (
                    f"derived tests for {visit.unit} still fail while {', '.join(parents)} pass; "
                    "treating them as unreliable"
                )
                logger.warning(message)
                session.warnings.append(message)

    def debug_holistic(
        self,
        code: str,
        entry_point: str,
        t_pub: PublicTestSet,
        problem_id: str = "",
        session: Optional[DebugSession] = None,
    ) -> DebugSession:
        """Debug the whole program as a single unit.

        holistic_simple_feedback only says the code is wrong and lists the
        failing public tests; every other strategy uses the debug prompt
        with its own evaluation mode on the whole program.
        """
        if not t_pub.tests:
            raise ValueError("public test set is empty")
        session = session or self._new_session(problem_id, code, entry_point)
        tests = t_pub.as_subtests(entry_point)
        simple = self.cfg.strategy is Strategy.HOLISTIC_SIMPLE_FEEDBACK

        def evaluate(candidate: str) -> ExecutionReport:
            return self._evaluate_source(entry_point, candidate, "", candidate, tests)

        def apply(_: str, patch: str) -> str:
            parse_artifact(patch, entry_point)
            return patch.rstrip("\n") + "\n"

        if simple:
            template_id = "simple_feedback"

            def slots(source: str, report: ExecutionReport) -> Dict[str, str]:
                return {"code": source, "failed_tests": _failed_test_listing(report)}

        else:
            template_id = "debug"

            def slots(source: str, report: ExecutionReport) -> Dict[str, str]:
                return {"function_code": source, "test_case_results": report.format_results()}

        for attempt_index in range(1, self.cfg.max_attempts + 1):
            visit = UnitVisit(entry_point)
            try:
                report = evaluate(code)
            except ReplayMiss:
                raise
            except (FormatError, LLMError) as e:
                report = None
                visit.note = f"evaluation failed: {e}"
            if report is not None:
                visit.report = report
                if not report.all_passed:
                    outcome = self._repair(template_id, slots, lambda s: s, apply, evaluate, code, report, entry_point)
                    code = outcome.state
                    visit.patch_applied, visit.fixed = outcome.applied, outcome.fixed
                    visit.repair_tries, visit.note = outcome.tries, outcome.error

            visible = self._visible(code, entry_point, t_pub)
            session.attempts.append(AttemptRecord(attempt_index, [visit], visible.all_passed, visible))
            session.tree_snapshots.append({"children": {entry_point: []}, "code": code})
            if visible.all_passed:
                break

        return self._finish(session, code)

    def debug_program(
        self, code: str, entry_point: str, t_pub: PublicTestSet, problem_id: str = ""
    ) -> DebugSession:
        """Debug `code` with the configured strategy."""
        if not t_pub.tests:
            raise ValueError("public test set is empty")
        session = self._new_session(problem_id, code, entry_point)

        seed_report = self._visible(code, entry_point, t_pub)
        if seed_report.all_passed:
            logger.info("%s already passes its public tests", problem_id or entry_point)
            session.attempts.append(AttemptRecord(1, [], True, seed_report))
            session.tree_snapshots.append({"children": {}, "code": code})
            return self._finish(session, code)

        if self.cfg.strategy.is_holistic:
            return self.debug_holistic(code, entry_point, t_pub, problem_id, session)

        try:
            result = decompose_with_fallback(
                code, entry_point, t_pub, self.gateway, self.policy, strict=self.cfg.strict_validation
            )
        except (ParseError, MissingEntryPoint) as e:
            message = f"seed cannot be split into units ({e}); debugging it whole"
            logger.warning(message)
            session.warnings.append(message)
            return self.debug_holistic(code, entry_point, t_pub, problem_id, session)

        session.decomposed = result.decomposed
        session.warnings.extend(result.warnings)
        return self.debug_tree(result.tree, t_pub, problem_id, code, session)


def implicated_unit(tree: DecompositionTree, report: ExecutionReport) -> str:
    """The deepest unit named in the failure details, else the root."""
    text = "\n".join(f"{r.detail}\n{r.trace}" for r in report.failures) + "\n" + report.narrative
    for unit in tree.post_order():
        if unit != tree.root and mentions(text, unit):
            return unit
    return tree.root


def strategy_dispatch(
    code: str,
    entry_point: str,
    t_pub: PublicTestSet,
    gateway: Gateway,
    policy: SandboxPolicy,
    cfg: DebugConfig,
    problem_id: str = "",
) -> DebugSession:
    return Debugger(gateway, policy, cfg).debug_program(code, entry_point, t_pub, problem_id)
