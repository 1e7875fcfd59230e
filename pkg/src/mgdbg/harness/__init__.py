"""Benchmark campaigns: seeds in, debugging sessions and metrics out."""

import json
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Union

from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn

from mgdbg.code_model import parse_artifact
from mgdbg.debugger import DebugConfig, DebugSession, Debugger, make_run_id
from mgdbg.errors import FormatError, LLMError, MgdbgError, MissingEntryPoint, ParseError, ReplayMiss
from mgdbg.executors import SandboxPolicy, score_hidden
from mgdbg.harness.datasets import (
    CATEGORIES,
    DATASET_KINDS,
    BenchmarkProblem,
    SeedProgram,
    description_examples,
    load_benchmark,
    load_seeds,
    save_seeds,
    shipped_seeds,
)
from mgdbg.harness.metrics import (
    BUCKETS,
    MetricsSummary,
    breakpoint_accuracy,
    bucket_by_length,
    compute_metrics,
    summarize_counts,
    summary_rows,
    write_curves_csv,
    write_metrics_csv,
)
from mgdbg.llm import Backend, Gateway, LLMConfig, extract_code_block
from mgdbg.utils import console, percent

logger = logging.getLogger(__name__)

__all__ = [
    "BUCKETS",
    "CATEGORIES",
    "DATASET_KINDS",
    "BenchmarkProblem",
    "CampaignReport",
    "MetricsSummary",
    "SeedProgram",
    "aggregate",
    "audit_hidden_leaks",
    "breakpoint_accuracy",
    "bucket_by_length",
    "compare_reports",
    "compute_metrics",
    "description_examples",
    "generate_seeds",
    "load_benchmark",
    "load_seeds",
    "prepare_seeds",
    "run_campaign",
    "save_seeds",
    "shipped_seeds",
    "summarize_counts",
    "summary_rows",
]

REPORT_FILE = "campaign_report.json"
METRICS_FILE = "metrics.csv"
CURVES_FILE = "curves.csv"


@dataclass
class CampaignReport:
    strategy: str
    model_id: str
    metrics: MetricsSummary
    sessions: List[Dict[str, Any]] = field(default_factory=list)
    quarantined: Dict[str, str] = field(default_factory=dict)
    leaks: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "strategy": self.strategy,
            "model_id": self.model_id,
            "metrics": self.metrics.to_dict(),
            "sessions": self.sessions,
            "quarantined": self.quarantined,
            "leaks": self.leaks,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CampaignReport":
        return cls(
            strategy=data["strategy"],
            model_id=data.get("model_id", ""),
            metrics=MetricsSummary.from_dict(data["metrics"]),
            sessions=list(data.get("sessions", [])),
            quarantined=dict(data.get("quarantined", {})),
            leaks=list(data.get("leaks", [])),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CampaignReport":
        path = Path(path)
        if path.is_dir():
            path = path / REPORT_FILE
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def _problem_index(problems: Sequence[BenchmarkProblem]) -> Dict[str, BenchmarkProblem]:
    return {problem.task_id: problem for problem in problems}


def hidden_scorer(
    problems: Sequence[BenchmarkProblem], policy: SandboxPolicy
) -> Callable[[str, str], bool]:
    index = _problem_index(problems)

    def score(task_id: str, code: str) -> bool:
        return score_hidden(code, index[task_id].hidden_tests, policy)

    return score


def prepare_seeds(
    problems: Sequence[BenchmarkProblem], seeds: Sequence[SeedProgram], policy: SandboxPolicy
) -> List[SeedProgram]:
    """Seeds in problem order with passes_hidden filled in.

    Seeds for unknown tasks are dropped; problems without a seed are skipped.
    """
    by_task = {seed.task_id: seed for seed in seeds}
    score = hidden_scorer(problems, policy)
    prepared = []
    for problem in problems:
        seed = by_task.get(problem.task_id)
        if seed is None:
            logger.warning("no seed for %s; skipped", problem.task_id)
            continue
        passes = seed.passes_hidden
        if passes is None:
            passes = score(problem.task_id, seed.code)
        prepared.append(SeedProgram(seed.task_id, seed.code, passes))
    unknown = sorted(set(by_task) - {p.task_id for p in problems})
    if unknown:
        logger.warning("ignoring %d seed(s) for unknown tasks: %s", len(unknown), ", ".join(unknown[:5]))
    return prepared


def _normalized(text: str) -> str:
    return " ".join(text.split())


def audit_hidden_leaks(session: DebugSession, hidden_tests: Sequence[str]) -> List[str]:
    """Places where hidden test text shows up in a session's prompts or executed tests."""
    needles = [(_normalized(t), t) for t in hidden_tests if t.strip()]
    findings = []
    for number, record in enumerate(session.llm_calls):
        haystack = _normalized(f"{record.rendered_system}\n{record.rendered_user}")
        for needle, original in needles:
            if needle in haystack:
                findings.append(f"{session.problem_id}: prompt {number} ({record.template_id}) contains {original[:60]!r}")

    executed = []
    for attempt in session.attempts:
        reports = [visit.report for visit in attempt.traversal if visit.report]
        if attempt.visible_report:
            reports.append(attempt.visible_report)
        for report in reports:
            executed.extend(result.test for result in report.results)
    executed_text = {_normalized(test) for test in executed}
    for needle, original in needles:
        if needle in executed_text:
            findings.append(f"{session.problem_id}: hidden test executed while debugging: {original[:60]!r}")
    return findings


def _quarantined_session(
    problem: BenchmarkProblem, seed: SeedProgram, cfg: DebugConfig, llm_cfg: LLMConfig, error: Exception
) -> DebugSession:
    return DebugSession(
        problem_id=problem.task_id,
        seed_code=seed.code,
        entry_point=problem.entry_point,
        strategy=cfg.strategy.value,
        max_attempts=cfg.max_attempts,
        final_code=seed.code,
        quarantined=f"{type(error).__name__}: {error}",
        run_id=make_run_id(
            problem.task_id, seed.code, cfg.strategy.value, llm_cfg.model_id, llm_cfg.temperature
        ),
    )


def debug_one(
    problem: BenchmarkProblem,
    seed: SeedProgram,
    llm_cfg: LLMConfig,
    backend: Backend,
    cfg: DebugConfig,
    policy: SandboxPolicy,
) -> DebugSession:
    """One session with its own gateway; failures quarantine the problem.

    ReplayMiss is not a problem failure but a cache that does not match the
    run, so it propagates and stops the campaign.
    """
    gateway = Gateway(llm_cfg, backend)
    try:
        return Debugger(gateway, policy, cfg).debug_program(
            seed.code, problem.entry_point, problem.visible_tests, problem.task_id
        )
    except ReplayMiss:
        raise
    except Exception as e:
        logger.error("%s quarantined: %s", problem.task_id, e)
        session = _quarantined_session(problem, seed, cfg, llm_cfg, e)
        session.llm_calls = list(gateway.records)
        session.backend_errors = list(gateway.backend_errors)
        return session


def _session_row(session: DebugSession) -> Dict[str, Any]:
    return {
        "problem_id": session.problem_id,
        "run_id": session.run_id,
        "visible_fixed": session.fixed,
        "attempts": len(session.attempts),
        "decomposed": session.decomposed,
        "census": session.census(),
        "quarantined": session.quarantined,
    }


def write_report(
    output_dir: Union[str, Path],
    report: CampaignReport,
) -> None:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    with open(output_dir / REPORT_FILE, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    write_metrics_csv(output_dir / METRICS_FILE, report.metrics, report.strategy)
    write_curves_csv(output_dir / CURVES_FILE, report.metrics, report.strategy)


def run_campaign(
    problems: Sequence[BenchmarkProblem],
    seeds: Sequence[SeedProgram],
    llm_cfg: LLMConfig,
    backend: Backend,
    cfg: DebugConfig,
    policy: SandboxPolicy,
    output_dir: Union[str, Path],
    jobs: int = 1,
    show_progress: bool = False,
) -> CampaignReport:
    """Debug every buggy seed, persist the sessions and write the reports."""
    output_dir = Path(output_dir)
    index = _problem_index(problems)
    prepared = prepare_seeds(problems, seeds, policy)
    buggy = [seed for seed in prepared if not seed.passes_hidden]
    logger.info(
        "%d problem(s), %d buggy seed(s), strategy %s", len(prepared), len(buggy), cfg.strategy.value
    )

    def work(seed: SeedProgram) -> DebugSession:
        return debug_one(index[seed.task_id], seed, llm_cfg, backend, cfg, policy)

    order = {seed.task_id: position for position, seed in enumerate(buggy)}
    sessions: List[DebugSession] = []
    display = Progress(
        TextColumn("[cyan]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        console=console,
        disable=not show_progress,
    )
    pool = ThreadPoolExecutor(max_workers=max(1, jobs))
    try:
        with display:
            task = display.add_task(f"Debugging ({cfg.strategy.value})", total=len(buggy))
            futures = [pool.submit(work, seed) for seed in buggy]
            for future in as_completed(futures):
                session = future.result()
                session.save(output_dir)
                sessions.append(session)
                display.advance(task)
    except BaseException:
        # Sessions already saved stay on disk; queued problems are dropped.
        pool.shutdown(wait=False, cancel_futures=True)
        raise
    pool.shutdown()
    sessions.sort(key=lambda s: order[s.problem_id])

    report = build_report(sessions, prepared, problems, policy, cfg.strategy.value, llm_cfg.model_id, cfg.max_attempts)
    write_report(output_dir, report)
    return report


def build_report(
    sessions: Sequence[DebugSession],
    seeds: Sequence[SeedProgram],
    problems: Sequence[BenchmarkProblem],
    policy: SandboxPolicy,
    strategy: str,
    model_id: str,
    max_attempts: Optional[int] = None,
) -> CampaignReport:
    index = _problem_index(problems)
    metrics = compute_metrics(
        sessions, seeds, hidden_scorer(problems, policy), problems, max_attempts
    )
    leaks: List[str] = []
    for session in sessions:
        leaks.extend(audit_hidden_leaks(session, index[session.problem_id].hidden_tests.tests))
    for leak in leaks:
        logger.error(leak)
    return CampaignReport(
        strategy=strategy,
        model_id=model_id,
        metrics=metrics,
        sessions=[_session_row(s) for s in sorted(sessions, key=lambda s: s.problem_id)],
        quarantined={s.problem_id: s.quarantined for s in sessions if s.quarantined},
        leaks=leaks,
    )


def load_sessions(output_dir: Union[str, Path]) -> List[DebugSession]:
    root = Path(output_dir) / "sessions"
    return [DebugSession.load(path) for path in sorted(root.glob("*/*.json"))]


def aggregate(
    output_dir: Union[str, Path],
    problems: Sequence[BenchmarkProblem],
    seeds: Sequence[SeedProgram],
    policy: SandboxPolicy,
    strategy: Optional[str] = None,
) -> CampaignReport:
    """Recompute the reports of a finished campaign from its sessions tree."""
    sessions = load_sessions(output_dir)
    if strategy is not None:
        sessions = [s for s in sessions if s.strategy == strategy]
    strategies = sorted({s.strategy for s in sessions})
    if len(strategies) > 1:
        raise MgdbgError(f"sessions of several strategies found ({', '.join(strategies)}); pick one")
    model_ids = sorted({r.model_id for s in sessions for r in s.llm_calls})
    prepared = prepare_seeds(problems, seeds, policy)
    report = build_report(
        sessions,
        prepared,
        problems,
        policy,
        strategies[0] if strategies else (strategy or ""),
        model_ids[0] if model_ids else "",
        max((s.max_attempts for s in sessions), default=None),
    )
    write_report(output_dir, report)
    return report


def compare_reports(reports: Sequence[CampaignReport]) -> List[List[str]]:
    """Side-by-side rows: strategy, accuracy, gain over no debugging, RSR."""
    rows = []
    for report in reports:
        m = report.metrics
        gain = "--" if m.improvement is None else f"{m.improvement:+.1f}"
        rows.append([report.strategy, percent(m.accuracy), gain, percent(m.rsr), str(m.fixed), str(m.buggy)])
    return rows


def _defines(code: str, entry_point: str) -> bool:
    try:
        parse_artifact(code, entry_point)
    except (ParseError, MissingEntryPoint):
        return False
    return True


def generate_seeds(
    problems: Sequence[BenchmarkProblem], llm_cfg: LLMConfig, backend: Backend
) -> List[SeedProgram]:
    """First-pass solutions from the model, the programs debugging starts from."""
    seeds = []
    for problem in problems:
        gateway = Gateway(llm_cfg, backend)
        try:
            code = gateway.ask(
                "codegen", {"task": problem.prompt, "entry_point": problem.entry_point}, extract_code_block
            )
        except (FormatError, LLMError) as e:
            logger.warning("no seed generated for %s: %s", problem.task_id, e)
            code = problem.prompt
        if not _defines(code, problem.entry_point):
            # Completion-style reply: the body without the signature.
            joined = f"{problem.prompt}{code}"
            if _defines(joined, problem.entry_point):
                code = joined
        seeds.append(SeedProgram(problem.task_id, code.rstrip("\n") + "\n"))
    return seeds
