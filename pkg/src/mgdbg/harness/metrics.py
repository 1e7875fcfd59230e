"""Accuracy, repair success rate and their breakdowns."""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Union

from mgdbg.debugger import DebugSession
from mgdbg.harness.datasets import CATEGORIES, BenchmarkProblem, SeedProgram
from mgdbg.utils import count_tokens, percent, ratio

logger = logging.getLogger(__name__)

BUCKETS = ("short", "medium", "long")

HiddenScorer = Callable[[str, str], bool]


@dataclass
class MetricsSummary:
    total: int
    seed_correct: int
    fixed: int
    per_attempt_cumulative_rsr: List[float] = field(default_factory=list)
    # group -> {"buggy": n, "fixed": n, "rsr": ratio or None}
    per_category: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    per_length_bucket: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    @property
    def buggy(self) -> int:
        return self.total - self.seed_correct

    @property
    def accuracy(self) -> Optional[float]:
        return ratio(self.seed_correct + self.fixed, self.total)

    @property
    def rsr(self) -> Optional[float]:
        return ratio(self.fixed, self.buggy)

    @property
    def seed_accuracy(self) -> Optional[float]:
        return ratio(self.seed_correct, self.total)

    @property
    def improvement(self) -> Optional[float]:
        """Accuracy gain over the undebugged seeds, in percentage points."""
        if self.accuracy is None or self.seed_accuracy is None:
            return None
        return (self.accuracy - self.seed_accuracy) * 100

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.update(
            buggy=self.buggy,
            accuracy=self.accuracy,
            rsr=self.rsr,
            seed_accuracy=self.seed_accuracy,
            improvement=self.improvement,
        )
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MetricsSummary":
        return cls(
            total=data["total"],
            seed_correct=data["seed_correct"],
            fixed=data["fixed"],
            per_attempt_cumulative_rsr=list(data.get("per_attempt_cumulative_rsr", [])),
            per_category=dict(data.get("per_category", {})),
            per_length_bucket=dict(data.get("per_length_bucket", {})),
        )


def summarize_counts(total: int, seed_correct: int, fixed: int) -> MetricsSummary:
    if not 0 <= seed_correct <= total:
        raise ValueError("seed_correct must lie within [0, total]")
    if not 0 <= fixed <= total - seed_correct:
        raise ValueError("fixed cannot exceed the number of buggy seeds")
    return MetricsSummary(total=total, seed_correct=seed_correct, fixed=fixed)


def breakpoint_accuracy(matched: int, total: int) -> Optional[float]:
    """Share of checkpoints whose simulated state matched the real one (389/413 ~ 94.2%)."""
    return ratio(matched, total)


def bucket_by_length(
    seeds: Sequence[SeedProgram], problems: Optional[Sequence[BenchmarkProblem]] = None
) -> Dict[str, str]:
    """task_id -> short/medium/long split at the 1/3 and 2/3 length quantiles.

    A length equal to a cut point goes to the lower bucket.
    """
    wanted = {p.task_id for p in problems} if problems is not None else None
    lengths = {
        s.task_id: count_tokens(s.code) for s in seeds if wanted is None or s.task_id in wanted
    }
    if not lengths:
        return {}
    ordered = sorted(lengths.values())
    n = len(ordered)
    first_cut = ordered[math.ceil(n / 3) - 1]
    second_cut = ordered[math.ceil(2 * n / 3) - 1]
    if first_cut == second_cut == ordered[-1]:
        logger.warning("all %d seed lengths tie at the cut points; every seed is 'short'", n)

    buckets = {}
    for task_id, length in lengths.items():
        if length <= first_cut:
            buckets[task_id] = "short"
        elif length <= second_cut:
            buckets[task_id] = "medium"
        else:
            buckets[task_id] = "long"
    return buckets


def _group_rates(
    groups: Mapping[str, str], fixed: Mapping[str, bool], order: Sequence[str]
) -> Dict[str, Dict[str, Any]]:
    table: Dict[str, Dict[str, Any]] = {}
    for name in [*order, *sorted(set(groups.values()) - set(order))]:
        members = [task for task, group in groups.items() if group == name]
        if not members:
            continue
        n_fixed = sum(1 for task in members if fixed.get(task))
        table[name] = {"buggy": len(members), "fixed": n_fixed, "rsr": ratio(n_fixed, len(members))}
    return table


def compute_metrics(
    sessions: Sequence[DebugSession],
    seeds: Sequence[SeedProgram],
    hidden_scorer: HiddenScorer,
    problems: Optional[Sequence[BenchmarkProblem]] = None,
    max_attempts: Optional[int] = None,
) -> MetricsSummary:
    """Score final programs on the hidden tests and aggregate.

    Attempt snapshots of fixed sessions are scored after the fact to place
    each fix on the cumulative curve; none of this reaches the debugger.
    Buggy seeds without a session count as unfixed.
    """
    total = len(seeds)
    buggy_ids = [s.task_id for s in seeds if not s.passes_hidden]
    seed_correct = total - len(buggy_ids)
    by_task = {session.problem_id: session for session in sessions}

    fixed_map: Dict[str, bool] = {}
    first_fix: Dict[str, int] = {}
    for task_id in buggy_ids:
        session = by_task.get(task_id)
        if session is None or session.quarantined:
            fixed_map[task_id] = False
            continue
        passed = hidden_scorer(task_id, session.final_code)
        fixed_map[task_id] = passed
        if not passed:
            continue
        scored: Dict[str, bool] = {session.final_code: True}
        first_fix[task_id] = len(session.tree_snapshots) or 1
        for index, snapshot in enumerate(session.tree_snapshots, start=1):
            code = snapshot["code"]
            if code not in scored:
                scored[code] = hidden_scorer(task_id, code)
            if scored[code]:
                first_fix[task_id] = index
                break

    attempts = max_attempts or max([s.max_attempts for s in sessions] or [1])
    buggy = len(buggy_ids)
    curve = [
        (sum(1 for k in first_fix.values() if k <= attempt) / buggy) if buggy else 0.0
        for attempt in range(1, attempts + 1)
    ]

    per_category: Dict[str, Dict[str, Any]] = {}
    if problems is not None:
        categories = {p.task_id: p.category for p in problems if p.category and p.task_id in fixed_map}
        if categories:
            per_category = _group_rates(categories, fixed_map, CATEGORIES)

    buckets = bucket_by_length([s for s in seeds if s.task_id in fixed_map])
    return MetricsSummary(
        total=total,
        seed_correct=seed_correct,
        fixed=sum(fixed_map.values()),
        per_attempt_cumulative_rsr=curve,
        per_category=per_category,
        per_length_bucket=_group_rates(buckets, fixed_map, BUCKETS),
    )


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


def write_metrics_csv(path: Union[str, Path], summary: MetricsSummary, strategy: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["strategy", "scope", "group", "total", "buggy", "fixed", "accuracy", "rsr"])
        writer.writerow(
            [strategy, "overall", "all", summary.total, summary.buggy, summary.fixed,
             _fmt(summary.accuracy), _fmt(summary.rsr)]
        )
        writer.writerow(
            [strategy, "overall", "no_debugging", summary.total, summary.buggy, 0,
             _fmt(summary.seed_accuracy), ""]
        )
        for scope, table in (("category", summary.per_category), ("length", summary.per_length_bucket)):
            for group, row in table.items():
                writer.writerow(
                    [strategy, scope, group, "", row["buggy"], row["fixed"], "", _fmt(row["rsr"])]
                )


def write_curves_csv(path: Union[str, Path], summary: MetricsSummary, strategy: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["strategy", "attempt", "cumulative_rsr"])
        for attempt, value in enumerate(summary.per_attempt_cumulative_rsr, start=1):
            writer.writerow([strategy, attempt, _fmt(value)])


def summary_rows(summary: MetricsSummary) -> List[List[str]]:
    """Rows for the rich summary table."""
    return [
        ["Problems", str(summary.total)],
        ["Correct seeds", str(summary.seed_correct)],
        ["Buggy seeds", str(summary.buggy)],
        ["Fixed", str(summary.fixed)],
        ["No-debugging accuracy (%)", percent(summary.seed_accuracy)],
        ["Accuracy (%)", percent(summary.accuracy)],
        ["Improvement (pts)", "--" if summary.improvement is None else f"+{summary.improvement:.1f}"],
        ["RSR (%)", percent(summary.rsr)],
    ]
