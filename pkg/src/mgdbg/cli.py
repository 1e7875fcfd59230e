"""CLI for mgdbg."""

import pathlib
from typing import Any, Dict, List, NoReturn, Optional

import typer
from rich.console import Console
from rich.table import Table

from mgdbg.config import (
    STRATEGIES,
    ensure_config_exists,
    get_cache_dir,
    get_config,
    get_debug_config,
    get_llm_config,
    get_runs_dir,
    get_sandbox_config,
)
from mgdbg.debugger import DebugConfig, Debugger
from mgdbg.errors import MgdbgError
from mgdbg.executors import SandboxPolicy
from mgdbg.harness import (
    DATASET_KINDS,
    CampaignReport,
    aggregate,
    compare_reports,
    generate_seeds,
    load_benchmark,
    load_seeds,
    run_campaign,
    save_seeds,
    shipped_seeds,
    summary_rows,
)
from mgdbg.llm import Gateway, LLMConfig, make_backend
from mgdbg.testgen import PublicTestSet
from mgdbg.utils import setup_logging

app = typer.Typer(
    name="mgdbg",
    help="mgdbg - hierarchical LLM debugger for Python programs",
    no_args_is_help=True,
    add_completion=False,
)

console = Console()

EXIT_FIXED = 0
EXIT_ERROR = 1
EXIT_UNFIXED = 2

_state: Dict[str, Any] = {"config": None}


@app.callback()
def app_callback(
    ctx: typer.Context,
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Show debug logging"),
    config_path: Optional[pathlib.Path] = typer.Option(
        None, "--config", help="Configuration file to use instead of ~/.mgdbg/config.toml"
    ),
):
    """mgdbg - hierarchical LLM debugger

Debugs Python programs bottom-up over a tree of subfunctions, and runs
benchmark campaigns over HumanEval, MBPP and HumanEvalFix."""
    setup_logging(verbose)
    if config_path is None:
        ensure_config_exists()
    _state["config"] = get_config(str(config_path) if config_path else None)


def _config() -> Dict[str, Any]:
    if _state["config"] is None:
        _state["config"] = get_config()
    return _state["config"]


def _fail(message: str) -> NoReturn:
    console.print(f"[red]Error: {message}[/red]")
    raise typer.Exit(EXIT_ERROR)


def _llm_config(model: Optional[str], endpoint: Optional[str], temperature: Optional[float]) -> LLMConfig:
    section = get_llm_config(_config())
    if model:
        section["model"] = model
    if endpoint:
        section["endpoint"] = endpoint
    if temperature is not None:
        section["temperature"] = temperature
    return LLMConfig.from_config(section)


def _debug_config(strategy: Optional[str], max_attempts: Optional[int]) -> DebugConfig:
    section = get_debug_config(_config())
    if strategy:
        section["strategy"] = strategy
    if max_attempts is not None:
        section["max_attempts"] = max_attempts
    return DebugConfig.from_config(section)


def _policy(timeout: Optional[float]) -> SandboxPolicy:
    section = get_sandbox_config(_config())
    if timeout is not None:
        section["timeout_per_test"] = timeout
    return SandboxPolicy.from_config(section)


def _backend(kind: str, cache: Optional[pathlib.Path], record: Optional[pathlib.Path], llm_cfg: LLMConfig):
    if kind == "replay":
        if cache is None:
            _fail("--cache is required with --backend replay")
        return make_backend("replay", cache)
    if kind == "stub":
        # Offline dry run: every request fails and problems end up unfixed.
        return make_backend("stub", record, script=[])
    if kind == "live":
        return make_backend("live", record, cfg=llm_cfg)
    _fail(f"unknown backend {kind!r}; expected live, replay or stub")


def _read_tests(path: pathlib.Path) -> PublicTestSet:
    lines = [line.rstrip() for line in path.read_text(encoding="utf-8").splitlines()]
    tests = tuple(line for line in lines if line.strip() and not line.lstrip().startswith("#"))
    if not tests:
        _fail(f"no tests found in {path}")
    return PublicTestSet(tests, source="user")


def _print_metrics(report: CampaignReport) -> None:
    table = Table(show_header=True, header_style="bold", title=f"Strategy: {report.strategy}")
    table.add_column("Metric")
    table.add_column("Value", justify="right")
    for name, value in summary_rows(report.metrics):
        table.add_row(name, value)
    console.print(table)

    for title, rows in (("Bug category", report.metrics.per_category), ("Code length", report.metrics.per_length_bucket)):
        if not rows:
            continue
        breakdown = Table(show_header=True, header_style="bold")
        breakdown.add_column(title)
        breakdown.add_column("Buggy", justify="right")
        breakdown.add_column("Fixed", justify="right")
        breakdown.add_column("RSR (%)", justify="right")
        for group, row in rows.items():
            rsr = "--" if row["rsr"] is None else f"{row['rsr'] * 100:.1f}"
            breakdown.add_row(group, str(row["buggy"]), str(row["fixed"]), rsr)
        console.print(breakdown)

    if report.quarantined:
        console.print(f"[yellow]{len(report.quarantined)} problem(s) quarantined (counted unfixed)[/yellow]")
    if report.leaks:
        console.print(f"[red]Hidden test leak audit found {len(report.leaks)} issue(s)[/red]")


@app.command("debug")
def debug_cmd(
    code: pathlib.Path = typer.Option(..., "--code", help="Python file with the program to debug"),
    tests: pathlib.Path = typer.Option(..., "--tests", help="File with one assert statement per line"),
    entry: str = typer.Option(..., "--entry", help="Name of the program's main function"),
    out: Optional[pathlib.Path] = typer.Option(None, "--out", "-o", help="Where to write the debugged program"),
    strategy: Optional[str] = typer.Option(None, "--strategy", "-s", help=f"One of: {', '.join(STRATEGIES)}"),
    backend: str = typer.Option("live", "--backend", "-b", help="live, replay or stub"),
    cache: Optional[pathlib.Path] = typer.Option(None, "--cache", help="Recorded responses for --backend replay"),
    record: Optional[pathlib.Path] = typer.Option(None, "--record", help="Append every exchange to this cache file"),
    max_attempts: Optional[int] = typer.Option(None, "--max-attempts", help="Bottom-up traversals to try"),
    model: Optional[str] = typer.Option(None, "--model", help="Model id to request"),
    endpoint: Optional[str] = typer.Option(None, "--endpoint", help="OpenAI-compatible base URL"),
    temperature: Optional[float] = typer.Option(None, "--temperature", help="Sampling temperature"),
    timeout: Optional[float] = typer.Option(None, "--timeout", help="Seconds allowed per test run"),
):
    """Debug one program against its visible tests.

    Exit status: 0 when the visible tests pass, 2 when they still fail,
    1 on operational errors, including a model backend that failed to
    answer.

    Example:
      mgdbg debug --code buggy.py --tests tests.txt --entry solve --out fixed.py
    """
    try:
        source = code.read_text(encoding="utf-8")
        t_pub = _read_tests(tests)
        llm_cfg = _llm_config(model, endpoint, temperature)
        cfg = _debug_config(strategy, max_attempts)
        policy = _policy(timeout)
        policy.interpreter()
        gateway = Gateway(llm_cfg, _backend(backend, cache, record, llm_cfg))
        session = Debugger(gateway, policy, cfg).debug_program(source, entry, t_pub, code.stem)
    except (MgdbgError, OSError, ValueError) as e:
        _fail(str(e))

    out = out or code.with_name(f"{code.stem}.fixed.py")
    out.write_text(session.final_code, encoding="utf-8")
    session.write(out.with_name(f"{out.stem}.session.json"))
    if session.backend_errors and not session.fixed:
        _fail(f"model backend unreachable: {session.backend_errors[-1]}")

    census = ", ".join(f"{k}={v}" for k, v in sorted(session.census().items())) or "none"
    console.print(f"[cyan]Attempts:[/cyan] {len(session.attempts)}  [cyan]LLM calls:[/cyan] {census}")
    for warning in session.warnings:
        console.print(f"[yellow]{warning}[/yellow]")
    if session.fixed:
        console.print(f"[bold green]Visible tests pass.[/bold green] Program written to {out}")
        raise typer.Exit(EXIT_FIXED)
    console.print(f"[yellow]Visible tests still fail after {len(session.attempts)} attempt(s).[/yellow] Best effort written to {out}")
    raise typer.Exit(EXIT_UNFIXED)


def _campaign(
    dataset: pathlib.Path,
    kind: str,
    seeds: Optional[pathlib.Path],
    strategy: Optional[str],
    backend: str,
    cache: Optional[pathlib.Path],
    record: Optional[pathlib.Path],
    max_attempts: Optional[int],
    jobs: int,
    output: Optional[pathlib.Path],
    model: Optional[str],
    endpoint: Optional[str],
    temperature: Optional[float],
    timeout: Optional[float],
) -> CampaignReport:
    if kind not in DATASET_KINDS:
        _fail(f"unknown dataset kind {kind!r}; expected one of {', '.join(DATASET_KINDS)}")
    problems = load_benchmark(dataset, kind)
    seed_programs = load_seeds(seeds) if seeds else shipped_seeds(problems)
    if not seed_programs:
        _fail("no seeds: pass --seeds (only humanevalfix ships its own buggy programs)")
    llm_cfg = _llm_config(model, endpoint, temperature)
    cfg = _debug_config(strategy, max_attempts)
    policy = _policy(timeout)
    policy.interpreter()
    output = output or get_runs_dir(_config()) / f"{dataset.stem}-{cfg.strategy.value}"
    return run_campaign(
        problems,
        seed_programs,
        llm_cfg,
        _backend(backend, cache, record, llm_cfg),
        cfg,
        policy,
        output,
        jobs=jobs,
        show_progress=True,
    )


@app.command("bench")
def bench_cmd(
    dataset: pathlib.Path = typer.Option(..., "--dataset", help="Benchmark JSON-lines file"),
    kind: str = typer.Option(..., "--kind", help=f"One of: {', '.join(DATASET_KINDS)}"),
    seeds: Optional[pathlib.Path] = typer.Option(None, "--seeds", help="Seed programs, JSON lines {task_id, code}"),
    strategy: Optional[str] = typer.Option(None, "--strategy", "-s", help=f"One of: {', '.join(STRATEGIES)}"),
    backend: str = typer.Option("live", "--backend", "-b", help="live, replay or stub"),
    cache: Optional[pathlib.Path] = typer.Option(None, "--cache", help="Recorded responses for --backend replay"),
    record: Optional[pathlib.Path] = typer.Option(None, "--record", help="Append every exchange to this cache file"),
    max_attempts: Optional[int] = typer.Option(None, "--max-attempts", help="Bottom-up traversals per problem"),
    jobs: int = typer.Option(1, "--jobs", "-j", help="Problems debugged in parallel"),
    output: Optional[pathlib.Path] = typer.Option(None, "--output", "-o", help="Report directory"),
    model: Optional[str] = typer.Option(None, "--model", help="Model id to request"),
    endpoint: Optional[str] = typer.Option(None, "--endpoint", help="OpenAI-compatible base URL"),
    temperature: Optional[float] = typer.Option(None, "--temperature", help="Sampling temperature"),
    timeout: Optional[float] = typer.Option(None, "--timeout", help="Seconds allowed per test run"),
):
    """Run a debugging campaign over a benchmark.

    Writes campaign_report.json, metrics.csv, curves.csv and sessions/ to
    the output directory. Problems that fail operationally are counted as
    unfixed.

    Example:
      mgdbg bench --dataset HumanEval.jsonl --kind humaneval --seeds seeds.jsonl --backend replay --cache cache.jsonl
    """
    try:
        report = _campaign(
            dataset, kind, seeds, strategy, backend, cache, record, max_attempts, jobs, output,
            model, endpoint, temperature, timeout,
        )
    except KeyboardInterrupt:
        console.print("[yellow]Interrupted; finished sessions were saved.[/yellow]")
        raise typer.Exit(EXIT_ERROR)
    except (MgdbgError, OSError, ValueError) as e:
        _fail(str(e))
    _print_metrics(report)


@app.command("record")
def record_cmd(
    dataset: pathlib.Path = typer.Option(..., "--dataset", help="Benchmark JSON-lines file"),
    kind: str = typer.Option(..., "--kind", help=f"One of: {', '.join(DATASET_KINDS)}"),
    seeds: Optional[pathlib.Path] = typer.Option(None, "--seeds", help="Seed programs, JSON lines {task_id, code}"),
    record: Optional[pathlib.Path] = typer.Option(None, "--record", help="Cache file to append to"),
    strategy: Optional[str] = typer.Option(None, "--strategy", "-s", help=f"One of: {', '.join(STRATEGIES)}"),
    max_attempts: Optional[int] = typer.Option(None, "--max-attempts", help="Bottom-up traversals per problem"),
    jobs: int = typer.Option(1, "--jobs", "-j", help="Problems debugged in parallel"),
    output: Optional[pathlib.Path] = typer.Option(None, "--output", "-o", help="Report directory"),
    model: Optional[str] = typer.Option(None, "--model", help="Model id to request"),
    endpoint: Optional[str] = typer.Option(None, "--endpoint", help="OpenAI-compatible base URL"),
    temperature: Optional[float] = typer.Option(None, "--temperature", help="Sampling temperature"),
    timeout: Optional[float] = typer.Option(None, "--timeout", help="Seconds allowed per test run"),
):
    """Run a campaign against the live endpoint, recording every exchange.

    A later `mgdbg bench --backend replay --cache FILE` reproduces the run
    offline.
    """
    record = record or get_cache_dir(_config()) / f"{dataset.stem}.jsonl"
    try:
        report = _campaign(
            dataset, kind, seeds, strategy, "live", None, record, max_attempts, jobs, output,
            model, endpoint, temperature, timeout,
        )
    except (MgdbgError, OSError, ValueError) as e:
        _fail(str(e))
    _print_metrics(report)
    console.print(f"[green]Recorded exchanges appended to {record}[/green]")


@app.command("seeds")
def seeds_cmd(
    dataset: pathlib.Path = typer.Option(..., "--dataset", help="Benchmark JSON-lines file"),
    kind: str = typer.Option(..., "--kind", help=f"One of: {', '.join(DATASET_KINDS)}"),
    out: pathlib.Path = typer.Option(..., "--out", "-o", help="Seeds file to write"),
    backend: str = typer.Option("live", "--backend", "-b", help="live, replay or stub"),
    cache: Optional[pathlib.Path] = typer.Option(None, "--cache", help="Recorded responses for --backend replay"),
    record: Optional[pathlib.Path] = typer.Option(None, "--record", help="Append every exchange to this cache file"),
    model: Optional[str] = typer.Option(None, "--model", help="Model id to request"),
    endpoint: Optional[str] = typer.Option(None, "--endpoint", help="OpenAI-compatible base URL"),
    temperature: Optional[float] = typer.Option(None, "--temperature", help="Sampling temperature"),
):
    """Generate seed programs (the no-debugging baseline) with the model."""
    try:
        problems = load_benchmark(dataset, kind)
        llm_cfg = _llm_config(model, endpoint, temperature)
        seeds = generate_seeds(problems, llm_cfg, _backend(backend, cache, record, llm_cfg))
        save_seeds(out, seeds)
    except (MgdbgError, OSError, ValueError) as e:
        _fail(str(e))
    console.print(f"[green]Wrote {len(seeds)} seed(s) to {out}[/green]")


@app.command("report")
def report_cmd(
    output: pathlib.Path = typer.Argument(..., help="Campaign directory containing sessions/"),
    dataset: pathlib.Path = typer.Option(..., "--dataset", help="Benchmark JSON-lines file"),
    kind: str = typer.Option(..., "--kind", help=f"One of: {', '.join(DATASET_KINDS)}"),
    seeds: Optional[pathlib.Path] = typer.Option(None, "--seeds", help="Seed programs, JSON lines {task_id, code}"),
    strategy: Optional[str] = typer.Option(None, "--strategy", "-s", help="Only sessions of this strategy"),
    timeout: Optional[float] = typer.Option(None, "--timeout", help="Seconds allowed per test run"),
):
    """Recompute metrics and curves from saved sessions."""
    try:
        problems = load_benchmark(dataset, kind)
        seed_programs = load_seeds(seeds) if seeds else shipped_seeds(problems)
        report = aggregate(output, problems, seed_programs, _policy(timeout), strategy)
    except (MgdbgError, OSError, ValueError) as e:
        _fail(str(e))
    _print_metrics(report)


@app.command("compare")
def compare_cmd(
    reports: List[pathlib.Path] = typer.Argument(..., help="Campaign directories or campaign_report.json files"),
):
    """Tabulate several campaigns side by side."""
    try:
        loaded = [CampaignReport.load(path) for path in reports]
    except (OSError, ValueError, KeyError) as e:
        _fail(str(e))

    table = Table(show_header=True, header_style="bold")
    table.add_column("Strategy")
    table.add_column("Acc. (%)", justify="right")
    table.add_column("Δ (pts)", justify="right")
    table.add_column("RSR (%)", justify="right")
    table.add_column("Fixed", justify="right")
    table.add_column("Buggy", justify="right")
    for row in compare_reports(loaded):
        table.add_row(*row)
    console.print(table)


@app.command("config")
def config_cmd():
    """Show the effective configuration (file, env overrides applied)."""
    config = _config()
    sections = dict(config)
    sections["llm"] = get_llm_config(config)

    table = Table(show_header=True, header_style="bold")
    table.add_column("Key")
    table.add_column("Value")
    for section, values in sections.items():
        if not isinstance(values, dict):
            table.add_row(section, str(values))
            continue
        for key, value in values.items():
            if key == "api_key" and value:
                value = "****"
            table.add_row(f"{section}.{key}", str(value))
    console.print(table)


if __name__ == "__main__":
    app()
