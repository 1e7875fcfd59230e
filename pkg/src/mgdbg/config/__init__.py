"""Configuration management for mgdbg."""

import copy
import os
import pathlib
from typing import Any, Dict, Optional

import toml
from rich.console import Console

from mgdbg.errors import ConfigError

console = Console()

STRATEGIES = (
    "hierarchical",
    "holistic_simple_feedback",
    "holistic_no_decomposition",
    "no_simulated_execution",
    "no_testgen",
    "real_execution_trace",
)

DEFAULT_CONFIG = {
    "llm": {
        "endpoint": "http://localhost:8000/v1",
        "model": "deepseek-coder-v2-lite-instruct",
        "api_key": "",  # Empty uses MGDBG_API_KEY env
        "temperature": 0.8,
        "max_tokens": 2048,
        "request_timeout": 120.0,
        "max_format_retries": 3,
        "max_retries": 2,
        "retry_backoff": 0.5,
    },
    "debug": {
        "max_attempts": 10,
        "strategy": "hierarchical",
        "per_unit_fix_retries": 3,
        "strict_validation": False,
        "redecompose_on_failure": False,
    },
    "sandbox": {
        "python": "python3",
        "timeout_per_test": 10.0,
        "memory_cap_mb": 512,
    },
    "paths": {
        "runs_dir": "~/.mgdbg/runs",
        "cache_dir": "~/.mgdbg/cache",
    },
}

ENV_OVERRIDES = {
    "MGDBG_ENDPOINT": "endpoint",
    "MGDBG_API_KEY": "api_key",
    "MGDBG_MODEL": "model",
}

CONFIG_DIR = os.path.expanduser("~/.mgdbg")
CONFIG_FILE = os.path.join(CONFIG_DIR, "config.toml")


def ensure_config_exists() -> None:
    try:
        os.makedirs(CONFIG_DIR, exist_ok=True)
        os.makedirs(os.path.join(CONFIG_DIR, "runs"), exist_ok=True)
        os.makedirs(os.path.join(CONFIG_DIR, "cache"), exist_ok=True)

        if not os.path.exists(CONFIG_FILE):
            with open(CONFIG_FILE, "w", encoding="utf-8") as f:
                toml.dump(DEFAULT_CONFIG, f)
            console.print(f"[green]Created default configuration at: {CONFIG_FILE}[/green]")
    except Exception as e:
        console.print(f"[red]Error creating config directories or file: {e}[/red]")


def merge_defaults(config: Dict[str, Any]) -> Dict[str, Any]:
    """Fill keys missing from `config` with DEFAULT_CONFIG values."""

    def update_dict(config_dict: Dict[str, Any], default_dict: Dict[str, Any]) -> None:
        for key, value in default_dict.items():
            if key not in config_dict:
                config_dict[key] = copy.deepcopy(value)
            elif isinstance(value, dict) and isinstance(config_dict[key], dict):
                update_dict(config_dict[key], value)

    merged = copy.deepcopy(config)
    update_dict(merged, DEFAULT_CONFIG)
    return merged


def get_config(path: Optional[str] = None) -> Dict[str, Any]:
    """Load the TOML config at `path` (default file when None)."""
    config_file = path or CONFIG_FILE
    if path is None:
        ensure_config_exists()

    try:
        with open(config_file, "r", encoding="utf-8") as f:
            config = toml.load(f)
        return merge_defaults(config)
    except Exception as e:
        console.print(f"[red]Error loading config file {config_file}: {e}[/red]")
        console.print("[yellow]Using default configuration...[/yellow]")
        return copy.deepcopy(DEFAULT_CONFIG)


def save_config(config: Dict[str, Any], path: Optional[str] = None) -> None:
    config_file = path or CONFIG_FILE
    try:
        os.makedirs(os.path.dirname(os.path.abspath(config_file)), exist_ok=True)
        with open(config_file, "w", encoding="utf-8") as f:
            toml.dump(config, f)
    except Exception as e:
        console.print(f"[red]Error saving config: {e}[/red]")
        raise


def get_llm_config(config: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """LLM section with MGDBG_* environment overrides applied."""
    section = dict((config or get_config())["llm"])
    for env_var, key in ENV_OVERRIDES.items():
        value = os.environ.get(env_var)
        if value:
            section[key] = value
    return section


def get_debug_config(config: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    section = dict((config or get_config())["debug"])
    if section.get("strategy") not in STRATEGIES:
        raise ConfigError(
            f"unknown strategy {section.get('strategy')!r}; expected one of {', '.join(STRATEGIES)}"
        )
    return section


def get_sandbox_config(config: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    return dict((config or get_config())["sandbox"])


def get_runs_dir(config: Optional[Dict[str, Any]] = None) -> pathlib.Path:
    runs_dir = os.path.expanduser((config or get_config())["paths"]["runs_dir"])
    return pathlib.Path(runs_dir)


def get_cache_dir(config: Optional[Dict[str, Any]] = None) -> pathlib.Path:
    cache_dir = os.path.expanduser((config or get_config())["paths"]["cache_dir"])
    return pathlib.Path(cache_dir)
