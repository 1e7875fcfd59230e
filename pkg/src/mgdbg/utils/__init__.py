"""Utility functions for mgdbg."""

import hashlib
import json
import logging
import re
from typing import Any, Optional

from rich.console import Console
from rich.logging import RichHandler

console = Console()


def setup_logging(verbose: bool = False) -> None:
    """Route library logging through rich."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=True, show_path=False)],
        force=True,
    )


def count_tokens(text: str) -> int:
    """Count whitespace-delimited tokens."""
    return len(text.split())


def digest(*parts: Any) -> str:
    """Stable sha256 hex digest of JSON-serializable parts."""
    payload = json.dumps(list(parts), sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def mentions(text: str, name: str) -> bool:
    """True if `name` appears in `text` as a whole identifier."""
    return re.search(rf"(?<![\w.]){re.escape(name)}\b", text) is not None


def shorten(text: str, limit: int = 2000) -> str:
    """Trim long text keeping the head and the tail."""
    if len(text) <= limit:
        return text
    half = limit // 2
    return f"{text[:half]}\n[...trimmed {len(text) - limit} chars...]\n{text[-half:]}"


def ratio(numerator: int, denominator: int) -> Optional[float]:
    """numerator / denominator, None when the denominator is zero."""
    return numerator / denominator if denominator else None


def percent(value: Optional[float]) -> str:
    """Format a ratio as a one-decimal percentage, '--' when undefined."""
    return "--" if value is None else f"{value * 100:.1f}"


