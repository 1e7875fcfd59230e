"""Run a subject program in a throwaway directory under resource limits."""

import logging
import math
import os
import shutil
import signal
import subprocess
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Optional

try:
    import resource
except ImportError:  # pragma: no cover - non-POSIX
    resource = None  # type: ignore[assignment]

from mgdbg.errors import ConfigError, InterpreterMissing

logger = logging.getLogger(__name__)

MiB = 1024 * 1024
OUTPUT_LIMIT = 64 * 1024

# Loaded through PYTHONPATH before the program starts.
NETWORK_GUARD = '''\
import socket as _socket


def _blocked(*args, **kwargs):
    raise PermissionError("network access is disabled in the mgdbg sandbox")


class _GuardedSocket(_socket.socket):
    connect = connect_ex = bind = sendto = _blocked


_socket.socket = _GuardedSocket
_socket.create_connection = _blocked
'''


@dataclass(frozen=True)
class SandboxPolicy:
    timeout_per_test: float = 10.0
    memory_cap: int = 512 * MiB
    python: str = "python3"

    def __post_init__(self) -> None:
        if self.timeout_per_test <= 0:
            raise ConfigError("timeout_per_test must be positive")
        if self.memory_cap <= 0:
            raise ConfigError("memory_cap must be positive")

    @classmethod
    def from_config(cls, section: Mapping[str, Any]) -> "SandboxPolicy":
        return cls(
            timeout_per_test=float(section.get("timeout_per_test", 10.0)),
            memory_cap=int(section.get("memory_cap_mb", 512)) * MiB,
            python=str(section.get("python", "python3")),
        )

    def interpreter(self) -> str:
        found = shutil.which(self.python)
        if found:
            return found
        if os.path.isfile(self.python) and os.access(self.python, os.X_OK):
            return self.python
        raise InterpreterMissing(self.python)


@dataclass(frozen=True)
class ProcessOutcome:
    returncode: Optional[int]
    stdout: str
    stderr: str
    timed_out: bool
    duration: float


def _limit_setter(policy: SandboxPolicy) -> Optional[Callable[[], None]]:
    if resource is None:
        return None
    cpu_seconds = int(math.ceil(policy.timeout_per_test)) + 1
    limits = [
        (getattr(resource, "RLIMIT_AS", None), policy.memory_cap),
        (getattr(resource, "RLIMIT_CPU", None), cpu_seconds),
        (getattr(resource, "RLIMIT_CORE", None), 0),
        (getattr(resource, "RLIMIT_FSIZE", None), 16 * MiB),
    ]

    def apply() -> None:
        for limit, value in limits:
            if limit is None:
                continue
            try:
                resource.setrlimit(limit, (value, value))
            except (ValueError, OSError):
                pass

    return apply


def _decode(data: Any) -> str:
    if data is None:
        return ""
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    return data[-OUTPUT_LIMIT:]


def _kill_group(process: "subprocess.Popen[bytes]") -> None:
    try:
        os.killpg(process.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        process.kill()


def run_isolated(program: str, policy: SandboxPolicy) -> ProcessOutcome:
    """Write `program` to a fresh temp dir and run it with the policy applied.

    The program leads its own process group; on timeout the whole group is
    killed, so processes it spawned do not outlive the run.
    """
    interpreter = policy.interpreter()
    with tempfile.TemporaryDirectory(prefix="mgdbg_") as workdir:
        root = Path(workdir)
        (root / "sitecustomize.py").write_text(NETWORK_GUARD, encoding="utf-8")
        (root / "program.py").write_text(program, encoding="utf-8")
        env = {
            "PATH": os.environ.get("PATH", ""),
            "HOME": workdir,
            "TMPDIR": workdir,
            "PYTHONPATH": workdir,
            "PYTHONDONTWRITEBYTECODE": "1",
            "PYTHONHASHSEED": "0",
            "PYTHONIOENCODING": "utf-8",
        }
        start = time.monotonic()
        process = subprocess.Popen(
            [interpreter, "-B", "-s", "program.py"],
            cwd=workdir,
            env=env,
            stdin=subprocess.DEVNULL,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            start_new_session=True,
            preexec_fn=_limit_setter(policy),
        )
        try:
            stdout, stderr = process.communicate(timeout=policy.timeout_per_test)
        except subprocess.TimeoutExpired:
            _kill_group(process)
            stdout, stderr = process.communicate()
            return ProcessOutcome(
                returncode=None,
                stdout=_decode(stdout),
                stderr=_decode(stderr),
                timed_out=True,
                duration=time.monotonic() - start,
            )
        return ProcessOutcome(
            returncode=process.returncode,
            stdout=_decode(stdout),
            stderr=_decode(stderr),
            timed_out=False,
            duration=time.monotonic() - start,
        )
