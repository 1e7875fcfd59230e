"""Exception hierarchy shared by every mgdbg package."""

from typing import Optional


class MgdbgError(Exception):
    """Base class for all mgdbg errors."""


class ConfigError(MgdbgError):
    """Invalid configuration value."""


class ParseError(MgdbgError):
    """Subject source could not be parsed."""


class MissingEntryPoint(MgdbgError):
    """The requested entry point is not defined at top level."""


class SignatureRename(MgdbgError):
    """A replacement definition does not carry the unit's name."""


class MissingSlot(MgdbgError):
    """A prompt template placeholder was not supplied."""


class LLMError(MgdbgError):
    """Base class for failures talking to a model backend."""


class TransportError(LLMError):
    pass


class LLMTimeout(LLMError):
    pass


class ReplayMiss(LLMError):
    def __init__(self, content_hash: str) -> None:
        super().__init__(f"no recorded response for prompt hash {content_hash}")
        self.content_hash = content_hash


class ScriptExhausted(LLMError):
    pass


class FormatError(MgdbgError):
    """A model reply did not have the expected shape; the request may be retried."""


class NoCodeBlock(FormatError):
    pass


class NoAssertionsFound(FormatError):
    pass


class SimulationFormatError(FormatError):
    pass


class DecompositionRejected(FormatError):
    """A decomposition reply parsed but broke the entry point contract."""


class DecompositionFailed(MgdbgError):
    pass


class TestGenFailed(MgdbgError):
    __test__ = False


class InterpreterMissing(MgdbgError):
    def __init__(self, interpreter: str) -> None:
        super().__init__(f"subject interpreter not found on PATH: {interpreter}")
        self.interpreter = interpreter


class SchemaError(MgdbgError):
    def __init__(self, message: str, index: Optional[int] = None) -> None:
        where = f"record {index}: " if index is not None else ""
        super().__init__(f"{where}{message}")
        self.index = index
