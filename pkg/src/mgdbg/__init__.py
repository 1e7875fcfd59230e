"""mgdbg - hierarchical bottom-up debugger for LLM-generated code."""

__version__ = "0.1.0"
