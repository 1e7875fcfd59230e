"""Main entry point for mgdbg."""

from mgdbg.cli import app

if __name__ == "__main__":
    app()
