"""Tests for mgdbg."""
