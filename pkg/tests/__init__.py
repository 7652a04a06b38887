"""Test suite for rankmvml."""
