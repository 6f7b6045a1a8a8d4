"""Tests for the RLF Spotter package."""
