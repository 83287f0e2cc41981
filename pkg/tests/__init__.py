"""Tests for the direct_integral package."""
