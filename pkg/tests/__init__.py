"""Tests for feature-graph-lab."""
