"""
Tests for the fastattribution package.
"""
