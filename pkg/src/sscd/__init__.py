"""Weakly supervised semantic scene change detection."""
