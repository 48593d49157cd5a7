"""Balanced relative margin machines and related tools."""
