"""Shared infrastructure - error hierarchy and the seeded ensemble engine."""
