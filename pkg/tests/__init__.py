"""Malliavin Lab tests."""
