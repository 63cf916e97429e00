"""Reporting - experiment config files and CSV reports with sidecar metadata."""
