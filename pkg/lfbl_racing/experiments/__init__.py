"""Experiment harness: scenarios from settings, commands and their artifacts."""
