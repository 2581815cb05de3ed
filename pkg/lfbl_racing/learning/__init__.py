"""Correction policies, episodes and trainers for learned feedback linearization."""
