"""Shared configuration, logging, errors and determinism helpers."""
