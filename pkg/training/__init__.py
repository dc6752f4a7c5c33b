"""Corpus ingestion, the training loop and rate-distortion sweeps."""
