"""Transforms, entropy-model assembly, distortion metrics and checkpoints."""
