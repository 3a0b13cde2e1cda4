"""Desk-scale progressive transformer distillation.

Core pieces: a numpy tensor library with reverse-mode autodiff, a
transformer encoder exposing per-layer hidden states and attention maps,
SVD embedding factorization, the four transfer losses, a five-stage
progressive training schedule, and transfer tooling (source-task
selection, KNN augmentation, cross-vocabulary embedding swap).
"""

__version__ = "0.1.0"
