"""Learned Lie-algebra data augmentation for equivariant regression."""

__version__ = "0.1.0"
