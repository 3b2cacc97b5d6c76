"""Unitary-group invariant kernels, pooled invariant signatures and an SVM trainer."""

__version__ = "0.1.0"
