"""Spectral-bias diagnostics for time-series representation models.

Synthetic EEG-like signals with controlled aperiodic and oscillatory content,
reference and trainable embedders, linear decodability, subject/task probes
and embedding geometry.
"""

__version__ = "0.1.0"
