"""High-precision scale matrices for one-sided Markov additive processes and
exact CUSUM performance measures."""

__version__ = "0.1.0"
