"""Amortized simulation-based inference with a structured summary space.

A deep-set (or feature) summary network is trained jointly with a
conditional coupling flow so that summaries of well-specified data follow
a unit Gaussian.  Maximum mean discrepancy between observed summaries and
that reference then doubles as a model misspecification test.
"""

__version__ = "0.1.0"
