"""Blind night-time image quality evaluation.

Pipeline: exposure-adjusted image synthesis -> unsupervised Retinex-style
decomposition -> per-component feature encoders -> bilinear fusion ->
quality regression, plus the standard IQA evaluation protocol
(SRCC/KRCC/PLCC/RMSE, content-disjoint cross-validation, rank-n accuracy,
significance t-tests).
"""

__version__ = "0.1.0"
