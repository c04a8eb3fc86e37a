"""Floating-population impact analysis from mobile-network event logs.

Pipeline: device filtering, per-tower unique-device counts, LOWESS
smoothing, zone aggregation, per-minute negative binomial regressions with
area exposure, significance windows and spatial post-analysis, plus a
synthetic data generator with known injected effects.
"""

__version__ = "0.1.0"
