"""Density control of noisy oscillator ensembles on the circle.

Phase reduction, Fokker-Planck propagation, periodic input design, feedback
laws for the oscillator density and the metrics used to assess them.
"""

__version__ = "0.1.0"
