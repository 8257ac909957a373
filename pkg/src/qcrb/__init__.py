"""Phase estimation with conventional interferometric measurements.

Quantum and classical Fisher information for two-output-port, single-output-port
and population-difference counting, detection-noise models, and Bayesian
phase estimation on sectored two-mode states.
"""

__version__ = "0.1.0"
