"""telecert: certification toolkit for authenticated teleportation.

Self-testing constants from moment-matrix semidefinite programs,
finite-statistics fidelity certificates under iid and martingale
assumptions, and Monte Carlo validation of the full test-then-teleport
protocol against honest and adversarial sources.
"""

__version__ = "0.1.0"
