"""Numerics for derivatives of fBm self-intersection local time.

Chaos-series variance evaluation, hypergeometric closed forms, exact fBm
path simulation, Volterra kernels, singular pair-domain quadrature with
convergence probing, and coupled Monte Carlo estimation.
"""

__version__ = "0.1.0"
