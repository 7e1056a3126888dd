"""ifslab: a numerical laboratory for iterated function systems.

Discrete measures with exact 1D optimal transport, contraction
certificates, stationary-measure solves with rigorous error ledgers,
deterministic chaos-game sampling, parameter-response experiments and
fiberwise analysis of skew products.
"""

__version__ = "0.1.0"
