"""Closed-loop auto-tuning of economic heat-pump MPC and contract comparison.

The package simulates a single-zone dwelling heated by a modulating heat
pump, controls it with an economic MPC whose hyperparameters (input mask
threshold, input cap, temperature lower bounds) are tuned by constrained
Bayesian optimization against the monthly electricity bill, subject to a
percentile comfort constraint, and compares the optimized bills across
twelve Belgian tariff contracts.
"""

from .qp import USING_COMPILED_KERNEL

__version__ = "0.1.0"

__all__ = ["USING_COMPILED_KERNEL", "__version__"]
