"""bvrsim - a desk-scale simulator for bias-variance reduced local perturbed SGD
and its baselines on a simulated multi-worker cluster."""

__version__ = "0.3.0"
