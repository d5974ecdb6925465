"""Energy-conditioned crystal DOS regression: graph encoder, cross-attention
energy bank, baselines, training and evaluation."""

__version__ = "0.1.0"
