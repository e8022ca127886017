"""Weight-decay trained stacked ReLU networks and their function-space penalties."""

__version__ = "0.1.0"
