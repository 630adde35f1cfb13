"""Linear frequency principle toolkit: LFP dynamics, spline steady states, two-layer ReLU training."""

__version__ = "0.1.0"
