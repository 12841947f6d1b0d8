"""Figure rendering for sinkbisim experiment outputs."""

__version__ = "0.1.0"
