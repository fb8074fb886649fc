"""Active pose lab: simulated next-best-view planning for multi-object 6D
pose estimation."""

__version__ = "0.1.0"
