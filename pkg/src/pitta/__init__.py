"""Physics-informed test-time adaptation lab for inertial streams."""

__version__ = "0.1.0"
