"""Event-camera grid representations, learnable pillars and a dual-memory detector."""

__version__ = "0.1.0"
